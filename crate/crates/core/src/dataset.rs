//! Annotation-file ingestion and dataset statistics.
//!
//! One JSON object per line:
//! `{"dialogue_id": "d1", "segment_id": 3, "speaker": "seeker",
//!   "labels": {"distortion": "Labeling", "intensity": "Mild", "risk": "Low"}}`.
//! `labels` is optional and only allowed on seeker records. Only identifiers,
//! speakers and labels are read; utterance text is never ingested.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::domain::{CognitiveLabels, DistortionType};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Counselor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub dialogue_id: String,
    pub segment_id: u64,
    pub speaker: Speaker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<CognitiveLabels>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<AnnotationRecord>,
    /// Malformed lines skipped in lenient mode.
    pub skipped: Vec<LineError>,
}

fn parse_line(text: &str) -> std::result::Result<AnnotationRecord, String> {
    let record: AnnotationRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if record.speaker == Speaker::Counselor && record.labels.is_some() {
        return Err("counselor records cannot carry labels".into());
    }
    Ok(record)
}

/// Reads JSONL records. Strict mode fails on the first malformed line with
/// its 1-based line number; lenient mode skips and collects them.
pub fn parse_records<R: BufRead>(reader: R, source: &str, lenient: bool) -> Result<ParsedRecords> {
    let mut out = ParsedRecords::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(r) => out.records.push(r),
            Err(reason) if lenient => out.skipped.push(LineError { line: i + 1, reason }),
            Err(reason) => {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: i + 1,
                    reason,
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_dialogues: usize,
    pub n_utterances: usize,
    pub n_seeker: usize,
    pub n_counselor: usize,
    /// Distinct `(dialogue_id, segment_id)` pairs.
    pub n_segments: usize,
    /// Seeker records labeled with a distortion.
    pub n_labels: usize,
    /// Utterances per dialogue.
    pub avg_turns: f64,
    /// `n_labels / n_dialogues`.
    pub avg_labels_per_dialogue: f64,
    /// Mean number of distinct distortion types per dialogue.
    pub avg_distinct_types_per_dialogue: f64,
    /// Share of each type among labels; absent when there are no labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_distribution: Option<BTreeMap<DistortionType, f64>>,
}

pub fn summarize(records: &[AnnotationRecord]) -> DatasetSummary {
    let mut dialogues: HashMap<&str, BTreeSet<DistortionType>> = HashMap::new();
    let mut segments: HashSet<(&str, u64)> = HashSet::new();
    let mut type_counts: BTreeMap<DistortionType, usize> = BTreeMap::new();
    let (mut n_seeker, mut n_counselor) = (0, 0);
    for r in records {
        let types = dialogues.entry(r.dialogue_id.as_str()).or_default();
        segments.insert((r.dialogue_id.as_str(), r.segment_id));
        match r.speaker {
            Speaker::Seeker => n_seeker += 1,
            Speaker::Counselor => n_counselor += 1,
        }
        if let Some(d) = r.labels.and_then(|l| l.distortion) {
            *type_counts.entry(d).or_default() += 1;
            types.insert(d);
        }
    }
    let n_dialogues = dialogues.len();
    let n_labels: usize = type_counts.values().sum();
    let per_dialogue = |x: usize| if n_dialogues == 0 { 0.0 } else { x as f64 / n_dialogues as f64 };
    let distinct: usize = dialogues.values().map(BTreeSet::len).sum();
    DatasetSummary {
        n_dialogues,
        n_utterances: records.len(),
        n_seeker,
        n_counselor,
        n_segments: segments.len(),
        n_labels,
        avg_turns: per_dialogue(records.len()),
        avg_labels_per_dialogue: per_dialogue(n_labels),
        avg_distinct_types_per_dialogue: per_dialogue(distinct),
        type_distribution: (n_labels > 0).then(|| {
            type_counts
                .into_iter()
                .map(|(d, c)| (d, c as f64 / n_labels as f64))
                .collect()
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"dialogue_id":"a","segment_id":1,"speaker":"seeker","labels":{"distortion":"Labeling","intensity":"Mild","risk":"Low"}}
{"dialogue_id":"a","segment_id":1,"speaker":"counselor"}
{"dialogue_id":"a","segment_id":2,"speaker":"seeker","labels":{"distortion":"Labeling","intensity":"Severe","risk":"High"}}

{"dialogue_id":"b","segment_id":1,"speaker":"seeker","labels":{"distortion":"MindReading","intensity":"Moderate","risk":"Medium"}}
{"dialogue_id":"b","segment_id":1,"speaker":"counselor"}
{"dialogue_id":"b","segment_id":2,"speaker":"seeker"}
"#;

    #[test]
    fn hand_counted_fixture() {
        let parsed = parse_records(FIXTURE.as_bytes(), "fixture", false).unwrap();
        let s = summarize(&parsed.records);
        assert_eq!(s.n_dialogues, 2);
        assert_eq!(s.n_utterances, 6);
        assert_eq!((s.n_seeker, s.n_counselor), (4, 2));
        assert_eq!(s.n_segments, 4);
        assert_eq!(s.n_labels, 3);
        assert_eq!(s.avg_labels_per_dialogue, 1.5);
        assert_eq!(s.avg_turns, 3.0);
        assert_eq!(s.avg_distinct_types_per_dialogue, 1.0);
        let dist = s.type_distribution.clone().unwrap();
        assert!((dist[&DistortionType::Labeling] - 2.0 / 3.0).abs() < 1e-15);
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let json = serde_json::to_string(&s).unwrap();
        let back: DatasetSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn empty_labels() {
        let s = summarize(&[]);
        assert_eq!(s.n_labels, 0);
        assert!(s.type_distribution.is_none());
        assert!(!serde_json::to_string(&s).unwrap().contains("type_distribution"));
    }

    #[test]
    fn strict_and_lenient() {
        let bad = format!("{FIXTURE}not json\n{{\"dialogue_id\":\"c\",\"segment_id\":1,\"speaker\":\"counselor\",\"labels\":{{\"distortion\":null,\"intensity\":\"Mild\",\"risk\":\"Low\"}}}}\n");
        match parse_records(bad.as_bytes(), "f.jsonl", false) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 8);
                assert_eq!(path, "f.jsonl");
            }
            other => panic!("{other:?}"),
        }
        let lenient = parse_records(bad.as_bytes(), "f.jsonl", true).unwrap();
        assert_eq!(lenient.records.len(), 6);
        let lines: Vec<usize> = lenient.skipped.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![8, 9]);
    }

    #[test]
    fn order_invariant() {
        let mut records = parse_records(FIXTURE.as_bytes(), "fixture", false).unwrap().records;
        let a = summarize(&records);
        records.reverse();
        assert_eq!(summarize(&records), a);
    }
}
