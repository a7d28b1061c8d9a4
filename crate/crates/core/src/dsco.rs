//! Dual-stream conditional masked loss and policy-driven training pairs.
//!
//! Log-probabilities arrive from an external language model; this module
//! only selects, normalizes and sums them.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, CognitiveLabels};
use crate::encoding::{encode_state, EncoderConfig};
use crate::error::{Error, Result};
use crate::policy::QFunction;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    Context,
    DiagnosisTarget,
    InterventionTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Diagnosis,
    Intervention,
}

impl Stream {
    pub const ALL: [Stream; 2] = [Stream::Diagnosis, Stream::Intervention];

    fn role(self) -> TokenRole {
        match self {
            Stream::Diagnosis => TokenRole::DiagnosisTarget,
            Stream::Intervention => TokenRole::InterventionTarget,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    log_probs: Vec<f64>,
    roles: Vec<TokenRole>,
}

impl TokenSequence {
    pub fn new(log_probs: Vec<f64>, roles: Vec<TokenRole>) -> Result<Self> {
        if log_probs.len() != roles.len() {
            return Err(Error::LengthMismatch {
                left: log_probs.len(),
                right: roles.len(),
            });
        }
        if let Some(bad) = log_probs.iter().find(|p| !(p.is_finite() && **p <= 0.0)) {
            return Err(Error::InvalidArgument(format!("log-probability {bad} is not finite and <= 0")));
        }
        Ok(Self { log_probs, roles })
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn roles(&self) -> &[TokenRole] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }
}

/// Target-only mask: set exactly where the role belongs to `stream`.
pub fn build_mask(roles: &[TokenRole], stream: Stream) -> Vec<bool> {
    let want = stream.role();
    roles.iter().map(|r| *r == want).collect()
}

/// `-(sum_t m_t log p_t) / (sum_t m_t)`.
pub fn masked_loss(seq: &TokenSequence, mask: &[bool]) -> Result<f64> {
    if mask.len() != seq.len() {
        return Err(Error::LengthMismatch {
            left: seq.len(),
            right: mask.len(),
        });
    }
    let (sum, count) = seq
        .log_probs
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, c), (lp, _)| (s + lp, c + 1));
    if count == 0 {
        return Err(Error::InvalidArgument("mask selects no tokens".into()));
    }
    Ok(-sum / count as f64)
}

/// Per-stream losses; a stream without target tokens is `None` and left
/// out of `total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualStreamLoss {
    pub diagnosis: Option<f64>,
    pub intervention: Option<f64>,
    pub total: f64,
}

impl DualStreamLoss {
    pub fn absent_streams(&self) -> Vec<Stream> {
        let mut out = Vec::new();
        if self.diagnosis.is_none() {
            out.push(Stream::Diagnosis);
        }
        if self.intervention.is_none() {
            out.push(Stream::Intervention);
        }
        out
    }
}

pub fn dual_stream_loss(seq: &TokenSequence) -> Result<DualStreamLoss> {
    let stream_loss = |s: Stream| {
        let mask = build_mask(&seq.roles, s);
        mask.iter().any(|m| *m).then(|| masked_loss(seq, &mask)).transpose()
    };
    let diagnosis = stream_loss(Stream::Diagnosis)?;
    let intervention = stream_loss(Stream::Intervention)?;
    if diagnosis.is_none() && intervention.is_none() {
        return Err(Error::InvalidArgument("sequence has no target tokens in either stream".into()));
    }
    Ok(DualStreamLoss {
        diagnosis,
        intervention,
        total: diagnosis.unwrap_or(0.0) + intervention.unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Diagnosis,
    Intervention,
}

/// One supervision record. Serialized flat:
/// `{context_id, distortion, intensity, risk, policy_action, target_kind}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub context_id: String,
    #[serde(flatten)]
    pub labels: CognitiveLabels,
    pub policy_action: Action,
    pub target_kind: TargetKind,
}

/// One diagnosis and one intervention record per scenario, both carrying the
/// policy's greedy action on the encoded state.
pub fn build_training_pairs<T: Scalar, Q: QFunction<T> + ?Sized, R: Rng + ?Sized>(
    policy: &Q,
    scenarios: &[CognitiveLabels],
    encoder: &EncoderConfig,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::with_capacity(2 * scenarios.len());
    for (i, labels) in scenarios.iter().enumerate() {
        let s = encode_state::<T, _>(labels, encoder, rng)?;
        let action = policy.greedy_action(&s);
        let context_id = format!("ctx-{i:06}");
        for kind in [TargetKind::Diagnosis, TargetKind::Intervention] {
            out.push(TrainingPair {
                context_id: context_id.clone(),
                labels: *labels,
                policy_action: action,
                target_kind: kind,
            });
        }
    }
    Ok(out)
}

pub fn write_pairs_jsonl<W: Write>(pairs: &[TrainingPair], mut w: W) -> Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<pairs jsonl>", e))?;
    }
    w.flush().map_err(|e| Error::io("<pairs jsonl>", e))
}

pub fn read_pairs_jsonl<R: BufRead>(r: R) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<pairs jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<pairs jsonl>".into(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
