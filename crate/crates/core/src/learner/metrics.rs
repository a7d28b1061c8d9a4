//! Periodic training metrics and their CSV form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metrics row. Empty cells in the CSV mean the quantity had no samples
/// during the interval (no finished episode, no learner update, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episodes: u64,
    pub epsilon: f64,
    pub avg_reward: Option<f64>,
    pub q_loss: Option<f64>,
    pub kl_loss: Option<f64>,
    pub total_loss: Option<f64>,
    pub gold_hit_rate: Option<f64>,
    pub silver_hit_rate: Option<f64>,
    pub crisis_recall: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "step",
    "episodes",
    "epsilon",
    "avg_reward",
    "q_loss",
    "kl_loss",
    "total_loss",
    "gold_hit_rate",
    "silver_hit_rate",
    "crisis_recall",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTrace {
    rows: Vec<MetricsRow>,
}

impl MetricsTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row; steps must be strictly increasing.
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "metrics step {} not after {}",
                    row.step, last.step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        let mut trace = Self::new();
        for row in rows {
            trace.push(row)?;
        }
        Ok(trace)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(CSV_COLUMNS)?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush().map_err(|e| Error::io("<metrics csv>", e))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let rows = input.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
        Self::from_rows(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
