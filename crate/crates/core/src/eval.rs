//! Strategy-matching evaluation and training-trace diagnostics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CognitiveLabels, DistortionType, Intensity, MatchStatus, RiskLevel, StrategyMatrix};
use crate::encoding::{encode_state, EncoderConfig};
use crate::env::ScenarioDistribution;
use crate::error::{Error, Result};
use crate::learner::MetricsTrace;
use crate::policy::QFunction;
use crate::scalar::Scalar;

/// Weight of silver hits in the combined hit rate.
pub const SILVER_WEIGHT: f64 = 0.75;

pub fn combined_rate(gold_rate: f64, silver_rate: f64) -> f64 {
    gold_rate + SILVER_WEIGHT * silver_rate
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Balanced,
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub sampling: Sampling,
    /// Passes over the balanced grid, each with fresh noise.
    pub repeats: usize,
    /// Scenario count under natural sampling.
    pub natural_samples: usize,
    /// Passes over the high-risk states for the safety report.
    pub safety_repeats: usize,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampling: Sampling::Balanced,
            repeats: 25,
            natural_samples: 2_000,
            safety_repeats: 25,
            histogram_bins: 20,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("repeats", self.repeats),
            ("natural_samples", self.natural_samples),
            ("safety_repeats", self.safety_repeats),
            ("histogram_bins", self.histogram_bins),
        ] {
            if v == 0 {
                return Err(Error::config(format!("eval.{field}"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Every distortion type x intensity x {Low, Medium}: 48 states.
pub fn balanced_grid() -> Vec<CognitiveLabels> {
    let mut out = Vec::with_capacity(48);
    for &d in DistortionType::ALL {
        for &i in Intensity::ALL {
            for r in [RiskLevel::Low, RiskLevel::Medium] {
                out.push(CognitiveLabels::new(d, i, r));
            }
        }
    }
    out
}

/// Every state with High risk: 25 states (24 distorted plus one without).
pub fn high_risk_states() -> Vec<CognitiveLabels> {
    CognitiveLabels::all_states().into_iter().filter(|l| l.is_high_risk()).collect()
}

/// Scenario list for strategy evaluation.
pub fn eval_scenarios<R: Rng + ?Sized>(
    cfg: &EvalConfig,
    natural: &ScenarioDistribution,
    rng: &mut R,
) -> Vec<CognitiveLabels> {
    match cfg.sampling {
        Sampling::Balanced => {
            let grid = balanced_grid();
            (0..cfg.repeats).flat_map(|_| grid.iter().copied()).collect()
        }
        Sampling::Natural => (0..cfg.natural_samples).map(|_| natural.sample(rng)).collect(),
    }
}

/// Scenario list for the safety report: all 75 states, with the
/// high-risk ones making up one third, repeated `safety_repeats` times.
pub fn safety_scenarios(cfg: &EvalConfig) -> Vec<CognitiveLabels> {
    let all = CognitiveLabels::all_states();
    (0..cfg.safety_repeats).flat_map(|_| all.iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeHitRate {
    pub n: usize,
    pub gold_rate: f64,
    pub silver_rate: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRateReport {
    pub per_type: BTreeMap<DistortionType, TypeHitRate>,
    pub n: usize,
    pub gold_rate: f64,
    pub silver_rate: f64,
    pub gold_plus_silver_rate: f64,
    pub combined: f64,
    /// Scenarios skipped because they are high-risk or carry no distortion.
    pub n_excluded: usize,
}

/// Builds the report from already-classified decisions.
pub fn hit_rate_report(outcomes: &[(DistortionType, MatchStatus)], n_excluded: usize) -> HitRateReport {
    let mut counts: BTreeMap<DistortionType, [usize; 3]> = BTreeMap::new();
    for (d, status) in outcomes {
        let c = counts.entry(*d).or_default();
        c[0] += 1;
        match status {
            MatchStatus::Gold => c[1] += 1,
            MatchStatus::Silver => c[2] += 1,
            MatchStatus::Mismatch => {}
        }
    }
    let per_type = counts
        .iter()
        .map(|(d, [n, g, s])| {
            let gold_rate = *g as f64 / *n as f64;
            let silver_rate = *s as f64 / *n as f64;
            let rate = TypeHitRate {
                n: *n,
                gold_rate,
                silver_rate,
                combined: combined_rate(gold_rate, silver_rate),
            };
            (*d, rate)
        })
        .collect();
    let n = outcomes.len();
    let gold: usize = counts.values().map(|c| c[1]).sum();
    let silver: usize = counts.values().map(|c| c[2]).sum();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    HitRateReport {
        per_type,
        n,
        gold_rate: frac(gold),
        silver_rate: frac(silver),
        gold_plus_silver_rate: frac(gold + silver),
        combined: combined_rate(frac(gold), frac(silver)),
        n_excluded,
    }
}

/// Greedy eval-mode decisions on each scenario, classified against the
/// strategy matrix. High-risk and distortion-free scenarios are excluded.
pub fn evaluate_hit_rates<T: Scalar, Q: QFunction<T> + ?Sized, R: Rng + ?Sized>(
    policy: &Q,
    scenarios: &[CognitiveLabels],
    encoder: &EncoderConfig,
    rng: &mut R,
) -> Result<HitRateReport> {
    let mut outcomes = Vec::with_capacity(scenarios.len());
    let mut excluded = 0;
    for labels in scenarios {
        let d = match labels.distortion {
            Some(d) if !labels.is_high_risk() => d,
            _ => {
                excluded += 1;
                continue;
            }
        };
        let s = encode_state::<T, _>(labels, encoder, rng)?;
        let action = policy.greedy_action(&s);
        outcomes.push((d, StrategyMatrix::STANDARD.status(d, action)));
    }
    Ok(hit_rate_report(&outcomes, excluded))
}

impl HitRateReport {
    /// Per-type rows sorted by combined rate, highest first.
    pub fn write_type_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut rows: Vec<(&DistortionType, &TypeHitRate)> = self.per_type.iter().collect();
        rows.sort_by(|a, b| b.1.combined.total_cmp(&a.1.combined).then(a.0.cmp(b.0)));
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["distortion", "n", "gold_rate", "silver_rate", "combined"])?;
        for (d, r) in rows {
            out.write_record([
                d.name().to_string(),
                r.n.to_string(),
                r.gold_rate.to_string(),
                r.silver_rate.to_string(),
                r.combined.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<hit-rate csv>", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossShares {
    pub q_share: f64,
    pub kl_share: f64,
}

/// Shares of the mean total loss over the trailing `window` rows that carry
/// losses. The KL share counts the weighted term `total - q_loss`.
pub fn loss_decomposition(trace: &MetricsTrace, window: usize) -> Result<LossShares> {
    let rows: Vec<(f64, f64)> = trace
        .rows()
        .iter()
        .filter_map(|r| Some((r.q_loss?, r.total_loss?)))
        .collect();
    if rows.is_empty() || window == 0 {
        return Err(Error::Empty("metrics trace with losses"));
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let q = tail.iter().map(|r| r.0).sum::<f64>() / n;
    let total = tail.iter().map(|r| r.1).sum::<f64>() / n;
    if total <= 0.0 {
        return Err(Error::InvalidArgument("mean total loss is not positive".into()));
    }
    let q_share = q / total;
    Ok(LossShares {
        q_share,
        kl_share: 1.0 - q_share,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub early: f64,
    pub middle: f64,
    pub late: f64,
}

/// Mean episode reward over the first, middle and final thirds of the rows
/// that recorded one.
pub fn phase_summary(trace: &MetricsTrace) -> Result<PhaseSummary> {
    let rewards: Vec<f64> = trace.rows().iter().filter_map(|r| r.avg_reward).collect();
    if rewards.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "phase summary needs at least 3 reward rows, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len();
    let cut1 = n / 3;
    let cut2 = 2 * n / 3;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(PhaseSummary {
        early: mean(&rewards[..cut1]),
        middle: mean(&rewards[cut1..cut2]),
        late: mean(&rewards[cut2..]),
    })
}
