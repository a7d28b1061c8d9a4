//! Safety instrumentation: the crisis-action advantage, Boltzmann policies,
//! the worst-case concentration sweep, and crisis classification metrics.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Action, CognitiveLabels, RiskLevel};
use crate::encoding::{encode_state, EncoderConfig};
use crate::error::{Error, Result};
use crate::policy::{argmax, QFunction};
use crate::scalar::Scalar;

/// `Q(s, A9) - max_{a != A9} Q(s, a)`.
pub fn safety_advantage<T: Scalar>(q: &[T]) -> T {
    assert_eq!(q.len(), Action::COUNT, "q-vector must cover every action");
    let safe = Action::SAFE.index();
    let best_other = q
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != safe)
        .map(|(_, v)| *v)
        .fold(T::neg_infinity(), T::max);
    q[safe] - best_other
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

/// `softmax(q / tau)` with max subtraction.
pub fn boltzmann_policy<T: Scalar>(q: &[T], tau: f64) -> Vec<T> {
    assert!(tau > 0.0, "temperature must be positive");
    let tau = T::of(tau);
    let max = q.iter().copied().fold(T::neg_infinity(), T::max);
    let w: Vec<T> = q.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let z: T = w.iter().copied().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Worst-case value vector for a high-risk state: the crisis action earns
/// `r_safe` followed by the most pessimistic bounded continuation, every
/// other action the miss penalty offset by the most optimistic one.
pub fn worst_case_q(p_risk: f64, base_bound: f64, r_safe: f64, gamma: f64) -> [f64; Action::COUNT] {
    let tail = gamma * base_bound / (1.0 - gamma);
    let mut q = [-p_risk + base_bound + tail; Action::COUNT];
    q[Action::SAFE.index()] = r_safe - tail;
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub p_risk: f64,
    pub pi_safe: f64,
    /// `ln(1 - pi_safe)`, computed without cancellation so it stays
    /// informative after `pi_safe` rounds to 1.
    pub log_miss: f64,
}

fn check_sweep_args(gamma: f64, tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma}: the discounted value bound R_max / (1 - gamma) requires 0 <= gamma < 1"
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// Crisis-action probability under the Boltzmann policy of
/// [`worst_case_q`] for each penalty value.
pub fn safety_concentration_sweep(
    p_risk_values: &[f64],
    base_bound: f64,
    r_safe: f64,
    gamma: f64,
    tau: f64,
) -> Result<Vec<SweepPoint>> {
    check_sweep_args(gamma, tau)?;
    if p_risk_values.is_empty() {
        return Err(Error::Empty("penalty list"));
    }
    let safe = Action::SAFE.index();
    Ok(p_risk_values
        .iter()
        .map(|&p| {
            let q = worst_case_q(p, base_bound, r_safe, gamma);
            let pi = boltzmann_policy(&q, tau);
            let scaled: Vec<f64> = q.iter().map(|v| v / tau).collect();
            let all = log_sum_exp(scaled.iter().copied());
            let others = log_sum_exp(scaled.iter().enumerate().filter(|(i, _)| *i != safe).map(|(_, v)| *v));
            SweepPoint {
                p_risk: p,
                pi_safe: pi[safe],
                log_miss: others - all,
            }
        })
        .collect())
}

/// Smallest penalty with `pi_safe >= target`, in closed form:
/// the gap `Q_safe - Q_other` must reach `tau * ln(9 * target / (1 - target))`.
pub fn safety_threshold(target: f64, base_bound: f64, r_safe: f64, gamma: f64, tau: f64) -> Result<f64> {
    check_sweep_args(gamma, tau)?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidArgument(format!("target probability must lie in (0, 1), got {target}")));
    }
    let others = (Action::COUNT - 1) as f64;
    let gap = tau * (others * target / (1.0 - target)).ln();
    let q0 = worst_case_q(0.0, base_bound, r_safe, gamma);
    let gap_at_zero = q0[Action::SAFE.index()] - q0[0];
    Ok((gap - gap_at_zero).max(0.0))
}

/// Fraction of truly high-risk samples not predicted High.
pub fn hrmdr(predicted: &[Option<RiskLevel>], truth: &[RiskLevel]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let mut high = 0usize;
    let mut missed = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        if *t == RiskLevel::High {
            high += 1;
            missed += usize::from(*p != Some(RiskLevel::High));
        }
    }
    if high == 0 {
        return Err(Error::Empty("high-risk samples"));
    }
    Ok(missed as f64 / high as f64)
}

/// Risk prediction implied by a policy decision: High iff the crisis action.
pub fn predicted_risk(action: Action) -> Option<RiskLevel> {
    action.is_safe().then_some(RiskLevel::High)
}

/// Crisis detection viewed as binary classification: positive prediction is
/// "action = A9", positive label is "risk = High". Undefined ratios are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrisisMetrics {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub n_high_risk: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn crisis_metrics(actions: &[Action], truth: &[RiskLevel]) -> Result<CrisisMetrics> {
    if actions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: actions.len(),
            right: truth.len(),
        });
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (a, r) in actions.iter().zip(truth) {
        match (a.is_safe(), *r == RiskLevel::High) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let div = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
    let recall = div(tp, tp + fneg);
    let precision = div(tp, tp + fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Ok(CrisisMetrics {
        recall,
        precision,
        f1,
        false_positive_rate: div(fp, fp + tn),
        n_high_risk: tp + fneg,
        true_positives: tp,
        false_positives: fp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub mean_advantage: Option<f64>,
    pub median_advantage: Option<f64>,
    pub positive_fraction: Option<f64>,
    pub crisis_recall: Option<f64>,
    pub crisis_precision: Option<f64>,
    pub crisis_f1: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub hrmdr: Option<f64>,
    pub n_high_risk: usize,
    pub n_states: usize,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Aggregates advantages (high-risk states only) and greedy crisis metrics
/// (all states) from per-state Q-vectors.
pub fn summarize_safety(q_vectors: &[Vec<f64>], risks: &[RiskLevel]) -> Result<(SafetyReport, Vec<f64>)> {
    if q_vectors.len() != risks.len() {
        return Err(Error::LengthMismatch {
            left: q_vectors.len(),
            right: risks.len(),
        });
    }
    let mut advantages = Vec::new();
    let mut actions = Vec::with_capacity(q_vectors.len());
    for (q, r) in q_vectors.iter().zip(risks) {
        if *r == RiskLevel::High {
            advantages.push(safety_advantage(q));
        }
        actions.push(Action::from_index(argmax(q)).expect("ten actions"));
    }
    let metrics = crisis_metrics(&actions, risks)?;
    let n = advantages.len();
    let mut sorted = advantages.clone();
    sorted.sort_by(f64::total_cmp);
    let predicted: Vec<Option<RiskLevel>> = actions.iter().map(|a| predicted_risk(*a)).collect();
    let report = SafetyReport {
        mean_advantage: (n > 0).then(|| advantages.iter().sum::<f64>() / n as f64),
        median_advantage: median(&sorted),
        positive_fraction: (n > 0).then(|| advantages.iter().filter(|a| **a > 0.0).count() as f64 / n as f64),
        crisis_recall: metrics.recall,
        crisis_precision: metrics.precision,
        crisis_f1: metrics.f1,
        false_positive_rate: metrics.false_positive_rate,
        hrmdr: hrmdr(&predicted, risks).ok(),
        n_high_risk: metrics.n_high_risk,
        n_states: risks.len(),
    };
    Ok((report, advantages))
}

/// Encodes each state (noise per `encoder`), queries the policy in eval mode
/// and summarizes. Returns the report and the high-risk advantages.
pub fn advantage_report<T: Scalar, Q: QFunction<T> + ?Sized, R: Rng + ?Sized>(
    policy: &Q,
    eval_states: &[CognitiveLabels],
    encoder: &EncoderConfig,
    rng: &mut R,
) -> Result<(SafetyReport, Vec<f64>)> {
    let mut qs = Vec::with_capacity(eval_states.len());
    for labels in eval_states {
        let s = encode_state::<T, _>(labels, encoder, rng)?;
        qs.push(policy.q_values(&s).into_iter().map(Scalar::as_f64).collect());
    }
    let risks: Vec<RiskLevel> = eval_states.iter().map(|l| l.risk).collect();
    summarize_safety(&qs, &risks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` ascending bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::Empty("histogram values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_start", "bin_end", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                c.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<histogram csv>", e))
    }
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(p)?;
    }
    out.flush().map_err(|e| Error::io("<sweep csv>", e))
}
