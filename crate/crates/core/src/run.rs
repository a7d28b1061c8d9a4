//! Command orchestration: each function wires configs, modules and files
//! together without numerical logic of its own.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{parse_records, summarize, DatasetSummary, LineError};
use crate::dsco::{build_training_pairs, write_pairs_jsonl, TrainingPair};
use crate::env::{substream, EVAL_STREAM};
use crate::error::{Error, Result};
use crate::eval::{eval_scenarios, evaluate_hit_rates, safety_scenarios, HitRateReport, Sampling};
use crate::learner::{train, TrainOutcome};
use crate::network::{load_checkpoint, save_checkpoint, Checkpoint, QNetwork};
use crate::safety::{
    advantage_report, histogram, safety_concentration_sweep, safety_threshold, write_sweep_csv, SafetyReport,
    SweepPoint,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HIT_RATES_FILE: &str = "hit_rates.json";
pub const HIT_RATES_CSV: &str = "hit_rates_by_type.csv";
pub const SAFETY_FILE: &str = "safety_report.json";
pub const ADVANTAGE_HISTOGRAM: &str = "safety_advantage_hist.csv";
pub const CONFIG_FILE: &str = "config.toml";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct PolicyReports {
    pub hit_rates: HitRateReport,
    pub safety: SafetyReport,
    /// Safety advantage on each high-risk evaluation state.
    pub advantages: Vec<f64>,
}

/// Strategy and safety evaluation on the run's dedicated evaluation stream,
/// so the same policy and config always give the same reports.
pub fn evaluate_policy(policy: &QNetwork<f64>, cfg: &RunConfig) -> Result<PolicyReports> {
    let mut rng = substream(cfg.run.seed, EVAL_STREAM);
    let natural = cfg.env.scenario_distribution()?;
    let scenarios = eval_scenarios(&cfg.eval, &natural, &mut rng);
    let hit_rates = evaluate_hit_rates(policy, &scenarios, &cfg.encoder, &mut rng)?;
    let (safety, advantages) = advantage_report(policy, &safety_scenarios(&cfg.eval), &cfg.encoder, &mut rng)?;
    Ok(PolicyReports {
        hit_rates,
        safety,
        advantages,
    })
}

pub fn write_reports(dir: &Path, reports: &PolicyReports, bins: usize) -> Result<()> {
    ensure_dir(dir)?;
    write_json(&dir.join(HIT_RATES_FILE), &reports.hit_rates)?;
    reports.hit_rates.write_type_csv(create(&dir.join(HIT_RATES_CSV))?)?;
    write_json(&dir.join(SAFETY_FILE), &reports.safety)?;
    if !reports.advantages.is_empty() {
        histogram(&reports.advantages, bins)?.write_csv(create(&dir.join(ADVANTAGE_HISTOGRAM))?)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub outcome: TrainOutcome<f64>,
    pub reports: PolicyReports,
    pub output_dir: PathBuf,
}

impl TrainRun {
    pub fn summary_line(&self) -> String {
        let f = &self.outcome.footer;
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        format!(
            "episodes={} env_steps={} updates={} gold={:.4} gold+silver={:.4} crisis_recall={} positive_advantage={} out={}",
            f.episodes,
            f.env_steps,
            f.learner_steps,
            self.reports.hit_rates.gold_rate,
            self.reports.hit_rates.gold_plus_silver_rate,
            fmt(self.reports.safety.crisis_recall),
            fmt(self.reports.safety.positive_fraction),
            self.output_dir.display()
        )
    }
}

/// Trains, then writes metrics, checkpoint, reports and the resolved config
/// into `output_dir`.
pub fn train_command(cfg: &RunConfig, output_dir: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    ensure_dir(output_dir)?;
    let outcome = train::<f64>(&cfg.encoder, &cfg.env, &cfg.reward, &cfg.learner, cfg.run.seed)?;
    outcome.trace.save(&output_dir.join(METRICS_FILE))?;
    let ckpt = Checkpoint {
        network: outcome.policy.clone(),
        optimizer: outcome.optimizer.clone(),
        footer: outcome.footer,
    };
    save_checkpoint(&output_dir.join(CHECKPOINT_FILE), &ckpt)?;
    let reports = evaluate_policy(&outcome.policy, cfg)?;
    write_reports(output_dir, &reports, cfg.eval.histogram_bins)?;
    fs::write(output_dir.join(CONFIG_FILE), cfg.to_toml_string()).map_err(|e| Error::io(output_dir, e))?;
    Ok(TrainRun {
        outcome,
        reports,
        output_dir: output_dir.to_path_buf(),
    })
}

/// Loads a checkpoint whose header must match the configured layer dims.
pub fn load_policy(cfg: &RunConfig, checkpoint: &Path) -> Result<QNetwork<f64>> {
    Ok(load_checkpoint::<f64>(checkpoint, Some(&cfg.layer_dims()))?.network)
}

pub fn eval_command(
    cfg: &RunConfig,
    checkpoint: &Path,
    output_dir: &Path,
    sampling: Option<Sampling>,
) -> Result<PolicyReports> {
    let mut cfg = cfg.clone();
    if let Some(s) = sampling {
        cfg.eval.sampling = s;
    }
    cfg.validate()?;
    let policy = load_policy(&cfg, checkpoint)?;
    let reports = evaluate_policy(&policy, &cfg)?;
    write_reports(output_dir, &reports, cfg.eval.histogram_bins)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub p_risk: Vec<f64>,
    pub base_bound: f64,
    pub r_safe: f64,
    pub gamma: f64,
    pub tau: f64,
    pub target: f64,
}

impl Default for SweepArgs {
    fn default() -> Self {
        Self {
            p_risk: vec![0.0, 1.0, 10.0, 100.0, 1000.0],
            base_bound: 2.0,
            r_safe: 4.0,
            gamma: 0.8,
            tau: 1.0,
            target: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    /// Smallest listed penalty reaching the target probability.
    pub first_reaching: Option<f64>,
    /// Exact penalty at which the target is reached.
    pub threshold: f64,
}

/// Runs the sweep and checks that the crisis probability is monotone along
/// the (sorted) penalty list: nondecreasing in probability and strictly
/// decreasing in `ln(1 - pi)` between distinct penalties.
pub fn sweep_command<W: Write>(args: &SweepArgs, csv_out: W) -> Result<SweepOutcome> {
    let mut p = args.p_risk.clone();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("penalties must be finite".into()));
    }
    p.sort_by(f64::total_cmp);
    let points = safety_concentration_sweep(&p, args.base_bound, args.r_safe, args.gamma, args.tau)?;
    for w in points.windows(2) {
        let distinct = w[1].p_risk > w[0].p_risk;
        if w[1].pi_safe < w[0].pi_safe || (distinct && w[1].log_miss >= w[0].log_miss) {
            return Err(Error::InvalidArgument(format!(
                "crisis probability not monotone between penalties {} and {}",
                w[0].p_risk, w[1].p_risk
            )));
        }
    }
    write_sweep_csv(&points, csv_out)?;
    let threshold = safety_threshold(args.target, args.base_bound, args.r_safe, args.gamma, args.tau)?;
    let first_reaching = points.iter().find(|pt| pt.pi_safe >= args.target).map(|pt| pt.p_risk);
    Ok(SweepOutcome {
        points,
        first_reaching,
        threshold,
    })
}

#[derive(Debug, Clone)]
pub struct DatasetStatsOutcome {
    pub summary: DatasetSummary,
    pub skipped: Vec<LineError>,
}

pub fn dataset_stats_command(input: &Path, output: Option<&Path>, lenient: bool) -> Result<DatasetStatsOutcome> {
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let parsed = parse_records(BufReader::new(file), &input.display().to_string(), lenient)?;
    let summary = summarize(&parsed.records);
    if let Some(out) = output {
        write_json(out, &summary)?;
    }
    Ok(DatasetStatsOutcome {
        summary,
        skipped: parsed.skipped,
    })
}

/// Greedy policy decisions on the evaluation scenarios (strategy grid plus
/// all safety states), written as JSONL.
pub fn build_pairs_command(cfg: &RunConfig, checkpoint: &Path, output: &Path) -> Result<Vec<TrainingPair>> {
    cfg.validate()?;
    let policy = load_policy(cfg, checkpoint)?;
    let mut rng = substream(cfg.run.seed, EVAL_STREAM);
    let natural = cfg.env.scenario_distribution()?;
    let mut scenarios = eval_scenarios(&cfg.eval, &natural, &mut rng);
    scenarios.extend(safety_scenarios(&cfg.eval));
    let pairs = build_training_pairs(&policy, &scenarios, &cfg.encoder, &mut rng)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_pairs_jsonl(&pairs, create(output)?)?;
    Ok(pairs)
}
