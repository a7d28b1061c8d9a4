use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cogpolicy::config::{RunConfig, OUTPUT_DIR_ENV};
use cogpolicy::eval::Sampling;
use cogpolicy::run::{
    build_pairs_command, dataset_stats_command, eval_command, sweep_command, train_command, SweepArgs,
};
use cogpolicy::Result;

#[derive(Parser)]
#[command(name = "cogpolicy", version, about = "Safety-aware intervention policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Balanced,
    Natural,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Balanced => Sampling::Balanced,
            SamplingArg::Natural => Sampling::Natural,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoint and reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        sampling: Option<SamplingArg>,
    },
    /// Crisis-action probability under worst-case values as the miss penalty grows.
    SafetySweep {
        #[arg(long, value_delimiter = ',', default_values_t = SweepArgs::default().p_risk)]
        p_risk: Vec<f64>,
        #[arg(long, default_value_t = 2.0)]
        base_bound: f64,
        #[arg(long, default_value_t = 4.0)]
        r_safe: f64,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.999)]
        target: f64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize an annotation JSONL file.
    DatasetStats {
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Write diagnosis/intervention training records from a policy.
    BuildPairs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, output_dir } => {
            let cfg = RunConfig::load(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.run.output_dir.clone());
            let run = train_command(&cfg, &dir)?;
            println!("{}", run.summary_line());
        }
        Command::Eval {
            config,
            checkpoint,
            output_dir,
            sampling,
        } => {
            let cfg = RunConfig::load(&config)?;
            let dir = output_dir.unwrap_or_else(|| cfg.run.output_dir.clone());
            let r = eval_command(&cfg, &checkpoint, &dir, sampling.map(Into::into))?;
            println!(
                "gold={:.4} gold+silver={:.4} crisis_recall={:?} out={}",
                r.hit_rates.gold_rate,
                r.hit_rates.gold_plus_silver_rate,
                r.safety.crisis_recall,
                dir.display()
            );
        }
        Command::SafetySweep {
            p_risk,
            base_bound,
            r_safe,
            gamma,
            tau,
            target,
            output,
        } => {
            let args = SweepArgs {
                p_risk,
                base_bound,
                r_safe,
                gamma,
                tau,
                target,
            };
            let outcome = match &output {
                Some(path) => {
                    let file = std::fs::File::create(path).map_err(|e| cogpolicy::Error::io(path, e))?;
                    sweep_command(&args, file)?
                }
                None => sweep_command(&args, std::io::stdout().lock())?,
            };
            let listed = outcome
                .first_reaching
                .map_or_else(|| "none".to_string(), |p| p.to_string());
            eprintln!(
                "monotone: yes; smallest listed p_risk with pi_safe >= {target}: {listed}; exact threshold: {:.6}",
                outcome.threshold
            );
        }
        Command::DatasetStats { input, output, lenient } => {
            let out = dataset_stats_command(&input, output.as_deref(), lenient)?;
            for e in &out.skipped {
                eprintln!("skipped {}:{}: {}", input.display(), e.line, e.reason);
            }
            if output.is_none() {
                println!("{}", serde_json::to_string_pretty(&out.summary)?);
            }
        }
        Command::BuildPairs {
            config,
            checkpoint,
            output,
        } => {
            let cfg = RunConfig::load(&config)?;
            let pairs = build_pairs_command(&cfg, &checkpoint, &output)?;
            println!("wrote {} records to {}", pairs.len(), output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
