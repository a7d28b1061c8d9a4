use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use cogpolicy::dsco::read_pairs_jsonl;
use cogpolicy::eval::HitRateReport;
use cogpolicy::safety::SafetyReport;
use tempfile::TempDir;

const SMOKE: &str = "\
run.seed = 5
encoder.dim = 16
learner.total_episodes = 500
learner.warmup = 200
learner.metrics_interval = 50
eval.repeats = 2
eval.safety_repeats = 2
";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cogpolicy"));
    cmd.env_remove("COGPOLICY_OUTPUT_DIR");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Smoke {
    _dir: TempDir,
    config: PathBuf,
    first: PathBuf,
    second: PathBuf,
}

/// Two training runs of the smoke config, shared by the tests below.
fn smoke() -> &'static Smoke {
    static SMOKE_RUN: OnceLock<Smoke> = OnceLock::new();
    SMOKE_RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("smoke.cfg");
        fs::write(&config, SMOKE).unwrap();
        let first = dir.path().join("a");
        let second = dir.path().join("b");
        let started = std::time::Instant::now();
        let out = run(bin().arg("train").arg("--config").arg(&config).arg("--output-dir").arg(&first));
        assert!(started.elapsed().as_secs() < 30, "smoke run took {:?}", started.elapsed());
        assert!(String::from_utf8_lossy(&out.stdout).contains("episodes=500"));
        // the second run takes its directory from the environment
        run(bin()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .env("COGPOLICY_OUTPUT_DIR", &second));
        Smoke {
            _dir: dir,
            config,
            first,
            second,
        }
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_emits_artifacts() {
    let s = smoke();
    for name in [
        "metrics.csv",
        "checkpoint.bin",
        "hit_rates.json",
        "hit_rates_by_type.csv",
        "safety_report.json",
        "safety_advantage_hist.csv",
        "config.toml",
    ] {
        assert!(s.first.join(name).is_file(), "missing {name}");
    }
    let header = fs::read_to_string(s.first.join("metrics.csv")).unwrap();
    assert!(header.starts_with("step,episodes,epsilon,avg_reward"));
    let hits: HitRateReport = read_json(&s.first.join("hit_rates.json"));
    assert_eq!(hits.n, 48 * 2);
}

#[test]
fn train_is_byte_deterministic() {
    let s = smoke();
    for name in ["metrics.csv", "checkpoint.bin", "hit_rates.json", "safety_report.json"] {
        assert_eq!(
            fs::read(s.first.join(name)).unwrap(),
            fs::read(s.second.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn eval_reproduces_training_reports() {
    let s = smoke();
    let dir = TempDir::new().unwrap();
    run(bin()
        .arg("eval")
        .arg("--config")
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(s.first.join("checkpoint.bin"))
        .arg("--output-dir")
        .arg(dir.path()));
    for name in ["hit_rates.json", "hit_rates_by_type.csv", "safety_report.json", "safety_advantage_hist.csv"] {
        assert_eq!(
            fs::read(s.first.join(name)).unwrap(),
            fs::read(dir.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
    let safety: SafetyReport = read_json(&dir.path().join("safety_report.json"));
    assert_eq!(safety.n_high_risk, 25 * 2);

    let natural = TempDir::new().unwrap();
    run(bin()
        .arg("eval")
        .arg("--config")
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(s.first.join("checkpoint.bin"))
        .arg("--output-dir")
        .arg(natural.path())
        .arg("--sampling")
        .arg("natural"));
    let hits: HitRateReport = read_json(&natural.path().join("hit_rates.json"));
    assert!(hits.n_excluded > 0, "natural sampling includes high-risk states");
}

#[test]
fn eval_rejects_mismatched_or_corrupt_checkpoints() {
    let s = smoke();
    let dir = TempDir::new().unwrap();
    let wide = dir.path().join("wide.cfg");
    fs::write(&wide, SMOKE.replace("encoder.dim = 16", "encoder.dim = 32")).unwrap();
    let out = bin()
        .arg("eval")
        .arg("--config")
        .arg(&wide)
        .arg("--checkpoint")
        .arg(s.first.join("checkpoint.bin"))
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());

    let mut bytes = fs::read(s.first.join("checkpoint.bin")).unwrap();
    bytes[0] ^= 0xff;
    let corrupt = dir.path().join("corrupt.bin");
    fs::write(&corrupt, bytes).unwrap();
    let out = bin()
        .arg("eval")
        .arg("--config")
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(&corrupt)
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("format"));
}

#[test]
fn build_pairs_writes_two_records_per_scenario() {
    let s = smoke();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("pairs.jsonl");
    run(bin()
        .arg("build-pairs")
        .arg("--config")
        .arg(&s.config)
        .arg("--checkpoint")
        .arg(s.first.join("checkpoint.bin"))
        .arg("--output")
        .arg(&path));
    let pairs = read_pairs_jsonl(std::io::BufReader::new(fs::File::open(&path).unwrap())).unwrap();
    // balanced grid (48) and safety states (75), each repeated twice
    assert_eq!(pairs.len(), 2 * (48 * 2 + 75 * 2));
}

#[test]
fn config_errors_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "reward.r_golden = 2.0\n").unwrap();
    let out = bin().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reward.r_golden"));

    fs::write(&cfg, "learner.gamma = 1.0\n").unwrap();
    let out = bin().arg("train").arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learner.gamma"));
}

#[test]
fn safety_sweep_command() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = run(bin().arg("safety-sweep").arg("--output").arg(&csv));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("smallest listed p_risk with pi_safe >= 0.999: 100"), "{stderr}");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 6);

    let out = run(bin().arg("safety-sweep").arg("--p-risk").arg("10"));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);

    let out = bin().arg("safety-sweep").arg("--gamma").arg("1").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn dataset_stats_command() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.jsonl");
    fs::write(
        &input,
        concat!(
            r#"{"dialogue_id":"a","segment_id":1,"speaker":"seeker","labels":{"distortion":"Labeling","intensity":"Mild","risk":"Low"}}"#,
            "\n",
            r#"{"dialogue_id":"a","segment_id":1,"speaker":"counselor"}"#,
            "\n",
            "{broken\n",
        ),
    )
    .unwrap();
    let out = bin().arg("dataset-stats").arg(&input).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3"));

    let summary = dir.path().join("summary.json");
    let out = run(bin()
        .arg("dataset-stats")
        .arg(&input)
        .arg("--lenient")
        .arg("--output")
        .arg(&summary));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped"));
    let value: serde_json::Value = read_json(&summary);
    assert_eq!(value["n_utterances"], 2);
    assert_eq!(value["n_labels"], 1);
}
