//! Independent oracles shared by the integration tests and the acceptance
//! report. Nothing here calls the library function it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cogpolicy::dataset::{summarize, AnnotationRecord, Speaker};
use cogpolicy::dsco::{build_mask, dual_stream_loss, masked_loss, Stream, TokenRole, TokenSequence};
use cogpolicy::eval::hit_rate_report;
use cogpolicy::learner::{loss_and_gradients, train_step, ReplayBuffer};
use cogpolicy::network::{hard_update, OptimizerState};
use cogpolicy::safety::{crisis_metrics, hrmdr};
use cogpolicy::{
    Action, CognitiveLabels, DistortionType, Intensity, LearnerConfig, MatchStatus, QFunction, QNetwork, RiskLevel,
    StateVector, Transition,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one check: pass flag plus the measured quantity.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Tabular MDP

pub const N_STATES: usize = 4;
pub const N_ACTIONS: usize = 3;
pub const TABULAR_GAMMA: f64 = 0.8;

/// Deterministic rewards and successors; `None` ends the episode.
pub const REWARDS: [[f64; N_ACTIONS]; N_STATES] = [
    [0.0, 1.0, 0.5],
    [1.0, 0.0, -1.0],
    [0.2, 0.3, 2.0],
    [0.0, -0.5, 1.0],
];
pub const NEXT: [[Option<usize>; N_ACTIONS]; N_STATES] = [
    [Some(1), Some(2), Some(0)],
    [Some(2), Some(3), Some(0)],
    [Some(3), Some(0), Some(1)],
    [Some(0), Some(1), None],
];

/// Value iteration to machine precision.
pub fn value_iteration() -> [[f64; N_ACTIONS]; N_STATES] {
    let mut q = [[0.0; N_ACTIONS]; N_STATES];
    for _ in 0..2000 {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::MIN, f64::max)).collect();
        for s in 0..N_STATES {
            for a in 0..N_ACTIONS {
                q[s][a] = REWARDS[s][a] + NEXT[s][a].map_or(0.0, |n| TABULAR_GAMMA * v[n]);
            }
        }
    }
    q
}

fn one_hot(s: usize) -> StateVector<f64> {
    let mut v = vec![0.0; N_STATES];
    v[s] = 1.0;
    StateVector::new(v)
}

/// Double DQN with a linear one-hot network on the tabular MDP, uniform
/// exploration data; returns the max-norm error against value iteration.
pub fn tabular_ddqn_error(steps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LearnerConfig {
        gamma: TABULAR_GAMMA,
        kl_beta: 0.0,
        dropout: 0.0,
        lr: 1e-3,
        weight_decay: 0.0,
        ..LearnerConfig::default()
    };
    let mut online = QNetwork::<f64>::new(&[N_STATES, N_ACTIONS], 0.0, &mut rng).unwrap();
    let mut target = online.clone();
    let mut opt = OptimizerState::new(&online, cfg.optimizer());
    let mut replay = ReplayBuffer::new(10_000).unwrap();
    let labels = CognitiveLabels::without_distortion(RiskLevel::Low);
    for _ in 0..steps {
        let s = rng.random_range(0..N_STATES);
        let a = rng.random_range(0..N_ACTIONS);
        let next = NEXT[s][a];
        replay.push(Transition {
            state: one_hot(s),
            action: Action::from_index(a).unwrap(),
            reward: REWARDS[s][a],
            next_state: one_hot(next.unwrap_or(0)),
            done: next.is_none(),
            labels,
        });
        if replay.len() < cfg.batch_size {
            continue;
        }
        let batch = replay.sample(cfg.batch_size, &mut rng).unwrap();
        train_step(&batch, &mut online, &target, &mut opt, &cfg, &mut rng).unwrap();
        if opt.step.is_multiple_of(cfg.target_update_every) {
            hard_update(&mut target, &online).unwrap();
        }
    }
    let oracle = value_iteration();
    let mut worst: f64 = 0.0;
    for (s, row) in oracle.iter().enumerate() {
        let q = online.q_values(one_hot(s).as_slice());
        for a in 0..N_ACTIONS {
            worst = worst.max((q[a] - row[a]).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Gradient check

fn random_transition(d: usize, rng: &mut ChaCha8Rng) -> Transition<f64> {
    let state: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let next: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Transition {
        state: StateVector::new(state),
        action: *Action::ALL.choose(rng).unwrap(),
        reward: rng.random_range(-2.0..2.0),
        next_state: StateVector::new(next),
        done: rng.random_bool(0.25),
        labels: CognitiveLabels::without_distortion(RiskLevel::Low),
    }
}

/// Relative error between the analytic gradient of `q_loss + beta * kl_loss`
/// and central differences (h = 1e-5), on a random d=16 network in train
/// mode with a replayed dropout mask. `coords` parameters are sampled per
/// seed; the error is `||g - g_fd|| / max(||g||, ||g_fd||)` over them.
pub fn gradient_check(seed: u64, coords: usize) -> f64 {
    const H: f64 = 1e-5;
    const D: usize = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LearnerConfig {
        kl_beta: 0.5,
        ..LearnerConfig::default()
    };
    let dims = cfg.layer_dims(D);
    let mut online = QNetwork::<f64>::new(&dims, cfg.dropout, &mut rng).unwrap();
    for p in online.parameters_mut() {
        *p = rng.random_range(-0.3..0.3);
    }
    let mut target = online.clone();
    for p in target.parameters_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let transitions: Vec<Transition<f64>> = (0..8).map(|_| random_transition(D, &mut rng)).collect();
    let batch: Vec<&Transition<f64>> = transitions.iter().collect();
    let mask_seed: u64 = rng.random();

    let loss = |net: &QNetwork<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        loss_and_gradients(&batch, net, &target, &cfg, &mut r).unwrap()
    };
    let (_, grads) = loss(&online);
    let n = online.parameter_count();
    let picks: Vec<usize> = (0..coords).map(|_| rng.random_range(0..n)).collect();
    let (mut diff2, mut a2, mut f2) = (0.0, 0.0, 0.0);
    for &i in &picks {
        let original = *online.parameters().nth(i).unwrap();
        *online.parameters_mut().nth(i).unwrap() = original + H;
        let plus = loss(&online).0.total;
        *online.parameters_mut().nth(i).unwrap() = original - H;
        let minus = loss(&online).0.total;
        *online.parameters_mut().nth(i).unwrap() = original;
        let fd = (plus - minus) / (2.0 * H);
        let an = grads.get(i);
        diff2 += (an - fd).powi(2);
        a2 += an * an;
        f2 += fd * fd;
    }
    diff2.sqrt() / a2.sqrt().max(f2.sqrt()).max(1e-12)
}

// ---------------------------------------------------------------------------
// Masked-loss oracles

/// `(log_probs, roles, diagnosis, intervention, total)`.
pub type Fixture = (Vec<f64>, Vec<TokenRole>, Option<f64>, Option<f64>, f64);

/// Fixture sequences with hand-evaluated losses.
pub fn dsco_fixtures() -> Vec<Fixture> {
    use TokenRole::*;
    vec![
        (
            vec![-0.3, -1.0, -2.0, -4.0],
            vec![Context, DiagnosisTarget, DiagnosisTarget, InterventionTarget],
            Some(1.5),
            Some(4.0),
            5.5,
        ),
        (
            vec![-0.5, -1.0, -3.0, -0.25, -0.75],
            vec![Context, InterventionTarget, InterventionTarget, DiagnosisTarget, DiagnosisTarget],
            Some(0.5),
            Some(2.0),
            2.5,
        ),
        (
            vec![-9.0, -0.2, -0.6, -1.0],
            vec![Context, DiagnosisTarget, DiagnosisTarget, DiagnosisTarget],
            Some(0.6),
            None,
            0.6,
        ),
    ]
}

pub fn dsco_fixture_error() -> f64 {
    let mut worst: f64 = 0.0;
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    for (lp, roles, diag, interv, total) in dsco_fixtures() {
        let seq = TokenSequence::new(lp, roles).unwrap();
        let out = dual_stream_loss(&seq).unwrap();
        worst = worst
            .max(close(out.diagnosis, diag))
            .max(close(out.intervention, interv))
            .max((out.total - total).abs());
    }
    // two tokens at -1 and -3 average to 2
    let seq = TokenSequence::new(vec![-1.0, -3.0], vec![TokenRole::DiagnosisTarget; 2]).unwrap();
    worst.max((masked_loss(&seq, &[true, true]).unwrap() - 2.0).abs())
}

fn random_sequence(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<TokenRole>) {
    let len = rng.random_range(1..24);
    let roles: Vec<TokenRole> = (0..len)
        .map(|_| *[TokenRole::Context, TokenRole::DiagnosisTarget, TokenRole::InterventionTarget]
            .choose(rng)
            .unwrap())
        .collect();
    let lp = (0..len).map(|_| -rng.random_range(0.0..8.0)).collect();
    (lp, roles)
}

/// Masking invariance, stream disjointness, permutation equivariance and the
/// exact total on `trials` random sequences. Returns the failing trial count.
pub fn dsco_property_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let (lp, roles) = random_sequence(&mut rng);
        let seq = TokenSequence::new(lp.clone(), roles.clone()).unwrap();
        let diag = build_mask(&roles, Stream::Diagnosis);
        let interv = build_mask(&roles, Stream::Intervention);
        let mut ok = diag.iter().zip(&interv).all(|(a, b)| !(*a && *b));
        ok &= roles
            .iter()
            .zip(diag.iter().zip(&interv))
            .all(|(r, (d, i))| *r != TokenRole::Context || (!d && !i));

        for mask in [&diag, &interv] {
            let selected: Vec<f64> = lp.iter().zip(mask.iter()).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
            match masked_loss(&seq, mask) {
                Ok(v) => {
                    let mean = -selected.iter().sum::<f64>() / selected.len() as f64;
                    ok &= (v - mean).abs() <= 1e-12;
                    // rewrite every unmasked log-prob
                    let changed: Vec<f64> = lp
                        .iter()
                        .zip(mask.iter())
                        .map(|(v, m)| if *m { *v } else { -rng.random_range(0.0..8.0) })
                        .collect();
                    let other = TokenSequence::new(changed, roles.clone()).unwrap();
                    ok &= masked_loss(&other, mask).unwrap() == v;
                    // joint permutation
                    let mut idx: Vec<usize> = (0..lp.len()).collect();
                    idx.reverse();
                    let plp: Vec<f64> = idx.iter().map(|&i| lp[i]).collect();
                    let proles: Vec<TokenRole> = idx.iter().map(|&i| roles[i]).collect();
                    let pmask: Vec<bool> = idx.iter().map(|&i| mask[i]).collect();
                    let pv = masked_loss(&TokenSequence::new(plp, proles).unwrap(), &pmask).unwrap();
                    ok &= (pv - v).abs() <= 1e-12;
                }
                Err(_) => ok &= selected.is_empty(),
            }
        }
        match dual_stream_loss(&seq) {
            Ok(out) => ok &= out.total == out.diagnosis.unwrap_or(0.0) + out.intervention.unwrap_or(0.0),
            Err(_) => ok &= roles.iter().all(|r| *r == TokenRole::Context),
        }
        failures += usize::from(!ok);
    }
    failures
}

// ---------------------------------------------------------------------------
// Counting oracles

fn random_risk(rng: &mut ChaCha8Rng) -> RiskLevel {
    *RiskLevel::ALL.choose(rng).unwrap()
}

/// `hrmdr` against direct counting. Returns failing trials.
pub fn hrmdr_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let n = rng.random_range(0..30);
        let truth: Vec<RiskLevel> = (0..n).map(|_| random_risk(&mut rng)).collect();
        let pred: Vec<Option<RiskLevel>> = (0..n)
            .map(|_| rng.random_bool(0.8).then(|| random_risk(&mut rng)))
            .collect();
        let mut high = 0;
        let mut miss = 0;
        for i in 0..n {
            if matches!(truth[i], RiskLevel::High) {
                high += 1;
                if !matches!(pred[i], Some(RiskLevel::High)) {
                    miss += 1;
                }
            }
        }
        let ok = match hrmdr(&pred, &truth) {
            Ok(v) => high > 0 && v == miss as f64 / high as f64,
            Err(_) => high == 0,
        };
        failures += usize::from(!ok);
    }
    failures
}

/// `crisis_metrics` against a confusion matrix built by filtering.
pub fn crisis_metric_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let eq = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    for _ in 0..trials {
        let n = rng.random_range(0..30);
        let actions: Vec<Action> = (0..n)
            .map(|_| {
                if rng.random_bool(0.3) {
                    Action::CrisisIntervention
                } else {
                    *Action::ALL.choose(&mut rng).unwrap()
                }
            })
            .collect();
        let truth: Vec<RiskLevel> = (0..n).map(|_| random_risk(&mut rng)).collect();
        let pairs: Vec<(bool, bool)> = actions
            .iter()
            .zip(&truth)
            .map(|(a, t)| (*a == Action::CrisisIntervention, *t == RiskLevel::High))
            .collect();
        let count = |p: bool, t: bool| pairs.iter().filter(|x| **x == (p, t)).count() as f64;
        let (tp, fp, fnn, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
        let recall = (tp + fnn > 0.0).then(|| tp / (tp + fnn));
        let precision = (tp + fp > 0.0).then(|| tp / (tp + fp));
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        let fpr = (fp + tn > 0.0).then(|| fp / (fp + tn));
        let m = crisis_metrics(&actions, &truth).unwrap();
        let ok = eq(m.recall, recall)
            && eq(m.precision, precision)
            && eq(m.f1, f1)
            && eq(m.false_positive_rate, fpr)
            && m.n_high_risk as f64 == tp + fnn
            && m.true_positives as f64 == tp
            && m.false_positives as f64 == fp;
        failures += usize::from(!ok);
    }
    failures
}

/// Hit-rate report against per-type tallies and `gold + 0.75 * silver`.
pub fn hit_rate_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let statuses = [MatchStatus::Gold, MatchStatus::Silver, MatchStatus::Mismatch];
    let mut failures = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..60);
        let outcomes: Vec<(DistortionType, MatchStatus)> = (0..n)
            .map(|_| (*DistortionType::ALL.choose(&mut rng).unwrap(), *statuses.choose(&mut rng).unwrap()))
            .collect();
        let report = hit_rate_report(&outcomes, 3);
        let gold = outcomes.iter().filter(|o| o.1 == MatchStatus::Gold).count() as f64 / n as f64;
        let silver = outcomes.iter().filter(|o| o.1 == MatchStatus::Silver).count() as f64 / n as f64;
        let mut ok = (report.gold_rate - gold).abs() <= 1e-12
            && (report.silver_rate - silver).abs() <= 1e-12
            && (report.gold_plus_silver_rate - (gold + silver)).abs() <= 1e-12
            && (report.combined - (gold + 0.75 * silver)).abs() <= 1e-12
            && report.n == n
            && report.n_excluded == 3
            && report.per_type.values().map(|t| t.n).sum::<usize>() == n;
        for (d, t) in &report.per_type {
            let of_type: Vec<_> = outcomes.iter().filter(|o| o.0 == *d).collect();
            let g = of_type.iter().filter(|o| o.1 == MatchStatus::Gold).count() as f64 / of_type.len() as f64;
            let s = of_type.iter().filter(|o| o.1 == MatchStatus::Silver).count() as f64 / of_type.len() as f64;
            ok &= t.n == of_type.len()
                && (t.gold_rate - g).abs() <= 1e-12
                && (t.silver_rate - s).abs() <= 1e-12
                && (t.combined - (g + 0.75 * s)).abs() <= 1e-12;
        }
        failures += usize::from(!ok);
    }
    failures
}

fn random_records(rng: &mut ChaCha8Rng) -> Vec<AnnotationRecord> {
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| {
            let speaker = if rng.random_bool(0.5) { Speaker::Seeker } else { Speaker::Counselor };
            let labels = (speaker == Speaker::Seeker && rng.random_bool(0.7)).then(|| {
                if rng.random_bool(0.8) {
                    CognitiveLabels::new(
                        *DistortionType::ALL.choose(rng).unwrap(),
                        *Intensity::ALL.choose(rng).unwrap(),
                        random_risk(rng),
                    )
                } else {
                    CognitiveLabels::without_distortion(random_risk(rng))
                }
            });
            AnnotationRecord {
                dialogue_id: format!("d{}", rng.random_range(0..6)),
                segment_id: rng.random_range(0..4),
                speaker,
                labels,
            }
        })
        .collect()
}

/// `summarize` against per-dialogue grouping by nested scans.
pub fn summary_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..trials {
        let records = random_records(&mut rng);
        let s = summarize(&records);
        let mut ids: Vec<&str> = Vec::new();
        for r in &records {
            if !ids.contains(&r.dialogue_id.as_str()) {
                ids.push(&r.dialogue_id);
            }
        }
        let mut segs: Vec<(&str, u64)> = Vec::new();
        for r in &records {
            if !segs.contains(&(r.dialogue_id.as_str(), r.segment_id)) {
                segs.push((&r.dialogue_id, r.segment_id));
            }
        }
        let labeled: Vec<DistortionType> = records.iter().filter_map(|r| r.labels.and_then(|l| l.distortion)).collect();
        let mut distinct = 0usize;
        for id in &ids {
            let set: BTreeSet<DistortionType> = records
                .iter()
                .filter(|r| r.dialogue_id == *id)
                .filter_map(|r| r.labels.and_then(|l| l.distortion))
                .collect();
            distinct += set.len();
        }
        let nd = ids.len();
        let per = |x: usize| if nd == 0 { 0.0 } else { x as f64 / nd as f64 };
        let mut ok = s.n_dialogues == nd
            && s.n_utterances == records.len()
            && s.n_seeker == records.iter().filter(|r| r.speaker == Speaker::Seeker).count()
            && s.n_counselor == records.iter().filter(|r| r.speaker == Speaker::Counselor).count()
            && s.n_segments == segs.len()
            && s.n_labels == labeled.len()
            && (s.avg_turns - per(records.len())).abs() <= 1e-12
            && (s.avg_labels_per_dialogue - per(labeled.len())).abs() <= 1e-12
            && (s.avg_distinct_types_per_dialogue - per(distinct)).abs() <= 1e-12;
        match &s.type_distribution {
            None => ok &= labeled.is_empty(),
            Some(dist) => {
                let mut expected: BTreeMap<DistortionType, f64> = BTreeMap::new();
                for d in &labeled {
                    *expected.entry(*d).or_default() += 1.0 / labeled.len() as f64;
                }
                ok &= dist.len() == expected.len()
                    && dist.iter().all(|(d, p)| (p - expected[d]).abs() <= 1e-12);
            }
        }
        failures += usize::from(!ok);
    }
    failures
}
