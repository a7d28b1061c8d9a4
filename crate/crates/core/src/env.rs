//! Simulated counseling environment.
//!
//! A scripted help-seeker carries one distortion at a time. Each counselor
//! action moves intensity one rung down (or up, on a mismatch) with the
//! probabilities in [`EnvConfig`]; dropping below `Mild` resolves the
//! distortion. A crisis intervention on a high-risk seeker hands the
//! conversation off and ends the episode.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    Action, CognitiveLabels, DistortionType, Intensity, MatchStatus, RiskLevel, StrategyMatrix,
};
use crate::encoding::{encode_state, EncoderConfig, StateVector};
use crate::error::{Error, Result};
use crate::learner::Transition;
use crate::policy::{select_action, QFunction};
use crate::reward::{hybrid_reward, RewardBreakdown, RewardConfig};
use crate::scalar::Scalar;

/// Deterministic, platform-independent generator used for every stream.
pub type SimRng = ChaCha8Rng;

/// Stream ids below this are reserved for the learner and evaluation.
const ACTOR_STREAM_BASE: u64 = 16;
pub const LEARNER_STREAM: u64 = 0;
pub const EVAL_STREAM: u64 = 1;

/// Independent substream `stream` of the master seed.
pub fn substream(master_seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

pub fn actor_rng(master_seed: u64, actor_index: usize) -> SimRng {
    substream(master_seed, ACTOR_STREAM_BASE + actor_index as u64)
}

/// Direction of the intensity change produced by one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImprovementSignal {
    Worsened,
    Unchanged,
    Improved,
}

impl ImprovementSignal {
    pub fn value(self) -> f64 {
        match self {
            ImprovementSignal::Worsened => -1.0,
            ImprovementSignal::Unchanged => 0.0,
            ImprovementSignal::Improved => 1.0,
        }
    }
}

const PUBLISHED_HEAD: [(DistortionType, f64); 3] = [
    (DistortionType::EmotionalReasoning, 0.369),
    (DistortionType::Personalization, 0.150),
    (DistortionType::Catastrophizing, 0.128),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDistribution {
    /// Indexed by `DistortionType::index()`.
    pub distortion: [f64; DistortionType::COUNT],
    pub p_no_distortion: f64,
    pub intensity: [f64; Intensity::COUNT],
    pub risk: [f64; RiskLevel::COUNT],
}

impl ScenarioDistribution {
    /// Head categories at their published shares, the remainder split over
    /// the tail by `tail_weights` (missing tail types weigh 1). All distortion
    /// mass is scaled by `1 - p_no_distortion`.
    pub fn with_tail_weights(
        tail_weights: &BTreeMap<DistortionType, f64>,
        p_no_distortion: f64,
    ) -> Result<Self> {
        let mut distortion = [0.0; DistortionType::COUNT];
        for (d, p) in PUBLISHED_HEAD {
            distortion[d.index()] = p;
        }
        let head: f64 = PUBLISHED_HEAD.iter().map(|(_, p)| p).sum();
        let tail: Vec<DistortionType> = DistortionType::ALL
            .iter()
            .copied()
            .filter(|d| !PUBLISHED_HEAD.iter().any(|(h, _)| h == d))
            .collect();
        if let Some(d) = tail_weights.keys().find(|d| !tail.contains(d)) {
            return Err(Error::config(
                format!("env.tail_weights.{d}"),
                "only tail categories take weights",
            ));
        }
        let weights: Vec<f64> = tail
            .iter()
            .map(|d| tail_weights.get(d).copied().unwrap_or(1.0))
            .collect();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("env.tail_weights", "weights must be >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::config("env.tail_weights", "weights sum to zero"));
        }
        for (d, w) in tail.iter().zip(&weights) {
            distortion[d.index()] = (1.0 - head) * w / total;
        }
        for p in &mut distortion {
            *p *= 1.0 - p_no_distortion;
        }
        let dist = Self {
            distortion,
            p_no_distortion,
            intensity: [1.0 / 3.0; 3],
            risk: [1.0 / 3.0; 3],
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn probability(&self, d: DistortionType) -> f64 {
        self.distortion[d.index()]
    }

    /// All mass on one label triple.
    pub fn degenerate(labels: CognitiveLabels) -> Self {
        let mut distortion = [0.0; DistortionType::COUNT];
        let mut p_no = 0.0;
        match labels.distortion {
            Some(d) => distortion[d.index()] = 1.0,
            None => p_no = 1.0,
        }
        let mut intensity = [0.0; 3];
        intensity[labels.intensity.index()] = 1.0;
        let mut risk = [0.0; 3];
        risk[labels.risk.index()] = 1.0;
        Self {
            distortion,
            p_no_distortion: p_no,
            intensity,
            risk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, probs: &[f64]| -> Result<()> {
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(name, "probabilities must lie in [0, 1]"));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(name, format!("probabilities sum to {sum}")));
            }
            Ok(())
        };
        let mut with_none = self.distortion.to_vec();
        with_none.push(self.p_no_distortion);
        check("env.distortion", &with_none)?;
        check("env.intensity_probs", &self.intensity)?;
        check("env.risk_probs", &self.risk)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CognitiveLabels {
        let u_d: f64 = rng.random();
        let u_i: f64 = rng.random();
        let u_r: f64 = rng.random();
        let distortion = pick(&self.distortion, u_d).and_then(DistortionType::from_index);
        let intensity = Intensity::from_index(pick(&self.intensity, u_i).unwrap_or(2))
            .expect("intensity index");
        let risk = RiskLevel::from_index(pick(&self.risk, u_r).unwrap_or(2)).expect("risk index");
        CognitiveLabels {
            distortion,
            intensity: if distortion.is_some() {
                intensity
            } else {
                Intensity::Mild
            },
            risk,
        }
    }
}

/// Inverse-CDF pick. `None` when `u` falls past the listed mass.
fn pick(probs: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(i);
        }
    }
    // Rounding can leave the cumulative sum a hair below 1.
    let total: f64 = probs.iter().sum();
    if total >= 1.0 - 1e-9 {
        probs.iter().rposition(|p| *p > 0.0)
    } else {
        None
    }
}

pub fn default_scenario_distribution() -> ScenarioDistribution {
    ScenarioDistribution::with_tail_weights(&BTreeMap::new(), 0.0)
        .expect("default distribution is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub max_turns: u32,
    pub p_improve_gold: f64,
    pub p_improve_silver: f64,
    pub p_improve_mismatch: f64,
    pub p_worsen_mismatch: f64,
    pub p_no_distortion: f64,
    pub tail_weights: BTreeMap<DistortionType, f64>,
    /// Overrides for the (uniform) intensity prior.
    pub intensity_probs: BTreeMap<Intensity, f64>,
    /// Overrides for the (uniform) risk prior.
    pub risk_probs: BTreeMap<RiskLevel, f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_turns: 8,
            p_improve_gold: 0.8,
            p_improve_silver: 0.4,
            p_improve_mismatch: 0.05,
            p_worsen_mismatch: 0.2,
            p_no_distortion: 0.0,
            tail_weights: BTreeMap::new(),
            intensity_probs: BTreeMap::new(),
            risk_probs: BTreeMap::new(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_turns == 0 {
            return Err(Error::config("env.max_turns", "must be positive"));
        }
        for (name, p) in [
            ("p_improve_gold", self.p_improve_gold),
            ("p_improve_silver", self.p_improve_silver),
            ("p_improve_mismatch", self.p_improve_mismatch),
            ("p_worsen_mismatch", self.p_worsen_mismatch),
            ("p_no_distortion", self.p_no_distortion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    format!("env.{name}"),
                    format!("must lie in [0, 1], got {p}"),
                ));
            }
        }
        if self.p_improve_mismatch + self.p_worsen_mismatch > 1.0 {
            return Err(Error::config(
                "env.p_worsen_mismatch",
                "p_improve_mismatch + p_worsen_mismatch must be <= 1",
            ));
        }
        self.scenario_distribution().map(|_| ())
    }

    pub fn scenario_distribution(&self) -> Result<ScenarioDistribution> {
        let mut dist =
            ScenarioDistribution::with_tail_weights(&self.tail_weights, self.p_no_distortion)?;
        for (i, p) in &self.intensity_probs {
            dist.intensity[i.index()] = *p;
        }
        for (r, p) in &self.risk_probs {
            dist.risk[r.index()] = *p;
        }
        dist.validate()?;
        Ok(dist)
    }

    fn p_improve(&self, status: MatchStatus) -> f64 {
        match status {
            MatchStatus::Gold => self.p_improve_gold,
            MatchStatus::Silver => self.p_improve_silver,
            MatchStatus::Mismatch => self.p_improve_mismatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub labels: CognitiveLabels,
    pub turn: u32,
    pub resolved: bool,
    /// Set on resolution, crisis handoff or the turn limit.
    pub done: bool,
}

pub fn reset<R: Rng + ?Sized>(dist: &ScenarioDistribution, rng: &mut R) -> EpisodeState {
    EpisodeState {
        labels: dist.sample(rng),
        turn: 0,
        resolved: false,
        done: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EpisodeState,
    pub signal: ImprovementSignal,
    pub done: bool,
}

pub fn step<R: Rng + ?Sized>(
    state: &EpisodeState,
    action: Action,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::EpisodeDone);
    }
    let mut next = *state;
    next.turn += 1;
    let mut signal = ImprovementSignal::Unchanged;

    let handoff = state.labels.is_high_risk() && action.is_safe();
    if !handoff {
        let roll: f64 = rng.random();
        if let Some(d) = state.labels.distortion {
            let status = if action.is_safe() {
                MatchStatus::Mismatch
            } else {
                StrategyMatrix::STANDARD.status(d, action)
            };
            let p_up = cfg.p_improve(status);
            if roll < p_up {
                signal = ImprovementSignal::Improved;
                match state.labels.intensity.milder() {
                    Some(milder) => next.labels.intensity = milder,
                    None => next.resolved = true,
                }
            } else if status == MatchStatus::Mismatch && roll < p_up + cfg.p_worsen_mismatch {
                let harsher = state.labels.intensity.harsher();
                if harsher != state.labels.intensity {
                    signal = ImprovementSignal::Worsened;
                    next.labels.intensity = harsher;
                }
            }
        }
    }

    next.done = handoff || next.resolved || next.turn >= cfg.max_turns;
    Ok(StepOutcome {
        state: next,
        signal,
        done: next.done,
    })
}

/// Bundle of read-only settings an actor needs each tick.
#[derive(Debug, Clone, Copy)]
pub struct ActorContext<'a> {
    pub scenarios: &'a ScenarioDistribution,
    pub env: &'a EnvConfig,
    pub encoder: &'a EncoderConfig,
    pub reward: &'a RewardConfig,
}

/// What one actor produced in one tick.
#[derive(Debug, Clone)]
pub struct ActorStep<T: Scalar> {
    pub actor: usize,
    pub transition: Transition<T>,
    pub reward: RewardBreakdown,
    pub signal: ImprovementSignal,
    /// Undiscounted return and length when this step ended the episode.
    pub episode_end: Option<(f64, u32)>,
}

/// One seeker-counselor session with its own random stream.
#[derive(Debug, Clone)]
pub struct Actor<T: Scalar> {
    index: usize,
    rng: SimRng,
    episode: Option<(EpisodeState, StateVector<T>)>,
    episode_return: f64,
}

impl<T: Scalar> Actor<T> {
    pub fn new(master_seed: u64, index: usize) -> Self {
        Self {
            index,
            rng: actor_rng(master_seed, index),
            episode: None,
            episode_return: 0.0,
        }
    }

    pub fn in_episode(&self) -> bool {
        self.episode.is_some()
    }

    /// Starts an episode if idle, then takes one epsilon-greedy step.
    pub fn step<Q: QFunction<T> + ?Sized>(
        &mut self,
        policy: &Q,
        epsilon: f64,
        ctx: ActorContext<'_>,
    ) -> Result<ActorStep<T>> {
        let (state, obs) = match self.episode.take() {
            Some(active) => active,
            None => {
                self.episode_return = 0.0;
                let state = reset(ctx.scenarios, &mut self.rng);
                let obs = encode_state(&state.labels, ctx.encoder, &mut self.rng)?;
                (state, obs)
            }
        };
        let q = policy.q_values(&obs);
        let action = select_action(&q, epsilon, &mut self.rng);
        let outcome = step(&state, action, ctx.env, &mut self.rng)?;
        let reward = hybrid_reward(&state.labels, action, outcome.signal, ctx.reward);
        let next_obs = encode_state(&outcome.state.labels, ctx.encoder, &mut self.rng)?;
        self.episode_return += reward.total;

        let episode_end = if outcome.done {
            Some((self.episode_return, outcome.state.turn))
        } else {
            self.episode = Some((outcome.state, next_obs.clone()));
            None
        };
        Ok(ActorStep {
            actor: self.index,
            transition: Transition {
                state: obs,
                action,
                reward: reward.total,
                next_state: next_obs,
                done: outcome.done,
                labels: state.labels,
            },
            reward,
            signal: outcome.signal,
            episode_end,
        })
    }
}

/// Lockstep vector of actors. Each tick every eligible actor takes one step
/// and results come back in actor-index order, so output is identical
/// whether actors run sequentially or on the rayon pool.
#[derive(Debug, Clone)]
pub struct ActorPool<T: Scalar> {
    actors: Vec<Actor<T>>,
    episodes_started: usize,
    threaded: bool,
}

impl<T: Scalar> ActorPool<T> {
    pub fn new(n: usize, master_seed: u64, threaded: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("learner.actors", "need at least one actor"));
        }
        Ok(Self {
            actors: (0..n).map(|i| Actor::new(master_seed, i)).collect(),
            episodes_started: 0,
            threaded,
        })
    }

    pub fn len(&self) -> usize {
        self.actors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actors.is_empty()
    }

    pub fn any_active(&self) -> bool {
        self.actors.iter().any(Actor::in_episode)
    }

    /// Steps every actor that is mid-episode, or idle while fewer than
    /// `episode_budget` episodes have been started pool-wide.
    pub fn tick<Q: QFunction<T> + ?Sized>(
        &mut self,
        policy: &Q,
        epsilon: f64,
        episode_budget: usize,
        ctx: ActorContext<'_>,
    ) -> Result<Vec<ActorStep<T>>> {
        let mut selected = Vec::with_capacity(self.actors.len());
        for actor in &self.actors {
            let go = actor.in_episode() || self.episodes_started < episode_budget;
            if go && !actor.in_episode() {
                self.episodes_started += 1;
            }
            selected.push(go);
        }
        let step_one = |(actor, go): (&mut Actor<T>, &bool)| -> Option<Result<ActorStep<T>>> {
            go.then(|| actor.step(policy, epsilon, ctx))
        };
        let results: Vec<Option<Result<ActorStep<T>>>> = if self.threaded {
            self.actors
                .par_iter_mut()
                .zip(selected.par_iter())
                .map(step_one)
                .collect()
        } else {
            self.actors.iter_mut().zip(selected.iter()).map(step_one).collect()
        };
        results.into_iter().flatten().collect()
    }
}

/// Collects transitions from `n` actors running a fixed policy until each
/// has finished `episodes_per_actor` episodes. Output order is tick-major,
/// actor-minor.
#[allow(clippy::too_many_arguments)]
pub fn run_actors<T: Scalar, Q: QFunction<T> + ?Sized>(
    n: usize,
    policy: &Q,
    episodes_per_actor: usize,
    epsilon: f64,
    master_seed: u64,
    ctx: ActorContext<'_>,
    threaded: bool,
    mut sink: impl FnMut(ActorStep<T>),
) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("run_actors needs n >= 1".into()));
    }
    let mut actors: Vec<Actor<T>> = (0..n).map(|i| Actor::new(master_seed, i)).collect();
    let mut finished = vec![0usize; n];
    let mut emitted = 0;
    loop {
        let live: Vec<bool> = finished.iter().map(|&f| f < episodes_per_actor).collect();
        if !live.iter().any(|&l| l) {
            break;
        }
        let step_one = |(actor, go): (&mut Actor<T>, &bool)| -> Option<Result<ActorStep<T>>> {
            go.then(|| actor.step(policy, epsilon, ctx))
        };
        let results: Vec<_> = if threaded {
            actors.par_iter_mut().zip(live.par_iter()).map(step_one).collect()
        } else {
            actors.iter_mut().zip(live.iter()).map(step_one).collect()
        };
        for result in results.into_iter().flatten() {
            let s = result?;
            if s.episode_end.is_some() {
                finished[s.actor] += 1;
            }
            emitted += 1;
            sink(s);
        }
    }
    Ok(emitted)
}
