use super::{epsilon_schedule, train_step, LearnerConfig, LossBreakdown, MetricsRow, MetricsTrace, ReplayBuffer};
use crate::domain::{MatchStatus, StrategyMatrix};
use crate::encoding::EncoderConfig;
use crate::env::{substream, ActorContext, ActorPool, ActorStep, EnvConfig, LEARNER_STREAM};
use crate::error::Result;
use crate::network::{hard_update, LearnerFooter, OptimizerState, QNetwork};
use crate::reward::RewardConfig;
use crate::scalar::Scalar;

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Final online network.
    pub policy: QNetwork<T>,
    pub target: QNetwork<T>,
    pub optimizer: OptimizerState<T>,
    pub trace: MetricsTrace,
    /// Loss of every learner update, in order.
    pub losses: Vec<LossBreakdown>,
    pub footer: LearnerFooter,
}

#[derive(Debug, Default)]
struct IntervalStats {
    returns: f64,
    finished: u64,
    q_loss: f64,
    kl_loss: f64,
    total_loss: f64,
    updates: u64,
    matchable: u64,
    gold: u64,
    silver: u64,
    high_risk: u64,
    crisis_hits: u64,
}

fn ratio(num: f64, den: u64) -> Option<f64> {
    (den > 0).then(|| num / den as f64)
}

impl IntervalStats {
    fn record_step<T: Scalar>(&mut self, s: &ActorStep<T>) {
        let t = &s.transition;
        if let Some((ret, _)) = s.episode_end {
            self.returns += ret;
            self.finished += 1;
        }
        if t.labels.is_high_risk() {
            self.high_risk += 1;
            self.crisis_hits += u64::from(t.action.is_safe());
        } else if let Some(d) = t.labels.distortion {
            self.matchable += 1;
            match StrategyMatrix::STANDARD.status(d, t.action) {
                MatchStatus::Gold => self.gold += 1,
                MatchStatus::Silver => self.silver += 1,
                MatchStatus::Mismatch => {}
            }
        }
    }

    fn record_loss(&mut self, l: &LossBreakdown) {
        self.q_loss += l.q_loss;
        self.kl_loss += l.kl_loss;
        self.total_loss += l.total;
        self.updates += 1;
    }

    fn row(&self, step: u64, episodes: u64, epsilon: f64) -> MetricsRow {
        MetricsRow {
            step,
            episodes,
            epsilon,
            avg_reward: ratio(self.returns, self.finished),
            q_loss: ratio(self.q_loss, self.updates),
            kl_loss: ratio(self.kl_loss, self.updates),
            total_loss: ratio(self.total_loss, self.updates),
            gold_hit_rate: ratio(self.gold as f64, self.matchable),
            silver_hit_rate: ratio(self.silver as f64, self.matchable),
            crisis_recall: ratio(self.crisis_hits as f64, self.high_risk),
        }
    }
}

/// Runs actors into the replay buffer and updates the online network until
/// `learner.total_episodes` episodes have finished.
///
/// Each environment tick steps every actor once against a snapshot of the
/// online network; transitions are ingested in actor order, with one
/// learner update per `train_every` environment steps once the buffer holds
/// `warmup` transitions. The target network is hard-synced after every
/// `target_update_every` updates. A metrics row is emitted every
/// `metrics_interval` environment steps and once more at the end if the last
/// interval is partial.
pub fn train<T: Scalar>(
    encoder: &EncoderConfig,
    env: &EnvConfig,
    reward: &RewardConfig,
    learner: &LearnerConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    encoder.validate()?;
    env.validate()?;
    reward.validate()?;
    learner.validate()?;
    let scenarios = env.scenario_distribution()?;
    let ctx = ActorContext {
        scenarios: &scenarios,
        env,
        encoder,
        reward,
    };

    let mut rng = substream(seed, LEARNER_STREAM);
    let dims = learner.layer_dims(encoder.dim);
    let mut online = QNetwork::<T>::new(&dims, learner.dropout, &mut rng)?;
    let mut target = online.clone();
    let mut opt = OptimizerState::new(&online, learner.optimizer());
    let mut buffer = ReplayBuffer::new(learner.replay_capacity)?;
    let mut pool = ActorPool::<T>::new(learner.actors, seed, learner.threaded)?;
    let mut snapshot = online.clone();

    let mut trace = MetricsTrace::new();
    let mut losses = Vec::new();
    let mut stats = IntervalStats::default();
    let mut env_steps = 0u64;
    let mut episodes = 0u64;
    let mut ticks = 0u64;
    let total = learner.total_episodes;

    while episodes < total as u64 {
        let epsilon = epsilon_schedule(env_steps, learner);
        let steps = pool.tick(&snapshot, epsilon, total, ctx)?;
        ticks += 1;
        for s in steps {
            env_steps += 1;
            stats.record_step(&s);
            if s.episode_end.is_some() {
                episodes += 1;
            }
            buffer.push(s.transition);

            if buffer.len() >= learner.warmup.max(1) && env_steps.is_multiple_of(learner.train_every) {
                let batch = buffer.sample(learner.batch_size, &mut rng)?;
                let loss = train_step(&batch, &mut online, &target, &mut opt, learner, &mut rng)?;
                stats.record_loss(&loss);
                losses.push(loss);
                if opt.step % learner.target_update_every == 0 {
                    hard_update(&mut target, &online)?;
                }
            }
            if env_steps.is_multiple_of(learner.metrics_interval) {
                trace.push(stats.row(env_steps, episodes, epsilon))?;
                stats = IntervalStats::default();
            }
        }
        if ticks.is_multiple_of(learner.actor_refresh) {
            snapshot.copy_from(&online)?;
        }
    }
    if trace.rows().last().is_none_or(|r| r.step < env_steps) {
        trace.push(stats.row(env_steps, episodes, epsilon_schedule(env_steps, learner)))?;
    }

    let footer = LearnerFooter {
        env_steps,
        learner_steps: opt.step,
        episodes,
        seed,
    };
    Ok(TrainOutcome {
        policy: online,
        target,
        optimizer: opt,
        trace,
        losses,
        footer,
    })
}
