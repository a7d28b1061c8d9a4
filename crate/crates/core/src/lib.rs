//! Safety-aware intervention policy learning for cognitive-distortion
//! support dialogues: a simulated seeker environment, a hierarchical reward,
//! a KL-regularized Double DQN learner, and the analysis, evaluation and
//! masked-loss utilities around it.
//!
//! The learning stack is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod config;
pub mod dataset;
pub mod domain;
pub mod dsco;
pub mod encoding;
pub mod env;
pub mod error;
pub mod eval;
pub mod learner;
pub mod network;
pub mod policy;
pub mod reward;
pub mod run;
pub mod safety;
pub mod scalar;

pub use config::RunConfig;
pub use domain::{
    gold_strategy, silver_strategies, Action, CognitiveLabels, DistortionType, Intensity, MatchStatus, RiskLevel,
    StrategyMatrix,
};
pub use encoding::{encode_state, EncoderConfig, StateVector};
pub use env::{EnvConfig, ImprovementSignal};
pub use error::{Error, Result};
pub use learner::{train, LearnerConfig, LossBreakdown, MetricsTrace, TrainOutcome, Transition};
pub use network::{hard_update, Mode, OptimizerState, QNetwork};
pub use policy::{select_action, QFunction};
pub use reward::{hybrid_reward, RewardBreakdown, RewardConfig};
pub use scalar::Scalar;

pub type QNetworkF64 = QNetwork<f64>;
pub type QNetworkF32 = QNetwork<f32>;
pub type TransitionF64 = Transition<f64>;
pub type TransitionF32 = Transition<f32>;
