//! Hierarchical safety-aware reward.
//!
//! Layers, highest priority first: the safety fuse (risk x crisis action),
//! the strategy matrix with its intensity modifier, then the improvement
//! signal supplied by the environment. The weighted sum is
//! `w_imp * improvement + w_match * match + w_safe * safety`, with `match`
//! forced to zero whenever the fuse fires.

use serde::{Deserialize, Serialize};

use crate::domain::{
    Action, CognitiveLabels, DistortionType, Intensity, MatchStatus, RiskLevel, StrategyMatrix,
};
use crate::env::ImprovementSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub r_crisis_hit: f64,
    pub r_crisis_miss: f64,
    pub r_false_positive: f64,
    pub r_gold: f64,
    pub r_silver: f64,
    pub r_mismatch: f64,
    pub r_severe_bonus: f64,
    pub r_mild_penalty: f64,
    pub w_imp: f64,
    pub w_match: f64,
    pub w_safe: f64,
    /// When set, a missed crisis earns `-p_risk_override` instead of `r_crisis_miss`.
    pub p_risk_override: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            r_crisis_hit: 4.0,
            r_crisis_miss: -1.0,
            r_false_positive: -2.0,
            r_gold: 1.8,
            r_silver: 0.2,
            r_mismatch: -0.5,
            r_severe_bonus: 1.2,
            r_mild_penalty: -0.8,
            w_imp: 1.0,
            w_match: 1.0,
            w_safe: 1.0,
            p_risk_override: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("r_crisis_hit", self.r_crisis_hit),
            ("r_crisis_miss", self.r_crisis_miss),
            ("r_false_positive", self.r_false_positive),
            ("r_gold", self.r_gold),
            ("r_silver", self.r_silver),
            ("r_mismatch", self.r_mismatch),
            ("r_severe_bonus", self.r_severe_bonus),
            ("r_mild_penalty", self.r_mild_penalty),
            ("w_imp", self.w_imp),
            ("w_match", self.w_match),
            ("w_safe", self.w_safe),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::config(format!("reward.{name}"), "must be finite"));
            }
        }
        if !(self.r_gold > self.r_silver && self.r_silver > self.r_mismatch) {
            return Err(Error::config(
                "reward.r_gold",
                "requires r_gold > r_silver > r_mismatch",
            ));
        }
        if let Some(p) = self.p_risk_override {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::config(
                    "reward.p_risk_override",
                    format!("must be finite and >= 0, got {p}"),
                ));
            }
        }
        Ok(())
    }

    /// Reward for a non-safe action in a high-risk state.
    pub fn crisis_miss(&self) -> f64 {
        match self.p_risk_override {
            Some(p) => -p,
            None => self.r_crisis_miss,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    #[serde(rename = "match")]
    pub matching: f64,
    pub improvement: f64,
    pub total: f64,
    pub fused: bool,
}

/// Safety layer. `None` means the fuse did not fire.
pub fn safety_fuse(risk: RiskLevel, action: Action, cfg: &RewardConfig) -> Option<f64> {
    match (risk == RiskLevel::High, action.is_safe()) {
        (true, true) => Some(cfg.r_crisis_hit),
        (true, false) => Some(cfg.crisis_miss()),
        (false, true) => Some(cfg.r_false_positive),
        (false, false) => None,
    }
}

/// Strategy-matrix layer including the additive intensity modifier on gold.
pub fn match_reward(
    distortion: Option<DistortionType>,
    intensity: Intensity,
    action: Action,
    cfg: &RewardConfig,
) -> f64 {
    let Some(d) = distortion else {
        return if action == Action::EmpathicValidation {
            cfg.r_silver
        } else {
            cfg.r_mismatch
        };
    };
    match StrategyMatrix::STANDARD.status(d, action) {
        MatchStatus::Gold => {
            let modifier = match intensity {
                Intensity::Severe => cfg.r_severe_bonus,
                Intensity::Mild => cfg.r_mild_penalty,
                Intensity::Moderate => 0.0,
            };
            cfg.r_gold + modifier
        }
        MatchStatus::Silver => cfg.r_silver,
        MatchStatus::Mismatch => cfg.r_mismatch,
    }
}

pub fn hybrid_reward(
    labels: &CognitiveLabels,
    action: Action,
    improvement: ImprovementSignal,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let fuse = safety_fuse(labels.risk, action, cfg);
    let safety = fuse.unwrap_or(0.0);
    let matching = if fuse.is_some() {
        0.0
    } else {
        match_reward(labels.distortion, labels.intensity, action, cfg)
    };
    let improvement = improvement.value();
    RewardBreakdown {
        safety,
        matching,
        improvement,
        total: cfg.w_imp * improvement + cfg.w_match * matching + cfg.w_safe * safety,
        fused: fuse.is_some(),
    }
}
