//! Structured state encoder.
//!
//! Layout: `[0..8)` distortion one-hot, `[8..11)` intensity one-hot,
//! `[11..14)` risk one-hot, `14` distortion-present flag, `[15..dim)` padding.
//! Every position receives additive `N(0, sigma^2)` noise.

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{CognitiveLabels, DistortionType, Intensity, RiskLevel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const INTENSITY_OFFSET: usize = DistortionType::COUNT;
pub const RISK_OFFSET: usize = INTENSITY_OFFSET + Intensity::COUNT;
pub const PRESENCE_INDEX: usize = RISK_OFFSET + RiskLevel::COUNT;
/// Width of the structured block; the minimum legal `dim`.
pub const FEATURE_DIM: usize = PRESENCE_INDEX + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub noise_sigma: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            noise_sigma: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < FEATURE_DIM {
            return Err(Error::config(
                "encoder.dim",
                format!("must be >= {FEATURE_DIM}, got {}", self.dim),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config(
                "encoder.noise_sigma",
                format!("must be finite and >= 0, got {}", self.noise_sigma),
            ));
        }
        Ok(())
    }
}

/// Fixed-length numeric observation fed to the Q-network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector<T = f64>(Vec<T>);

impl<T: Scalar> StateVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<T> Deref for StateVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Noise-free structured features (the one-hot blocks plus the presence flag).
pub fn one_hot_features(labels: &CognitiveLabels) -> [f64; FEATURE_DIM] {
    let mut out = [0.0; FEATURE_DIM];
    if let Some(d) = labels.distortion {
        out[d.index()] = 1.0;
        out[INTENSITY_OFFSET + labels.intensity.index()] = 1.0;
        out[PRESENCE_INDEX] = 1.0;
    }
    out[RISK_OFFSET + labels.risk.index()] = 1.0;
    out
}

pub fn encode_state<T: Scalar, R: Rng + ?Sized>(
    labels: &CognitiveLabels,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<StateVector<T>> {
    cfg.validate()?;
    let features = one_hot_features(labels);
    let mut values = Vec::with_capacity(cfg.dim);
    for i in 0..cfg.dim {
        let base = features.get(i).copied().unwrap_or(0.0);
        let noise = if cfg.noise_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            cfg.noise_sigma * z
        } else {
            0.0
        };
        values.push(T::of(base + noise));
    }
    Ok(StateVector(values))
}

/// Recovers labels from a noise-free encoding by per-block argmax.
pub fn decode_labels<T: Scalar>(state: &[T]) -> CognitiveLabels {
    fn argmax<T: Scalar>(block: &[T]) -> usize {
        let mut best = 0;
        for (i, v) in block.iter().enumerate() {
            if *v > block[best] {
                best = i;
            }
        }
        best
    }
    let present = state[PRESENCE_INDEX] > T::of(0.5);
    let distortion = present
        .then(|| DistortionType::from_index(argmax(&state[..INTENSITY_OFFSET])))
        .flatten();
    let intensity = Intensity::from_index(argmax(&state[INTENSITY_OFFSET..RISK_OFFSET]))
        .unwrap_or(Intensity::Mild);
    let risk = RiskLevel::from_index(argmax(&state[RISK_OFFSET..PRESENCE_INDEX]))
        .unwrap_or(RiskLevel::Low);
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
