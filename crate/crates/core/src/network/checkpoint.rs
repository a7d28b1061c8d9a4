//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "CPRL1" | u32 n_dims | u64 dims[n_dims] | f64 dropout_p
//! f64 params      (per layer: weights row-major, then bias)
//! f64 first moments, f64 second moments (same order)
//! u64 optimizer step
//! "LRNR" | u64 env_steps | u64 learner_steps | u64 episodes | u64 seed
//!        | f64 lr | f64 weight_decay | f64 beta1 | f64 beta2 | f64 eps
//! ```
//!
//! Values are widened to f64 on write regardless of the network scalar type.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Gradients, OptimizerConfig, OptimizerState, QNetwork};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 5] = b"CPRL1";
const FOOTER_MAGIC: &[u8; 4] = b"LRNR";
const MAX_DIMS: u32 = 64;

/// Learner progress stored after the optimizer block. The replay buffer is
/// not persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LearnerFooter {
    pub env_steps: u64,
    pub learner_steps: u64,
    pub episodes: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar = f64> {
    pub network: QNetwork<T>,
    pub optimizer: OptimizerState<T>,
    pub footer: LearnerFooter,
}

impl<T: Scalar> Checkpoint<T> {
    /// Rejects a checkpoint whose layer dims differ from `expected`.
    pub fn check_dims(&self, expected: &[usize]) -> Result<()> {
        let dims = self.network.dims();
        if dims != expected {
            return Err(Error::Format(format!(
                "checkpoint dims {dims:?} do not match configured {expected:?}"
            )));
        }
        Ok(())
    }
}

pub fn write_checkpoint<T: Scalar, W: Write>(mut w: W, ckpt: &Checkpoint<T>) -> std::io::Result<()> {
    let net = &ckpt.network;
    let dims = net.dims();
    w.write_all(MAGIC)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    w.write_all(&net.dropout_p().to_le_bytes())?;
    for p in net.parameters() {
        w.write_all(&p.as_f64().to_le_bytes())?;
    }
    for block in [&ckpt.optimizer.m, &ckpt.optimizer.v] {
        for p in block.iter() {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
    }
    w.write_all(&ckpt.optimizer.step.to_le_bytes())?;
    w.write_all(FOOTER_MAGIC)?;
    let f = ckpt.footer;
    for v in [f.env_steps, f.learner_steps, f.episodes, f.seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    let c = ckpt.optimizer.config;
    for v in [c.lr, c.weight_decay, c.beta1, c.beta2, c.eps] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn fill<'a, T: Scalar>(&mut self, slots: impl Iterator<Item = &'a mut T>, what: &str) -> Result<()> {
        for slot in slots {
            *slot = T::of(self.f64(what)?);
        }
        Ok(())
    }
}

pub fn read_checkpoint<T: Scalar, R: Read>(r: R) -> Result<Checkpoint<T>> {
    let mut r = Reader { inner: r };
    let magic: [u8; 5] = r.bytes("magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let n_dims = r.u32("layer count")?;
    if !(2..=MAX_DIMS).contains(&n_dims) {
        return Err(Error::Format(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u64("layer dims").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let dropout_p = r.f64("dropout")?;
    let mut network = QNetwork::<T>::zeros(&dims, dropout_p)
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    r.fill(network.parameters_mut(), "parameters")?;

    let mut m = Gradients::zeros_like(&network);
    let mut v = Gradients::zeros_like(&network);
    for (block, what) in [(&mut m, "first moments"), (&mut v, "second moments")] {
        let Gradients { weights, biases } = block;
        let slots = weights
            .iter_mut()
            .zip(biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()));
        r.fill(slots, what)?;
    }
    let step = r.u64("optimizer step")?;
    let footer_magic: [u8; 4] = r.bytes("footer")?;
    if &footer_magic != FOOTER_MAGIC {
        return Err(Error::Format("missing learner footer".into()));
    }
    let footer = LearnerFooter {
        env_steps: r.u64("footer")?,
        learner_steps: r.u64("footer")?,
        episodes: r.u64("footer")?,
        seed: r.u64("footer")?,
    };
    let config = OptimizerConfig {
        lr: r.f64("footer")?,
        weight_decay: r.f64("footer")?,
        beta1: r.f64("footer")?,
        beta2: r.f64("footer")?,
        eps: r.f64("footer")?,
    };
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| Error::Format(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        network,
        optimizer: OptimizerState { config, m, v, step },
        footer,
    })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), ckpt).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and, when `expected_dims` is given, validates the
/// header against it.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected_dims: Option<&[usize]>) -> Result<Checkpoint<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ckpt = read_checkpoint(BufReader::new(file))?;
    if let Some(dims) = expected_dims {
        ckpt.check_dims(dims)?;
    }
    Ok(ckpt)
}
