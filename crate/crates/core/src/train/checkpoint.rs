//! Versioned binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "HFCK" | version u32 | model digest u64
//! meta_len u32 | meta (UTF-8 JSON: model config, run config, vocabulary, optimizer step)
//! blob_count u32 | blob*
//! blob = name_len u16 | name | rank u8 | dims u32[rank] | f32 data
//! ```
//!
//! Parameters come first in slot order. When optimizer state is saved, the
//! first and second moments follow as `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::config::TrainConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not match the configuration: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Table vocabulary, in row order.
    pub vocab: Option<Vec<String>>,
    /// Optimizer step count, present when moments are saved.
    pub adam_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    /// Parameters widened or kept at precision `T`.
    pub fn params_as<T: Real>(&self) -> ModelParams<T> {
        self.params.cast()
    }

    /// Fails with `ConfigMismatch` unless `expected` has the same digest and
    /// parameter shapes as the stored model.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<(), CheckpointError> {
        let stored = &self.meta.model;
        if expected.digest() != stored.digest() {
            return Err(CheckpointError::ConfigMismatch(format!(
                "expected d={} k={} relations={:?} provider={:?}, checkpoint has d={} k={} relations={:?} provider={:?}",
                expected.dim,
                expected.layers,
                expected.relations,
                expected.provider,
                stored.dim,
                stored.layers,
                stored.relations,
                stored.provider
            )));
        }
        for slot in expected.slots() {
            if expected.shape(slot) != stored.shape(slot) {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "{} has shape {:?}, expected {:?}",
                    expected.name(slot),
                    stored.shape(slot),
                    expected.shape(slot)
                )));
            }
        }
        Ok(())
    }
}

fn put_blob(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(2);
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn checkpoint_to_bytes<T: Real>(
    params: &ModelParams<T>,
    state: Option<&AdamState<T>>,
    cfg: &TrainConfig,
    vocab: Option<&[String]>,
) -> Vec<u8> {
    let meta = CheckpointMeta {
        model: params.config.clone(),
        train: cfg.clone(),
        vocab: vocab.map(<[String]>::to_vec),
        adam_step: state.map(|s| s.step),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let names = params.names();
    let blob_count = names.len() * if state.is_some() { 3 } else { 1 };

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.config.digest().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(blob_count as u32).to_le_bytes());
    for (name, t) in names.iter().zip(&params.tensors) {
        put_blob(&mut out, name, &t.cast());
    }
    if let Some(s) = state {
        for (name, t) in names.iter().zip(&s.m) {
            put_blob(&mut out, &format!("adam.m.{name}"), &t.cast());
        }
        for (name, t) in names.iter().zip(&s.v) {
            put_blob(&mut out, &format!("adam.v.{name}"), &t.cast());
        }
    }
    out
}

pub fn checkpoint_save<T: Real>(
    params: &ModelParams<T>,
    state: Option<&AdamState<T>>,
    cfg: &TrainConfig,
    vocab: Option<&[String]>,
    path: &Path,
) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_to_bytes(params, state, cfg, vocab))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("eight bytes")))
    }

    fn blob(&mut self) -> Result<(String, Tensor<f32>), CheckpointError> {
        let len = self.u16("blob name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "blob name")?)
            .map_err(|_| corrupt("blob name is not UTF-8"))?
            .to_string();
        let rank = self.u8("rank")? as usize;
        if rank == 0 || rank > 2 {
            return Err(corrupt(format!("{name}: unsupported rank {rank}")));
        }
        let mut dims = [1usize; 2];
        for d in dims.iter_mut().skip(2 - rank) {
            *d = self.u32("dims")? as usize;
        }
        let count = dims[0]
            .checked_mul(dims[1])
            .ok_or_else(|| corrupt(format!("{name}: shape overflows")))?;
        let raw = self.take(
            count.checked_mul(4).ok_or_else(|| corrupt("blob too large"))?,
            "blob data",
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let t = Tensor::new(dims[0], dims[1], data).map_err(|e| corrupt(e.to_string()))?;
        Ok((name, t))
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let digest = r.u64("digest")?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if meta.model.digest() != digest {
        return Err(corrupt("header digest does not match the stored model configuration"));
    }
    let count = r.u32("blob count")? as usize;
    let slots = meta.model.slots();
    let expected_count = slots.len() * if meta.adam_step.is_some() { 3 } else { 1 };
    if count != expected_count {
        return Err(corrupt(format!("{count} blobs, expected {expected_count}")));
    }

    let mut read_group = |prefix: &str| -> Result<Vec<Tensor<f32>>, CheckpointError> {
        slots
            .iter()
            .map(|&slot| {
                let (name, t) = r.blob()?;
                let want = format!("{prefix}{}", meta.model.name(slot));
                if name != want {
                    return Err(corrupt(format!("blob {name:?} where {want:?} was expected")));
                }
                if t.shape() != meta.model.shape(slot) {
                    return Err(corrupt(format!(
                        "{name} has shape {:?}, configuration says {:?}",
                        t.shape(),
                        meta.model.shape(slot)
                    )));
                }
                Ok(t)
            })
            .collect()
    };
    let tensors = read_group("")?;
    let adam = match meta.adam_step {
        Some(step) => {
            let m = read_group("adam.m.")?;
            let v = read_group("adam.v.")?;
            Some(AdamState { step, m, v })
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        params: ModelParams {
            config: meta.model.clone(),
            tensors,
        },
        meta,
        adam,
    })
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Provider;
    use crate::graph::RelId;

    fn sample() -> (ModelParams<f32>, AdamState<f32>) {
        let provider = Provider::Hashed { dim: 3, seed: 1 };
        let p = ModelParams::init(
            ModelConfig::new(3, 2, RelId::HETEROGENEOUS.to_vec(), &provider),
            &provider,
            9,
        );
        let mut s = AdamState::new(&p);
        s.step = 17;
        s.m[0].data_mut()[0] = 0.25;
        (p, s)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, s) = sample();
        let bytes = checkpoint_to_bytes(&p, Some(&s), &TrainConfig::default(), None);
        let ck = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.adam.as_ref(), Some(&s));
        assert_eq!(
            checkpoint_to_bytes(&ck.params, ck.adam.as_ref(), &ck.meta.train, None),
            bytes
        );
    }

    #[test]
    fn header_layout() {
        let (p, _) = sample();
        let bytes = checkpoint_to_bytes(&p, None, &TrainConfig::default(), None);
        assert_eq!(&bytes[..4], b"HFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), p.config.digest());
    }

    #[test]
    fn every_truncation_is_corrupt() {
        let (p, _) = sample();
        let bytes = checkpoint_to_bytes(&p, None, &TrainConfig::default(), None);
        for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(checkpoint_from_bytes(&bytes[..cut]), Err(CheckpointError::Corrupt(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            checkpoint_from_bytes(&extra),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn different_dimension_is_a_mismatch() {
        let (p, _) = sample();
        let ck = checkpoint_from_bytes(&checkpoint_to_bytes(&p, None, &TrainConfig::default(), None)).unwrap();
        let provider = Provider::Hashed { dim: 4, seed: 1 };
        let other = ModelConfig::new(4, 2, RelId::HETEROGENEOUS.to_vec(), &provider);
        assert!(matches!(
            ck.check_config(&other),
            Err(CheckpointError::ConfigMismatch(_))
        ));
        assert!(ck.check_config(&p.config).is_ok());
    }
}
