//! Checkpoint container.
//!
//! Layout: the 8-byte magic `DSCLCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header, then every tensor as
//! consecutive little-endian `f64`. The header echoes the model and training
//! configuration, the epoch and step counters, the base seed (all randomness
//! is derived from `(seed, step)`, so this is the full generator state) and an
//! index of named tensors. Loading matches tensors by name.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dsvae, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DSCLCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: serde_json::Value,
    epoch: usize,
    step: u64,
    seed: u64,
    adam_t: u64,
    tensors: Vec<TensorEntry>,
}

/// Adam moments, aligned with the model's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: serde_json::Value,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
    pub buffers: Vec<(String, Tensor)>,
    pub adam: Option<AdamMoments>,
}

fn named(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

impl Checkpoint {
    pub fn from_model(
        model: &Dsvae,
        train: serde_json::Value,
        epoch: usize,
        step: u64,
        seed: u64,
        adam: Option<AdamMoments>,
    ) -> Self {
        Checkpoint {
            model: model.cfg.clone(),
            train,
            epoch,
            step,
            seed,
            params: named(&model.params),
            buffers: named(&model.buffers),
            adam,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        let mut push = |name: &str, kind: TensorKind, t: &Tensor| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                kind,
                shape: t.shape().to_vec(),
                offset: data.len(),
            });
            data.extend_from_slice(t.data());
        };
        for (n, t) in &self.params {
            push(n, TensorKind::Param, t);
        }
        for (n, t) in &self.buffers {
            push(n, TensorKind::Buffer, t);
        }
        if let Some(a) = &self.adam {
            for ((n, _), (m, v)) in self.params.iter().zip(a.m.iter().zip(&a.v)) {
                push(n, TensorKind::AdamM, m);
                push(n, TensorKind::AdamV, v);
            }
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            step: self.step,
            seed: self.seed,
            adam_t: self.adam.as_ref().map_or(0, |a| a.t),
            tensors,
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + hjson.len() + 8 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(&format!("header: {e}")))?;
        let body = &bytes[hend..];
        if !body.len().is_multiple_of(8) {
            return Err(bad("tensor data is not a whole number of f64"));
        }
        let data: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (mut params, mut buffers, mut ms, mut vs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let slice = data.get(e.offset..e.offset + n).ok_or_else(|| bad(&format!("tensor {} out of range", e.name)))?;
            let t = Tensor::new(e.shape, slice.to_vec());
            match e.kind {
                TensorKind::Param => params.push((e.name, t)),
                TensorKind::Buffer => buffers.push((e.name, t)),
                TensorKind::AdamM => ms.push(t),
                TensorKind::AdamV => vs.push(t),
            }
        }
        let adam = if ms.is_empty() {
            None
        } else {
            if ms.len() != params.len() || vs.len() != params.len() {
                return Err(bad("optimizer state does not match parameters"));
            }
            Some(AdamMoments { t: header.adam_t, m: ms, v: vs })
        };
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            epoch: header.epoch,
            step: header.step,
            seed: header.seed,
            params,
            buffers,
            adam,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Build the model from its echoed config and copy tensors in by name.
    /// Names absent from the model are ignored; names the model needs but
    /// the checkpoint lacks are an error.
    pub fn restore_model(&self) -> Result<Dsvae> {
        let mut model = Dsvae::new(&self.model)?;
        fill(&mut model.params, &self.params, "parameter")?;
        fill(&mut model.buffers, &self.buffers, "buffer")?;
        Ok(model)
    }

    /// Optimizer moments reordered to match `model`'s parameter order.
    pub fn adam_for(&self, model: &Dsvae) -> Result<Option<AdamMoments>> {
        let Some(a) = &self.adam else { return Ok(None) };
        let mut m = Vec::with_capacity(model.params.len());
        let mut v = Vec::with_capacity(model.params.len());
        for (name, _) in model.params.iter() {
            let i = self
                .params
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks optimizer state for {name}")))?;
            m.push(a.m[i].clone());
            v.push(a.v[i].clone());
        }
        Ok(Some(AdamMoments { t: a.t, m, v }))
    }

    /// Short content hash identifying this checkpoint.
    pub fn id(&self) -> String {
        fnv1a(&self.to_bytes())
    }
}

/// 64-bit FNV-1a as 16 hex digits.
pub fn fnv1a(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn fill(store: &mut ParamStore, src: &[(String, Tensor)], what: &str) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = src
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::validation(format!("checkpoint lacks {what} {name}")))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::Shape {
                context: format!("checkpoint {what} {name}"),
                expected: store.get(id).shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        *store.get_mut(id) = t.clone();
    }
    for (n, _) in src {
        if store.id(n).is_none() {
            log::warn!("ignoring checkpoint {what} {n} unknown to this model");
        }
    }
    Ok(())
}
