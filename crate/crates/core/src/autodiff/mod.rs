//! Minimal reverse-mode differentiation over dense matrices, plus the focal
//! loss, Adam with decoupled weight decay, named parameter sets and their
//! on-disk checkpoint format.

mod tape;
mod tensor;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Mean focal loss `-(1 - p_t)^gamma * ln(p_t)` over all entries, where
/// `p_t = p` for positive labels and `1 - p` otherwise. `labels` is a
/// constant of the same shape as `scores`.
pub fn focal_loss(tape: &mut Tape, scores: Var, labels: &Tensor, gamma: f64) -> Result<Var> {
    if tape.value(scores).shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "focal_loss",
            left: tape.value(scores).shape(),
            right: labels.shape(),
        });
    }
    // p_t = p * (2y - 1) + (1 - y)
    let sign = tape.constant(labels.map(|y| 2.0 * y - 1.0));
    let offset = tape.constant(labels.map(|y| 1.0 - y));
    let signed = tape.mul(scores, sign)?;
    let pt = tape.add(signed, offset)?;
    let log_pt = tape.log(pt)?;
    let per_edge = if gamma == 0.0 {
        log_pt
    } else {
        let q = tape.scale(pt, -1.0)?;
        let q = tape.add_scalar(q, 1.0)?;
        let w = tape.pow(q, gamma)?;
        tape.mul(w, log_pt)?
    };
    let m = tape.mean(per_edge)?;
    tape.scale(m, -1.0)
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.tensors[i] = t,
            None => {
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `w -= lr * weight_decay * w`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        AdamState {
            config,
            step: 0,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
        }
    }
}

/// One Adam update; `grads[i]` belongs to the i-th parameter and `None`
/// counts as a zero gradient.
pub fn adam_step(params: &mut ParamSet, grads: &[Option<Tensor>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: grads.len(),
            context: "adam gradients".into(),
        });
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
        }
    }
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let g = grads[i].as_ref().map(Tensor::data);
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.map_or(0.0, |g| g[k]);
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
            let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
            *w -= c.lr * (update + c.weight_decay * *w);
        }
    }
    Ok(())
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the data file, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<ManifestEntry>,
    pub hyperparameters: serde_json::Value,
}

/// Path of the JSON manifest accompanying a checkpoint data file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes little-endian f64 values to `path` and the manifest next to it.
pub fn save_checkpoint(path: &Path, params: &ParamSet, hyperparameters: serde_json::Value) -> Result<()> {
    let mut bytes = Vec::with_capacity(params.size() * 8);
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, t) in params.iter() {
        tensors.push(ManifestEntry {
            name: name.to_string(),
            shape: [t.rows(), t.cols()],
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        tensors,
        hyperparameters,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(&mp, json + "\n").map_err(|e| Error::io(&mp, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, Manifest)> {
    let mp = manifest_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", mp.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("{}: length is not a multiple of 8", path.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        let n = e.shape[0] * e.shape[1];
        let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
            Error::Checkpoint(format!("tensor {} runs past the end of {}", e.name, path.display()))
        })?;
        params.insert(e.name.clone(), Tensor::new(e.shape[0], e.shape[1], slice.to_vec())?);
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests;
