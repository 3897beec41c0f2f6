//! Checkpoint byte layout, all integers little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `GRIDFLOW`                          |
//! | 8      | 4    | format version (u32, currently 1)         |
//! | 12     | 8    | header length `h` in bytes (u64)          |
//! | 20     | h    | UTF-8 JSON header                         |
//! | 20 + h | 8 k  | `k` f64 values                            |
//!
//! The header holds the model configuration, architecture tag, normalisation
//! statistics, case name, edge index and the tensor table. The value blob
//! stores every parameter tensor in layout order, then each batch-norm
//! layer's running mean followed by its running variance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NormStats;
use crate::autodiff::{BatchNormStats, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::gnn::{Arch, GnnConfig, ModelParams};
use crate::grid::EdgeIndex;

pub const MAGIC: &[u8; 8] = b"GRIDFLOW";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to run it on a case.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub case: String,
    pub edges: EdgeIndex,
    pub norm: NormStats,
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    case: String,
    config: GnnConfig,
    norm: NormStats,
    edges: Vec<(usize, usize)>,
    best_epoch: usize,
    best_val_loss: f64,
    batch_norm_momentum: f64,
    batch_norm_eps: f64,
    tensors: Vec<TensorEntry>,
    values: usize,
}

impl Checkpoint {
    pub fn arch(&self) -> Arch {
        self.params.config.arch
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let mut blob: Vec<f64> = p.tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        for s in &p.bn_stats {
            blob.extend(&s.running_mean);
            blob.extend(&s.running_var);
        }
        let (momentum, eps) = p.bn_stats.first().map_or((0.1, 1e-5), |s| (s.momentum, s.eps));
        let header = Header {
            arch: p.config.arch,
            case: self.case.clone(),
            config: p.config.clone(),
            norm: self.norm.clone(),
            edges: self.edges.pairs.clone(),
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            batch_norm_momentum: momentum,
            batch_norm_eps: eps,
            tensors: p
                .config
                .param_layout()
                .into_iter()
                .map(|(name, shape)| TensorEntry { name, shape })
                .collect(),
            values: blob.len(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let h = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < h {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..h])?;
        let blob = &body[h..];
        if blob.len() != 8 * header.values {
            return Err(bad(&format!(
                "expected {} weight bytes, found {}",
                8 * header.values,
                blob.len()
            )));
        }
        if header.arch != header.config.arch {
            return Err(bad("architecture tag disagrees with the configuration"));
        }
        header.norm.validate()?;
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() != n {
                return Err(bad("weight blob shorter than the tensor table"));
            }
            Ok(v)
        };
        let layout = header.config.param_layout();
        if layout.len() != header.tensors.len()
            || layout.iter().zip(&header.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(bad("tensor table does not match the configuration"));
        }
        let mut tensors = Vec::with_capacity(layout.len());
        for (_, shape) in &layout {
            let n = shape.iter().product();
            tensors.push(Tensor::new(shape.clone(), take(n)?)?);
        }
        let mut bn_stats = Vec::new();
        if header.config.batch_norm {
            for &d in &header.config.layer_sizes {
                bn_stats.push(BatchNormStats {
                    running_mean: take(d)?,
                    running_var: take(d)?,
                    momentum: header.batch_norm_momentum,
                    eps: header.batch_norm_eps,
                });
            }
        }
        if values.next().is_some() {
            return Err(bad("trailing values after the weight blob"));
        }
        let params = ModelParams::from_parts(header.config, tensors, bn_stats)?;
        if header.edges.iter().any(|&(s, d)| s >= params.config.n_bus || d >= params.config.n_bus) {
            return Err(bad("edge index refers to buses outside the model"));
        }
        Ok(Checkpoint {
            case: header.case,
            edges: EdgeIndex { pairs: header.edges },
            norm: header.norm,
            params,
            best_epoch: header.best_epoch,
            best_val_loss: header.best_val_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
