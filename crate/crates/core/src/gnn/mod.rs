//! Graph neural network surrogates mapping bus features to `(V, delta)`.
//!
//! Every architecture shares one skeleton: two message-passing layers, each
//! followed by batch normalisation and ReLU (dropout after all but the last),
//! then the node embeddings of each graph are flattened and read out by a
//! two-layer perceptron into `2 n` outputs ordered `[V_1..V_n, delta_1..delta_n]`.

mod graph;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormStats, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::EdgeIndex;
use crate::scenario::{INPUT_FEATURES, TARGETS};

pub use graph::GraphBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
    Sage,
    GraphConv,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gcn, Arch::Gat, Arch::Sage, Arch::GraphConv];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
            Arch::Sage => "sage",
            Arch::GraphConv => "graphconv",
        }
    }

    /// Label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Gcn => "GCN",
            Arch::Gat => "GAT",
            Arch::Sage => "SAGE",
            Arch::GraphConv => "GraphConv",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" => Ok(Arch::Gat),
            "sage" | "graphsage" => Ok(Arch::Sage),
            "graphconv" | "graph_conv" => Ok(Arch::GraphConv),
            _ => Err(Error::Config(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub arch: Arch,
    pub in_features: usize,
    pub layer_sizes: Vec<usize>,
    pub fc_hidden: usize,
    pub n_bus: usize,
    pub dropout: f64,
    pub gat_heads: usize,
    pub batch_norm: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            arch: Arch::Gcn,
            in_features: INPUT_FEATURES,
            layer_sizes: vec![12, 12],
            fc_hidden: 128,
            n_bus: 14,
            dropout: 0.2,
            gat_heads: 1,
            batch_norm: true,
        }
    }
}

impl GnnConfig {
    pub fn new(arch: Arch, n_bus: usize) -> Self {
        GnnConfig {
            arch,
            n_bus,
            ..GnnConfig::default()
        }
    }

    pub fn output_size(&self) -> usize {
        TARGETS * self.n_bus
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 || self.n_bus == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("feature, bus and hidden sizes must be positive".into()));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Config("need at least one graph layer of positive width".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.gat_heads != 1 {
            return Err(Error::Config("only single-head attention is supported".into()));
        }
        Ok(())
    }

    /// Names and shapes of the trainable tensors in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut d_in = self.in_features;
        for (l, &d_out) in self.layer_sizes.iter().enumerate() {
            let w = vec![d_in, d_out];
            match self.arch {
                Arch::Gcn => out.push((format!("conv{l}.weight"), w)),
                Arch::Gat => {
                    out.push((format!("conv{l}.weight"), w));
                    out.push((format!("conv{l}.att"), vec![d_out, 2]));
                }
                Arch::Sage => {
                    out.push((format!("conv{l}.weight_self"), w.clone()));
                    out.push((format!("conv{l}.weight_neigh"), w));
                }
                Arch::GraphConv => {
                    out.push((format!("conv{l}.weight_root"), w.clone()));
                    out.push((format!("conv{l}.weight_neigh"), w));
                }
            }
            if self.batch_norm {
                out.push((format!("bn{l}.gamma"), vec![d_out]));
                out.push((format!("bn{l}.beta"), vec![d_out]));
            }
            d_in = d_out;
        }
        let flat = self.n_bus * d_in;
        out.push(("fc1.weight".into(), vec![flat, self.fc_hidden]));
        out.push(("fc1.bias".into(), vec![self.fc_hidden]));
        out.push(("fc2.weight".into(), vec![self.fc_hidden, self.output_size()]));
        out.push(("fc2.bias".into(), vec![self.output_size()]));
        out
    }
}

/// Trainable tensors plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: GnnConfig,
    pub tensors: Vec<Tensor>,
    pub bn_stats: Vec<BatchNormStats>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases and shifts, unit BN scales.
    pub fn init<R: Rng + ?Sized>(config: GnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".gamma") {
                    Tensor::filled(&shape, 1.0)
                } else if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let n = shape[0] * shape[1];
                    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
                    Tensor::new(shape, data).expect("layout shape")
                }
            })
            .collect();
        Ok(Self::with_tensors(config, tensors))
    }

    /// All parameters zero (BN scales included).
    pub fn zeros(config: GnnConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.param_layout().iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self::with_tensors(config, tensors))
    }

    fn with_tensors(config: GnnConfig, tensors: Vec<Tensor>) -> Self {
        let bn_stats = if config.batch_norm {
            config.layer_sizes.iter().map(|&d| BatchNormStats::new(d)).collect()
        } else {
            Vec::new()
        };
        ModelParams {
            config,
            tensors,
            bn_stats,
        }
    }

    /// Reassembles parameters, checking shapes against the layout.
    pub fn from_parts(config: GnnConfig, tensors: Vec<Tensor>, bn_stats: Vec<BatchNormStats>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != tensors.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let expected_bn = if config.batch_norm { config.layer_sizes.len() } else { 0 };
        if bn_stats.len() != expected_bn
            || bn_stats
                .iter()
                .zip(&config.layer_sizes)
                .any(|(s, &d)| s.running_mean.len() != d || s.running_var.len() != d)
        {
            return Err(Error::Dimension("batch-norm statistics do not match the layers".into()));
        }
        Ok(ModelParams {
            config,
            tensors,
            bn_stats,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Records every tensor as a tape leaf, in layout order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Inference on a batch of feature matrices (each `n_bus x in_features`,
    /// row-major and already normalised). Returns one `2 n` row per sample.
    pub fn predict(&self, edges: &EdgeIndex, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let graph = GraphBatch::new(edges, self.config.n_bus, features.len());
        let x = stack_features(&self.config, features)?;
        let mut tape = Tape::new();
        let vars = self.leaves(&mut tape);
        let x = tape.leaf(x);
        let mut stats = self.bn_stats.clone();
        let out = forward(&mut tape, &self.config, &vars, &mut stats, &graph, x, Mode::Eval, &mut NoRng)?;
        let width = self.config.output_size();
        Ok(tape.value(out).data().chunks(width).map(<[f64]>::to_vec).collect())
    }
}

/// Stacks per-sample feature matrices into one `(B n) x in_features` tensor.
pub fn stack_features(config: &GnnConfig, features: &[Vec<f64>]) -> Result<Tensor> {
    let per = config.n_bus * config.in_features;
    let mut data = Vec::with_capacity(per * features.len());
    for f in features {
        if f.len() != per {
            return Err(Error::Dimension(format!(
                "sample has {} feature values, model expects {per}",
                f.len()
            )));
        }
        data.extend_from_slice(f);
    }
    Tensor::matrix(config.n_bus * features.len(), config.in_features, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Records the model on `tape`. `params` are the leaves from
/// [`ModelParams::leaves`]; `x` is the stacked feature matrix for `graph`.
/// Train mode applies dropout and updates `bn_stats`.
#[allow(clippy::too_many_arguments)]
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    config: &GnnConfig,
    params: &[Var],
    bn_stats: &mut [BatchNormStats],
    graph: &GraphBatch,
    x: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if graph.nodes_per_graph != config.n_bus {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, model expects {}",
            graph.nodes_per_graph, config.n_bus
        )));
    }
    if params.len() != config.param_layout().len() {
        return Err(Error::Dimension("parameter list does not match the layout".into()));
    }
    let train = mode == Mode::Train;
    let mut next = params.iter().copied();
    let mut take = || next.next().expect("layout length checked");
    let mut h = x;
    let layers = config.layer_sizes.len();
    for l in 0..layers {
        h = match config.arch {
            Arch::Gcn => layers::gcn_layer(tape, h, take(), graph)?,
            Arch::Gat => {
                let (w, a) = (take(), take());
                layers::gat_layer(tape, h, w, a, graph)?
            }
            Arch::Sage => {
                let (ws, wn) = (take(), take());
                layers::sage_layer(tape, h, ws, wn, graph)?
            }
            Arch::GraphConv => {
                let (wr, wn) = (take(), take());
                layers::graphconv_layer(tape, h, wr, wn, graph)?
            }
        };
        if config.batch_norm {
            let (gamma, beta) = (take(), take());
            h = tape.batch_norm(h, gamma, beta, &mut bn_stats[l], train)?;
        }
        h = tape.relu(h);
        if l + 1 < layers {
            h = tape.dropout(h, config.dropout, train, rng)?;
        }
    }
    let d_last = *config.layer_sizes.last().expect("validated");
    let h = tape.reshape(h, &[graph.graphs, config.n_bus * d_last])?;
    let (w1, b1, w2, b2) = (take(), take(), take(), take());
    let z = tape.matmul(h, w1)?;
    let z = tape.add_bias(z, b1)?;
    let z = tape.relu(z);
    let z = tape.matmul(z, w2)?;
    tape.add_bias(z, b2)
}

/// An RNG that must never be drawn from; eval mode does not sample.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval mode draws no random numbers")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("eval mode draws no random numbers")
    }
}

/// Convenience wrappers evaluating a single layer on one graph, used by
/// tests and the Python bindings.
pub mod ops {
    use super::*;

    fn run(
        h: &Tensor,
        edges: &EdgeIndex,
        weights: &[&Tensor],
        f: impl FnOnce(&mut Tape, Var, &[Var], &GraphBatch) -> Result<Var>,
    ) -> Result<Tensor> {
        let graph = GraphBatch::new(edges, h.rows(), 1);
        if let Some(&(s, d)) = edges.pairs.iter().find(|&&(s, d)| s >= h.rows() || d >= h.rows()) {
            return Err(Error::Dimension(format!("edge ({s}, {d}) outside {} nodes", h.rows())));
        }
        let mut tape = Tape::new();
        let hv = tape.leaf(h.clone());
        let ws: Vec<Var> = weights.iter().map(|w| tape.leaf((*w).clone())).collect();
        let out = f(&mut tape, hv, &ws, &graph)?;
        Ok(tape.value(out).clone())
    }

    pub fn gcn(h: &Tensor, edges: &EdgeIndex, w: &Tensor) -> Result<Tensor> {
        run(h, edges, &[w], |t, h, ws, g| layers::gcn_layer(t, h, ws[0], g))
    }

    pub fn gat(h: &Tensor, edges: &EdgeIndex, w: &Tensor, att: &Tensor) -> Result<Tensor> {
        run(h, edges, &[w, att], |t, h, ws, g| layers::gat_layer(t, h, ws[0], ws[1], g))
    }

    /// Attention coefficient per `(source, target)` pair, self-loops last.
    pub fn gat_attention(h: &Tensor, edges: &EdgeIndex, w: &Tensor, att: &Tensor) -> Result<Vec<((usize, usize), f64)>> {
        let graph = GraphBatch::new(edges, h.rows(), 1);
        let alpha = run(h, edges, &[w, att], |t, h, ws, g| {
            layers::gat_attention(t, h, ws[0], ws[1], g).map(|(a, _)| a)
        })?;
        Ok(graph
            .loop_src
            .iter()
            .zip(graph.loop_dst.iter())
            .zip(alpha.data())
            .map(|((&s, &d), &a)| ((s, d), a))
            .collect())
    }

    pub fn sage(h: &Tensor, edges: &EdgeIndex, w_self: &Tensor, w_neigh: &Tensor) -> Result<Tensor> {
        run(h, edges, &[w_self, w_neigh], |t, h, ws, g| layers::sage_layer(t, h, ws[0], ws[1], g))
    }

    pub fn graphconv(h: &Tensor, edges: &EdgeIndex, w_root: &Tensor, w_neigh: &Tensor) -> Result<Tensor> {
        run(h, edges, &[w_root, w_neigh], |t, h, ws, g| layers::graphconv_layer(t, h, ws[0], ws[1], g))
    }
}
