use std::rc::Rc;

use rand::Rng;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shared index list for gather/segment operations.
pub type Indices = Rc<[usize]>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    ConcatRows(Vec<Var>),
    Relu(Var),
    LeakyRelu(Var, f64),
    GatherRows(Var, Indices),
    SegmentSum(Var, Indices),
    SegmentSoftmax(Var, Indices, usize),
    Dropout(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanSquaredError(Var, Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Running statistics of a batch-norm layer, used in eval mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(features: usize) -> Self {
        BatchNormStats {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Reverse-mode recording of one forward pass.
///
/// Values are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] sweeps it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    fn matrix_dims(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        match s.len() {
            2 => Ok((s[0], s[1])),
            1 => Ok((s[0], 1)),
            _ => Err(Error::Dimension(format!("{op}: expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims(a, "matmul")?;
        let (k2, m) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(n, m, out)?))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(dim_err(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Adds a length-`m` bias to every row of an `n x m` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "add_bias")?;
        if self.value(bias).len() != m {
            return Err(dim_err("add_bias", self.value(x).shape(), self.value(bias).shape()));
        }
        let xb = self.value(x).data();
        let bb = self.value(bias).data();
        let data = (0..n * m).map(|i| xb[i] + bb[i % m]).collect();
        let v = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias(x, bias), v))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x).map(|a| a * s);
        self.push(Op::Scale(x, s), v)
    }

    /// Multiplies row `i` of `x` by `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "scale_rows")?;
        if self.value(w).len() != n {
            return Err(dim_err("scale_rows", self.value(x).shape(), self.value(w).shape()));
        }
        let xb = self.value(x).data();
        let wb = self.value(w).data();
        let data = (0..n * m).map(|i| xb[i] * wb[i / m]).collect();
        let v = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(Op::ScaleRows(x, w), v))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?;
        let (_, m) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != m {
                return Err(dim_err("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::matrix(rows, m, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a < 0.0 { 0.0 } else { a });
        self.push(Op::Relu(x), v)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        self.push(Op::LeakyRelu(x, slope), v)
    }

    /// Row `k` of the result is row `idx[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &Indices) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let xb = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx.iter() {
            data.extend_from_slice(&xb[i * m..(i + 1) * m]);
        }
        let shape = if self.value(x).shape().len() == 1 { vec![idx.len()] } else { vec![idx.len(), m] };
        let v = Tensor::new(shape, data)?;
        Ok(self.push(Op::GatherRows(x, idx.clone()), v))
    }

    /// Sums rows of `values` into `segments` output rows by `segment_ids`.
    pub fn segment_sum(&mut self, values: Var, segment_ids: &Indices, segments: usize) -> Result<Var> {
        let (e, m) = self.matrix_dims(values, "segment_sum")?;
        check_segments(e, segment_ids, segments)?;
        let vb = self.value(values).data();
        let mut out = vec![0.0; segments * m];
        for (k, &s) in segment_ids.iter().enumerate() {
            for j in 0..m {
                out[s * m + j] += vb[k * m + j];
            }
        }
        let shape = if self.value(values).shape().len() == 1 { vec![segments] } else { vec![segments, m] };
        let v = Tensor::new(shape, out)?;
        Ok(self.push(Op::SegmentSum(values, segment_ids.clone()), v))
    }

    /// Softmax of a vector of logits within each segment.
    pub fn segment_softmax(&mut self, logits: Var, segment_ids: &Indices, segments: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.shape().len() != 1 {
            return Err(Error::Dimension(format!(
                "segment_softmax expects a vector, got {:?}",
                x.shape()
            )));
        }
        check_segments(x.len(), segment_ids, segments)?;
        let xb = x.data();
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (k, &s) in segment_ids.iter().enumerate() {
            max[s] = max[s].max(xb[k]);
        }
        let mut out: Vec<f64> = segment_ids.iter().enumerate().map(|(k, &s)| (xb[k] - max[s]).exp()).collect();
        let mut denom = vec![0.0; segments];
        for (k, &s) in segment_ids.iter().enumerate() {
            denom[s] += out[k];
        }
        for (k, &s) in segment_ids.iter().enumerate() {
            out[k] /= denom[s];
        }
        let v = Tensor::vector(out);
        Ok(self.push(Op::SegmentSoftmax(logits, segment_ids.clone(), segments), v))
    }

    /// Inverted dropout: in train mode zeroes each element with probability
    /// `rate` and scales survivors by `1/(1-rate)`; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xb = self.value(x).data();
        let data = xb.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout(x, mask), v))
    }

    /// Batch normalisation over the rows of an `n x m` matrix with learnable
    /// scale `gamma` and shift `beta`. Train mode normalises with the batch
    /// statistics and updates the running ones; eval mode uses the running
    /// statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        train: bool,
    ) -> Result<Var> {
        let (n, m) = self.matrix_dims(x, "batch_norm")?;
        if self.value(gamma).len() != m || self.value(beta).len() != m || stats.running_mean.len() != m {
            return Err(Error::Dimension(format!(
                "batch_norm over {m} features with mismatched parameters"
            )));
        }
        let xb = self.value(x).data();
        let (mean, var) = if train {
            if n < 2 {
                return Err(Error::Dimension("batch_norm in train mode needs at least 2 rows".into()));
            }
            let mut mean = vec![0.0; m];
            for i in 0..n {
                for j in 0..m {
                    mean[j] += xb[i * m + j];
                }
            }
            mean.iter_mut().for_each(|v| *v /= n as f64);
            let mut var = vec![0.0; m];
            for i in 0..n {
                for j in 0..m {
                    let d = xb[i * m + j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let unbias = n as f64 / (n as f64 - 1.0);
            for j in 0..m {
                stats.running_mean[j] = (1.0 - stats.momentum) * stats.running_mean[j] + stats.momentum * mean[j];
                stats.running_var[j] =
                    (1.0 - stats.momentum) * stats.running_var[j] + stats.momentum * var[j] * unbias;
            }
            (mean, var)
        } else {
            (stats.running_mean.clone(), stats.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; n * m];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let h = (xb[i * m + j] - mean[j]) * inv_std[j];
                xhat[i * m + j] = h;
                out[i * m + j] = g[j] * h + b[j];
            }
        }
        let v = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            v,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let s = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(Op::MeanSquaredError(pred, target), Tensor::scalar(s)))
    }

    /// Signs of every ReLU / LeakyReLU input, used to detect perturbations
    /// that cross a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) | Op::LeakyRelu(x, _) = node.op {
                out.extend(self.value(x).data().iter().map(|&a| a > 0.0));
            }
        }
        out
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k) = (av.rows(), av.cols());
                    let m = bv.cols();
                    let da = matmul_nt(gd, bv.data(), n, m, k);
                    let db = matmul_tn(av.data(), gd, n, k, m);
                    acc(*a, Tensor::new(av.shape().to_vec(), da)?);
                    acc(*b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    let db = gd.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor::new(av.shape().to_vec(), da)?);
                    acc(*b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::AddBias(x, bias) => {
                    let m = self.value(*bias).len();
                    let mut db = vec![0.0; m];
                    for (i, v) in gd.iter().enumerate() {
                        db[i % m] += v;
                    }
                    acc(*x, g.clone());
                    acc(*bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?);
                }
                Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
                Op::ScaleRows(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let m = xv.cols();
                    let dx = gd.iter().enumerate().map(|(i, v)| v * wv.data()[i / m]).collect();
                    let mut dw = vec![0.0; wv.len()];
                    for (i, v) in gd.iter().enumerate() {
                        dw[i / m] += v * xv.data()[i];
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                    acc(*w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let len = pv.len();
                        acc(*p, Tensor::new(pv.shape().to_vec(), gd[offset..offset + len].to_vec())?);
                        offset += len;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = gd.iter().zip(xv.data()).map(|(v, a)| if *a > 0.0 { *v } else { 0.0 }).collect();
                    acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x);
                    let d = gd
                        .iter()
                        .zip(xv.data())
                        .map(|(v, a)| if *a > 0.0 { *v } else { slope * v })
                        .collect();
                    acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut d = vec![0.0; xv.len()];
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            d[i * m + j] += gd[k * m + j];
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::SegmentSum(x, ids) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut d = Vec::with_capacity(xv.len());
                    for &s in ids.iter() {
                        d.extend_from_slice(&gd[s * m..(s + 1) * m]);
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), d)?);
                }
                Op::SegmentSoftmax(x, ids, segments) => {
                    let y = node.value.data();
                    let mut dot = vec![0.0; *segments];
                    for (k, &s) in ids.iter().enumerate() {
                        dot[s] += y[k] * gd[k];
                    }
                    let d = ids.iter().enumerate().map(|(k, &s)| y[k] * (gd[k] - dot[s])).collect();
                    acc(*x, Tensor::vector(d));
                }
                Op::Dropout(x, mask) => {
                    let d = gd.iter().zip(mask).map(|(v, m)| v * m).collect();
                    acc(*x, Tensor::new(self.value(*x).shape().to_vec(), d)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let xv = self.value(*x);
                    let (n, m) = (xv.rows(), xv.cols());
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; m];
                    let mut dbeta = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            dgamma[j] += gd[i * m + j] * xhat[i * m + j];
                            dbeta[j] += gd[i * m + j];
                        }
                    }
                    let mut dx = vec![0.0; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            let dxhat = gd[i * m + j] * gam[j];
                            dx[i * m + j] = if *train {
                                inv_std[j] / n as f64
                                    * (n as f64 * dxhat - gam[j] * dbeta[j] - gam[j] * xhat[i * m + j] * dgamma[j])
                            } else {
                                dxhat * inv_std[j]
                            };
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx)?);
                    acc(*gamma, Tensor::new(self.value(*gamma).shape().to_vec(), dgamma)?);
                    acc(*beta, Tensor::new(self.value(*beta).shape().to_vec(), dbeta)?);
                }
                Op::Reshape(x) => {
                    acc(*x, g.clone().reshaped(self.value(*x).shape())?);
                }
                Op::Sum(x) => acc(*x, Tensor::filled(self.value(*x).shape(), gd[0])),
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    acc(*x, Tensor::filled(xv.shape(), gd[0] / xv.len() as f64));
                }
                Op::MeanSquaredError(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let c = 2.0 * gd[0] / pv.len() as f64;
                    let dp: Vec<f64> = pv.data().iter().zip(tv.data()).map(|(a, b)| c * (a - b)).collect();
                    let dt = dp.iter().map(|v| -v).collect();
                    acc(*p, Tensor::new(pv.shape().to_vec(), dp)?);
                    acc(*t, Tensor::new(tv.shape().to_vec(), dt)?);
                }
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn check_segments(len: usize, ids: &[usize], segments: usize) -> Result<()> {
    if ids.len() != len {
        return Err(Error::Dimension(format!(
            "{} segment ids for {len} rows",
            ids.len()
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&s| s >= segments) {
        return Err(Error::Dimension(format!("segment id {bad} out of {segments}")));
    }
    Ok(())
}
