//! Dense brute-force references for the message-passing layers.

use gridflow::autodiff::{grad_check, GradCheck, Tape, Tensor};
use gridflow::gnn::{forward, ops, Arch, GnnConfig, GraphBatch, Mode, ModelParams};
use gridflow::grid::EdgeIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn to_dense(t: &Tensor) -> Dense {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn add(a: &Dense, b: &Dense) -> Dense {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn adjacency(n: usize, edges: &EdgeIndex) -> Dense {
    let mut a = vec![vec![0.0; n]; n];
    for &(s, d) in &edges.pairs {
        a[d][s] = 1.0;
    }
    a
}

pub fn gcn_oracle(h: &Dense, a: &Dense, w: &Dense) -> Dense {
    let n = h.len();
    let mut ahat = a.clone();
    for (i, row) in ahat.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let deg: Vec<f64> = ahat.iter().map(|r| r.iter().sum()).collect();
    let norm: Dense = (0..n)
        .map(|i| (0..n).map(|j| ahat[i][j] / (deg[i] * deg[j]).sqrt()).collect())
        .collect();
    matmul(&matmul(&norm, h), w)
}

pub fn gat_oracle(h: &Dense, a: &Dense, w: &Dense, att: &Dense) -> (Dense, Dense) {
    let n = h.len();
    let wh = matmul(h, w);
    let d = wh[0].len();
    let score = |v: &[f64], col: usize| (0..d).map(|k| v[k] * att[k][col]).sum::<f64>();
    let mut alpha = vec![vec![0.0; n]; n];
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        let hood: Vec<usize> = (0..n).filter(|&j| j == i || a[i][j] != 0.0).collect();
        let logits: Vec<f64> = hood
            .iter()
            .map(|&j| {
                let e = score(&wh[i], 0) + score(&wh[j], 1);
                if e > 0.0 { e } else { 0.2 * e }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (&j, l) in hood.iter().zip(&logits) {
            alpha[i][j] = (l - max).exp() / z;
            for k in 0..d {
                out[i][k] += alpha[i][j] * wh[j][k];
            }
        }
    }
    (out, alpha)
}

pub fn sage_oracle(h: &Dense, a: &Dense, ws: &Dense, wn: &Dense) -> Dense {
    let n = h.len();
    let d = h[0].len();
    let mean: Dense = (0..n)
        .map(|i| {
            let deg: f64 = a[i].iter().sum();
            (0..d)
                .map(|k| {
                    if deg == 0.0 {
                        0.0
                    } else {
                        (0..n).map(|j| a[i][j] * h[j][k]).sum::<f64>() / deg
                    }
                })
                .collect()
        })
        .collect();
    add(&matmul(h, ws), &matmul(&mean, wn))
}

pub fn graphconv_oracle(h: &Dense, a: &Dense, w1: &Dense, w2: &Dense) -> Dense {
    add(&matmul(h, w1), &matmul(&matmul(a, h), w2))
}

pub fn max_diff(t: &Tensor, d: &Dense) -> f64 {
    t.data()
        .iter()
        .zip(d.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Every labelled simple graph on `n` nodes.
pub fn all_graphs(n: usize) -> impl Iterator<Item = EdgeIndex> {
    let slots: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    (0u64..1 << slots.len()).map(move |mask| {
        EdgeIndex::from_undirected(slots.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e))
    })
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSweep {
    pub graphs: usize,
    /// Largest absolute deviation of any layer output or attention weight.
    pub max_deviation: f64,
    /// Largest `|Σ_j α_ij - 1|`.
    pub max_alpha_row_error: f64,
}

/// Runs all four layers on every labelled graph with up to `max_nodes`
/// nodes against the dense references.
pub fn sweep_small_graphs(seed: u64, max_nodes: usize) -> OracleSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, d_out) = (3, 2);
    let mut sweep = OracleSweep {
        graphs: 0,
        max_deviation: 0.0,
        max_alpha_row_error: 0.0,
    };
    for n in 1..=max_nodes {
        for edges in all_graphs(n) {
            sweep.graphs += 1;
            let h = random_tensor(&mut rng, n, d);
            let w = random_tensor(&mut rng, d, d_out);
            let w2 = random_tensor(&mut rng, d, d_out);
            let att = random_tensor(&mut rng, d_out, 2);
            let (hd, a) = (to_dense(&h), adjacency(n, &edges));
            let (wd, w2d) = (to_dense(&w), to_dense(&w2));

            let mut worst = sweep.max_deviation;
            worst = worst.max(max_diff(&ops::gcn(&h, &edges, &w).unwrap(), &gcn_oracle(&hd, &a, &wd)));
            let (gat_ref, alpha_ref) = gat_oracle(&hd, &a, &wd, &to_dense(&att));
            worst = worst.max(max_diff(&ops::gat(&h, &edges, &w, &att).unwrap(), &gat_ref));
            worst = worst.max(max_diff(&ops::sage(&h, &edges, &w, &w2).unwrap(), &sage_oracle(&hd, &a, &wd, &w2d)));
            worst = worst.max(max_diff(
                &ops::graphconv(&h, &edges, &w, &w2).unwrap(),
                &graphconv_oracle(&hd, &a, &wd, &w2d),
            ));

            let alpha = ops::gat_attention(&h, &edges, &w, &att).unwrap();
            let mut sums = vec![0.0; n];
            for &((s, t), v) in &alpha {
                worst = worst.max((v - alpha_ref[t][s]).abs());
                sums[t] += v;
            }
            sweep.max_deviation = worst;
            sweep.max_alpha_row_error =
                sums.iter().map(|s| (s - 1.0).abs()).fold(sweep.max_alpha_row_error, f64::max);
        }
    }
    sweep
}

pub fn small_config(arch: Arch, n_bus: usize) -> GnnConfig {
    GnnConfig {
        arch,
        fc_hidden: 16,
        n_bus,
        ..GnnConfig::default()
    }
}

/// Ring with one chord.
pub fn ring(n: usize) -> EdgeIndex {
    EdgeIndex::from_undirected((0..n).map(|i| (i, (i + 1) % n)).chain([(0, 2)]))
}

/// Finite-difference check of the whole model (train mode, fixed dropout
/// mask) on a five-bus ring with a batch of three graphs.
pub fn model_grad_check(arch: Arch, seed: u64) -> GradCheck {
    let n = 5;
    let edges = ring(n);
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let cfg = small_config(arch, n);
    let params = ModelParams::init(cfg.clone(), &mut rng).unwrap();
    let batch = 3;
    let graph = GraphBatch::new(&edges, n, batch);
    let x = random_tensor(&mut rng, n * batch, cfg.in_features);
    let y = random_tensor(&mut rng, batch, cfg.output_size());
    grad_check(
        |tape: &mut Tape, vars| {
            let mut stats = params.bn_stats.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
            let xv = tape.leaf(x.clone());
            let yv = tape.leaf(y.clone());
            let out = forward(tape, &cfg, vars, &mut stats, &graph, xv, Mode::Train, &mut drop_rng)?;
            tape.mse(out, yv)
        },
        &params.tensors,
        1e-5,
    )
    .unwrap()
}
