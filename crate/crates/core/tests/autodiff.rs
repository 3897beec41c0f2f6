mod common;

use std::rc::Rc;

use common::Lcg;
use gridflow::autodiff::{grad_check, BatchNormStats, Indices, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut Lcg, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = Lcg(1);
    let a = random(&mut rng, &[8, 8]);
    let b = random(&mut rng, &[8, 8]);
    let mut t = Tape::new();
    let (va, vb) = (t.leaf(a.clone()), t.leaf(b.clone()));
    let c = t.matmul(va, vb).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let mut s = 0.0;
            for k in 0..8 {
                s += a.data()[i * 8 + k] * b.data()[k * 8 + j];
            }
            assert!((t.value(c).data()[i * 8 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let x = Tensor::vector((0..50).map(|i| 1.0 + i as f64 * 0.1).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mean = vec![0.0; 50];
    let trials = 10_000;
    for _ in 0..trials {
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = t.dropout(v, 0.2, true, &mut rng).unwrap();
        for (m, val) in mean.iter_mut().zip(t.value(y).data()) {
            *m += val / trials as f64;
        }
    }
    for (m, x) in mean.iter().zip(x.data()) {
        assert!((m - x).abs() / x < 0.02, "{m} vs {x}");
    }
}

#[test]
fn train_batch_norm_standardises_columns() {
    let mut rng = Lcg(3);
    let (n, m) = (64, 5);
    // columns with spread well above the stabilising epsilon
    let data: Vec<f64> = (0..n * m).map(|i| rng.uniform(-40.0, 40.0) + (i % m) as f64 * 7.0).collect();
    let mut t = Tape::new();
    let x = t.leaf(Tensor::matrix(n, m, data).unwrap());
    let g = t.leaf(Tensor::filled(&[m], 1.0));
    let b = t.leaf(Tensor::zeros(&[m]));
    let mut stats = BatchNormStats::new(m);
    let y = t.batch_norm(x, g, b, &mut stats, true).unwrap();
    let out = t.value(y).data();
    for j in 0..m {
        let col: Vec<f64> = (0..n).map(|i| out[i * m + j]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6, "{var}");
    }
    // running statistics moved a tenth of the way
    assert!(stats.running_mean.iter().any(|&v| v != 0.0));
}

fn check(f: impl Fn(&mut Tape, &[Var]) -> gridflow::Result<Var>, params: &[Tensor]) {
    let r = grad_check(f, params, 1e-5).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_error < 1e-6, "max rel error {}", r.max_rel_error);
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = Lcg(9);
    let ids: Indices = Rc::from(vec![0, 2, 1, 0, 2, 2, 1]);
    let rows: Indices = Rc::from(vec![3, 0, 1, 3, 2, 2, 0]);
    let params = [
        random(&mut rng, &[4, 3]),
        random(&mut rng, &[3, 2]),
        random(&mut rng, &[2]),
        random(&mut rng, &[7]),
    ];
    check(
        |t, p| {
            let h = t.matmul(p[0], p[1])?;
            let h = t.add_bias(h, p[2])?;
            let h = t.leaky_relu(h, 0.2);
            let e = t.gather_rows(h, &rows)?;
            let logits = t.gather_rows(p[3], &Rc::from(vec![0, 1, 2, 3, 4, 5, 6]))?;
            let a = t.segment_softmax(logits, &ids, 3)?;
            let w = t.scale_rows(e, a)?;
            let s = t.segment_sum(w, &ids, 3)?;
            let s2 = t.mul(s, s)?;
            let flat = t.reshape(s2, &[6])?;
            let target = t.leaf(Tensor::vector(vec![0.1, 0.2, 0.3, -0.1, 0.0, 0.5]));
            let loss = t.mse(flat, target)?;
            let extra = t.mean(p[3]);
            let extra = t.scale(extra, 0.3);
            let loss = t.reshape(loss, &[1, 1])?;
            let extra = t.reshape(extra, &[1, 1])?;
            let both = t.concat_rows(&[loss, extra])?;
            Ok(t.sum(both))
        },
        &params,
    );
}

#[test]
fn batch_norm_gradients_match_finite_differences() {
    let mut rng = Lcg(4);
    let params = [random(&mut rng, &[6, 3]), random(&mut rng, &[3]), random(&mut rng, &[3])];
    for train in [true, false] {
        check(
            |t, p| {
                let mut stats = BatchNormStats::new(3);
                stats.running_mean = vec![0.1, -0.2, 0.3];
                stats.running_var = vec![0.5, 1.5, 2.0];
                let y = t.batch_norm(p[0], p[1], p[2], &mut stats, train)?;
                let target = t.leaf(Tensor::matrix(6, 3, (0..18).map(|i| (i as f64).sin()).collect())?);
                let d = t.sub(y, target)?;
                let sq = t.mul(d, d)?;
                Ok(t.sum(sq))
            },
            &params,
        );
    }
}

proptest! {
    #[test]
    fn gradients_are_linear(a in -3.0..3.0f64, b in -3.0..3.0f64, seed in 0u64..1000) {
        let mut rng = Lcg(seed);
        let w = random(&mut rng, &[3, 2]);
        let x = random(&mut rng, &[4, 3]);
        let grad_of = |coef_f: f64, coef_g: f64| {
            let mut t = Tape::new();
            let wv = t.leaf(w.clone());
            let xv = t.leaf(x.clone());
            let h = t.matmul(xv, wv).unwrap();
            let f = {
                let r = t.relu(h);
                t.sum(r)
            };
            let g = {
                let sq = t.mul(h, h).unwrap();
                t.mean(sq)
            };
            let fa = t.scale(f, coef_f);
            let gb = t.scale(g, coef_g);
            let total = t.add(fa, gb).unwrap();
            t.backward(total).unwrap().wrt(wv)
        };
        let combined = grad_of(a, b);
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        for k in 0..combined.len() {
            let expect = a * gf.data()[k] + b * gg.data()[k];
            prop_assert!((combined.data()[k] - expect).abs() < 1e-12);
        }
    }
}
