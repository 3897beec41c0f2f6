use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{SampleRecord, INPUT_FEATURES};

/// Continuous input columns: p, q, v_in, delta_in. The three one-hot bus
/// type columns pass through untouched.
pub const SCALED_FEATURES: usize = 4;

/// Standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-8;

/// Z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: [f64; SCALED_FEATURES],
    pub feature_std: [f64; SCALED_FEATURES],
    /// Over `(v, delta)`.
    pub target_mean: [f64; 2],
    pub target_std: [f64; 2],
}

fn mean_std<const K: usize>(rows: impl Iterator<Item = [f64; K]> + Clone) -> ([f64; K], [f64; K]) {
    let mut count = 0.0;
    let mut mean = [0.0; K];
    for r in rows.clone() {
        count += 1.0;
        for k in 0..K {
            mean[k] += r[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = [0.0; K];
    for r in rows {
        for k in 0..K {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let std = var.map(|v| (v / count).sqrt().max(STD_FLOOR));
    (mean, std)
}

impl NormStats {
    /// Population mean and standard deviation over every bus row of `train`.
    pub fn fit(train: &[SampleRecord]) -> Result<Self> {
        if train.iter().all(|s| s.rows.is_empty()) {
            return Err(Error::Training("cannot fit normalisation on an empty split".into()));
        }
        let rows = train.iter().flat_map(|s| s.rows.iter());
        let (feature_mean, feature_std) = mean_std(rows.clone().map(|r| [r.p, r.q, r.v_in, r.delta_in]));
        let (target_mean, target_std) = mean_std(rows.map(|r| [r.v_target, r.delta_target]));
        Ok(NormStats {
            feature_mean,
            feature_std,
            target_mean,
            target_std,
        })
    }

    /// The identity transform.
    pub fn identity() -> Self {
        NormStats {
            feature_mean: [0.0; SCALED_FEATURES],
            feature_std: [1.0; SCALED_FEATURES],
            target_mean: [0.0; 2],
            target_std: [1.0; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.feature_mean.iter().chain(&self.feature_std).chain(&self.target_mean).chain(&self.target_std);
        if all.clone().any(|v| !v.is_finite()) || self.feature_std.iter().chain(&self.target_std).any(|&s| s <= 0.0) {
            return Err(Error::Contract("normalisation statistics must be finite with positive spread".into()));
        }
        Ok(())
    }

    /// Row-major normalised `n x 7` input matrix.
    pub fn features(&self, sample: &SampleRecord) -> Vec<f64> {
        let mut x = sample.feature_matrix();
        for row in x.chunks_mut(INPUT_FEATURES) {
            for k in 0..SCALED_FEATURES {
                row[k] = (row[k] - self.feature_mean[k]) / self.feature_std[k];
            }
        }
        x
    }

    /// Normalised `[v_1..v_n, delta_1..delta_n]`.
    pub fn targets(&self, sample: &SampleRecord) -> Vec<f64> {
        let mut y = sample.target_vector();
        self.normalize_targets(&mut y);
        y
    }

    pub fn normalize_targets(&self, y: &mut [f64]) {
        let n = y.len() / 2;
        for (i, v) in y.iter_mut().enumerate() {
            let k = usize::from(i >= n);
            *v = (*v - self.target_mean[k]) / self.target_std[k];
        }
    }

    pub fn denormalize_targets(&self, y: &mut [f64]) {
        let n = y.len() / 2;
        for (i, v) in y.iter_mut().enumerate() {
            let k = usize::from(i >= n);
            *v = *v * self.target_std[k] + self.target_mean[k];
        }
    }
}
