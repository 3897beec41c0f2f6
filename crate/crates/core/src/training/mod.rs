//! Normalisation, optimisation and the training loop.

mod checkpoint;
mod norm;
mod optim;
mod split;

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::gnn::{forward, stack_features, GnnConfig, GraphBatch, Mode, ModelParams};
use crate::grid::EdgeIndex;
use crate::scenario::SampleRecord;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use norm::{NormStats, SCALED_FEATURES, STD_FLOOR};
pub use optim::{
    lr_update, Adam, Scheduler, SchedulerState, DECAY_EVERY, DECAY_FACTOR, PLATEAU_FACTOR, PLATEAU_PATIENCE,
    PLATEAU_THRESHOLD,
};
pub use split::{split_scenarios, DataSplit, HOLDOUT_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub scheduler: Scheduler,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            l2_lambda: 1e-6,
            batch_size: 16,
            max_epochs: 800,
            patience: 100,
            scheduler: Scheduler::PlateauReduce,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The tabulated hyperparameters: patience 20 and exponential decay.
    pub fn table_preset() -> Self {
        TrainConfig {
            patience: 20,
            scheduler: Scheduler::ExpDecay,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::Config(format!("train.{name}: {msg}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return field("lr", "must be positive and finite");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return field("l2_lambda", "must be non-negative and finite");
        }
        if self.batch_size == 0 {
            return field("batch_size", "must be positive");
        }
        if self.max_epochs == 0 {
            return field("max_epochs", "must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return field("patience", "must lie in 1..=max_epochs");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
}

/// Normalised inputs and targets of one split.
struct Prepared {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

impl Prepared {
    fn new(norm: &NormStats, samples: &[SampleRecord]) -> Self {
        Prepared {
            x: samples.iter().map(|s| norm.features(s)).collect(),
            y: samples.iter().map(|s| norm.targets(s)).collect(),
        }
    }
}

fn check_split(name: &str, samples: &[SampleRecord], n_bus: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Training(format!("{name} split is empty")));
    }
    if let Some(s) = samples.iter().find(|s| s.n_bus() != n_bus) {
        return Err(Error::Contract(format!(
            "{name} sample {} has {} buses, model expects {n_bus}",
            s.sample_id,
            s.n_bus()
        )));
    }
    if let Some(s) = samples
        .iter()
        .find(|s| s.feature_matrix().iter().chain(&s.target_vector()).any(|v| !v.is_finite()))
    {
        return Err(Error::Training(format!(
            "non-finite value in {name} sample {}",
            s.sample_id
        )));
    }
    Ok(())
}

/// Mean squared error of eval-mode predictions on normalised targets.
pub fn evaluation_loss(params: &ModelParams, edges: &EdgeIndex, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut total = 0.0;
    let mut count = 0usize;
    for (xs, ys) in x.chunks(CHUNK).zip(y.chunks(CHUNK)) {
        let pred = params.predict(edges, xs)?;
        for (p, t) in pred.iter().zip(ys) {
            total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += t.len();
        }
    }
    Ok(total / count as f64)
}

/// Trains a fresh model on `train`, validating on `val` after every epoch,
/// and returns the parameters with the lowest validation loss.
pub fn train(
    case: &str,
    model: &GnnConfig,
    edges: &EdgeIndex,
    train: &[SampleRecord],
    val: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_split("train", train, model.n_bus)?;
    check_split("validation", val, model.n_bus)?;
    if let Some(&(s, d)) = edges.pairs.iter().find(|&&(s, d)| s >= model.n_bus || d >= model.n_bus) {
        return Err(Error::Contract(format!("edge ({s}, {d}) outside {} buses", model.n_bus)));
    }

    let norm = NormStats::fit(train)?;
    let train_data = Prepared::new(&norm, train);
    let val_data = Prepared::new(&norm, val);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model.clone(), &mut rng)?;
    let mut adam = Adam::new(&params.tensors);
    let mut sched = SchedulerState::default();
    let mut graphs: HashMap<usize, GraphBatch> = HashMap::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut lr = cfg.lr;
    let mut best = (evaluation_loss(&params, edges, &val_data.x, &val_data.y)?, 0usize, params.clone());
    log::debug!("initial validation loss {:.6e}", best.0);
    let mut history = Vec::new();
    let mut since_best = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let graph = graphs
                .entry(idx.len())
                .or_insert_with(|| GraphBatch::new(edges, model.n_bus, idx.len()));
            let xs: Vec<Vec<f64>> = idx.iter().map(|&i| train_data.x[i].clone()).collect();
            let ys: Vec<f64> = idx.iter().flat_map(|&i| train_data.y[i].iter().copied()).collect();
            let mut tape = Tape::new();
            let vars = params.leaves(&mut tape);
            let x = tape.leaf(stack_features(model, &xs)?);
            let y = tape.leaf(Tensor::matrix(idx.len(), model.output_size(), ys)?);
            let out = forward(&mut tape, model, &vars, &mut params.bn_stats, graph, x, Mode::Train, &mut rng)?;
            let loss = tape.mse(out, y)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {lr:e}, parameters finite: {}, samples {:?})",
                    params.is_finite(),
                    idx.iter().map(|&i| train[i].sample_id).collect::<Vec<_>>()
                )));
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut params.tensors, &grads, lr, cfg.l2_lambda)?;
            if !params.is_finite() {
                return Err(Error::Training(format!(
                    "parameters became non-finite at epoch {epoch}, batch {b} (loss {loss_value:e}, lr {lr:e})"
                )));
            }
            train_total += loss_value * idx.len() as f64;
        }
        let train_loss = train_total / train.len() as f64;
        let val_loss = evaluation_loss(&params, edges, &val_data.x, &val_data.y)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite validation loss at epoch {epoch} (train loss {train_loss:e}, lr {lr:e})"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} lr {lr:.3e}");
        if val_loss < best.0 || best.1 == 0 {
            best = (val_loss, epoch, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
        lr = lr_update(cfg.scheduler, &mut sched, epoch, val_loss, lr);
    }

    let (best_val_loss, best_epoch, best_params) = best;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            case: case.to_string(),
            edges: edges.clone(),
            norm,
            params: best_params,
            best_epoch,
            best_val_loss,
        },
        history: TrainHistory {
            epochs: history,
            best_epoch,
            best_val_loss,
            stop_reason,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_decay_boundaries() {
        let mut s = SchedulerState::default();
        assert_eq!(lr_update(Scheduler::ExpDecay, &mut s, 9, 1.0, 5e-5), 5e-5);
        assert!((lr_update(Scheduler::ExpDecay, &mut s, 10, 1.0, 5e-5) - 4.5e-5).abs() < 1e-18);
    }

    #[test]
    fn plateau_keeps_rate_while_improving_and_halves_after_stall() {
        let mut s = SchedulerState::default();
        let mut lr = 1e-3;
        for e in 1..=30 {
            lr = lr_update(Scheduler::PlateauReduce, &mut s, e, 1.0 / e as f64, lr);
        }
        assert_eq!(lr, 1e-3);
        for e in 31..=39 {
            lr = lr_update(Scheduler::PlateauReduce, &mut s, e, 1.0, lr);
        }
        assert_eq!(lr, 1e-3);
        lr = lr_update(Scheduler::PlateauReduce, &mut s, 40, 1.0, lr);
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![3.0, -0.01, 1e-3])];
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &g, 0.1, 0.0).unwrap();
        let moved: Vec<f64> = p[0].data().iter().zip([1.0, -2.0, 0.5]).map(|(a, b)| a - b).collect();
        for (d, s) in moved.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - 0.1 * s).abs() < 1e-5, "{moved:?}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let before = p.clone();
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[Tensor::zeros(&[2])], 0.1, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_scalar_convergence() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(&p);
        for _ in 0..100 {
            let w = p[0].item();
            adam.step(&mut p, &[Tensor::scalar(2.0 * (w - 3.0))], 0.1, 0.0).unwrap();
        }
        assert!((p[0].item() - 3.0).abs() < 0.5, "{}", p[0].item());
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = TrainConfig {
            patience: 900,
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("train.patience"), "{err}");
        assert!(TrainConfig::table_preset().validate().is_ok());
    }
}
