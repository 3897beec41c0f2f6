//! Regression metrics on denormalised predictions and cross-run summaries.
//!
//! NRMSE divides RMSE by the range `max - min` of the truth in each target
//! column (V and delta); columns with constant truth have no NRMSE or R^2.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::Arch;
use crate::scenario::SampleRecord;
use crate::training::Checkpoint;

/// Stated in every report so NRMSE values can be interpreted.
pub const NRMSE_NORMALIZER: &str = "range (max - min) of truth per target column";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub rmse: f64,
    pub nrmse: Option<f64>,
    pub mae: f64,
    pub r2: Option<f64>,
}

/// Metrics of one column of paired values.
pub fn column_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "metrics need equal non-empty columns, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = mse.sqrt();
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let ss_res = mse * n;
    let constant = hi - lo == 0.0;
    Ok(Metrics {
        mse,
        rmse,
        nrmse: (!constant).then(|| rmse / (hi - lo)),
        mae,
        r2: (!constant).then(|| 1.0 - ss_res / ss_tot),
    })
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-target and overall metrics for rows laid out as
/// `[v_1..v_n, delta_1..delta_n]`. Overall MSE, RMSE and MAE pool every
/// value; overall NRMSE and R^2 average the per-column values.
pub fn metrics(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<TargetMetrics> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension("prediction and truth row counts differ or are zero".into()));
    }
    let width = truth[0].len();
    if width == 0 || width % 2 != 0 || pred.iter().chain(truth).any(|r| r.len() != width) {
        return Err(Error::Dimension("rows must share an even, non-zero width".into()));
    }
    let n = width / 2;
    let column = |rows: &[Vec<f64>], k: usize| -> Vec<f64> {
        rows.iter().flat_map(|r| r[k * n..(k + 1) * n].iter().copied()).collect()
    };
    let v = column_metrics(&column(pred, 0), &column(truth, 0))?;
    let delta = column_metrics(&column(pred, 1), &column(truth, 1))?;
    let mse = (v.mse + delta.mse) / 2.0;
    Ok(TargetMetrics {
        overall: Metrics {
            mse,
            rmse: mse.sqrt(),
            nrmse: mean_present([v.nrmse, delta.nrmse].into_iter()),
            mae: (v.mae + delta.mae) / 2.0,
            r2: mean_present([v.r2, delta.r2].into_iter()),
        },
        v,
        delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub overall: Metrics,
    pub v: Metrics,
    pub delta: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub case: String,
    pub arch: Arch,
    pub samples: usize,
    pub metrics: TargetMetrics,
}

/// A named test set of one case.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub name: String,
    pub case: String,
    pub samples: Vec<SampleRecord>,
}

/// Denormalised eval-mode predictions for `samples`.
pub fn predict(checkpoint: &Checkpoint, samples: &[SampleRecord]) -> Result<Vec<Vec<f64>>> {
    let n = checkpoint.params.config.n_bus;
    if let Some(s) = samples.iter().find(|s| s.n_bus() != n) {
        return Err(Error::Contract(format!(
            "sample {} has {} buses, checkpoint expects {n}",
            s.sample_id,
            s.n_bus()
        )));
    }
    let x: Vec<Vec<f64>> = samples.iter().map(|s| checkpoint.norm.features(s)).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in x.chunks(256) {
        out.extend(checkpoint.params.predict(&checkpoint.edges, chunk)?);
    }
    for row in &mut out {
        checkpoint.norm.denormalize_targets(row);
    }
    Ok(out)
}

/// One report per test set, computed in parallel.
pub fn evaluate(checkpoint: &Checkpoint, sets: &[TestSet]) -> Result<Vec<MetricReport>> {
    checkpoint.norm.validate()?;
    sets.par_iter()
        .map(|set| {
            if set.case != checkpoint.case {
                return Err(Error::Contract(format!(
                    "test set `{}` is from case {}, checkpoint was trained on {}",
                    set.name, set.case, checkpoint.case
                )));
            }
            if set.samples.is_empty() {
                return Err(Error::Contract(format!("test set `{}` is empty", set.name)));
            }
            let pred = predict(checkpoint, &set.samples)?;
            let truth: Vec<Vec<f64>> = set.samples.iter().map(SampleRecord::target_vector).collect();
            Ok(MetricReport {
                dataset: set.name.clone(),
                case: set.case.clone(),
                arch: checkpoint.arch(),
                samples: set.samples.len(),
                metrics: metrics(&pred, &truth)?,
            })
        })
        .collect()
}

pub fn reports_csv(reports: &[MetricReport]) -> String {
    let mut out = format!("# nrmse normaliser: {NRMSE_NORMALIZER}\n");
    out.push_str("dataset,case,arch,samples,target,mse,rmse,nrmse,mae,r2\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    for r in reports {
        for (target, m) in [("overall", r.metrics.overall), ("v", r.metrics.v), ("delta", r.metrics.delta)] {
            out.push_str(&format!(
                "{},{},{},{},{target},{:?},{:?},{},{:?},{}\n",
                r.dataset,
                r.case,
                r.arch,
                r.samples,
                m.mse,
                m.rmse,
                opt(m.nrmse),
                m.mae,
                opt(m.r2)
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        Some(Spread {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Aggregate of the overall metrics of every report for one
/// `(architecture, case)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub arch: Arch,
    pub reports: usize,
    pub mse: Spread,
    pub rmse: Spread,
    pub nrmse: Option<Spread>,
    pub mae: Spread,
    pub r2: Option<Spread>,
}

/// Rows ordered by case, then architecture.
pub fn summarize(reports: &[MetricReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(Error::Contract("nothing to summarise".into()));
    }
    let mut groups: BTreeMap<(String, usize), Vec<&MetricReport>> = BTreeMap::new();
    for r in reports {
        let rank = Arch::ALL.iter().position(|&a| a == r.arch).expect("known arch");
        groups.entry((r.case.clone(), rank)).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((case, rank), rs)| {
            let pick = |f: &dyn Fn(&Metrics) -> f64| rs.iter().map(|r| f(&r.metrics.overall)).collect::<Vec<_>>();
            let pick_opt = |f: &dyn Fn(&Metrics) -> Option<f64>| {
                rs.iter().filter_map(|r| f(&r.metrics.overall)).collect::<Vec<_>>()
            };
            SummaryRow {
                case,
                arch: Arch::ALL[rank],
                reports: rs.len(),
                mse: Spread::of(&pick(&|m| m.mse)).expect("non-empty group"),
                rmse: Spread::of(&pick(&|m| m.rmse)).expect("non-empty group"),
                nrmse: Spread::of(&pick_opt(&|m| m.nrmse)),
                mae: Spread::of(&pick(&|m| m.mae)).expect("non-empty group"),
                r2: Spread::of(&pick_opt(&|m| m.r2)),
            }
        })
        .collect())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("# nrmse normaliser: {NRMSE_NORMALIZER}\n");
    out.push_str("case,arch,reports");
    for m in ["mse", "rmse", "nrmse", "mae", "r2"] {
        out.push_str(&format!(",{m}_mean,{m}_min,{m}_max"));
    }
    out.push('\n');
    let cells = |s: Option<Spread>| match s {
        Some(s) => format!("{:?},{:?},{:?}", s.mean, s.min, s.max),
        None => ",,".to_string(),
    };
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.case,
            r.arch,
            r.reports,
            cells(Some(r.mse)),
            cells(Some(r.rmse)),
            cells(r.nrmse),
            cells(Some(r.mae)),
            cells(r.r2)
        ));
    }
    out
}
