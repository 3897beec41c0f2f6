use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gridflow::evaluation::{self, MetricReport, SummaryRow, TestSet};
use gridflow::fsutil::Staging;
use gridflow::gnn::Arch;
use gridflow::grid::{edge_index, load_case, Network};
use gridflow::plot;
use gridflow::powerflow::{solve_newton_raphson, write_solution_csv, SolveDiagnostics};
use gridflow::scenario::{generate_dataset, read_dataset, read_dataset_csv, write_dataset_csv};
use gridflow::training::{split_scenarios, train, Checkpoint, TrainHistory};
use serde::Serialize;

use crate::config::RunConfig;

pub const DATASETS: &str = "datasets";
pub const CHECKPOINTS: &str = "checkpoints";
pub const REPORTS: &str = "reports";
pub const PLOTS: &str = "plots";
pub const TEST_DIR: &str = "test";

pub fn dataset_dir(out: &Path, case: &str) -> PathBuf {
    out.join(DATASETS).join(case)
}

pub fn checkpoint_path(out: &Path, case: &str, arch: Arch) -> PathBuf {
    out.join(CHECKPOINTS).join(format!("{case}_{arch}.ckpt"))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

pub fn generate(case: &str, out: &Path, cfg: &RunConfig, scenarios: usize, samples: usize) -> Result<()> {
    let net = load_case(case).with_context(|| format!("loading case `{case}`"))?;
    let dir = dataset_dir(out, &net.name);
    let manifest = generate_dataset(&net, &cfg.load, &cfg.solver, scenarios, samples, &dir)?;
    println!(
        "wrote {} samples of {} in {} files to {} ({} rejected draws)",
        manifest.total_samples,
        manifest.case,
        manifest.files.len(),
        dir.display(),
        manifest.rejected_draws
    );
    Ok(())
}

fn scale_loads(net: &mut Network, scale: f64) {
    for b in &mut net.buses {
        b.p_load *= scale;
        b.q_load *= scale;
    }
    for g in &mut net.generators {
        g.p_gen *= scale;
    }
}

/// Returns whether the solve converged.
pub fn solve(case: &str, out: &Path, cfg: &RunConfig, load_scale: f64) -> Result<bool> {
    ensure!(load_scale.is_finite() && load_scale >= 0.0, "--load-scale must be finite and non-negative");
    let mut net = load_case(case).with_context(|| format!("loading case `{case}`"))?;
    scale_loads(&mut net, load_scale);
    let diag = match solve_newton_raphson(&net, &cfg.solver) {
        Ok(sol) => {
            let mut staging = Staging::new(out)?;
            if sol.converged {
                let mut csv = Vec::new();
                write_solution_csv(&mut csv, &net, &sol)?;
                staging.write(&out.join(REPORTS).join(format!("{}_solution.csv", net.name)), &csv)?;
            }
            let diag = SolveDiagnostics::new(&net, &sol);
            staging.write(&out.join(REPORTS).join(format!("{}_solve.json", net.name)), &json_bytes(&diag)?)?;
            staging.commit()?;
            diag
        }
        Err(gridflow::Error::SingularJacobian { iteration }) => {
            let diag = SolveDiagnostics {
                case: net.name.clone(),
                iterations: iteration,
                max_mismatch: f64::NAN,
                converged: false,
            };
            let bytes = json_bytes(&diag)?;
            gridflow::fsutil::atomic_write(&out.join(REPORTS).join(format!("{}_solve.json", net.name)), &bytes)?;
            diag
        }
        Err(e) => return Err(e.into()),
    };
    println!(
        "{}: converged={} iterations={} max_mismatch={:e}",
        diag.case, diag.converged, diag.iterations, diag.max_mismatch
    );
    Ok(diag.converged)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    case: &'a str,
    arch: Arch,
    train_samples: usize,
    val_samples: usize,
    test_files: Vec<String>,
    best_epoch: usize,
    best_val_loss: f64,
    epochs_run: usize,
    stop_reason: String,
    parameters: usize,
    config: &'a RunConfig,
}

fn loss_curve(case: &str, arch: Arch, h: &TrainHistory) -> String {
    let series = vec![
        ("train".to_string(), h.epochs.iter().map(|e| (e.epoch as f64, e.train_loss)).collect()),
        ("validation".to_string(), h.epochs.iter().map(|e| (e.epoch as f64, e.val_loss)).collect()),
    ];
    plot::line_chart_log(
        &format!("{} loss, {case}", arch.display_name()),
        "epoch",
        "MSE (normalised)",
        &series,
    )
}

pub fn train_cmd(case: &str, out: &Path, data: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let net = load_case(case).with_context(|| format!("loading case `{case}`"))?;
    let dir = data.map_or_else(|| dataset_dir(out, &net.name), Path::to_path_buf);
    let (manifest, files) = read_dataset(&dir).with_context(|| format!("reading dataset {}", dir.display()))?;
    ensure!(
        manifest.case == net.name && manifest.n_bus == net.n_bus(),
        "dataset is for case {} ({} buses), not {} ({} buses)",
        manifest.case,
        manifest.n_bus,
        net.name,
        net.n_bus()
    );
    let split = split_scenarios(&files, manifest.seed)?;
    let mut model = cfg.model.clone();
    model.n_bus = net.n_bus();
    let arch = model.arch;
    log::info!(
        "training {arch} on {}: {} train, {} validation samples",
        net.name,
        split.train.len(),
        split.val.len()
    );
    let outcome = train(&net.name, &model, &edge_index(&net), &split.train, &split.val, &cfg.train)?;
    let h = &outcome.history;

    let mut staging = Staging::new(out)?;
    let mut test_files = Vec::new();
    for (k, set) in split.test.iter().enumerate() {
        let name = format!("{}_test_{:02}.csv", net.name, k + 1);
        staging.write(&dir.join(TEST_DIR).join(&name), write_dataset_csv(set).as_bytes())?;
        test_files.push(name);
    }
    staging.write(&checkpoint_path(out, &net.name, arch), &outcome.checkpoint.to_bytes()?)?;
    let stem = format!("{}_{arch}", net.name);
    staging.write(&out.join(REPORTS).join(format!("{stem}_history.csv")), h.to_csv().as_bytes())?;
    let summary = TrainSummary {
        case: &net.name,
        arch,
        train_samples: split.train.len(),
        val_samples: split.val.len(),
        test_files,
        best_epoch: h.best_epoch,
        best_val_loss: h.best_val_loss,
        epochs_run: h.epochs.len(),
        stop_reason: h.stop_reason.to_string(),
        parameters: outcome.checkpoint.params.parameter_count(),
        config: cfg,
    };
    staging.write(&out.join(REPORTS).join(format!("{stem}_train.json")), &json_bytes(&summary)?)?;
    staging.write(
        &out.join(PLOTS).join(format!("{stem}_loss.svg")),
        loss_curve(&net.name, arch, h).as_bytes(),
    )?;
    staging.commit()?;
    println!(
        "{stem}: {} epochs ({}), best epoch {} with validation loss {:.4e}",
        h.epochs.len(),
        h.stop_reason,
        h.best_epoch,
        h.best_val_loss
    );
    Ok(())
}

/// Case named by a `<case>_test_NN.csv` or `<case>_scenario_NN.csv` file.
fn case_from_file_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    ["_test_", "_scenario_"]
        .iter()
        .find_map(|tag| stem.rfind(tag).map(|i| stem[..i].to_string()))
}

fn bar_series(rows: &[(String, Vec<(Arch, Option<f64>)>)]) -> (Vec<String>, Vec<(String, Vec<Option<f64>>)>) {
    let categories: Vec<String> = rows.iter().map(|(c, _)| c.clone()).collect();
    let archs: Vec<Arch> = Arch::ALL
        .into_iter()
        .filter(|a| rows.iter().any(|(_, v)| v.iter().any(|(b, _)| b == a)))
        .collect();
    let series = archs
        .iter()
        .map(|a| {
            let vals = rows
                .iter()
                .map(|(_, v)| v.iter().find(|(b, _)| b == a).and_then(|(_, x)| *x))
                .collect();
            (a.display_name().to_string(), vals)
        })
        .collect();
    (categories, series)
}

pub fn evaluate_cmd(checkpoint: &Path, out: &Path, test_glob: Option<&str>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let pattern = match test_glob {
        Some(p) => p.to_string(),
        None => dataset_dir(out, &ckpt.case).join(TEST_DIR).join("*.csv").to_string_lossy().into_owned(),
    };
    let mut paths: Vec<PathBuf> = glob::glob(&pattern)
        .with_context(|| format!("bad glob `{pattern}`"))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no test files match `{pattern}`");
    }
    let sets = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TestSet {
                name: p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                case: case_from_file_name(p).unwrap_or_else(|| ckpt.case.clone()),
                samples: read_dataset_csv(&text).with_context(|| format!("parsing {}", p.display()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reports = evaluation::evaluate(&ckpt, &sets)?;
    let summary = evaluation::summarize(&reports)?;
    let stem = format!("{}_{}", ckpt.case, ckpt.arch());

    let per_file: Vec<(String, Vec<(Arch, Option<f64>)>)> = reports
        .iter()
        .map(|r| (r.dataset.clone(), vec![(r.arch, r.metrics.overall.nrmse)]))
        .collect();
    let (cats, series) = bar_series(&per_file);
    let mut staging = Staging::new(out)?;
    staging.write(
        &out.join(REPORTS).join(format!("{stem}_metrics.csv")),
        evaluation::reports_csv(&reports).as_bytes(),
    )?;
    staging.write(&out.join(REPORTS).join(format!("{stem}_metrics.json")), &json_bytes(&reports)?)?;
    staging.write(
        &out.join(REPORTS).join(format!("{stem}_summary.csv")),
        evaluation::summary_csv(&summary).as_bytes(),
    )?;
    staging.write(
        &out.join(PLOTS).join(format!("{stem}_nrmse.svg")),
        plot::bar_chart(&format!("NRMSE per test file, {stem}"), "NRMSE", &cats, &series).as_bytes(),
    )?;
    staging.commit()?;
    for r in &reports {
        println!(
            "{}: nrmse={:.4} r2={:.4} mse={:.3e}",
            r.dataset,
            r.metrics.overall.nrmse.unwrap_or(f64::NAN),
            r.metrics.overall.r2.unwrap_or(f64::NAN),
            r.metrics.overall.mse
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile {
    nrmse_normaliser: &'static str,
    rows: Vec<SummaryRow>,
    /// Architectures per case from lowest to highest mean NRMSE.
    ordering: Vec<(String, Vec<Arch>)>,
}

pub fn ordering(rows: &[SummaryRow]) -> Vec<(String, Vec<Arch>)> {
    let mut cases: Vec<String> = rows.iter().map(|r| r.case.clone()).collect();
    cases.dedup();
    cases
        .into_iter()
        .map(|c| {
            let mut rs: Vec<&SummaryRow> = rows.iter().filter(|r| r.case == c).collect();
            rs.sort_by(|a, b| {
                let key = |r: &SummaryRow| r.nrmse.map_or(f64::INFINITY, |s| s.mean);
                key(a).total_cmp(&key(b))
            });
            (c, rs.iter().map(|r| r.arch).collect())
        })
        .collect()
}

pub fn report(out: &Path) -> Result<()> {
    let pattern = out.join(REPORTS).join("*_metrics.json").to_string_lossy().into_owned();
    let mut paths: Vec<PathBuf> = glob::glob(&pattern)?.collect::<std::result::Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no evaluation reports under {}", out.join(REPORTS).display());
    }
    let mut reports: Vec<MetricReport> = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        reports.extend(serde_json::from_str::<Vec<MetricReport>>(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    let rows = evaluation::summarize(&reports)?;
    let order = ordering(&rows);
    let mut staging = Staging::new(out)?;
    staging.write(&out.join(REPORTS).join("summary.csv"), evaluation::summary_csv(&rows).as_bytes())?;
    let file = SummaryFile {
        nrmse_normaliser: evaluation::NRMSE_NORMALIZER,
        rows: rows.clone(),
        ordering: order.clone(),
    };
    staging.write(&out.join(REPORTS).join("summary.json"), &json_bytes(&file)?)?;

    let mut cases: Vec<String> = rows.iter().map(|r| r.case.clone()).collect();
    cases.dedup();
    let chart = |pick: &dyn Fn(&SummaryRow) -> Option<f64>| {
        let grouped: Vec<(String, Vec<(Arch, Option<f64>)>)> = cases
            .iter()
            .map(|c| (c.clone(), rows.iter().filter(|r| &r.case == c).map(|r| (r.arch, pick(r))).collect()))
            .collect();
        bar_series(&grouped)
    };
    for (name, title, label, pick) in [
        ("summary_nrmse.svg", "NRMSE by architecture", "NRMSE", &(|r: &SummaryRow| r.nrmse.map(|s| s.mean)) as &dyn Fn(&SummaryRow) -> Option<f64>),
        ("summary_r2.svg", "R\u{b2} by architecture", "R\u{b2}", &|r: &SummaryRow| r.r2.map(|s| s.mean)),
        ("summary_test_loss.svg", "Test MSE by architecture", "MSE", &|r: &SummaryRow| Some(r.mse.mean)),
    ] {
        let (cats, series) = chart(pick);
        staging.write(&out.join(PLOTS).join(name), plot::bar_chart(title, label, &cats, &series).as_bytes())?;
    }
    staging.commit()?;
    println!("case,arch,reports,nrmse_mean,r2_mean,mse_mean");
    for r in &rows {
        println!(
            "{},{},{},{:.4},{:.4},{:.3e}",
            r.case,
            r.arch,
            r.reports,
            r.nrmse.map_or(f64::NAN, |s| s.mean),
            r.r2.map_or(f64::NAN, |s| s.mean),
            r.mse.mean
        );
    }
    for (case, archs) in &order {
        let names: Vec<&str> = archs.iter().map(|a| a.display_name()).collect();
        println!("{case} ordering by NRMSE: {}", names.join(" < "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_from_files() {
        assert_eq!(case_from_file_name(Path::new("x/ieee14_test_03.csv")).as_deref(), Some("ieee14"));
        assert_eq!(case_from_file_name(Path::new("ieee30_scenario_01.csv")).as_deref(), Some("ieee30"));
        assert_eq!(case_from_file_name(Path::new("other.csv")), None);
    }
}
