//! Python bindings. The module is importable as `gridflow`.

use std::path::PathBuf;

use gridflow::autodiff::Tensor;
use gridflow::evaluation::{self, TestSet};
use gridflow::gnn::{ops, Arch, GnnConfig};
use gridflow::grid::{build_ybus, edge_index, load_case, parse_case, render_case, EdgeIndex, Network, BUILTIN_CASES};
use gridflow::powerflow::{solve_newton_raphson, PowerFlowSolution, SolverOptions};
use gridflow::scenario::{generate_dataset as generate, read_dataset, read_dataset_csv, LoadShapeConfig};
use gridflow::training::{split_scenarios, train, Checkpoint, TrainConfig, TrainHistory};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn to_py_err(e: gridflow::Error) -> PyErr {
    use gridflow::Error as E;
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(&e);
    while let Some(s) = src {
        msg.push_str(&format!(": {s}"));
        src = s.source();
    }
    match e {
        E::Io { .. } => PyIOError::new_err(msg),
        E::Training(_) | E::SingularJacobian { .. } | E::Generation(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

fn tensor(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what} must be a rectangular list of lists")));
    }
    let n = rows.len();
    Tensor::matrix(n, cols, rows.concat()).map_err(to_py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.cols().max(1)).map(<[f64]>::to_vec).collect()
}

/// A power network in per-unit quantities.
#[pyclass(name = "Network", module = "gridflow", frozen)]
pub struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// Loads a built-in case by name or a case file by path.
    #[staticmethod]
    fn load(name_or_path: &str) -> PyResult<Self> {
        load_case(name_or_path).map(|inner| PyNetwork { inner }).map_err(to_py_err)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        parse_case(text).map(|inner| PyNetwork { inner }).map_err(to_py_err)
    }

    fn to_text(&self) -> String {
        render_case(&self.inner)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n_bus(&self) -> usize {
        self.inner.n_bus()
    }

    #[getter]
    fn base_mva(&self) -> f64 {
        self.inner.base_mva
    }

    #[getter]
    fn n_branch(&self) -> usize {
        self.inner.branches.len()
    }

    #[getter]
    fn n_generator(&self) -> usize {
        self.inner.generators.len()
    }

    #[getter]
    fn n_load(&self) -> usize {
        self.inner.load_count()
    }

    fn bus_types(&self) -> Vec<String> {
        self.inner.buses.iter().map(|b| b.bus_type.to_string()).collect()
    }

    /// Directed edge pairs over dense bus indices, both directions present.
    fn edge_index(&self) -> Vec<(usize, usize)> {
        edge_index(&self.inner).pairs
    }

    /// `(G, B)`, the real and imaginary parts of the bus admittance matrix.
    fn ybus(&self) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let y = build_ybus(&self.inner).map_err(to_py_err)?;
        Ok((y.g.to_rows(), y.b.to_rows()))
    }

    /// A copy with every load and generator dispatch multiplied by `factor`.
    fn scaled(&self, factor: f64) -> Self {
        let mut inner = self.inner.clone();
        for b in &mut inner.buses {
            b.p_load *= factor;
            b.q_load *= factor;
        }
        for g in &mut inner.generators {
            g.p_gen *= factor;
        }
        PyNetwork { inner }
    }

    /// Newton-Raphson AC power flow.
    #[pyo3(signature = (tolerance = 1e-8, max_iterations = 30, flat_start = true))]
    fn solve(&self, tolerance: f64, max_iterations: usize, flat_start: bool) -> PyResult<PySolution> {
        let opts = SolverOptions {
            tolerance,
            max_iterations,
            flat_start,
        };
        solve_newton_raphson(&self.inner, &opts).map(|inner| PySolution { inner }).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(name={:?}, buses={}, branches={}, generators={})",
            self.inner.name,
            self.inner.n_bus(),
            self.inner.branches.len(),
            self.inner.generators.len()
        )
    }
}

#[pyclass(name = "PowerFlowSolution", module = "gridflow", frozen)]
pub struct PySolution {
    inner: PowerFlowSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn v(&self) -> Vec<f64> {
        self.inner.state.v.clone()
    }

    #[getter]
    fn delta(&self) -> Vec<f64> {
        self.inner.state.delta.clone()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.inner.injection.p.clone()
    }

    #[getter]
    fn q(&self) -> Vec<f64> {
        self.inner.injection.q.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    #[getter]
    fn max_mismatch(&self) -> f64 {
        self.inner.max_mismatch
    }

    fn __repr__(&self) -> String {
        format!(
            "PowerFlowSolution(converged={}, iterations={}, max_mismatch={:e})",
            self.inner.converged, self.inner.iterations, self.inner.max_mismatch
        )
    }
}

/// A trained surrogate together with its normalisation statistics.
#[pyclass(name = "Model", module = "gridflow", frozen)]
pub struct PyModel {
    checkpoint: Checkpoint,
    history: Option<TrainHistory>,
}

fn parse_arch(arch: &str) -> PyResult<Arch> {
    arch.parse().map_err(to_py_err)
}

#[pymethods]
impl PyModel {
    /// Trains on the dataset in `dataset_dir` with the standard split: the
    /// first scenario file for training, 20 % of the second for validation.
    #[staticmethod]
    #[pyo3(signature = (case, dataset_dir, arch = "gcn", seed = 0, max_epochs = 800, patience = 100, lr = 5e-5, batch_size = 16, dropout = 0.2))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        case: &str,
        dataset_dir: PathBuf,
        arch: &str,
        seed: u64,
        max_epochs: usize,
        patience: usize,
        lr: f64,
        batch_size: usize,
        dropout: f64,
    ) -> PyResult<Self> {
        let net = load_case(case).map_err(to_py_err)?;
        let model = GnnConfig {
            dropout,
            ..GnnConfig::new(parse_arch(arch)?, net.n_bus())
        };
        let cfg = TrainConfig {
            lr,
            batch_size,
            max_epochs,
            patience,
            seed,
            ..TrainConfig::default()
        };
        let outcome = py
            .detach(|| -> gridflow::Result<_> {
                let (manifest, files) = read_dataset(&dataset_dir)?;
                let split = split_scenarios(&files, manifest.seed)?;
                train(&net.name, &model, &edge_index(&net), &split.train, &split.val, &cfg)
            })
            .map_err(to_py_err)?;
        Ok(PyModel {
            checkpoint: outcome.checkpoint,
            history: Some(outcome.history),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            checkpoint: Checkpoint::load(&path).map_err(to_py_err)?,
            history: None,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(to_py_err)
    }

    #[getter]
    fn arch(&self) -> &'static str {
        self.checkpoint.arch().as_str()
    }

    #[getter]
    fn case(&self) -> &str {
        &self.checkpoint.case
    }

    #[getter]
    fn n_bus(&self) -> usize {
        self.checkpoint.params.config.n_bus
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.checkpoint.params.parameter_count()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.checkpoint.best_epoch
    }

    #[getter]
    fn best_val_loss(&self) -> f64 {
        self.checkpoint.best_val_loss
    }

    /// `(epoch, train_loss, val_loss, lr)` per epoch; empty for a loaded model.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.history
            .as_ref()
            .map(|h| h.epochs.iter().map(|e| (e.epoch, e.train_loss, e.val_loss, e.lr)).collect())
            .unwrap_or_default()
    }

    /// Denormalised `[V_1..V_n, delta_1..delta_n]` for every sample of a dataset CSV.
    fn predict_csv(&self, path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let samples = read_dataset_csv(&text).map_err(to_py_err)?;
        evaluation::predict(&self.checkpoint, &samples).map_err(to_py_err)
    }

    /// One metric report (as a dict) per dataset CSV.
    fn evaluate<'py>(&self, py: Python<'py>, paths: Vec<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let sets = paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| PyIOError::new_err(format!("{}: {e}", p.display())))?;
                Ok(TestSet {
                    name: p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                    case: self.checkpoint.case.clone(),
                    samples: read_dataset_csv(&text).map_err(to_py_err)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let reports = py.detach(|| evaluation::evaluate(&self.checkpoint, &sets)).map_err(to_py_err)?;
        serialize(py, &reports)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(arch={:?}, case={:?}, parameters={})",
            self.arch(),
            self.checkpoint.case,
            self.parameter_count()
        )
    }
}

#[pyfunction]
fn builtin_cases() -> Vec<&'static str> {
    BUILTIN_CASES.to_vec()
}

/// Writes `scenarios` CSV files of `samples` each plus a manifest into
/// `out_dir` and returns the manifest as a dict.
#[pyfunction]
#[pyo3(signature = (case, out_dir, scenarios, samples, seed = 0, variation = 0.4))]
fn generate_dataset<'py>(
    py: Python<'py>,
    case: &str,
    out_dir: PathBuf,
    scenarios: usize,
    samples: usize,
    seed: u64,
    variation: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let net = load_case(case).map_err(to_py_err)?;
    let cfg = LoadShapeConfig {
        seed,
        variation_fraction: variation,
        ..LoadShapeConfig::default()
    };
    let manifest = py
        .detach(|| generate(&net, &cfg, &SolverOptions::default(), scenarios, samples, &out_dir))
        .map_err(to_py_err)?;
    serialize(py, &manifest)
}

fn edges(pairs: Vec<(usize, usize)>) -> EdgeIndex {
    EdgeIndex::from_undirected(pairs)
}

/// Symmetric-normalised graph convolution with self-loops.
#[pyfunction]
fn gcn_forward(h: Vec<Vec<f64>>, edge_pairs: Vec<(usize, usize)>, w: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let out = ops::gcn(&tensor(h, "h")?, &edges(edge_pairs), &tensor(w, "w")?).map_err(to_py_err)?;
    Ok(rows(&out))
}

/// Single-head graph attention; `att` is `d_out x 2` (receiver, sender halves).
#[pyfunction]
fn gat_forward(
    h: Vec<Vec<f64>>,
    edge_pairs: Vec<(usize, usize)>,
    w: Vec<Vec<f64>>,
    att: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let out = ops::gat(&tensor(h, "h")?, &edges(edge_pairs), &tensor(w, "w")?, &tensor(att, "att")?)
        .map_err(to_py_err)?;
    Ok(rows(&out))
}

/// Self weight plus mean-aggregated neighbour weight.
#[pyfunction]
fn sage_forward(
    h: Vec<Vec<f64>>,
    edge_pairs: Vec<(usize, usize)>,
    w_self: Vec<Vec<f64>>,
    w_neigh: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let out = ops::sage(&tensor(h, "h")?, &edges(edge_pairs), &tensor(w_self, "w_self")?, &tensor(w_neigh, "w_neigh")?)
        .map_err(to_py_err)?;
    Ok(rows(&out))
}

/// Root weight plus sum-aggregated neighbour weight.
#[pyfunction]
fn graphconv_forward(
    h: Vec<Vec<f64>>,
    edge_pairs: Vec<(usize, usize)>,
    w_root: Vec<Vec<f64>>,
    w_neigh: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let out = ops::graphconv(&tensor(h, "h")?, &edges(edge_pairs), &tensor(w_root, "w_root")?, &tensor(w_neigh, "w_neigh")?)
        .map_err(to_py_err)?;
    Ok(rows(&out))
}

/// Regression metrics for rows laid out as `[V_1..V_n, delta_1..delta_n]`.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, pred: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
    let m = evaluation::metrics(&pred, &truth).map_err(to_py_err)?;
    serialize(py, &m)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(builtin_cases, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(gcn_forward, m)?)?;
    m.add_function(wrap_pyfunction!(gat_forward, m)?)?;
    m.add_function(wrap_pyfunction!(sage_forward, m)?)?;
    m.add_function(wrap_pyfunction!(graphconv_forward, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "gridflow")]
fn gridflow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
