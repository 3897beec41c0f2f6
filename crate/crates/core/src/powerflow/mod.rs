//! Newton-Raphson AC power flow.
//!
//! Unknowns are the angles of every PV and PQ bus followed by the voltage
//! magnitudes of every PQ bus, both in ascending bus order. Mismatch rows
//! follow the same layout: active power for PV and PQ buses, then reactive
//! power for PQ buses. Reactive limits of PV buses are not enforced.

mod export;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_ybus, AdmittanceMatrix, BusType, Network};
use crate::linalg::{Lu, Matrix};

pub use export::{write_solution_csv, SolveDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusState {
    pub v: Vec<f64>,
    pub delta: Vec<f64>,
}

impl BusState {
    pub fn flat(n: usize) -> Self {
        BusState {
            v: vec![1.0; n],
            delta: vec![0.0; n],
        }
    }

    /// Initial guess: setpoints where known, flat values (or the stored
    /// bus values when `flat_start` is off) elsewhere.
    pub fn initial(net: &Network, flat_start: bool) -> Self {
        let mut s = BusState::flat(net.n_bus());
        for b in &net.buses {
            match b.bus_type {
                BusType::Slack => {
                    s.v[b.id] = b.v_setpoint;
                    s.delta[b.id] = b.angle_setpoint;
                }
                BusType::PV => {
                    s.v[b.id] = b.v_setpoint;
                    if !flat_start {
                        s.delta[b.id] = b.angle_setpoint;
                    }
                }
                BusType::PQ => {
                    if !flat_start {
                        s.v[b.id] = b.v_setpoint;
                        s.delta[b.id] = b.angle_setpoint;
                    }
                }
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Net injected power per bus, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub flat_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iterations: 30,
            flat_start: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub state: BusState,
    pub injection: Injection,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub converged: bool,
}

/// Computes `P_i + jQ_i = V_i e^{jδ_i} conj(Σ_j Y_ij V_j e^{jδ_j})` through
/// rectangular bus currents.
pub fn power_injection(y: &AdmittanceMatrix, s: &BusState) -> Injection {
    let n = s.len();
    assert_eq!(y.n(), n, "admittance matrix and state sizes differ");
    let e: Vec<f64> = s.v.iter().zip(&s.delta).map(|(v, d)| v * d.cos()).collect();
    let f: Vec<f64> = s.v.iter().zip(&s.delta).map(|(v, d)| v * d.sin()).collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (gi, bi) = (y.g.row(i), y.b.row(i));
        let mut i_re = 0.0;
        let mut i_im = 0.0;
        for j in 0..n {
            i_re += gi[j] * e[j] - bi[j] * f[j];
            i_im += gi[j] * f[j] + bi[j] * e[j];
        }
        p[i] = e[i] * i_re + f[i] * i_im;
        q[i] = f[i] * i_re - e[i] * i_im;
    }
    Injection { p, q }
}

/// Bus index sets used to lay out the Newton system.
#[derive(Debug, Clone)]
struct Layout {
    /// PV and PQ buses, ascending.
    non_slack: Vec<usize>,
    pq: Vec<usize>,
}

impl Layout {
    fn new(net: &Network) -> Self {
        Layout {
            non_slack: net
                .buses
                .iter()
                .filter(|b| b.bus_type != BusType::Slack)
                .map(|b| b.id)
                .collect(),
            pq: net.buses_of_type(BusType::PQ),
        }
    }

    fn dim(&self) -> usize {
        self.non_slack.len() + self.pq.len()
    }
}

fn check_size(net: &Network, y: &AdmittanceMatrix, s: &BusState) {
    assert_eq!(net.n_bus(), s.len(), "state does not match network size");
    assert_eq!(net.n_bus(), y.n(), "admittance matrix does not match network size");
}

fn mismatch_with(net: &Network, layout: &Layout, inj: &Injection) -> Vec<f64> {
    let (p_sched, q_sched) = net.scheduled_injection();
    layout
        .non_slack
        .iter()
        .map(|&i| p_sched[i] - inj.p[i])
        .chain(layout.pq.iter().map(|&i| q_sched[i] - inj.q[i]))
        .collect()
}

/// Scheduled minus computed injections: `ΔP` over PV and PQ buses followed
/// by `ΔQ` over PQ buses.
pub fn mismatch(net: &Network, y: &AdmittanceMatrix, s: &BusState) -> Vec<f64> {
    check_size(net, y, s);
    mismatch_with(net, &Layout::new(net), &power_injection(y, s))
}

fn jacobian_with(layout: &Layout, y: &AdmittanceMatrix, s: &BusState, inj: &Injection) -> Matrix {
    let n = s.len();
    let np = layout.non_slack.len();
    let mut col_delta = vec![usize::MAX; n];
    let mut col_v = vec![usize::MAX; n];
    for (k, &i) in layout.non_slack.iter().enumerate() {
        col_delta[i] = k;
    }
    for (k, &i) in layout.pq.iter().enumerate() {
        col_v[i] = np + k;
    }
    let mut jac = Matrix::zeros(layout.dim(), layout.dim());
    let rows = layout
        .non_slack
        .iter()
        .map(|&i| (i, true))
        .chain(layout.pq.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        let (vi, di) = (s.v[i], s.delta[i]);
        let (gii, bii) = (y.g[(i, i)], y.b[(i, i)]);
        for j in 0..n {
            if col_delta[j] == usize::MAX && col_v[j] == usize::MAX {
                continue;
            }
            let (gij, bij) = (y.g[(i, j)], y.b[(i, j)]);
            let (d_delta, d_v) = if i == j {
                if is_p {
                    (-inj.q[i] - bii * vi * vi, inj.p[i] / vi + gii * vi)
                } else {
                    (inj.p[i] - gii * vi * vi, inj.q[i] / vi - bii * vi)
                }
            } else {
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (sin, cos) = (di - s.delta[j]).sin_cos();
                let vj = s.v[j];
                if is_p {
                    (
                        vi * vj * (gij * sin - bij * cos),
                        vi * (gij * cos + bij * sin),
                    )
                } else {
                    (
                        -vi * vj * (gij * cos + bij * sin),
                        vi * (gij * sin - bij * cos),
                    )
                }
            };
            if col_delta[j] != usize::MAX {
                jac[(r, col_delta[j])] = d_delta;
            }
            if col_v[j] != usize::MAX {
                jac[(r, col_v[j])] = d_v;
            }
        }
    }
    jac
}

/// Analytic Jacobian of the computed injections (mismatch row layout) with
/// respect to the unknown angles and PQ voltage magnitudes.
pub fn jacobian(net: &Network, y: &AdmittanceMatrix, s: &BusState) -> Matrix {
    check_size(net, y, s);
    jacobian_with(&Layout::new(net), y, s, &power_injection(y, s))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

/// Solves the power flow from the network's setpoints.
pub fn solve_newton_raphson(net: &Network, opts: &SolverOptions) -> Result<PowerFlowSolution> {
    let y = build_ybus(net)?;
    solve_with_ybus(net, &y, opts)
}

/// As [`solve_newton_raphson`] with a prebuilt admittance matrix.
pub fn solve_with_ybus(
    net: &Network,
    y: &AdmittanceMatrix,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    opts.validate()?;
    let layout = Layout::new(net);
    let mut state = BusState::initial(net, opts.flat_start);
    check_size(net, y, &state);
    let np = layout.non_slack.len();

    let mut inj = power_injection(y, &state);
    let mut f = mismatch_with(net, &layout, &inj);
    let mut err = max_abs(&f);
    let mut iterations = 0;
    let mut converged = err <= opts.tolerance;

    while !converged && iterations < opts.max_iterations && err.is_finite() {
        iterations += 1;
        let jac = jacobian_with(&layout, y, &state, &inj);
        let lu = Lu::factor(&jac).ok_or(Error::SingularJacobian {
            iteration: iterations,
        })?;
        let dx = lu.solve(&f);
        for (k, &i) in layout.non_slack.iter().enumerate() {
            state.delta[i] += dx[k];
        }
        for (k, &i) in layout.pq.iter().enumerate() {
            state.v[i] += dx[np + k];
        }
        inj = power_injection(y, &state);
        f = mismatch_with(net, &layout, &inj);
        err = max_abs(&f);
        converged = err <= opts.tolerance;
    }
    if converged && state.v.iter().any(|&v| !(v > 0.0)) {
        converged = false;
    }
    log::debug!(
        "newton-raphson on '{}': converged={converged} after {iterations} iterations, max mismatch {err:.3e}",
        net.name
    );
    Ok(PowerFlowSolution {
        state,
        injection: inj,
        iterations,
        max_mismatch: err,
        converged,
    })
}
