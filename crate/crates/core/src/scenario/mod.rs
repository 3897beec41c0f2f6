//! Load-perturbed scenarios and the feature/target datasets built from them.

mod dataset;
mod profile;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AdmittanceMatrix, BusType, Network};
use crate::powerflow::{power_injection, BusState, PowerFlowSolution};

pub use dataset::{
    generate_dataset, generate_samples, read_dataset, read_dataset_csv, sample_rng,
    write_dataset_csv, DatasetManifest, GeneratedSample, SampleDraw, ScenarioFile,
};
pub use profile::{
    default_daily_profile, HourBand, LoadShapeConfig, MultiplierRange, Season, SeasonalProfile,
};

/// Number of model input columns per bus.
pub const INPUT_FEATURES: usize = 7;
/// Number of target columns per bus.
pub const TARGETS: usize = 2;

/// Scales every load by `multiplier * (1 + u)` with `u` drawn per load bus
/// from `U(-f, f)`, `f = cfg.variation_fraction`. Generator active outputs
/// follow the ratio of new to base total load, leaving the residual to the
/// slack bus.
pub fn perturb_loads<R: Rng + ?Sized>(
    net: &Network,
    cfg: &LoadShapeConfig,
    multiplier: f64,
    rng: &mut R,
) -> Network {
    let f = cfg.variation_fraction;
    let mut out = net.clone();
    for bus in out.buses.iter_mut().filter(|b| b.has_load()) {
        let u = if f > 0.0 { rng.gen_range(-f..=f) } else { 0.0 };
        let scale = multiplier * (1.0 + u);
        bus.p_load *= scale;
        bus.q_load *= scale;
    }
    let (base_p, _) = net.total_load();
    let (new_p, _) = out.total_load();
    if base_p != 0.0 {
        let ratio = new_p / base_p;
        for g in &mut out.generators {
            g.p_gen *= ratio;
        }
    }
    out
}

/// One bus of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub bus_id: usize,
    pub bus_type: BusType,
    pub p: f64,
    pub q: f64,
    pub v_in: f64,
    pub delta_in: f64,
    pub v_target: f64,
    pub delta_target: f64,
}

impl SampleRow {
    /// `[p, q, v_in, delta_in, is_pv, is_pq, is_slack]`.
    pub fn features(&self) -> [f64; INPUT_FEATURES] {
        let one_hot = |t| if self.bus_type == t { 1.0 } else { 0.0 };
        [
            self.p,
            self.q,
            self.v_in,
            self.delta_in,
            one_hot(BusType::PV),
            one_hot(BusType::PQ),
            one_hot(BusType::Slack),
        ]
    }

    pub fn targets(&self) -> [f64; TARGETS] {
        [self.v_target, self.delta_target]
    }
}

/// Per-bus features and power-flow targets of one scenario, rows in
/// ascending bus index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub rows: Vec<SampleRow>,
}

impl SampleRecord {
    pub fn n_bus(&self) -> usize {
        self.rows.len()
    }

    /// Row-major `n_bus x 7` input matrix.
    pub fn feature_matrix(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.features()).collect()
    }

    /// `[v_1..v_n, delta_1..delta_n]`, matching the model output layout.
    pub fn target_vector(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.v_target)
            .chain(self.rows.iter().map(|r| r.delta_target))
            .collect()
    }

    /// Largest power-balance residual of the targets against the scheduled
    /// injections carried in the features.
    pub fn max_mismatch(&self, y: &AdmittanceMatrix) -> f64 {
        let state = BusState {
            v: self.rows.iter().map(|r| r.v_target).collect(),
            delta: self.rows.iter().map(|r| r.delta_target).collect(),
        };
        let inj = power_injection(y, &state);
        self.rows
            .iter()
            .flat_map(|r| {
                let dp = match r.bus_type {
                    BusType::Slack => 0.0,
                    _ => (r.p - inj.p[r.bus_id]).abs(),
                };
                let dq = match r.bus_type {
                    BusType::PQ => (r.q - inj.q[r.bus_id]).abs(),
                    _ => 0.0,
                };
                [dp, dq]
            })
            .fold(0.0, f64::max)
    }
}

/// Builds a sample from a solved network. Inputs carry only what is known
/// before the solve: scheduled injections, the voltage setpoint of slack and
/// PV buses, the slack angle, and flat placeholders (1.0 pu, 0 rad)
/// elsewhere.
pub fn encode_features(net: &Network, sol: &PowerFlowSolution) -> Result<SampleRecord> {
    if !sol.converged {
        return Err(Error::Contract(
            "cannot encode an unconverged power-flow solution".into(),
        ));
    }
    if sol.state.len() != net.n_bus() {
        return Err(Error::Dimension(format!(
            "solution has {} buses, network {}",
            sol.state.len(),
            net.n_bus()
        )));
    }
    let (p, q) = net.scheduled_injection();
    let rows = net
        .buses
        .iter()
        .map(|b| {
            let (v_in, delta_in) = match b.bus_type {
                BusType::Slack => (b.v_setpoint, b.angle_setpoint),
                BusType::PV => (b.v_setpoint, 0.0),
                BusType::PQ => (1.0, 0.0),
            };
            SampleRow {
                bus_id: b.id,
                bus_type: b.bus_type,
                p: p[b.id],
                q: q[b.id],
                v_in,
                delta_in,
                v_target: sol.state.v[b.id],
                delta_target: sol.state.delta[b.id],
            }
        })
        .collect();
    Ok(SampleRecord { sample_id: 0, rows })
}
