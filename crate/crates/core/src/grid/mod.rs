//! Static power-network description.
//!
//! All electrical quantities are stored in per-unit on the system base
//! (`base_mva`); angles are radians. Buses are indexed densely from zero in
//! case-file order and keep their original number as metadata.

mod cases;
mod parse;
mod ybus;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cases::{builtin_case, load_case, BUILTIN_CASES};
pub use parse::{parse_case, render_case};
pub use ybus::{build_ybus, AdmittanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    Slack,
    PV,
    PQ,
}

impl BusType {
    pub fn as_str(self) -> &'static str {
        match self {
            BusType::Slack => "slack",
            BusType::PV => "pv",
            BusType::PQ => "pq",
        }
    }
}

impl std::fmt::Display for BusType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BusType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slack" | "ref" | "3" => Ok(BusType::Slack),
            "pv" | "2" => Ok(BusType::PV),
            "pq" | "1" => Ok(BusType::PQ),
            other => Err(format!("unknown bus type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Dense 0-based index.
    pub id: usize,
    /// Bus number as written in the case file.
    pub number: u32,
    pub bus_type: BusType,
    pub p_load: f64,
    pub q_load: f64,
    pub v_setpoint: f64,
    pub angle_setpoint: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
}

impl Bus {
    pub fn has_load(&self) -> bool {
        self.p_load != 0.0 || self.q_load != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_charging: f64,
    pub tap: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_gen: f64,
    pub v_setpoint: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

impl Network {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.bus_type == BusType::Slack)
            .expect("validated network has a slack bus")
    }

    pub fn load_count(&self) -> usize {
        self.buses.iter().filter(|b| b.has_load()).count()
    }

    pub fn in_service_branches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|br| br.in_service)
    }

    pub fn buses_of_type(&self, t: BusType) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.bus_type == t)
            .map(|b| b.id)
            .collect()
    }

    /// Scheduled net injections (generation minus load) per bus. Reactive
    /// generation is unknown before the solve, so `q` carries load only.
    pub fn scheduled_injection(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p: Vec<f64> = self.buses.iter().map(|b| -b.p_load).collect();
        let q: Vec<f64> = self.buses.iter().map(|b| -b.q_load).collect();
        for g in &self.generators {
            p[g.bus] += g.p_gen;
        }
        (p, q)
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }

    /// Checks every structural invariant of a network.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_bus();
        if n == 0 {
            return Err(Error::Validation("network has no buses".into()));
        }
        if !(self.base_mva > 0.0) {
            return Err(Error::Validation(format!(
                "base_mva must be positive, got {}",
                self.base_mva
            )));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i {
                return Err(Error::Validation(format!(
                    "bus ids must be dense: position {i} holds id {}",
                    b.id
                )));
            }
            let fields = [
                b.p_load,
                b.q_load,
                b.v_setpoint,
                b.angle_setpoint,
                b.shunt_g,
                b.shunt_b,
            ];
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("bus {} has non-finite data", b.number)));
            }
            if b.bus_type != BusType::PQ && !(b.v_setpoint > 0.0) {
                return Err(Error::Validation(format!(
                    "bus {} needs a positive voltage setpoint",
                    b.number
                )));
            }
        }
        let numbers: BTreeSet<u32> = self.buses.iter().map(|b| b.number).collect();
        if numbers.len() != n {
            return Err(Error::Validation("duplicate bus number".into()));
        }
        match self.buses_of_type(BusType::Slack).len() {
            0 => return Err(Error::Validation("no slack bus".into())),
            1 => {}
            k => return Err(Error::Validation(format!("{k} slack buses, expected one"))),
        }
        for br in &self.branches {
            let (f, t) = (br.from_bus, br.to_bus);
            if f >= n || t >= n {
                return Err(Error::Validation(format!("branch {f}-{t} references a missing bus")));
            }
            if f == t {
                return Err(Error::Validation(format!("branch {f}-{t} is a self-loop")));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::SingularBranch { from: f, to: t });
            }
            if !(br.tap > 0.0) {
                return Err(Error::Validation(format!(
                    "branch {f}-{t} has non-positive tap {}",
                    br.tap
                )));
            }
        }
        for g in &self.generators {
            if g.bus >= n {
                return Err(Error::Validation(format!("generator at missing bus {}", g.bus)));
            }
            if self.buses[g.bus].bus_type == BusType::PQ {
                return Err(Error::Validation(format!(
                    "generator at PQ bus {}",
                    self.buses[g.bus].number
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Validation("in-service branches do not connect all buses".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.n_bus();
        let mut adj = vec![Vec::new(); n];
        for br in self.in_service_branches() {
            adj[br.from_bus].push(br.to_bus);
            adj[br.to_bus].push(br.from_bus);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Field-wise comparison with a relative tolerance on real values.
    ///
    /// Unit conversions in the case format (MW to per-unit, degrees to
    /// radians) are not exactly invertible in floating point, so round
    /// trips are compared with this rather than `==`.
    pub fn approx_eq(&self, other: &Network, rel_tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs()).max(1.0);
        self.name == other.name
            && close(self.base_mva, other.base_mva)
            && self.buses.len() == other.buses.len()
            && self.branches.len() == other.branches.len()
            && self.generators.len() == other.generators.len()
            && self.buses.iter().zip(&other.buses).all(|(a, b)| {
                a.id == b.id
                    && a.number == b.number
                    && a.bus_type == b.bus_type
                    && close(a.p_load, b.p_load)
                    && close(a.q_load, b.q_load)
                    && close(a.v_setpoint, b.v_setpoint)
                    && close(a.angle_setpoint, b.angle_setpoint)
                    && close(a.shunt_g, b.shunt_g)
                    && close(a.shunt_b, b.shunt_b)
            })
            && self.branches.iter().zip(&other.branches).all(|(a, b)| {
                a.from_bus == b.from_bus
                    && a.to_bus == b.to_bus
                    && close(a.r, b.r)
                    && close(a.x, b.x)
                    && close(a.b_charging, b.b_charging)
                    && close(a.tap, b.tap)
                    && a.in_service == b.in_service
            })
            && self.generators.iter().zip(&other.generators).all(|(a, b)| {
                a.bus == b.bus
                    && close(a.p_gen, b.p_gen)
                    && close(a.v_setpoint, b.v_setpoint)
                    && close(a.q_min, b.q_min)
                    && close(a.q_max, b.q_max)
            })
    }
}

/// Directed bus-to-bus pairs used for message passing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeIndex {
    pub pairs: Vec<(usize, usize)>,
}

impl EdgeIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Builds an index from arbitrary pairs, adding reverse directions and
    /// dropping duplicates and self-loops. Order of first appearance is kept.
    pub fn from_undirected(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (a, b) in pairs {
            if a == b {
                continue;
            }
            for e in [(a, b), (b, a)] {
                if seen.insert(e) {
                    out.push(e);
                }
            }
        }
        EdgeIndex { pairs: out }
    }

    pub fn is_symmetric(&self) -> bool {
        let set: BTreeSet<_> = self.pairs.iter().copied().collect();
        self.pairs.iter().all(|&(a, b)| set.contains(&(b, a)))
    }
}

/// Both directions of every in-service branch, parallel branches merged.
pub fn edge_index(net: &Network) -> EdgeIndex {
    EdgeIndex::from_undirected(net.in_service_branches().map(|br| (br.from_bus, br.to_bus)))
}
