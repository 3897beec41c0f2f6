//! Ground-truth AC power-flow datasets and graph neural network surrogates.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] holds the static network description, the case-file parser,
//!   the bus admittance matrix and the graph edge index.
//! * [`powerflow`] solves the AC power-flow equations with Newton-Raphson.
//! * [`scenario`] perturbs loads with daily and seasonal patterns, solves
//!   each scenario and writes feature/target datasets.
//! * [`autodiff`] is a small tape-based reverse-mode tensor engine.
//! * [`gnn`] implements GCN, GAT, GraphSAGE and GraphConv layers together
//!   with the fixed-topology readout model.
//! * [`training`] normalises data and runs Adam with scheduling and early
//!   stopping.
//! * [`evaluation`] computes regression metrics and cross-model summaries.
//! * [`plot`] renders SVG bar charts and loss curves.

pub mod autodiff;
pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod linalg;
pub mod gnn;
pub mod grid;
pub mod plot;
pub mod powerflow;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
