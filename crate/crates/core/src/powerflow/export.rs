use std::io::Write;

use serde::{Deserialize, Serialize};

use super::PowerFlowSolution;
use crate::grid::Network;

/// JSON sidecar written next to an exported solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub case: String,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub converged: bool,
}

impl SolveDiagnostics {
    pub fn new(net: &Network, sol: &PowerFlowSolution) -> Self {
        SolveDiagnostics {
            case: net.name.clone(),
            iterations: sol.iterations,
            max_mismatch: sol.max_mismatch,
            converged: sol.converged,
        }
    }
}

/// Columns: `bus_id,bus_type,v_pu,delta_rad,p_pu,q_pu`.
pub fn write_solution_csv<W: Write>(
    mut w: W,
    net: &Network,
    sol: &PowerFlowSolution,
) -> std::io::Result<()> {
    writeln!(w, "bus_id,bus_type,v_pu,delta_rad,p_pu,q_pu")?;
    for b in &net.buses {
        let i = b.id;
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{:?}",
            i,
            b.bus_type,
            sol.state.v[i],
            sol.state.delta[i],
            sol.injection.p[i],
            sol.injection.q[i]
        )?;
    }
    Ok(())
}
