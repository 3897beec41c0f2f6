use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Bus admittance matrix `Y = G + jB`, dense, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceMatrix {
    pub g: Matrix,
    pub b: Matrix,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g.rows()
    }
}

/// Assembles the admittance matrix from the pi-model of every in-service
/// branch plus bus shunts.
///
/// With series admittance `y = 1/(r + jx)`, tap `t` on the from side and
/// total charging `b`:
/// `Y_ff += (y + jb/2)/t^2`, `Y_tt += y + jb/2`, `Y_ft = Y_tf -= y/t`.
pub fn build_ybus(net: &Network) -> Result<AdmittanceMatrix> {
    let n = net.n_bus();
    let mut g = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, n);
    for br in net.in_service_branches() {
        let (f, t) = (br.from_bus, br.to_bus);
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::SingularBranch { from: f, to: t });
        }
        let (ys_re, ys_im) = reciprocal(br.r, br.x);
        let half_b = br.b_charging / 2.0;
        let tap = br.tap;
        let tap2 = tap * tap;

        g[(f, f)] += ys_re / tap2;
        b[(f, f)] += (ys_im + half_b) / tap2;
        g[(t, t)] += ys_re;
        b[(t, t)] += ys_im + half_b;
        g[(f, t)] -= ys_re / tap;
        b[(f, t)] -= ys_im / tap;
        g[(t, f)] -= ys_re / tap;
        b[(t, f)] -= ys_im / tap;
    }
    for bus in &net.buses {
        g[(bus.id, bus.id)] += bus.shunt_g;
        b[(bus.id, bus.id)] += bus.shunt_b;
    }
    Ok(AdmittanceMatrix { g, b })
}

/// `1/(re + j im)` by Smith's method, exact for purely real or imaginary
/// inputs.
fn reciprocal(re: f64, im: f64) -> (f64, f64) {
    if im.abs() >= re.abs() {
        let ratio = re / im;
        let den = re * ratio + im;
        (ratio / den, -1.0 / den)
    } else {
        let ratio = im / re;
        let den = re + im * ratio;
        (1.0 / den, -ratio / den)
    }
}
