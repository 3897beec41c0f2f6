//! Test-only oracles kept independent of the library's numerical paths.
#![allow(dead_code)]

use gridflow::grid::{BusType, Network};
use num_complex::Complex64;

pub mod gnn_oracle;

/// Complex admittance matrix assembled element by element.
pub fn complex_ybus(net: &Network) -> Vec<Vec<Complex64>> {
    let n = net.n_bus();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in net.branches.iter().filter(|b| b.in_service) {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b_charging / 2.0);
        let t = br.tap;
        y[br.from_bus][br.from_bus] += (ys + bc) / (t * t);
        y[br.to_bus][br.to_bus] += ys + bc;
        y[br.from_bus][br.to_bus] -= ys / t;
        y[br.to_bus][br.from_bus] -= ys / t;
    }
    for b in &net.buses {
        y[b.id][b.id] += Complex64::new(b.shunt_g, b.shunt_b);
    }
    y
}

/// Polar double-loop evaluation of the injection equations.
pub fn injection_double_loop(g: &[Vec<f64>], b: &[Vec<f64>], v: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let th = d[i] - d[j];
            p[i] += v[i] * v[j] * (g[i][j] * th.cos() + b[i][j] * th.sin());
            q[i] += v[i] * v[j] * (g[i][j] * th.sin() - b[i][j] * th.cos());
        }
    }
    (p, q)
}

/// Gauss-Seidel power flow on the complex admittance matrix. Returns
/// `(v, delta)` once the largest voltage update falls below `tol`.
pub fn gauss_seidel(net: &Network, tol: f64, max_iter: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let y = complex_ybus(net);
    let n = net.n_bus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for b in &net.buses {
        p[b.id] -= b.p_load;
        q[b.id] -= b.q_load;
    }
    for g in &net.generators {
        p[g.bus] += g.p_gen;
    }
    let mut volt: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| match b.bus_type {
            BusType::Slack => Complex64::from_polar(b.v_setpoint, b.angle_setpoint),
            BusType::PV => Complex64::new(b.v_setpoint, 0.0),
            BusType::PQ => Complex64::new(1.0, 0.0),
        })
        .collect();
    for _ in 0..max_iter {
        let mut largest = 0.0_f64;
        for b in &net.buses {
            let i = b.id;
            if b.bus_type == BusType::Slack {
                continue;
            }
            let sum: Complex64 = (0..n).filter(|&j| j != i).map(|j| y[i][j] * volt[j]).sum();
            let qi = if b.bus_type == BusType::PV {
                let total = sum + y[i][i] * volt[i];
                -(volt[i].conj() * total).im
            } else {
                q[i]
            };
            let s_conj = Complex64::new(p[i], -qi);
            let mut next = (s_conj / volt[i].conj() - sum) / y[i][i];
            if b.bus_type == BusType::PV {
                next = next * (b.v_setpoint / next.norm());
            }
            largest = largest.max((next - volt[i]).norm());
            volt[i] = next;
        }
        if largest < tol {
            return Some((
                volt.iter().map(|c| c.norm()).collect(),
                volt.iter().map(|c| c.arg()).collect(),
            ));
        }
    }
    None
}

/// Bisection on `sin(2δ) = -2 p x` for a lossless two-bus line with zero
/// reactive load; returns `(v2, delta2)`.
pub fn two_bus_bisection(p_load: f64, x: f64) -> (f64, f64) {
    let f = |d: f64| d.cos() * d.sin() / x + p_load;
    let (mut lo, mut hi) = (-std::f64::consts::FRAC_PI_4, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let d = 0.5 * (lo + hi);
    (d.cos(), d)
}

/// Bisection result for 10 MW over x = 0.1 pu, frozen: `-asin(0.02)/2`
/// and its cosine.
pub const TWO_BUS_DELTA: f64 = -0.010000666786695245;
pub const TWO_BUS_V: f64 = 0.9999499937486872;

pub fn two_bus_text(p_mw: f64) -> String {
    format!(
        "[meta]\nname,two-bus\nbase_mva,100\n[bus]\n1,slack,0,0,0,0,1,0\n2,pq,{p_mw},0,0,0,1,0\n\
         [branch]\n1,2,0,0.1,0,1,1\n"
    )
}

/// Three buses: slack, PV generator and a PQ load on a lossy triangle with
/// line charging.
pub const THREE_BUS: &str = "\
[meta]
name,three-bus
base_mva,100
[bus]
1,slack,0,0,0,0,1.02,0
2,pv,20,10,0,0,1.01,0
3,pq,60,25,0,4,1,0
[branch]
1,2,0.02,0.06,0.03,1,1
2,3,0.03,0.09,0.02,1,1
1,3,0.01,0.05,0.02,1,1
[gen]
1,0,1.02,-100,100
2,50,1.01,-50,50
";

/// Deterministic pseudo-random numbers for oracle inputs.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let u = (self.0 >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
}
