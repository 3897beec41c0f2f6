mod common;

use common::{gauss_seidel, TWO_BUS_DELTA, TWO_BUS_V, injection_double_loop, two_bus_bisection, two_bus_text, Lcg, THREE_BUS};
use gridflow::grid::{build_ybus, load_case, parse_case, BusType, BUILTIN_CASES};
use gridflow::powerflow::{
    jacobian, mismatch, power_injection, solve_newton_raphson, BusState, SolverOptions,
};

fn random_state(rng: &mut Lcg, n: usize) -> BusState {
    BusState {
        v: (0..n).map(|_| rng.uniform(0.9, 1.1)).collect(),
        delta: (0..n).map(|_| rng.uniform(-0.5, 0.5)).collect(),
    }
}

#[test]
fn frozen_two_bus_values_match_bisection() {
    let (v, d) = two_bus_bisection(0.1, 0.1);
    assert!((v - TWO_BUS_V).abs() < 1e-15);
    assert!((d - TWO_BUS_DELTA).abs() < 1e-15);
}

#[test]
fn two_bus_solution() {
    let net = parse_case(&two_bus_text(10.0)).unwrap();
    let sol = solve_newton_raphson(&net, &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.state.v[1] - TWO_BUS_V).abs() < 1e-9);
    assert!((sol.state.delta[1] - TWO_BUS_DELTA).abs() < 1e-9);
    // slack supplies the load
    assert!((sol.injection.p[0] - 0.1).abs() < 1e-8);
}

#[test]
fn injection_matches_double_loop_on_random_four_bus() {
    let text = "[meta]\nbase_mva,100\n[bus]\n1,slack,0,0,0,0,1,0\n2,pq,0,0,1,2,1,0\n\
                3,pv,0,0,0,0,1,0\n4,pq,0,0,0,-3,1,0\n[branch]\n1,2,0.01,0.1,0.02,1,1\n\
                2,3,0.02,0.08,0.01,0.97,1\n3,4,0.03,0.2,0,1,1\n4,1,0.005,0.05,0.04,1.02,1\n\
                [gen]\n3,10,1,-10,10\n";
    let net = parse_case(text).unwrap();
    let y = build_ybus(&net).unwrap();
    let (g, b) = (y.g.to_rows(), y.b.to_rows());
    let mut rng = Lcg(7);
    for _ in 0..20 {
        let s = random_state(&mut rng, 4);
        let inj = power_injection(&y, &s);
        let (p, q) = injection_double_loop(&g, &b, &s.v, &s.delta);
        for i in 0..4 {
            assert!((inj.p[i] - p[i]).abs() < 1e-12);
            assert!((inj.q[i] - q[i]).abs() < 1e-12);
        }
    }
}

fn fd_jacobian_error(case: &str, states: usize, seed: u64) -> f64 {
    let net = load_case(case).unwrap();
    let y = build_ybus(&net).unwrap();
    let n = net.n_bus();
    let non_slack: Vec<usize> = (0..n).filter(|&i| net.buses[i].bus_type != BusType::Slack).collect();
    let pq = net.buses_of_type(BusType::PQ);
    let h = 1e-6;
    let mut rng = Lcg(seed);
    let mut worst = 0.0_f64;
    for _ in 0..states {
        let s = random_state(&mut rng, n);
        let jac = jacobian(&net, &y, &s);
        let computed = |st: &BusState| {
            let inj = power_injection(&y, st);
            non_slack
                .iter()
                .map(|&i| inj.p[i])
                .chain(pq.iter().map(|&i| inj.q[i]))
                .collect::<Vec<f64>>()
        };
        let cols: Vec<(usize, bool)> = non_slack
            .iter()
            .map(|&i| (i, true))
            .chain(pq.iter().map(|&i| (i, false)))
            .collect();
        for (c, &(bus, is_angle)) in cols.iter().enumerate() {
            let mut plus = s.clone();
            let mut minus = s.clone();
            if is_angle {
                plus.delta[bus] += h;
                minus.delta[bus] -= h;
            } else {
                plus.v[bus] += h;
                minus.v[bus] -= h;
            }
            let (fp, fm) = (computed(&plus), computed(&minus));
            for r in 0..cols.len() {
                let numeric = (fp[r] - fm[r]) / (2.0 * h);
                let analytic = jac[(r, c)];
                let scale = analytic.abs().max(numeric.abs());
                // entries that vanish analytically are compared absolutely
                let err = if scale < 1e-3 {
                    (analytic - numeric).abs()
                } else {
                    (analytic - numeric).abs() / scale
                };
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn jacobian_matches_finite_differences_ieee14() {
    let err = fd_jacobian_error("ieee14", 20, 11);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn jacobian_matches_finite_differences_ieee30() {
    let err = fd_jacobian_error("ieee30", 20, 12);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn three_bus_matches_gauss_seidel() {
    let net = parse_case(THREE_BUS).unwrap();
    let sol = solve_newton_raphson(&net, &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    let (v, d) = gauss_seidel(&net, 1e-12, 100_000).expect("oracle converges");
    for i in 0..3 {
        assert!((sol.state.v[i] - v[i]).abs() < 1e-6);
        assert!((sol.state.delta[i] - d[i]).abs() < 1e-6);
    }
}

#[test]
fn ieee14_matches_gauss_seidel() {
    let net = load_case("ieee14").unwrap();
    let sol = solve_newton_raphson(&net, &SolverOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.iterations <= 10);
    assert!(sol.max_mismatch <= 1e-8);
    let (v, d) = gauss_seidel(&net, 1e-10, 200_000).expect("oracle converges");
    for i in 0..14 {
        assert!((sol.state.v[i] - v[i]).abs() < 1e-6, "bus {i}");
        assert!((sol.state.delta[i] - d[i]).abs() < 1e-6, "bus {i}");
    }
}

#[test]
fn shipped_cases_match_reference_solver() {
    // reference values from an independent Newton solver (PYPOWER runpf,
    // tolerance 1e-12, no reactive limits) on the same case data
    let reference = [
        ("ieee14", 13, 1.0355299458535663, -0.27983988812901267),
        ("ieee30", 29, 0.9922347986764748, -0.30790423396116606),
        ("ieee57", 30, 0.935932450452225, -0.33831121463753394),
        ("ieee118", 40, 0.9668324692735654, 0.12307277751613543),
        ("ieee118", 75, 0.9430000000000001, 0.38046061341007853),
    ];
    for (case, bus, v, d) in reference {
        let net = load_case(case).unwrap();
        let sol = solve_newton_raphson(&net, &SolverOptions::default()).unwrap();
        assert!(sol.converged, "{case}");
        assert!((sol.state.v[bus] - v).abs() < 1e-7, "{case} bus {bus}: {}", sol.state.v[bus]);
        assert!((sol.state.delta[bus] - d).abs() < 1e-7, "{case} bus {bus}: {}", sol.state.delta[bus]);
    }
}

#[test]
fn solutions_are_certified_and_hold_setpoints() {
    for case in BUILTIN_CASES {
        let net = load_case(case).unwrap();
        let y = build_ybus(&net).unwrap();
        let opts = SolverOptions::default();
        let sol = solve_newton_raphson(&net, &opts).unwrap();
        assert!(sol.converged && sol.iterations <= 10, "{case}");
        let f = mismatch(&net, &y, &sol.state);
        assert!(f.iter().all(|x| x.abs() <= opts.tolerance), "{case}");
        for b in &net.buses {
            match b.bus_type {
                BusType::Slack => {
                    assert_eq!(sol.state.v[b.id].to_bits(), b.v_setpoint.to_bits());
                    assert_eq!(sol.state.delta[b.id].to_bits(), b.angle_setpoint.to_bits());
                }
                BusType::PV => assert_eq!(sol.state.v[b.id].to_bits(), b.v_setpoint.to_bits()),
                BusType::PQ => {}
            }
        }
        let again = solve_newton_raphson(&net, &opts).unwrap();
        assert_eq!(sol, again, "{case} not deterministic");
    }
}

#[test]
fn zero_load_networks_solve_flat() {
    let mut net = load_case("ieee14").unwrap();
    for b in &mut net.buses {
        b.p_load = 0.0;
        b.q_load = 0.0;
        b.shunt_b = 0.0;
        b.v_setpoint = 1.0;
        b.angle_setpoint = 0.0;
    }
    for br in &mut net.branches {
        br.b_charging = 0.0;
        br.tap = 1.0;
    }
    for g in &mut net.generators {
        g.p_gen = 0.0;
        g.v_setpoint = 1.0;
    }
    let sol = solve_newton_raphson(&net, &SolverOptions::default()).unwrap();
    assert!(sol.converged && sol.iterations <= 1);
    assert!(sol.state.v.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(sol.state.delta.iter().all(|&d| d.abs() < 1e-12));
}
