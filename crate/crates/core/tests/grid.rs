use gridflow::grid::{
    build_ybus, edge_index, load_case, parse_case, render_case, Branch, Bus, BusType, Generator,
    Network,
};
use proptest::prelude::*;

#[test]
fn shipped_case_sizes() {
    let expected = [
        ("ieee14", 14, 5, 11, 20),
        ("ieee30", 30, 6, 21, 41),
        ("ieee57", 57, 7, 42, 80),
        ("ieee118", 118, 19, 99, 186),
    ];
    for (name, buses, gens, loads, branches) in expected {
        let net = load_case(name).unwrap();
        assert_eq!(net.name, name);
        assert_eq!(net.n_bus(), buses, "{name}");
        assert_eq!(net.generators.len(), gens, "{name}");
        assert_eq!(net.load_count(), loads, "{name}");
        assert_eq!(net.branches.len(), branches, "{name}");
        assert_eq!(net.base_mva, 100.0);
    }
}

#[test]
fn ieee14_edge_index() {
    let e = edge_index(&load_case("ieee14").unwrap());
    assert_eq!(e.len(), 40);
    assert!(e.is_symmetric());
}

#[test]
fn shipped_cases_round_trip() {
    for name in gridflow::grid::BUILTIN_CASES {
        let net = load_case(name).unwrap();
        let again = parse_case(&render_case(&net)).unwrap();
        assert!(net.approx_eq(&again, 1e-12), "{name}");
    }
}

#[test]
fn load_case_from_disk_names_network_after_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.case");
    let text = "[meta]\nbase_mva,100\n[bus]\n1,slack,0,0,0,0,1,0\n2,pq,1,1,0,0,1,0\n[branch]\n1,2,0.01,0.1,0,1,1\n";
    std::fs::write(&path, text).unwrap();
    let net = load_case(path.to_str().unwrap()).unwrap();
    assert_eq!(net.name, "tiny");
    assert!(load_case("/nonexistent/case").is_err());
}

fn arb_network() -> impl Strategy<Value = Network> {
    (2usize..9).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let extra = prop::collection::vec((0..n, 0..n), 0..4);
        let types = prop::collection::vec(prop_oneof![Just(BusType::PV), Just(BusType::PQ)], n - 1);
        let loads = prop::collection::vec((-50.0..150.0f64, -30.0..60.0f64, 0.0..5.0f64, -10.0..30.0f64), n);
        let vals = prop::collection::vec((0.0..0.05f64, 0.01..0.4f64, 0.0..0.1f64, 0.9..1.1f64), n - 1 + 4);
        (Just(n), parents, extra, types, loads, vals, any::<bool>(), 0.95..1.1f64, -0.3..0.3f64)
    })
    .prop_map(|(n, parents, extra, types, loads, vals, taps, vslack, aslack)| {
        let buses = (0..n)
            .map(|i| {
                let (pd, qd, gs, bs) = loads[i];
                Bus {
                    id: i,
                    number: (i as u32 + 1) * 3,
                    bus_type: if i == 0 { BusType::Slack } else { types[i - 1] },
                    p_load: pd / 100.0,
                    q_load: qd / 100.0,
                    v_setpoint: if i == 0 { vslack } else { 1.0 + 0.01 * i as f64 },
                    angle_setpoint: if i == 0 { aslack } else { 0.0 },
                    shunt_g: gs / 100.0,
                    shunt_b: bs / 100.0,
                }
            })
            .collect::<Vec<_>>();
        let mut branches = Vec::new();
        let edges = parents
            .iter()
            .enumerate()
            .map(|(k, &p)| (k + 1, p))
            .chain(extra.into_iter().filter(|(a, b)| a != b));
        for (k, (a, b)) in edges.enumerate() {
            let (r, x, bc, tap) = vals[k % vals.len()];
            branches.push(Branch {
                from_bus: a,
                to_bus: b,
                r,
                x,
                b_charging: bc,
                tap: if taps { tap } else { 1.0 },
                in_service: true,
            });
        }
        let generators = buses
            .iter()
            .filter(|b| b.bus_type != BusType::PQ)
            .map(|b| Generator {
                bus: b.id,
                p_gen: 0.2,
                v_setpoint: b.v_setpoint,
                q_min: -1.0,
                q_max: 1.0,
            })
            .collect();
        Network {
            name: "random".into(),
            base_mva: 100.0,
            buses,
            branches,
            generators,
        }
    })
}

proptest! {
    #[test]
    fn render_then_parse_round_trips(net in arb_network()) {
        prop_assert!(net.validate().is_ok());
        let again = parse_case(&render_case(&net)).unwrap();
        prop_assert!(net.approx_eq(&again, 1e-12));
    }

    #[test]
    fn nominal_tap_ybus_is_symmetric(mut net in arb_network()) {
        for br in &mut net.branches { br.tap = 1.0; }
        let y = build_ybus(&net).unwrap();
        prop_assert!(y.g.is_symmetric(1e-12));
        prop_assert!(y.b.is_symmetric(1e-12));
    }

    #[test]
    fn ybus_rows_sum_to_zero_without_shunts(mut net in arb_network()) {
        for br in &mut net.branches { br.tap = 1.0; br.b_charging = 0.0; }
        for b in &mut net.buses { b.shunt_g = 0.0; b.shunt_b = 0.0; }
        let y = build_ybus(&net).unwrap();
        for i in 0..net.n_bus() {
            prop_assert!(y.g.row(i).iter().sum::<f64>().abs() < 1e-12);
            prop_assert!(y.b.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn ybus_sparsity_matches_incidence(net in arb_network()) {
        let y = build_ybus(&net).unwrap();
        let e = edge_index(&net);
        for i in 0..net.n_bus() {
            for j in 0..net.n_bus() {
                if i == j { continue; }
                let nonzero = y.g[(i, j)] != 0.0 || y.b[(i, j)] != 0.0;
                prop_assert_eq!(nonzero, e.pairs.contains(&(i, j)));
            }
        }
    }

    #[test]
    fn edge_index_closed_under_reversal(net in arb_network()) {
        let e = edge_index(&net);
        prop_assert!(e.is_symmetric());
        let unique: std::collections::BTreeSet<_> = e.pairs.iter().collect();
        prop_assert_eq!(unique.len(), e.len());
    }
}
