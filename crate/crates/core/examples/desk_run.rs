//! Desk-scale training run on one case.
//!
//! `cargo run --release -p gridflow-core --example desk_run -- [arch] [lr] [dropout] [epochs] [case]`

use std::time::Instant;

use gridflow::evaluation::{evaluate, TestSet};
use gridflow::gnn::{Arch, GnnConfig};
use gridflow::grid::{edge_index, load_case};
use gridflow::powerflow::SolverOptions;
use gridflow::scenario::{generate_samples, LoadShapeConfig};
use gridflow::training::{split_scenarios, train, TrainConfig};

fn main() -> gridflow::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let arch: Arch = arg(0, "sage").parse()?;
    let lr: f64 = arg(1, "1e-3").parse().expect("lr");
    let dropout: f64 = arg(2, "0.0").parse().expect("dropout");
    let epochs: usize = arg(3, "300").parse().expect("epochs");
    let case = arg(4, "ieee14");

    let net = load_case(&case)?;
    let load = LoadShapeConfig {
        seed: 2024,
        ..LoadShapeConfig::default()
    };
    let per_file = 2500u64;
    let t0 = Instant::now();
    let files: Vec<_> = (0..3u64)
        .map(|k| {
            generate_samples(&net, &load, &SolverOptions::default(), k * per_file..(k + 1) * per_file)
                .map(|s| s.into_iter().map(|g| g.record).collect::<Vec<_>>())
        })
        .collect::<gridflow::Result<_>>()?;
    let split = split_scenarios(&files, 7)?;
    println!(
        "generated in {:.1?}: train {} val {} test {:?}",
        t0.elapsed(),
        split.train.len(),
        split.val.len(),
        split.test.iter().map(Vec::len).collect::<Vec<_>>()
    );

    let model = GnnConfig {
        dropout,
        ..GnnConfig::new(arch, net.n_bus())
    };
    let cfg = TrainConfig {
        lr,
        max_epochs: epochs,
        patience: epochs.min(100),
        seed: 1,
        ..TrainConfig::default()
    };
    let t1 = Instant::now();
    let out = train(&case, &model, &edge_index(&net), &split.train, &split.val, &cfg)?;
    let h = &out.history;
    println!(
        "trained {} epochs in {:.1?}; best epoch {} val {:.3e}; first val {:.3e}; stop {}",
        h.epochs.len(),
        t1.elapsed(),
        h.best_epoch,
        h.best_val_loss,
        h.epochs[0].val_loss,
        h.stop_reason
    );
    let sets: Vec<TestSet> = split
        .test
        .into_iter()
        .enumerate()
        .map(|(i, samples)| TestSet {
            name: format!("test{i}"),
            case: case.clone(),
            samples,
        })
        .collect();
    for r in evaluate(&out.checkpoint, &sets)? {
        let m = r.metrics;
        println!(
            "{} nrmse {:.4} (v {:.4} d {:.4}) r2 {:.4} (v {:.4} d {:.4})",
            r.dataset,
            m.overall.nrmse.unwrap_or(f64::NAN),
            m.v.nrmse.unwrap_or(f64::NAN),
            m.delta.nrmse.unwrap_or(f64::NAN),
            m.overall.r2.unwrap_or(f64::NAN),
            m.v.r2.unwrap_or(f64::NAN),
            m.delta.r2.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
