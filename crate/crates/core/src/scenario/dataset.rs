//! Dataset generation and the on-disk CSV / JSON manifest formats.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_features, perturb_loads, LoadShapeConfig, SampleRecord, SampleRow, Season};
use crate::error::{Error, Result};
use crate::fsutil::Staging;
use crate::grid::{build_ybus, AdmittanceMatrix, BusType, Network};
use crate::powerflow::{solve_with_ybus, SolverOptions};

const MAX_ATTEMPTS_PER_SAMPLE: u32 = 100;
/// Abort when more than this fraction of solves fail to converge.
pub const MAX_FAILURE_RATE: f64 = 0.05;

const CSV_HEADER: &str =
    "sample_id,bus_id,p,q,v_in,delta_in,is_pv,is_pq,is_slack,v_target,delta_target";

/// Random stream for one sample, independent of how samples are scheduled
/// across threads.
pub fn sample_rng(master_seed: u64, sample_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample_id);
    rng
}

/// Operating point drawn for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub sample_id: u64,
    pub hour: u8,
    pub season: Season,
    pub multiplier: f64,
    /// Solves needed, including non-converged draws that were discarded.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub record: SampleRecord,
    pub draw: SampleDraw,
}

fn one_sample(
    net: &Network,
    y: &AdmittanceMatrix,
    cfg: &LoadShapeConfig,
    opts: &SolverOptions,
    sample_id: u64,
) -> Result<GeneratedSample> {
    let mut rng = sample_rng(cfg.seed, sample_id);
    for attempt in 1..=MAX_ATTEMPTS_PER_SAMPLE {
        let hour: u8 = rng.gen_range(0..24);
        let season = Season::ALL[rng.gen_range(0..Season::ALL.len())];
        let multiplier = cfg.daily_multiplier(hour, &mut rng)? * cfg.seasonal_multiplier(season, &mut rng);
        let scenario = perturb_loads(net, cfg, multiplier, &mut rng);
        match solve_with_ybus(&scenario, y, opts) {
            Ok(sol) if sol.converged => {
                let mut record = encode_features(&scenario, &sol)?;
                record.sample_id = sample_id;
                return Ok(GeneratedSample {
                    record,
                    draw: SampleDraw {
                        sample_id,
                        hour,
                        season,
                        multiplier,
                        attempts: attempt,
                    },
                });
            }
            Ok(sol) => log::warn!(
                "sample {sample_id}: no convergence (hour {hour}, {}, multiplier {multiplier:.3}, mismatch {:.2e}); redrawing",
                season.as_str(),
                sol.max_mismatch
            ),
            Err(e) => log::warn!("sample {sample_id}: {e}; redrawing"),
        }
    }
    Err(Error::Generation(format!(
        "sample {sample_id} failed to converge in {MAX_ATTEMPTS_PER_SAMPLE} draws"
    )))
}

/// Generates the samples with ids in `ids`, in parallel on the current
/// rayon pool. Output order follows `ids`.
pub fn generate_samples(
    net: &Network,
    cfg: &LoadShapeConfig,
    opts: &SolverOptions,
    ids: Range<u64>,
) -> Result<Vec<GeneratedSample>> {
    cfg.validate()?;
    opts.validate()?;
    let y = build_ybus(net)?;
    ids.into_par_iter()
        .map(|id| one_sample(net, &y, cfg, opts, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub file: String,
    pub scenario: usize,
    pub samples: usize,
    pub first_sample_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub case: String,
    pub n_bus: usize,
    pub scenarios: usize,
    pub samples_per_scenario: usize,
    pub total_samples: usize,
    pub seed: u64,
    pub config: LoadShapeConfig,
    pub solver: SolverOptions,
    /// Non-converged draws that were discarded and redrawn.
    pub rejected_draws: u64,
    pub files: Vec<ScenarioFile>,
    pub draws: Vec<SampleDraw>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn scenario_file_name(case: &str, scenario: usize) -> String {
    format!("{case}_scenario_{:02}.csv", scenario + 1)
}

/// Generates `scenarios` files of `samples_per` samples each into `out_dir`
/// together with `manifest.json`. Nothing is written unless every sample
/// succeeds.
pub fn generate_dataset(
    net: &Network,
    cfg: &LoadShapeConfig,
    opts: &SolverOptions,
    scenarios: usize,
    samples_per: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if scenarios == 0 || samples_per == 0 {
        return Err(Error::Config(
            "scenario and sample counts must be at least 1".into(),
        ));
    }
    let case = if net.name.is_empty() { "case" } else { net.name.as_str() };
    let mut staging = Staging::new(out_dir)?;
    let mut files = Vec::with_capacity(scenarios);
    let mut draws = Vec::with_capacity(scenarios * samples_per);
    let mut attempts = 0u64;
    for k in 0..scenarios {
        let first = (k * samples_per) as u64;
        let samples = generate_samples(net, cfg, opts, first..first + samples_per as u64)?;
        attempts += samples.iter().map(|s| u64::from(s.draw.attempts)).sum::<u64>();
        let rejected = attempts - draws.len() as u64 - samples.len() as u64;
        if rejected as f64 > MAX_FAILURE_RATE * attempts as f64 {
            return Err(Error::Generation(format!(
                "{rejected} of {attempts} power-flow solves did not converge (limit {:.0}%)",
                MAX_FAILURE_RATE * 100.0
            )));
        }
        let records: Vec<SampleRecord> = samples.iter().map(|s| s.record.clone()).collect();
        let name = scenario_file_name(case, k);
        staging.write(&out_dir.join(&name), write_dataset_csv(&records).as_bytes())?;
        files.push(ScenarioFile {
            file: name,
            scenario: k + 1,
            samples: samples_per,
            first_sample_id: first,
        });
        draws.extend(samples.into_iter().map(|s| s.draw));
        log::info!("scenario {}/{scenarios} of '{case}' generated", k + 1);
    }
    let manifest = DatasetManifest {
        case: case.to_string(),
        n_bus: net.n_bus(),
        scenarios,
        samples_per_scenario: samples_per,
        total_samples: draws.len(),
        seed: cfg.seed,
        config: cfg.clone(),
        solver: *opts,
        rejected_draws: attempts - draws.len() as u64,
        files,
        draws,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    staging.write(&out_dir.join(MANIFEST_FILE), (json + "\n").as_bytes())?;
    staging.commit()?;
    Ok(manifest)
}

pub fn write_dataset_csv(records: &[SampleRecord]) -> String {
    let mut s = String::with_capacity(records.len() * records.first().map_or(0, |r| r.n_bus()) * 120);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for rec in records {
        for r in &rec.rows {
            let flag = |t| u8::from(r.bus_type == t);
            let _ = writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?},{},{},{},{:?},{:?}",
                rec.sample_id,
                r.bus_id,
                r.p,
                r.q,
                r.v_in,
                r.delta_in,
                flag(BusType::PV),
                flag(BusType::PQ),
                flag(BusType::Slack),
                r.v_target,
                r.delta_target
            );
        }
    }
    s
}

fn csv_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a dataset CSV; rows of one sample must be contiguous.
pub fn read_dataset_csv(text: &str) -> Result<Vec<SampleRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(csv_err(1, "missing or unexpected dataset header")),
    }
    let mut out: Vec<SampleRecord> = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 11 {
            return Err(csv_err(ln, format!("expected 11 columns, found {}", c.len())));
        }
        let f = |k: usize| -> Result<f64> {
            c[k].trim()
                .parse()
                .map_err(|_| csv_err(ln, format!("invalid number '{}'", c[k])))
        };
        let sample_id: u64 = c[0]
            .trim()
            .parse()
            .map_err(|_| csv_err(ln, "invalid sample_id"))?;
        let bus_id: usize = c[1].trim().parse().map_err(|_| csv_err(ln, "invalid bus_id"))?;
        let bus_type = match (c[6].trim(), c[7].trim(), c[8].trim()) {
            ("1", "0", "0") => BusType::PV,
            ("0", "1", "0") => BusType::PQ,
            ("0", "0", "1") => BusType::Slack,
            _ => return Err(csv_err(ln, "bus-type indicators must be one-hot")),
        };
        let row = SampleRow {
            bus_id,
            bus_type,
            p: f(2)?,
            q: f(3)?,
            v_in: f(4)?,
            delta_in: f(5)?,
            v_target: f(9)?,
            delta_target: f(10)?,
        };
        match out.last_mut() {
            Some(rec) if rec.sample_id == sample_id => {
                if bus_id != rec.rows.len() {
                    return Err(csv_err(ln, format!("expected bus {} next", rec.rows.len())));
                }
                rec.rows.push(row);
            }
            _ => {
                if bus_id != 0 {
                    return Err(csv_err(ln, "sample must start at bus 0"));
                }
                if out.iter().any(|r| r.sample_id == sample_id) {
                    return Err(csv_err(ln, format!("sample {sample_id} is not contiguous")));
                }
                out.push(SampleRecord {
                    sample_id,
                    rows: vec![row],
                });
            }
        }
    }
    if let Some(first) = out.first() {
        let n = first.n_bus();
        if let Some(bad) = out.iter().find(|r| r.n_bus() != n) {
            return Err(Error::Contract(format!(
                "sample {} has {} buses, expected {n}",
                bad.sample_id,
                bad.n_bus()
            )));
        }
    }
    Ok(out)
}

/// Reads a manifest and all scenario files listed in it. `path` may be the
/// dataset directory or the manifest itself.
pub fn read_dataset(path: &Path) -> Result<(DatasetManifest, Vec<Vec<SampleRecord>>)> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut files = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let p = dir.join(&f.file);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let records = read_dataset_csv(&text)?;
        if records.len() != f.samples {
            return Err(Error::Contract(format!(
                "{} holds {} samples, manifest says {}",
                f.file,
                records.len(),
                f.samples
            )));
        }
        files.push(records);
    }
    Ok((manifest, files))
}
