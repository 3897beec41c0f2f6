use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::SampleRecord;

/// Share of every scenario file held out for testing, and of the second
/// file used for validation.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Train, validation and per-file test sets drawn from scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    /// One test set per scenario file, in file order.
    pub test: Vec<Vec<SampleRecord>>,
}

fn shuffled(file: &[SampleRecord], seed: u64, index: usize) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut out = file.to_vec();
    out.shuffle(&mut rng);
    out
}

fn holdout_len(len: usize) -> usize {
    ((len as f64) * HOLDOUT_FRACTION).round() as usize
}

/// Each file is shuffled with its own seeded stream and its first 20 %
/// becomes that file's test set. Training takes the rest of file 1 and
/// validation the next 20 % of file 2, so no sample lands in two roles.
/// With a single file validation comes from its remainder instead.
pub fn split_scenarios(files: &[Vec<SampleRecord>], seed: u64) -> Result<DataSplit> {
    if files.is_empty() || files.iter().any(Vec::is_empty) {
        return Err(Error::Training("splitting needs at least one non-empty scenario file".into()));
    }
    let mut test = Vec::with_capacity(files.len());
    let mut rest = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let mut s = shuffled(file, seed, i);
        let tail = s.split_off(holdout_len(s.len()));
        test.push(s);
        rest.push(tail);
    }
    let (train, val) = if files.len() == 1 {
        let mut train = rest.swap_remove(0);
        let val = train.split_off(train.len() - holdout_len(files[0].len()).min(train.len()));
        (train, val)
    } else {
        let mut second = std::mem::take(&mut rest[1]);
        second.truncate(holdout_len(files[1].len()));
        (std::mem::take(&mut rest[0]), second)
    };
    if train.is_empty() || val.is_empty() {
        return Err(Error::Training("scenario files too small to split".into()));
    }
    Ok(DataSplit { train, val, test })
}
