use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::TrajectoryExample;
use crate::{rng_from_seed, Error, Result};

/// Writes one JSON record per line.
pub fn save_jsonl(examples: &[TrajectoryExample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let line = serde_json::to_string(ex).expect("example serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path) -> Result<Vec<TrajectoryExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrajectoryExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<TrajectoryExample>,
    pub val: Vec<TrajectoryExample>,
    pub test: Vec<TrajectoryExample>,
}

/// Label-stratified three-way partition. Each label class is shuffled
/// with `seed` and cut by the rounded fractions; the test part takes the
/// remainder.
pub fn split(examples: &[TrajectoryExample], fractions: [f64; 3], seed: u64) -> Result<Split> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].label == label).collect();
        idx.shuffle(&mut rng);
        let m = idx.len();
        let n_train = ((m as f64) * fractions[0]).round() as usize;
        let n_val = (((m as f64) * fractions[1]).round() as usize).min(m - n_train.min(m));
        let n_train = n_train.min(m);
        for (k, &i) in idx.iter().enumerate() {
            let part = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
            parts[part].push(i);
        }
    }
    let [train, val, test] = parts.map(|mut p| {
        p.sort_unstable();
        p.into_iter().map(|i| examples[i].clone()).collect::<Vec<_>>()
    });
    Ok(Split { train, val, test })
}
