//! Dataset generation and the on-disk trial format.
//!
//! A dataset directory holds `train.jsonl` and `valid.jsonl` (one JSON trial
//! per line) and a `manifest.json` sidecar with the master seed, the counts
//! and the generator version.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::simulate::{
    simulate_oscillator, simulate_phase_trial, ExperimentParams, TrialRecord,
};
use crate::seed;
use crate::{Error, Result};

pub const GENERATOR_VERSION: &str = concat!("kmn-sim/", env!("CARGO_PKG_VERSION"), "/1");
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Redraws allowed for one trial before generation gives up.
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator_version: String,
    pub master_seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    /// Trials redrawn after diverging, per split.
    pub redrawn_train: usize,
    pub redrawn_valid: usize,
    pub params: ExperimentParams,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<TrialRecord>,
    pub valid: Vec<TrialRecord>,
}

/// Simulate `n` trials of one split. Each trial draws from its own stream
/// keyed by `(master_seed, split, attempt)` and `trial_id`, so the result is
/// independent of generation order. Diverged trials are redrawn; the number
/// of redraws is returned alongside.
pub fn generate_split(
    params: &ExperimentParams,
    n: usize,
    master_seed: u64,
    split: &str,
) -> Result<(Vec<TrialRecord>, usize)> {
    let mut trials = Vec::with_capacity(n);
    let mut redrawn = 0;
    for trial_id in 0..n as u64 {
        let mut attempt = 0;
        loop {
            let purpose = format!("{}/{split}/attempt{attempt}", params.name());
            let mut rng = seed::stream(master_seed, &purpose, trial_id);
            let outcome = match params {
                ExperimentParams::Oscillator(p) => simulate_oscillator(p, trial_id, &mut rng),
                ExperimentParams::Phase(p) => simulate_phase_trial(p, trial_id, &mut rng),
            };
            match outcome {
                Ok(trial) => {
                    trials.push(trial);
                    break;
                }
                Err(Error::SimulationDiverged { .. }) if attempt + 1 < MAX_ATTEMPTS => {
                    attempt += 1;
                    redrawn += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((trials, redrawn))
}

pub fn generate_dataset(
    params: &ExperimentParams,
    n_train: usize,
    n_valid: usize,
    master_seed: u64,
) -> Result<Dataset> {
    let (train, redrawn_train) = generate_split(params, n_train, master_seed, "train")?;
    let (valid, redrawn_valid) = generate_split(params, n_valid, master_seed, "valid")?;
    Ok(Dataset {
        manifest: DatasetManifest {
            generator_version: GENERATOR_VERSION.to_string(),
            master_seed,
            n_train,
            n_valid,
            redrawn_train,
            redrawn_valid,
            params: params.clone(),
        },
        train,
        valid,
    })
}

pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for trial in trials {
        serde_json::to_writer(&mut out, trial).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trials = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let trial: TrialRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        trial.validate()?;
        trials.push(trial);
    }
    Ok(trials)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trials(&dir.join(TRAIN_FILE), &dataset.train)?;
    write_trials(&dir.join(VALID_FILE), &dataset.valid)?;
    write_json(&dir.join(MANIFEST_FILE), &dataset.manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let train = read_trials(&dir.join(TRAIN_FILE))?;
    let valid = read_trials(&dir.join(VALID_FILE))?;
    Ok(Dataset {
        manifest,
        train,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::simulate::{OscillatorParams, PhaseModelParams};

    #[test]
    fn generation_is_order_independent() {
        let params = ExperimentParams::Oscillator(OscillatorParams::default());
        let (all, _) = generate_split(&params, 6, 9, "train").unwrap();
        let (first, _) = generate_split(&params, 3, 9, "train").unwrap();
        assert_eq!(&all[..3], &first[..]);
        let (other, _) = generate_split(&params, 3, 9, "valid").unwrap();
        assert_ne!(other[0].latent, all[0].latent);
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = ExperimentParams::Phase(PhaseModelParams::default());
        let ds = generate_dataset(&params, 3, 2, 5).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.train, ds.train);
        assert_eq!(back.valid, ds.valid);
        assert_eq!(back.manifest, ds.manifest);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_trials(Path::new("/nonexistent/train.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train.jsonl"));
    }
}
