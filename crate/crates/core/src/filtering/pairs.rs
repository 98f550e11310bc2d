//! Training pairs `(x_t, y_{t−L..t−1})`.
//!
//! Pairs are stored as `(trial, t)` indices; windows are copied out of the
//! trials on demand so a large dataset never needs a dense feature matrix.

use ndarray::{Array2, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use super::simulate::TrialRecord;
use crate::{Error, Result};

/// Scalar standardization shared by every window position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: f64,
    pub sd: f64,
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler { mean: 0.0, sd: 1.0 }
    }

    /// Mean and standard deviation of every feature value of every pair.
    pub fn fit(pairs: &TrainingPairs, trials: &[TrialRecord]) -> Result<Self> {
        let l = pairs.window();
        let mut n = 0.0;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &(trial, t) in pairs.entries() {
            for &y in &trials[trial].observations[t - l..t] {
                n += 1.0;
                sum += y;
                sum_sq += y * y;
            }
        }
        if n == 0.0 {
            return Err(Error::param("cannot fit a scaler without pairs"));
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(FeatureScaler { mean, sd })
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    window: usize,
    entries: Vec<(usize, usize)>,
    skipped_trials: usize,
}

/// Every pair with `t ≥ L` of every trial long enough for the window.
/// Shorter trials are skipped and counted.
pub fn make_training_pairs(trials: &[TrialRecord], window: usize) -> Result<TrainingPairs> {
    make_training_pairs_strided(trials, window, 1)
}

/// As [`make_training_pairs`] but keeping only every `stride`-th time step.
pub fn make_training_pairs_strided(
    trials: &[TrialRecord],
    window: usize,
    stride: usize,
) -> Result<TrainingPairs> {
    if window == 0 {
        return Err(Error::param("window length must be >= 1"));
    }
    if stride == 0 {
        return Err(Error::param("pair stride must be >= 1"));
    }
    let mut entries = Vec::new();
    let mut skipped_trials = 0;
    for (i, trial) in trials.iter().enumerate() {
        if trial.len() <= window {
            skipped_trials += 1;
            continue;
        }
        entries.extend((window..trial.len()).step_by(stride).map(|t| (i, t)));
    }
    Ok(TrainingPairs {
        window,
        entries,
        skipped_trials,
    })
}

impl TrainingPairs {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(trial index, time index)` of every pair.
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn skipped_trials(&self) -> usize {
        self.skipped_trials
    }

    pub fn target(&self, i: usize, trials: &[TrialRecord]) -> f64 {
        let (trial, t) = self.entries[i];
        trials[trial].latent[t]
    }

    /// Write the scaled window of pair `i`, oldest observation first.
    pub fn fill_features(
        &self,
        i: usize,
        trials: &[TrialRecord],
        scaler: &FeatureScaler,
        mut out: ArrayViewMut1<f64>,
    ) {
        let (trial, t) = self.entries[i];
        let window = &trials[trial].observations[t - self.window..t];
        for (o, &y) in out.iter_mut().zip(window) {
            *o = scaler.apply(y);
        }
    }

    /// Targets and feature rows for the pairs at `indices`.
    pub fn batch(
        &self,
        indices: &[usize],
        trials: &[TrialRecord],
        scaler: &FeatureScaler,
    ) -> (Vec<f64>, Array2<f64>) {
        let mut features = Array2::zeros((indices.len(), self.window));
        let mut targets = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            targets.push(self.target(i, trials));
            self.fill_features(i, trials, scaler, features.row_mut(row));
        }
        (targets, features)
    }

    pub fn materialize(
        &self,
        trials: &[TrialRecord],
        scaler: &FeatureScaler,
    ) -> (Vec<f64>, Array2<f64>) {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all, trials, scaler)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::simulate::{ExperimentParams, OscillatorParams};

    fn trial(id: u64, n: usize) -> TrialRecord {
        TrialRecord {
            trial_id: id,
            dt: 0.01,
            params: ExperimentParams::Oscillator(OscillatorParams::default()),
            latent: (0..n).map(|k| k as f64).collect(),
            observations: (0..n).map(|k| 100.0 + k as f64).collect(),
        }
    }

    #[test]
    fn pair_count_and_order() {
        let trials = vec![trial(0, 10), trial(1, 3), trial(2, 7)];
        let pairs = make_training_pairs(&trials, 4).unwrap();
        assert_eq!(pairs.len(), (10 - 4) + (7 - 4));
        assert_eq!(pairs.skipped_trials(), 1);
        let (targets, feats) = pairs.materialize(&trials, &FeatureScaler::identity());
        assert_eq!(targets[0], 4.0);
        // oldest first: index 0 is y_{t−L}
        assert_eq!(feats.row(0).to_vec(), vec![100.0, 101.0, 102.0, 103.0]);
        assert!(make_training_pairs(&trials, 0).is_err());
    }

    #[test]
    fn standardized_features_are_centered() {
        let trials: Vec<_> = (0..5).map(|i| trial(i, 50)).collect();
        let pairs = make_training_pairs(&trials, 8).unwrap();
        let scaler = FeatureScaler::fit(&pairs, &trials).unwrap();
        let (_, feats) = pairs.materialize(&trials, &scaler);
        let n = feats.len() as f64;
        let mean = feats.sum() / n;
        let var = feats.mapv(|v| (v - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn stride_thins_time_steps() {
        let trials = vec![trial(0, 20)];
        let pairs = make_training_pairs_strided(&trials, 4, 3).unwrap();
        let times: Vec<usize> = pairs.entries().iter().map(|e| e.1).collect();
        assert_eq!(times, vec![4, 7, 10, 13, 16, 19]);
    }
}
