//! Per-trial evaluation of trained filters and of the EKF baseline.

use super::ekf::{ekf_filter, GaussianBelief};
use super::simulate::{ExperimentParams, TrialRecord};
use super::train::FilterModel;
use crate::kernels::{circular_distance, Manifold};
use crate::mixture::MixtureDensity;
use crate::{Error, Result};

/// Time indices a window-`L` filter is scored on.
pub fn scored_times(trial: &TrialRecord, window: usize) -> Vec<usize> {
    (window..trial.len()).collect()
}

/// Mean of `−ln f(x_t | y_{t−L..t−1})` over `t ≥ L`, one value per trial.
pub fn evaluate_filter_nll(model: &FilterModel, trials: &[TrialRecord]) -> Result<Vec<f64>> {
    trials
        .iter()
        .map(|trial| {
            check_trial(model, trial)?;
            let times = scored_times(trial, model.window);
            let densities = model.trial_densities(trial, &times)?;
            let total: f64 = densities
                .iter()
                .zip(&times)
                .map(|(d, &t)| -d.log_density(model.head_coordinate(trial.latent[t])))
                .sum();
            Ok(total / times.len() as f64)
        })
        .collect()
}

fn check_trial(model: &FilterModel, trial: &TrialRecord) -> Result<()> {
    if trial.manifold() != model.manifold {
        return Err(Error::Validation(format!(
            "trial {} is on {:?} but the model expects {:?}",
            trial.trial_id,
            trial.manifold(),
            model.manifold
        )));
    }
    if trial.len() <= model.window {
        return Err(Error::Validation(format!(
            "trial {} has {} samples, the model window is {}",
            trial.trial_id,
            trial.len(),
            model.window
        )));
    }
    Ok(())
}

/// Which EKF belief scores the true latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EkfBelief {
    /// `p(x_t | y_0..y_{t−1})`, the same information a window filter sees.
    Predicted,
    /// `p(x_t | y_0..y_t)`.
    Filtered,
}

/// Per-trial mean EKF NLL over `t ≥ window`, started from the known initial
/// state.
pub fn evaluate_ekf_nll(
    trials: &[TrialRecord],
    window: usize,
    belief: EkfBelief,
) -> Result<Vec<f64>> {
    trials
        .iter()
        .map(|trial| {
            let ExperimentParams::Oscillator(params) = &trial.params else {
                return Err(Error::Validation(format!(
                    "the EKF baseline needs oscillator trials, trial {} is {}",
                    trial.trial_id,
                    trial.params.name()
                )));
            };
            if trial.len() <= window {
                return Err(Error::Validation(format!(
                    "trial {} is not longer than the window {window}",
                    trial.trial_id
                )));
            }
            let run = ekf_filter(&trial.observations, params, GaussianBelief::at_rest(params))?;
            let nll = match belief {
                EkfBelief::Predicted => run.predictive_nll(&trial.latent)?,
                EkfBelief::Filtered => run.filtered_nll(&trial.latent)?,
            };
            Ok(nll[window..].iter().sum::<f64>() / (trial.len() - window) as f64)
        })
        .collect()
}

/// Grid point of highest density. Ties go to the first point.
pub fn posterior_mode(density: &MixtureDensity, grid: &[f64]) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &x in grid {
        let v = density.log_density(x);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((x, v));
        }
    }
    best.map(|(x, _)| x)
        .ok_or_else(|| Error::param("empty mode-search grid"))
}

/// `n` evenly spaced points on `(−π, π]`.
pub fn circle_grid(n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (1..=n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect()
}

/// Mean predictive error per scored time step, averaged over trials. Error is
/// the circular distance from the posterior mode on a circle model and the
/// absolute difference on the real line. Returns `(times, mean error)`.
pub fn mode_error_by_time(
    model: &FilterModel,
    trials: &[TrialRecord],
    grid: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Validation("no trials to evaluate".into()))?;
    let times = scored_times(first, model.window);
    let mut sums = vec![0.0; times.len()];
    for trial in trials {
        check_trial(model, trial)?;
        if trial.len() != first.len() {
            return Err(Error::Validation(
                "mode error by time needs equal-length trials".into(),
            ));
        }
        let densities = model.trial_densities(trial, &times)?;
        for ((s, d), &t) in sums.iter_mut().zip(&densities).zip(&times) {
            let mode = posterior_mode(d, grid)?;
            *s += match model.manifold {
                Manifold::Circle => circular_distance(mode, trial.latent[t]),
                Manifold::RealLine => (mode - trial.latent[t]).abs(),
            };
        }
    }
    let n = trials.len() as f64;
    Ok((times, sums.into_iter().map(|s| s / n).collect()))
}

/// Predictive standard deviation per scored time step averaged over trials
/// (real-line models only).
pub fn predictive_sd_by_time(
    model: &FilterModel,
    trials: &[TrialRecord],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = trials
        .first()
        .ok_or_else(|| Error::Validation("no trials to evaluate".into()))?;
    let times = scored_times(first, model.window);
    let mut sums = vec![0.0; times.len()];
    for trial in trials {
        check_trial(model, trial)?;
        if trial.len() != first.len() {
            return Err(Error::Validation(
                "predictive sd by time needs equal-length trials".into(),
            ));
        }
        let densities = model.trial_densities(trial, &times)?;
        for (s, d) in sums.iter_mut().zip(&densities) {
            *s += d.mean_and_variance()?.1.sqrt();
        }
    }
    let n = trials.len() as f64;
    Ok((times, sums.into_iter().map(|s| s / n).collect()))
}
