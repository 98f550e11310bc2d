//! Extended Kalman filter for the oscillator, on the state `(x, ẋ)`.
//!
//! The prediction step linearizes one Euler step around the filtered mean,
//! `F = I + dt·[[0, 1], [∂a/∂x, −β]]`, with process noise
//! `Q = diag(0, noise_scale²·dt)`. Observations measure `x` with variance
//! `obs_noise_sd²`.

use nalgebra::{Matrix2, RowVector2, SymmetricEigen, Vector2};

use super::simulate::OscillatorParams;
use crate::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Eigenvalues down to this (relative to the covariance scale) are clamped to zero.
const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector2<f64>,
    pub covariance: Matrix2<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector2<f64>, covariance: Matrix2<f64>) -> Result<Self> {
        Ok(GaussianBelief {
            mean,
            covariance: clamp_psd(covariance)?,
        })
    }

    /// Point mass at the oscillator's initial state.
    pub fn at_rest(params: &OscillatorParams) -> Self {
        GaussianBelief {
            mean: Vector2::new(params.initial_position, params.initial_velocity),
            covariance: Matrix2::zeros(),
        }
    }

    /// `−ln N(x; mean_x, var_x)` of the position marginal.
    pub fn position_nll(&self, x: f64) -> f64 {
        let var = self.covariance[(0, 0)];
        let d = x - self.mean[0];
        0.5 * d * d / var + 0.5 * var.ln() + LN_SQRT_2PI
    }
}

/// Beliefs per time step: `predicted[k]` conditions on `y_0..y_{k−1}`,
/// `filtered[k]` additionally on `y_k`.
#[derive(Debug, Clone)]
pub struct EkfRun {
    pub predicted: Vec<GaussianBelief>,
    pub filtered: Vec<GaussianBelief>,
}

impl EkfRun {
    /// Per-step NLL of the true latent under the one-step predictive belief.
    pub fn predictive_nll(&self, latent: &[f64]) -> Result<Vec<f64>> {
        nll_series(&self.predicted, latent)
    }

    /// Per-step NLL of the true latent under the filtered belief.
    pub fn filtered_nll(&self, latent: &[f64]) -> Result<Vec<f64>> {
        nll_series(&self.filtered, latent)
    }
}

fn nll_series(beliefs: &[GaussianBelief], latent: &[f64]) -> Result<Vec<f64>> {
    if beliefs.len() != latent.len() {
        return Err(Error::Shape {
            expected: beliefs.len(),
            actual: latent.len(),
        });
    }
    Ok(beliefs
        .iter()
        .zip(latent)
        .map(|(b, &x)| b.position_nll(x))
        .collect())
}

/// One Euler-linearized prediction step.
pub fn ekf_predict(belief: &GaussianBelief, params: &OscillatorParams) -> Result<GaussianBelief> {
    let (x, v) = (belief.mean[0], belief.mean[1]);
    let dt = params.dt;
    let mean = Vector2::new(x + v * dt, v + params.acceleration(x, v) * dt);
    let jacobian = Matrix2::new(1.0, dt, dt * params.stiffness(x), 1.0 - dt * params.beta);
    let q = Matrix2::new(0.0, 0.0, 0.0, params.noise_scale * params.noise_scale * dt);
    let covariance = jacobian * belief.covariance * jacobian.transpose() + q;
    GaussianBelief::new(mean, covariance)
}

/// Measurement update with `H = [1, 0]`, Joseph form.
pub fn ekf_update(belief: &GaussianBelief, y: f64, obs_var: f64) -> Result<GaussianBelief> {
    let h = RowVector2::new(1.0, 0.0);
    let p = belief.covariance;
    let s = p[(0, 0)] + obs_var;
    if !(s > 0.0) {
        return Err(Error::Numerical(format!("innovation variance {s} is not positive")));
    }
    let gain = p.column(0) / s;
    let innovation = y - belief.mean[0];
    let mean = belief.mean + gain * innovation;
    let i_kh = Matrix2::identity() - gain * h;
    let covariance = i_kh * p * i_kh.transpose() + gain * gain.transpose() * obs_var;
    GaussianBelief::new(mean, covariance)
}

pub fn ekf_filter(
    observations: &[f64],
    params: &OscillatorParams,
    initial: GaussianBelief,
) -> Result<EkfRun> {
    params.validate()?;
    if !(params.obs_noise_sd > 0.0) {
        return Err(Error::param("EKF needs obs_noise_sd > 0"));
    }
    let obs_var = params.obs_noise_sd * params.obs_noise_sd;
    let mut predicted = Vec::with_capacity(observations.len());
    let mut filtered: Vec<GaussianBelief> = Vec::with_capacity(observations.len());
    for (k, &y) in observations.iter().enumerate() {
        let prior = match filtered.last() {
            None => initial,
            Some(prev) => ekf_predict(prev, params)
                .map_err(|e| Error::Numerical(format!("step {k}: {e}")))?,
        };
        let posterior =
            ekf_update(&prior, y, obs_var).map_err(|e| Error::Numerical(format!("step {k}: {e}")))?;
        predicted.push(prior);
        filtered.push(posterior);
    }
    Ok(EkfRun {
        predicted,
        filtered,
    })
}

/// Symmetrize; clamp eigenvalues in `[−tol, 0)` to zero; reject anything worse.
fn clamp_psd(m: Matrix2<f64>) -> Result<Matrix2<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.abs().max().max(1.0);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::Numerical(format!(
            "covariance lost positive semi-definiteness (eigenvalue {min})"
        )));
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt =
        eig.eigenvectors * Matrix2::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok((rebuilt + rebuilt.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::simulate::simulate_oscillator;
    use crate::seed;

    #[test]
    fn covariance_stays_symmetric() {
        let params = OscillatorParams::default();
        let mut rng = seed::stream(1, "ekf", 0);
        let trial = simulate_oscillator(&params, 0, &mut rng).unwrap();
        let run = ekf_filter(&trial.observations, &params, GaussianBelief::at_rest(&params))
            .unwrap();
        for b in run.predicted.iter().chain(&run.filtered) {
            assert!((b.covariance[(0, 1)] - b.covariance[(1, 0)]).abs() < 1e-10);
            assert!(b.covariance[(0, 0)] >= 0.0 && b.covariance[(1, 1)] >= 0.0);
        }
    }

    #[test]
    fn uninformative_observations_follow_prediction() {
        let params = OscillatorParams {
            obs_noise_sd: 1e6,
            initial_position: 0.3,
            ..Default::default()
        };
        let mut rng = seed::stream(1, "ekf", 1);
        let trial = simulate_oscillator(&params, 0, &mut rng).unwrap();
        let run = ekf_filter(&trial.observations, &params, GaussianBelief::at_rest(&params))
            .unwrap();
        // pure prediction path from the initial belief
        let mut mean = Vector2::new(0.3, 0.0);
        for (k, b) in run.filtered.iter().enumerate() {
            if k > 0 {
                let (x, v) = (mean[0], mean[1]);
                mean = Vector2::new(x + v * params.dt, v + params.acceleration(x, v) * params.dt);
            }
            assert!((b.mean[0] - mean[0]).abs() < 1e-3, "step {k}");
        }
    }

    #[test]
    fn exact_observation_pins_position() {
        let prior = GaussianBelief::new(
            Vector2::new(0.0, 0.0),
            Matrix2::new(1.0, 0.2, 0.2, 0.5),
        )
        .unwrap();
        let post = ekf_update(&prior, 0.7, 1e-14).unwrap();
        assert!((post.mean[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        assert!(GaussianBelief::new(Vector2::zeros(), Matrix2::new(1.0, 0.0, 0.0, -0.5)).is_err());
        let tiny = GaussianBelief::new(Vector2::zeros(), Matrix2::new(1.0, 0.0, 0.0, -1e-15))
            .unwrap();
        assert_eq!(tiny.covariance[(1, 1)], 0.0);
    }

    #[test]
    fn position_nll_matches_gaussian() {
        let b = GaussianBelief::new(Vector2::new(0.5, 0.0), Matrix2::new(0.25, 0.0, 0.0, 1.0))
            .unwrap();
        let expected = -crate::kernels::gaussian_eval(1.0, 0.5, 0.5).unwrap().ln();
        assert!((b.position_nll(1.0) - expected).abs() < 1e-14);
    }
}
