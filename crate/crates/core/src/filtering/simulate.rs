//! Synthetic trial generators.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kernels::{wrap_angle, Manifold};
use crate::{Error, Result};

/// Stochastic nonlinear oscillator
/// `ẍ = −ω₀²x − βẋ + k₂x² + k₃x³ + ξ(t)` observed in Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillatorParams {
    pub omega0: f64,
    pub beta: f64,
    pub k2: f64,
    pub k3: f64,
    /// Diffusion amplitude of ξ(t).
    pub noise_scale: f64,
    pub dt: f64,
    pub duration: f64,
    pub obs_noise_sd: f64,
    pub initial_position: f64,
    pub initial_velocity: f64,
    /// States with |x| above this count as diverged. The quadratic term puts
    /// an unstable equilibrium near x ≈ 1.77; trajectories that cross it run
    /// off to a distant well.
    pub escape_bound: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams {
            omega0: 5.0,
            beta: 0.2,
            k2: 15.0,
            k3: -0.5,
            noise_scale: 1.5,
            dt: 0.01,
            duration: 4.0,
            obs_noise_sd: 2.0,
            initial_position: 0.0,
            initial_velocity: 0.0,
            escape_bound: 6.0,
        }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.omega0,
            self.beta,
            self.k2,
            self.k3,
            self.noise_scale,
            self.dt,
            self.duration,
            self.obs_noise_sd,
            self.initial_position,
            self.initial_velocity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("oscillator parameters must be finite"));
        }
        if !(self.dt > 0.0 && self.duration > self.dt && self.omega0 > 0.0) {
            return Err(Error::param("need dt > 0, duration > dt and omega0 > 0"));
        }
        if self.noise_scale < 0.0 || self.obs_noise_sd < 0.0 {
            return Err(Error::param("noise amplitudes must be >= 0"));
        }
        if !(self.escape_bound > 0.0) {
            return Err(Error::param("escape bound must be positive"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Deterministic acceleration `a(x, v)`.
    pub fn acceleration(&self, x: f64, v: f64) -> f64 {
        -self.omega0 * self.omega0 * x - self.beta * v + self.k2 * x * x + self.k3 * x * x * x
    }

    /// ∂a/∂x at `x`.
    pub fn stiffness(&self, x: f64) -> f64 {
        -self.omega0 * self.omega0 + 2.0 * self.k2 * x + 3.0 * self.k3 * x * x
    }
}

/// Phase `θ(t) = θ₀ + rate·t` seen through a random polynomial waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseModelParams {
    pub angular_rate: f64,
    pub obs_noise_sd: f64,
    pub taylor_df: f64,
    pub dt: f64,
    pub duration: f64,
    /// Waveform coefficients `w₁..w₅`; drawn per trial when absent.
    pub coefficients: Option<[f64; 5]>,
}

impl Default for PhaseModelParams {
    fn default() -> Self {
        PhaseModelParams {
            angular_rate: 4.0 * PI,
            obs_noise_sd: 2.0,
            taylor_df: 3.0,
            dt: 0.01,
            duration: 4.0,
            coefficients: None,
        }
    }
}

impl PhaseModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.duration > self.dt) {
            return Err(Error::param("need dt > 0 and duration > dt"));
        }
        if !(self.obs_noise_sd > 0.0 && self.taylor_df > 0.0 && self.angular_rate.is_finite()) {
            return Err(Error::param("need obs_noise_sd > 0, taylor_df > 0, finite rate"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Model parameters attached to a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentParams {
    Oscillator(OscillatorParams),
    Phase(PhaseModelParams),
}

impl ExperimentParams {
    pub fn manifold(&self) -> Manifold {
        match self {
            ExperimentParams::Oscillator(_) => Manifold::RealLine,
            ExperimentParams::Phase(_) => Manifold::Circle,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            ExperimentParams::Oscillator(p) => p.dt,
            ExperimentParams::Phase(p) => p.dt,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentParams::Oscillator(_) => "oscillator",
            ExperimentParams::Phase(_) => "phase",
        }
    }
}

/// One simulated trial. `latent[k]` and `observations[k]` belong to time `k·dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub dt: f64,
    pub params: ExperimentParams,
    pub latent: Vec<f64>,
    pub observations: Vec<f64>,
}

impl TrialRecord {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    pub fn manifold(&self) -> Manifold {
        self.params.manifold()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent.len() != self.observations.len() {
            return Err(Error::Validation(format!(
                "trial {}: {} latent values but {} observations",
                self.trial_id,
                self.latent.len(),
                self.observations.len()
            )));
        }
        if self.latent.iter().chain(&self.observations).any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("trial {} has non-finite values", self.trial_id)));
        }
        if self.manifold() == Manifold::Circle
            && self.latent.iter().any(|&t| !(t > -PI && t <= PI))
        {
            return Err(Error::Validation(format!(
                "trial {} has phases outside (-pi, pi]",
                self.trial_id
            )));
        }
        Ok(())
    }
}

/// Euler–Maruyama integration of the oscillator from its initial state.
///
/// Both updates use the state at the start of the step:
/// `x ← x + v·dt`, `v ← v + a(x, v)·dt + noise_scale·√dt·N(0, 1)`.
pub fn simulate_oscillator<R: Rng + ?Sized>(
    params: &OscillatorParams,
    trial_id: u64,
    rng: &mut R,
) -> Result<TrialRecord> {
    params.validate()?;
    let n = params.n_steps();
    let sqrt_dt = params.dt.sqrt();
    let mut x = params.initial_position;
    let mut v = params.initial_velocity;
    let mut latent = Vec::with_capacity(n);
    for step in 0..n {
        if !(x.is_finite() && v.is_finite()) || x.abs() > params.escape_bound {
            return Err(Error::SimulationDiverged {
                step,
                reason: format!("state x = {x}, v = {v}"),
            });
        }
        latent.push(x);
        let a = params.acceleration(x, v);
        let xi: f64 = rng.sample(StandardNormal);
        let next_x = x + v * params.dt;
        v += a * params.dt + params.noise_scale * sqrt_dt * xi;
        x = next_x;
    }
    let observations = latent
        .iter()
        .map(|&x| {
            let e: f64 = rng.sample(StandardNormal);
            x + params.obs_noise_sd * e
        })
        .collect();
    Ok(TrialRecord {
        trial_id,
        dt: params.dt,
        params: ExperimentParams::Oscillator(params.clone()),
        latent,
        observations,
    })
}

/// Phase trial: uniform `θ₀`, linear phase growth, waveform
/// `f(a) = Σ w_k a^k` with `w₁, w₃, w₅` from a t distribution truncated to
/// `(0, ∞)` and `w₂, w₄` from the untruncated one.
pub fn simulate_phase_trial<R: Rng + ?Sized>(
    params: &PhaseModelParams,
    trial_id: u64,
    rng: &mut R,
) -> Result<TrialRecord> {
    params.validate()?;
    let u: f64 = rng.random();
    let theta0 = PI - 2.0 * PI * u;
    let coefficients = match params.coefficients {
        Some(c) => c,
        None => {
            let df = params.taylor_df;
            let mut c = [0.0; 5];
            for (k, slot) in c.iter_mut().enumerate() {
                *slot = if k % 2 == 0 {
                    sample_truncated_t(df, 0.0, f64::INFINITY, rng)?
                } else {
                    sample_student_t(df, rng)?
                };
            }
            c
        }
    };
    let n = params.n_steps();
    let mut latent = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * params.dt;
        let theta = theta0 + params.angular_rate * t;
        latent.push(wrap_angle(theta));
        let e: f64 = rng.sample(StandardNormal);
        observations.push(waveform(&coefficients, theta.cos()) + params.obs_noise_sd * e);
    }
    let snapshot = PhaseModelParams {
        coefficients: Some(coefficients),
        ..params.clone()
    };
    Ok(TrialRecord {
        trial_id,
        dt: params.dt,
        params: ExperimentParams::Phase(snapshot),
        latent,
        observations,
    })
}

/// `w₁a + w₂a² + w₃a³ + w₄a⁴ + w₅a⁵`.
pub fn waveform(coefficients: &[f64; 5], a: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, w| (acc + w) * a)
}

/// Student-t draw as `N(0,1) / √(χ²_df / df)`.
pub fn sample_student_t<R: Rng + ?Sized>(df: f64, rng: &mut R) -> Result<f64> {
    let chi = ChiSquared::new(df).map_err(|e| Error::param(format!("df = {df}: {e}")))?;
    let z: f64 = rng.sample(StandardNormal);
    let c: f64 = chi.sample(rng);
    Ok(z / (c / df).sqrt())
}

/// Student-t draw conditioned on `(lo, hi)` by rejection. `hi` may be `+∞`.
pub fn sample_truncated_t<R: Rng + ?Sized>(df: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    if !(df > 0.0) {
        return Err(Error::param(format!("degrees of freedom must be > 0, got {df}")));
    }
    if !(lo < hi) {
        return Err(Error::param(format!("empty truncation interval ({lo}, {hi})")));
    }
    const MAX_TRIES: usize = 10_000_000;
    for _ in 0..MAX_TRIES {
        let t = sample_student_t(df, rng)?;
        if lo < t && t < hi {
            return Ok(t);
        }
    }
    Err(Error::Numerical(format!(
        "truncated t rejection sampler exhausted on ({lo}, {hi})"
    )))
}
