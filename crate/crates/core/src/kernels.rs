//! Kernel families used as mixture components.
//!
//! Gaussian and rectangular kernels live on the real line, von Mises kernels
//! on the circle. Every kernel is a normalized density in its first argument.
//! Von Mises kernels use the standard `exp(+κ·cos(θ − θ'))` form and are
//! evaluated in log space so that concentrations in the thousands stay finite.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Concentration above which `log I₀` switches to the asymptotic expansion.
const BESSEL_ASYMPTOTIC_FROM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    RealLine,
    Circle,
}

impl Manifold {
    /// Euclidean distance on the line, shortest arc on the circle.
    pub fn distance(self, a: f64, b: f64) -> f64 {
        match self {
            Manifold::RealLine => (a - b).abs(),
            Manifold::Circle => circular_distance(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    VonMises,
    Rectangular,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "von_mises" | "von-mises" | "vonmises" => Ok(KernelFamily::VonMises),
            "rectangular" => Ok(KernelFamily::Rectangular),
            other => Err(Error::param(format!("unknown kernel family '{other}'"))),
        }
    }
}

impl KernelFamily {
    pub fn manifold(self) -> Manifold {
        match self {
            KernelFamily::VonMises => Manifold::Circle,
            KernelFamily::Gaussian | KernelFamily::Rectangular => Manifold::RealLine,
        }
    }
}

/// A kernel family with its parameter grid.
///
/// `params` holds bandwidths σ_j (Gaussian), concentrations κ_j (von Mises)
/// or strictly increasing bin edges (rectangular). A rectangular spec has a
/// single kernel per center: the uniform density on the bin containing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    params: Vec<f64>,
    manifold: Manifold,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, params: Vec<f64>, manifold: Manifold) -> Result<Self> {
        if manifold != family.manifold() {
            return Err(Error::Validation(format!(
                "{family:?} kernels require the {:?} manifold",
                family.manifold()
            )));
        }
        if params.is_empty() {
            return Err(Error::param("kernel parameter grid is empty"));
        }
        match family {
            KernelFamily::Gaussian | KernelFamily::VonMises => {
                if let Some(p) = params.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
                    return Err(Error::param(format!(
                        "kernel parameters must be positive and finite, got {p}"
                    )));
                }
            }
            KernelFamily::Rectangular => {
                if params.len() < 2 {
                    return Err(Error::param("rectangular kernels need at least two edges"));
                }
                if params.iter().any(|e| !e.is_finite())
                    || params.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::param("bin edges must be finite and strictly increasing"));
                }
            }
        }
        Ok(KernelSpec {
            family,
            params,
            manifold,
        })
    }

    pub fn gaussian(sigmas: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigmas, Manifold::RealLine)
    }

    pub fn von_mises(kappas: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::VonMises, kappas, Manifold::Circle)
    }

    /// Von Mises grid given by angular scales `1/√κ`.
    pub fn von_mises_from_scales(scales: &[f64]) -> Result<Self> {
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::param("von Mises scales must be positive"));
        }
        Self::von_mises(scales.iter().map(|s| 1.0 / (s * s)).collect())
    }

    pub fn rectangular(edges: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Rectangular, edges, Manifold::RealLine)
    }

    /// Equal-width bins of `width` covering `[lo, hi]`.
    pub fn rectangular_uniform(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && hi > lo) {
            return Err(Error::param("need width > 0 and hi > lo"));
        }
        let n = ((hi - lo) / width).round() as usize;
        if n == 0 || ((n as f64) * width - (hi - lo)).abs() > 1e-9 * (hi - lo) {
            return Err(Error::param(format!(
                "range [{lo}, {hi}] is not a whole number of bins of width {width}"
            )));
        }
        let edges = (0..=n).map(|i| lo + i as f64 * width).collect();
        Self::rectangular(edges)
    }

    /// Gaussian bandwidths 0.25, 0.75, ..., 2.75.
    pub fn oscillator_grid() -> Self {
        Self::gaussian((0..6).map(|i| 0.25 + 0.5 * i as f64).collect()).expect("valid grid")
    }

    /// Von Mises scales π/250, 2π/250, ..., 2π/25.
    pub fn phase_grid() -> Self {
        let scales: Vec<f64> = (1..=20).map(|i| i as f64 * PI / 250.0).collect();
        Self::von_mises_from_scales(&scales).expect("valid grid")
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    /// Number of kernels placed on every center.
    pub fn kernels_per_center(&self) -> usize {
        match self.family {
            KernelFamily::Rectangular => 1,
            _ => self.params.len(),
        }
    }

    /// Width of the narrowest kernel: σ, 1/√κ or bin width.
    pub fn smallest_scale(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.params.iter().copied().fold(f64::INFINITY, f64::min),
            KernelFamily::VonMises => {
                1.0 / self.params.iter().copied().fold(0.0, f64::max).sqrt()
            }
            KernelFamily::Rectangular => self
                .params
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Width of the widest kernel.
    pub fn largest_scale(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.params.iter().copied().fold(0.0, f64::max),
            KernelFamily::VonMises => {
                1.0 / self.params.iter().copied().fold(f64::INFINITY, f64::min).sqrt()
            }
            KernelFamily::Rectangular => self
                .params
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max),
        }
    }

    /// Bin midpoints of a rectangular spec.
    pub fn bin_midpoints(&self) -> Option<Vec<f64>> {
        (self.family == KernelFamily::Rectangular)
            .then(|| self.params.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
    }

    /// The `j`-th kernel placed on `center`.
    pub fn kernel(&self, j: usize, center: f64) -> Result<Kernel> {
        if j >= self.kernels_per_center() {
            return Err(Error::Shape {
                expected: self.kernels_per_center(),
                actual: j + 1,
            });
        }
        Ok(match self.family {
            KernelFamily::Gaussian => Kernel::Gaussian {
                sigma: self.params[j],
            },
            KernelFamily::VonMises => Kernel::VonMises {
                kappa: self.params[j],
            },
            KernelFamily::Rectangular => {
                let edges = &self.params;
                let bin = edges
                    .windows(2)
                    .position(|w| w[0] <= center && center < w[1])
                    .ok_or_else(|| {
                        Error::param(format!("center {center} lies outside every bin"))
                    })?;
                Kernel::Rectangular {
                    lo: edges[bin],
                    hi: edges[bin + 1],
                }
            }
        })
    }
}

/// One concrete kernel, evaluated relative to a center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Gaussian { sigma: f64 },
    VonMises { kappa: f64 },
    Rectangular { lo: f64, hi: f64 },
}

impl Kernel {
    pub fn eval(&self, x: f64, center: f64) -> f64 {
        self.log_eval(x, center).exp()
    }

    pub fn log_eval(&self, x: f64, center: f64) -> f64 {
        match *self {
            Kernel::Gaussian { sigma } => gaussian_log_unchecked(x, center, sigma),
            Kernel::VonMises { kappa } => {
                kappa * (x - center).cos() - LN_2PI - log_bessel_i0(kappa)
            }
            Kernel::Rectangular { lo, hi } => {
                if lo <= x && x < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, center: f64, rng: &mut R) -> f64 {
        kernel_sample(self, center, rng)
    }
}

fn gaussian_log_unchecked(x: f64, center: f64, sigma: f64) -> f64 {
    let d = (x - center) / sigma;
    -0.5 * d * d - LN_SQRT_2PI - sigma.ln()
}

pub fn gaussian_eval(x: f64, center: f64, sigma: f64) -> Result<f64> {
    gaussian_log_eval(x, center, sigma).map(f64::exp)
}

pub fn gaussian_log_eval(x: f64, center: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("gaussian bandwidth must be > 0, got {sigma}")));
    }
    Ok(gaussian_log_unchecked(x, center, sigma))
}

/// Modified Bessel function of the first kind, order zero.
///
/// Ascending series `Σ (x/2)^{2k} / (k!)²`, summed until a term drops below
/// 1e-16 of the running sum. Overflows to `+∞` past |x| ≈ 713.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x > 700.0 {
        return log_bessel_i0(x).exp();
    }
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
        k += 1.0;
    }
    sum
}

/// `ln I₀(x)`: series for |x| ≤ 50, large-argument expansion
/// `x − ½ln(2πx) + ln(1 + 1/(8x) + 9/(128x²) + ...)` above.
pub fn log_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x <= BESSEL_ASYMPTOTIC_FROM {
        return bessel_i0(x).ln();
    }
    // a_k = ((2k−1)!!)² / (k!·8^k)
    let mut coeff = 1.0;
    let mut correction = 1.0;
    let mut power = 1.0;
    for k in 1..=12 {
        let kf = k as f64;
        coeff *= (2.0 * kf - 1.0).powi(2) / (8.0 * kf);
        power /= x;
        correction += coeff * power;
    }
    x - 0.5 * (2.0 * PI * x).ln() + correction.ln()
}

pub fn von_mises_eval(theta: f64, center: f64, kappa: f64) -> Result<f64> {
    von_mises_log_eval(theta, center, kappa).map(f64::exp)
}

/// `κ·cos(θ − center) − ln(2π) − ln I₀(κ)`.
pub fn von_mises_log_eval(theta: f64, center: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::param(format!("von Mises concentration must be > 0, got {kappa}")));
    }
    Ok(kappa * (theta - center).cos() - LN_2PI - log_bessel_i0(kappa))
}

pub fn rectangular_eval(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::param(format!("empty interval [{lo}, {hi})")));
    }
    Ok(if lo <= x && x < hi { 1.0 / (hi - lo) } else { 0.0 })
}

/// Wrap an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = theta.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    if w <= -PI {
        w += two_pi;
    }
    w
}

/// Length of the shorter arc between two angles, in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Draw one point from `kernel` placed at `center`.
///
/// Gaussian draws use a standard normal variate, von Mises draws use the
/// Best–Fisher rejection sampler and are reported in `(−π, π]`. Rectangular
/// kernels ignore `center` and draw uniformly on their bin.
pub fn kernel_sample<R: Rng + ?Sized>(kernel: &Kernel, center: f64, rng: &mut R) -> f64 {
    match *kernel {
        Kernel::Gaussian { sigma } => {
            let z: f64 = rng.sample(StandardNormal);
            center + sigma * z
        }
        Kernel::VonMises { kappa } => wrap_angle(center + sample_von_mises_offset(kappa, rng)),
        Kernel::Rectangular { lo, hi } => {
            let u: f64 = rng.random();
            let x = lo + (hi - lo) * u;
            // rounding can land exactly on hi
            if x < hi {
                x
            } else {
                lo
            }
        }
    }
}

fn sample_von_mises_offset<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-8 {
        return PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    if kappa > 1e6 {
        // wrapped normal is indistinguishable at this concentration
        let z: f64 = rng.sample(StandardNormal);
        return z / kappa.sqrt();
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let angle = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { angle } else { -angle };
        }
    }
}
