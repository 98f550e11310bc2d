//! Kernel mixture densities.
//!
//! A [`MixtureHead`] fixes the centers and the kernel family. Paired with a
//! vector of non-negative weights `w_pj` (one per center/kernel pair) it
//! defines the density
//!
//! ```text
//! f(x) = Σ_pj w_pj K_j(x, c_p) / Σ_pj w_pj
//! ```
//!
//! In a kernel mixture network the weights come from the outer layer of a
//! [`DenseNet`]; [`kmn_nll`] is the mean negative log likelihood of that model
//! together with its parameter gradients. With rectangular kernels on bin
//! midpoints and exponential outputs this reduces exactly to a quantized
//! softmax density.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::kernels::{kernel_sample, wrap_angle, Kernel, KernelFamily, KernelSpec, Manifold};
use crate::ndnet::{Activation, DenseNet, Gradients};
use crate::{Error, Result};

/// Log densities below this are treated as zero density.
pub const LOG_DENSITY_FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)

/// Ordered center points retained after δ-subsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    centers: Vec<f64>,
    delta: f64,
    manifold: Manifold,
}

impl CenterSet {
    /// Wrap already-selected centers, checking order and spacing.
    pub fn new(centers: Vec<f64>, delta: f64, manifold: Manifold) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::param("center set is empty"));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::param("delta must be finite and >= 0"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("centers must be finite"));
        }
        if manifold == Manifold::Circle
            && centers.iter().any(|&c| !(c > -std::f64::consts::PI && c <= std::f64::consts::PI))
        {
            return Err(Error::param("circle centers must lie in (-pi, pi]"));
        }
        if centers.windows(2).any(|w| w[1] < w[0] || w[1] - w[0] < delta) {
            return Err(Error::param(format!(
                "centers must be ascending with spacing >= {delta}"
            )));
        }
        Ok(CenterSet {
            centers,
            delta,
            manifold,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }
}

/// Sort, deduplicate and greedily thin `values`: a point is kept when it is
/// at least `delta` away from the previously kept point. On the circle values
/// are wrapped to `(−π, π]` first and the last kept point must also clear the
/// first one around the wrap.
pub fn select_centers(values: &[f64], delta: f64, manifold: Manifold) -> Result<CenterSet> {
    if values.is_empty() {
        return Err(Error::param("cannot select centers from an empty set"));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::param("delta must be finite and >= 0"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("center candidates must be finite"));
    }
    let mut sorted: Vec<f64> = match manifold {
        Manifold::RealLine => values.to_vec(),
        Manifold::Circle => values.iter().map(|&v| wrap_angle(v)).collect(),
    };
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut kept = vec![sorted[0]];
    for &v in &sorted[1..] {
        let last = *kept.last().expect("non-empty");
        if v - last >= delta {
            kept.push(v);
        }
    }
    if manifold == Manifold::Circle {
        while kept.len() > 1 && manifold.distance(kept[0], *kept.last().expect("non-empty")) < delta
        {
            kept.pop();
        }
    }
    CenterSet::new(kept, delta, manifold)
}

/// Centers plus kernel family, with the `(center, kernel)` component table
/// laid out row-major: component `p * J + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureHead {
    centers: CenterSet,
    kernels: KernelSpec,
    components: Vec<(f64, Kernel)>,
    /// Per component `(a, b)` with `ln K = a·g(x − c) + b`, where `g` is the
    /// squared distance (Gaussian) or the cosine (von Mises).
    coefficients: Vec<(f64, f64)>,
}

impl MixtureHead {
    pub fn new(centers: CenterSet, kernels: KernelSpec) -> Result<Self> {
        if centers.manifold() != kernels.manifold() {
            return Err(Error::Validation(format!(
                "centers live on {:?} but {:?} kernels need {:?}",
                centers.manifold(),
                kernels.family(),
                kernels.manifold()
            )));
        }
        let per = kernels.kernels_per_center();
        let mut components = Vec::with_capacity(centers.len() * per);
        for &c in centers.centers() {
            for j in 0..per {
                components.push((c, kernels.kernel(j, c)?));
            }
        }
        let coefficients = components
            .iter()
            .map(|(_, k)| match *k {
                Kernel::Gaussian { sigma } => (
                    -0.5 / (sigma * sigma),
                    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln(),
                ),
                Kernel::VonMises { kappa } => (
                    kappa,
                    -crate::kernels::log_bessel_i0(kappa) - (2.0 * std::f64::consts::PI).ln(),
                ),
                Kernel::Rectangular { .. } => (0.0, 0.0),
            })
            .collect();
        Ok(MixtureHead {
            centers,
            kernels,
            components,
            coefficients,
        })
    }

    /// Quantized-softmax head: one rectangular kernel on every bin midpoint.
    pub fn quantized(bins: KernelSpec) -> Result<Self> {
        let mids = bins
            .bin_midpoints()
            .ok_or_else(|| Error::param("quantized head needs rectangular bins"))?;
        let centers = CenterSet::new(mids, 0.0, Manifold::RealLine)?;
        Self::new(centers, bins)
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn kernels(&self) -> &KernelSpec {
        &self.kernels
    }

    pub fn manifold(&self) -> Manifold {
        self.kernels.manifold()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> (f64, Kernel) {
        self.components[i]
    }

    /// `ln K_j(x, c_p)` for every component.
    pub fn log_kernel_row(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.components.len());
        let per = self.kernels.kernels_per_center();
        let family = self.kernels.family();
        for (p, &c) in self.centers.centers().iter().enumerate() {
            let range = p * per..(p + 1) * per;
            let g = match family {
                KernelFamily::Gaussian => (x - c) * (x - c),
                KernelFamily::VonMises => (x - c).cos(),
                KernelFamily::Rectangular => {
                    for (o, (c, k)) in out[range.clone()].iter_mut().zip(&self.components[range]) {
                        *o = k.log_eval(x, *c);
                    }
                    continue;
                }
            };
            for (o, &(a, b)) in out[range.clone()].iter_mut().zip(&self.coefficients[range]) {
                *o = a * g + b;
            }
        }
    }

    /// Interval that carries the mass of any mixture on this head.
    pub fn support(&self) -> (f64, f64) {
        match self.kernels.family() {
            KernelFamily::VonMises => (-std::f64::consts::PI, std::f64::consts::PI),
            KernelFamily::Rectangular => {
                let e = self.kernels.params();
                (e[0], e[e.len() - 1])
            }
            KernelFamily::Gaussian => {
                let c = self.centers.centers();
                let s = self.kernels.largest_scale();
                (c[0] - 8.0 * s, c[c.len() - 1] + 8.0 * s)
            }
        }
    }

    /// Log mixing weights from outer pre-activations `z`.
    ///
    /// Exponential outputs give `ln w = z` directly; other non-negative
    /// activations use `ln(act(z) + floor)`.
    pub fn log_weights(&self, activation: Activation, z: &[f64], floor: f64, out: &mut [f64]) {
        match activation {
            Activation::Exponential => out.copy_from_slice(z),
            act => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = (act.apply(zi) + floor).ln();
                }
            }
        }
    }
}

/// A fixed mixture: head plus non-negative weights.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    head: Arc<MixtureHead>,
    log_weights: Vec<f64>,
    log_total: f64,
}

impl MixtureDensity {
    pub fn new(head: Arc<MixtureHead>, weights: &[f64]) -> Result<Self> {
        if weights.len() != head.n_components() {
            return Err(Error::Shape {
                expected: head.n_components(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::param(format!("mixture weights must be finite and >= 0, got {w}")));
        }
        let log_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_weights(head, log_weights)
    }

    pub fn from_log_weights(head: Arc<MixtureHead>, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != head.n_components() {
            return Err(Error::Shape {
                expected: head.n_components(),
                actual: log_weights.len(),
            });
        }
        if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numerical("non-finite log weight".into()));
        }
        let log_total = log_sum_exp(&log_weights);
        if log_total == f64::NEG_INFINITY {
            return Err(Error::DegenerateDensity("all mixture weights are zero".into()));
        }
        Ok(MixtureDensity {
            head,
            log_weights,
            log_total,
        })
    }

    pub fn head(&self) -> &MixtureHead {
        &self.head
    }

    pub fn manifold(&self) -> Manifold {
        self.head.manifold()
    }

    /// Normalized mixing proportions `w_pj / Σ w`.
    pub fn proportions(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|lw| (lw - self.log_total).exp())
            .collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// Max-shifted log-sum-exp over `ln w_pj + ln K_pj(x)`.
    pub fn log_density(&self, x: f64) -> f64 {
        let mut row = vec![0.0; self.head.n_components()];
        self.head.log_kernel_row(x, &mut row);
        for (r, lw) in row.iter_mut().zip(&self.log_weights) {
            *r += lw;
        }
        log_sum_exp(&row) - self.log_total
    }

    pub fn support(&self) -> (f64, f64) {
        self.head.support()
    }

    /// Mean and variance on the real line.
    pub fn mean_and_variance(&self) -> Result<(f64, f64)> {
        if self.manifold() != Manifold::RealLine {
            return Err(Error::Validation("moments are defined on the real line only".into()));
        }
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (pi, (c, k)) in self.proportions().iter().zip(&self.head.components) {
            let (mean, var) = match *k {
                Kernel::Gaussian { sigma } => (*c, sigma * sigma),
                Kernel::Rectangular { lo, hi } => (0.5 * (lo + hi), (hi - lo).powi(2) / 12.0),
                Kernel::VonMises { .. } => unreachable!("checked manifold"),
            };
            m1 += pi * mean;
            m2 += pi * (var + mean * mean);
        }
        Ok((m1, (m2 - m1 * m1).max(0.0)))
    }

    /// Draw a component with probability `w_pj / Σ w`, then sample its kernel.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.log_weights.len() - 1;
        for (i, lw) in self.log_weights.iter().enumerate() {
            acc += (lw - self.log_total).exp();
            if u < acc {
                chosen = i;
                break;
            }
        }
        // the fallback may land on a zero-weight tail component
        if self.log_weights[chosen] == f64::NEG_INFINITY {
            chosen = self
                .log_weights
                .iter()
                .rposition(|lw| *lw > f64::NEG_INFINITY)
                .expect("density has a positive weight");
        }
        let (c, k) = self.head.components[chosen];
        kernel_sample(&k, c, rng)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Evaluate `Σ w K(x, c) / Σ w` for a weight matrix given row-major by center.
pub fn kmn_density(
    weights: &[f64],
    centers: &CenterSet,
    kernels: &KernelSpec,
    x: f64,
) -> Result<f64> {
    kmn_log_density(weights, centers, kernels, x).map(f64::exp)
}

pub fn kmn_log_density(
    weights: &[f64],
    centers: &CenterSet,
    kernels: &KernelSpec,
    x: f64,
) -> Result<f64> {
    let head = Arc::new(MixtureHead::new(centers.clone(), kernels.clone())?);
    Ok(MixtureDensity::new(head, weights)?.log_density(x))
}

#[derive(Debug, Clone)]
pub struct LossAndGradients {
    pub loss: f64,
    pub gradients: Gradients,
}

/// Mean negative log likelihood of a kernel mixture network over a batch and
/// its gradient with respect to every network parameter.
///
/// Row `q` of `features` conditions target `targets[q]`. `weight_floor` is
/// added to non-exponential outer activations before normalization.
pub fn kmn_nll(
    targets: &[f64],
    features: ArrayView2<f64>,
    net: &DenseNet,
    head: &MixtureHead,
    weight_floor: f64,
) -> Result<LossAndGradients> {
    let batch = targets.len();
    if batch == 0 {
        return Err(Error::param("empty batch"));
    }
    if features.nrows() != batch {
        return Err(Error::Shape {
            expected: batch,
            actual: features.nrows(),
        });
    }
    check_outer_layer(net, head)?;
    let act = net.output_activation();
    let trace = net.forward_batch(features)?;
    let pre = trace.output_preactivation();
    let post = trace.output();
    let k = head.n_components();
    let mut seed = Array2::<f64>::zeros((batch, k));
    let mut prior = vec![0.0; k];
    let mut posterior = vec![0.0; k];
    let mut total = 0.0;
    let scale = 1.0 / batch as f64;

    for q in 0..batch {
        let z = pre.row(q);
        let z = z.as_slice().expect("standard layout");
        let (log_norm, log_num) = mixture_terms(
            head,
            act,
            z,
            weight_floor,
            targets[q],
            q,
            &mut prior,
            &mut posterior,
        )?;
        total += log_norm - log_num;

        let mut g = seed.row_mut(q);
        for i in 0..k {
            // dL/d(ln w_i) = prior_i − posterior_i
            let d_log_w = (prior[i] - posterior[i]) * scale;
            g[i] = match act {
                Activation::Exponential => d_log_w,
                a => {
                    let w = post[[q, i]] + weight_floor;
                    let dw_dz = match a {
                        Activation::Relu => {
                            if z[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Activation::RectifiedQuadratic => 2.0 * z[i].max(0.0),
                        _ => unreachable!("checked outer activation"),
                    };
                    if dw_dz == 0.0 {
                        0.0
                    } else {
                        d_log_w / w * dw_dz
                    }
                }
            };
        }
    }
    let gradients = net.backward_batch_preactivation(&trace, seed.view())?;
    Ok(LossAndGradients {
        loss: total * scale,
        gradients,
    })
}

/// Per-sample negative log likelihood without gradients. Densities below
/// 1e-300 are clamped.
pub fn kmn_nll_values(
    targets: &[f64],
    features: ArrayView2<f64>,
    net: &DenseNet,
    head: &MixtureHead,
    weight_floor: f64,
) -> Result<Vec<f64>> {
    if features.nrows() != targets.len() {
        return Err(Error::Shape {
            expected: targets.len(),
            actual: features.nrows(),
        });
    }
    check_outer_layer(net, head)?;
    let act = net.output_activation();
    let pre = preactivations(net, features)?;
    let k = head.n_components();
    let mut prior = vec![0.0; k];
    let mut posterior = vec![0.0; k];
    let mut out = Vec::with_capacity(targets.len());
    for (q, &x) in targets.iter().enumerate() {
        let z = pre.row(q);
        let z = z.as_slice().expect("standard layout");
        let log_density =
            match mixture_terms(head, act, z, weight_floor, x, q, &mut prior, &mut posterior) {
                Ok((log_norm, log_num)) => log_num - log_norm,
                Err(Error::DegenerateDensity(msg)) if msg.starts_with("target") => {
                    f64::NEG_INFINITY
                }
                Err(e) => return Err(e),
            };
        out.push(-log_density.max(LOG_DENSITY_FLOOR));
    }
    Ok(out)
}

/// Prior weights `w_i / Σw` and posterior responsibilities for target `x`
/// into `prior` and `posterior`; returns `(ln Σw, ln Σ w K(x))`.
#[allow(clippy::too_many_arguments)]
fn mixture_terms(
    head: &MixtureHead,
    act: Activation,
    z: &[f64],
    floor: f64,
    x: f64,
    q: usize,
    prior: &mut [f64],
    posterior: &mut [f64],
) -> Result<(f64, f64)> {
    head.log_kernel_row(x, posterior);
    let log_norm = match act {
        Activation::Exponential => {
            let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !zmax.is_finite() {
                return Err(Error::DegenerateDensity(format!(
                    "network output is not finite for sample {q}"
                )));
            }
            let mut sum = 0.0;
            for ((p, j), &zi) in prior.iter_mut().zip(posterior.iter_mut()).zip(z) {
                *p = (zi - zmax).exp();
                sum += *p;
                *j += zi;
            }
            prior.iter_mut().for_each(|p| *p /= sum);
            zmax + sum.ln()
        }
        a => {
            let mut sum = 0.0;
            for ((p, j), &zi) in prior.iter_mut().zip(posterior.iter_mut()).zip(z) {
                let w = a.apply(zi) + floor;
                *p = w;
                sum += w;
                *j += w.ln();
            }
            if !(sum > 0.0) {
                return Err(Error::DegenerateDensity(format!(
                    "network output is all zero for sample {q}"
                )));
            }
            prior.iter_mut().for_each(|p| *p /= sum);
            sum.ln()
        }
    };
    let jmax = posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if jmax == f64::NEG_INFINITY {
        return Err(Error::DegenerateDensity(format!(
            "target {x} of sample {q} has zero density under every component"
        )));
    }
    let mut num = 0.0;
    for j in posterior.iter_mut() {
        *j = (*j - jmax).exp();
        num += *j;
    }
    posterior.iter_mut().for_each(|j| *j /= num);
    Ok((log_norm, jmax + num.ln()))
}

/// Outer-layer pre-activations for a batch.
pub fn preactivations(net: &DenseNet, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let trace = net.forward_batch(features)?;
    Ok(trace.output_preactivation().clone())
}

fn check_outer_layer(net: &DenseNet, head: &MixtureHead) -> Result<()> {
    if net.output_dim() != head.n_components() {
        return Err(Error::Shape {
            expected: head.n_components(),
            actual: net.output_dim(),
        });
    }
    if !net.output_activation().is_non_negative() {
        return Err(Error::Validation(format!(
            "outer activation {} can produce negative weights",
            net.output_activation().name()
        )));
    }
    Ok(())
}

/// Piecewise-constant softmax density over bins.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDensity {
    bin_edges: Vec<f64>,
    logits: Vec<f64>,
}

impl QuantizedDensity {
    pub fn new(bin_edges: Vec<f64>, logits: Vec<f64>) -> Result<Self> {
        if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("bin edges must be strictly increasing"));
        }
        if logits.len() + 1 != bin_edges.len() {
            return Err(Error::Shape {
                expected: bin_edges.len() - 1,
                actual: logits.len(),
            });
        }
        Ok(QuantizedDensity { bin_edges, logits })
    }

    pub fn density(&self, x: f64) -> f64 {
        let Some(bin) = self
            .bin_edges
            .windows(2)
            .position(|w| w[0] <= x && x < w[1])
        else {
            return 0.0;
        };
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = self.logits.iter().map(|z| (z - max).exp()).sum();
        let prob = (self.logits[bin] - max).exp() / denom;
        prob / (self.bin_edges[bin + 1] - self.bin_edges[bin])
    }
}

/// `softmax(z)_{bin(x)} / width(bin(x))`, zero outside the bins.
pub fn quantized_softmax_density(logits: &[f64], bin_edges: &[f64], x: f64) -> Result<f64> {
    Ok(QuantizedDensity::new(bin_edges.to_vec(), logits.to_vec())?.density(x))
}

/// Kernel (mixture) density estimate from samples.
///
/// Every sample becomes a center carrying every kernel of `kernels`; the
/// per-sample weight (uniform by default) is split evenly over the kernels.
pub fn kde_estimate(
    samples: &[f64],
    kernels: &KernelSpec,
    weights: Option<&[f64]>,
) -> Result<MixtureDensity> {
    if samples.is_empty() {
        return Err(Error::param("kde needs at least one sample"));
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::Shape {
                expected: samples.len(),
                actual: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("kde weights must be finite and >= 0"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateDensity("all kde weights are zero".into()));
        }
    }
    let manifold = kernels.manifold();
    let mut pairs: Vec<(f64, f64)> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let s = match manifold {
                Manifold::Circle => wrap_angle(s),
                Manifold::RealLine => s,
            };
            (s, weights.map_or(1.0, |w| w[i]))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let centers = CenterSet::new(pairs.iter().map(|p| p.0).collect(), 0.0, manifold)?;
    let per = kernels.kernels_per_center();
    let head = Arc::new(MixtureHead::new(centers, kernels.clone())?);
    let flat: Vec<f64> = pairs
        .iter()
        .flat_map(|&(_, w)| std::iter::repeat_n(w / per as f64, per))
        .collect();
    MixtureDensity::new(head, &flat)
}
