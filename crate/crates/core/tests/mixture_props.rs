mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use kmn::kernels::{gaussian_eval, log_bessel_i0, KernelSpec, Manifold};
use kmn::mixture::{kmn_nll, CenterSet, MixtureDensity, MixtureHead};
use kmn::ndnet::{Activation, DenseNet};
use kmn::seed::stream;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use statrs::function::gamma::ln_gamma;

fn sorted_centers(mut raw: Vec<f64>, gap: f64) -> Vec<f64> {
    raw.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::new();
    for c in raw {
        if out.last().is_none_or(|l| c - l >= gap) {
            out.push(c);
        }
    }
    out
}

fn gaussian_head(centers: Vec<f64>, sigmas: Vec<f64>) -> Arc<MixtureHead> {
    let set = CenterSet::new(centers, 0.0, Manifold::RealLine).unwrap();
    Arc::new(MixtureHead::new(set, KernelSpec::gaussian(sigmas).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_mixture_has_unit_mass(
        raw in prop::collection::vec(-4.0f64..4.0, 1..6),
        sigmas in prop::collection::vec(0.1f64..2.0, 1..4),
        seed in any::<u64>(),
    ) {
        let head = gaussian_head(sorted_centers(raw, 0.0), sigmas);
        let mut rng = stream(seed, "w", 0);
        let w: Vec<f64> = (0..head.n_components()).map(|_| rng.random_range(0.0..3.0) + 1e-3).collect();
        let d = MixtureDensity::new(head, &w).unwrap();
        let (lo, hi) = d.support();
        let mass = common::simpson(|x| d.density(x), lo, hi, 8001);
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {}", mass);
    }

    #[test]
    fn von_mises_mixture_has_unit_mass_and_period(
        raw in prop::collection::vec(-3.1f64..3.1, 1..6),
        kappas in prop::collection::vec(0.01f64..200.0, 1..4),
        seed in any::<u64>(),
        x in -PI..PI,
    ) {
        let set = CenterSet::new(sorted_centers(raw, 0.0), 0.0, Manifold::Circle).unwrap();
        let head = Arc::new(MixtureHead::new(set, KernelSpec::von_mises(kappas).unwrap()).unwrap());
        let mut rng = stream(seed, "w", 0);
        let w: Vec<f64> = (0..head.n_components()).map(|_| rng.random_range(0.0..3.0) + 1e-3).collect();
        let d = MixtureDensity::new(head, &w).unwrap();
        let mass = common::simpson(|t| d.density(t), -PI, PI, 20001);
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {}", mass);
        let a = d.density(x);
        let b = d.density(x + 2.0 * PI);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn density_ignores_weight_scale(
        raw in prop::collection::vec(-4.0f64..4.0, 1..6),
        scale in 1e-6f64..1e6,
        x in -6.0f64..6.0,
    ) {
        let head = gaussian_head(sorted_centers(raw, 0.0), vec![0.3, 1.1]);
        let w: Vec<f64> = (0..head.n_components()).map(|i| 1.0 + i as f64).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * scale).collect();
        let a = MixtureDensity::new(head.clone(), &w).unwrap().log_density(x);
        let b = MixtureDensity::new(head, &scaled).unwrap().log_density(x);
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_component_is_the_kernel(
        c in -5.0f64..5.0,
        sigma in 0.05f64..3.0,
        w in 1e-8f64..1e8,
        x in -10.0f64..10.0,
    ) {
        let d = MixtureDensity::new(gaussian_head(vec![c], vec![sigma]), &[w]).unwrap();
        let k = gaussian_eval(x, c, sigma).unwrap();
        prop_assert!((d.density(x) - k).abs() <= 1e-12 * k.max(1e-300) + 1e-300);
    }

    #[test]
    fn moments_match_quadrature(
        raw in prop::collection::vec(-3.0f64..3.0, 1..5),
        seed in any::<u64>(),
    ) {
        let head = gaussian_head(sorted_centers(raw, 0.0), vec![0.25, 0.9]);
        let mut rng = stream(seed, "w", 0);
        let w: Vec<f64> = (0..head.n_components()).map(|_| rng.random_range(0.01..1.0)).collect();
        let d = MixtureDensity::new(head, &w).unwrap();
        let (lo, hi) = d.support();
        let m1 = common::simpson(|x| x * d.density(x), lo, hi, 8001);
        let m2 = common::simpson(|x| x * x * d.density(x), lo, hi, 8001);
        let (mean, var) = d.mean_and_variance().unwrap();
        prop_assert!((mean - m1).abs() < 1e-6);
        prop_assert!((var - (m2 - m1 * m1)).abs() < 1e-6);
    }

    #[test]
    fn exponential_loss_ignores_a_shared_logit_shift(
        shift in -20.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let head = gaussian_head(vec![-1.0, 0.0, 1.5], vec![0.4, 1.0]);
        let mut rng = stream(seed, "net", 0);
        let mut net = DenseNet::new(&[3, 5, 6], &[Activation::Tanh, Activation::Exponential], &mut rng).unwrap();
        let feats = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let targets: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = kmn_nll(&targets, feats.view(), &net, &head, 0.0).unwrap().loss;
        let mut p = net.params();
        let n = p.len();
        // output biases are the last 6 parameters
        for v in &mut p[n - 6..] {
            *v += shift;
        }
        net.set_params(&p).unwrap();
        let shifted = kmn_nll(&targets, feats.view(), &net, &head, 0.0).unwrap().loss;
        prop_assert!((base - shifted).abs() < 1e-10, "{} vs {}", base, shifted);
    }
}

#[test]
fn bessel_matches_series() {
    // I0(x) = Σ (x/2)^{2m} / (m!)²
    for &x in &[1e-3, 0.1, 1.0, 5.0, 30.0, 120.0] {
        let half: f64 = x / 2.0;
        let terms: Vec<f64> = (0..400)
            .map(|m| 2.0 * m as f64 * half.ln() - 2.0 * ln_gamma(m as f64 + 1.0))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let series = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        let got = log_bessel_i0(x);
        assert!((got - series).abs() < 1e-10 * series.abs().max(1.0), "x={x}: {got} vs {series}");
    }
}
