//! Quadrature, grid KL divergence and the CSV tables behind the plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::filtering::simulate::TrialRecord;
use crate::filtering::train::FilterModel;
use crate::kernels::Manifold;
use crate::{Error, Result};

/// Densities below this are clamped before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Composite Simpson rule with `n` points (odd, at least 3) on `[lo, hi]`.
pub fn integrate_density(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::param(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    if n < 3 || n % 2 == 0 {
        return Err(Error::param(format!("Simpson needs an odd n >= 3, got {n}")));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut sum = f(lo) + f(hi);
    for i in 1..n - 1 {
        let x = lo + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    Ok(sum * h / 3.0)
}

/// A density tabulated on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridEval {
    grid: Vec<f64>,
    values: Vec<f64>,
    manifold: Manifold,
}

impl GridEval {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, manifold: Manifold) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if grid.len() < 2 {
            return Err(Error::param("a grid needs at least two points"));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param("grid must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::param(format!("density values must be finite and >= 0, got {v}")));
        }
        Ok(GridEval {
            grid,
            values,
            manifold,
        })
    }

    pub fn from_fn(grid: Vec<f64>, manifold: Manifold, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, values, manifold)
    }

    /// `n` evenly spaced points on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let step = (hi - lo) / (n.max(2) - 1) as f64;
        (0..n).map(|i| lo + i as f64 * step).collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    /// Trapezoid integral of the tabulated values.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, |i| self.values[i])
    }

    /// Rescale to unit trapezoid mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::DegenerateDensity("grid density has zero mass".into()));
        }
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|v| v / m).collect(),
            self.manifold,
        )
    }
}

fn trapezoid(grid: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    grid.windows(2)
        .enumerate()
        .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
        .sum()
}

/// Trapezoid estimate of `∫ p ln(p / q)`.
pub fn grid_kl(p: &GridEval, q: &GridEval) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::Validation("KL needs both densities on the same grid".into()));
    }
    if let Some(i) = (0..p.values.len()).find(|&i| p.values[i] > 0.0 && q.values[i] <= 0.0) {
        return Err(Error::Validation(format!(
            "q vanishes at x = {} where p = {}",
            p.grid[i], p.values[i]
        )));
    }
    Ok(trapezoid(&p.grid, |i| {
        let pv = p.values[i];
        if pv <= 0.0 {
            0.0
        } else {
            pv * (pv.max(DENSITY_FLOOR).ln() - q.values[i].max(DENSITY_FLOOR).ln())
        }
    }))
}

/// Full round-trip formatting: 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapRow {
    pub t: usize,
    pub x: f64,
    pub density: f64,
}

/// The model's conditional density at every `(time, state)` pair, times
/// outer. On a circle model `states` are wrapped into `(−π, π]` first.
pub fn emit_heatmap(
    model: &FilterModel,
    trial: &TrialRecord,
    times: &[usize],
    states: &[f64],
) -> Result<Vec<HeatmapRow>> {
    let states: Vec<f64> = match model.manifold {
        Manifold::Circle => states.iter().map(|&x| crate::kernels::wrap_angle(x)).collect(),
        Manifold::RealLine => states.to_vec(),
    };
    let densities = model.trial_densities(trial, times)?;
    let mut rows = Vec::with_capacity(times.len() * states.len());
    for (&t, d) in times.iter().zip(&densities) {
        for &x in &states {
            rows.push(HeatmapRow {
                t,
                x,
                density: d.density(model.head_coordinate(x)),
            });
        }
    }
    Ok(rows)
}

pub fn heatmap_csv(rows: &[HeatmapRow]) -> String {
    let mut out = String::from("t,x,density\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.t, fmt_real(r.x), fmt_real(r.density));
    }
    out
}

/// Per-trial NLL of one model, keyed by trial id.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub name: String,
    pub per_trial: Vec<(u64, f64)>,
}

impl ModelScores {
    pub fn new(name: impl Into<String>, trial_ids: &[u64], nll: &[f64]) -> Result<Self> {
        if trial_ids.len() != nll.len() {
            return Err(Error::Shape {
                expected: trial_ids.len(),
                actual: nll.len(),
            });
        }
        Ok(ModelScores {
            name: name.into(),
            per_trial: trial_ids.iter().copied().zip(nll.iter().copied()).collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.per_trial.iter().map(|p| p.1).sum::<f64>() / self.per_trial.len() as f64
    }
}

/// Fraction of trials on which `a` has the lower NLL; ties count half.
pub fn win_rate(a: &ModelScores, b: &ModelScores) -> Result<f64> {
    check_aligned(a, b)?;
    let score: f64 = a
        .per_trial
        .iter()
        .zip(&b.per_trial)
        .map(|(x, y)| {
            if x.1 < y.1 {
                1.0
            } else if x.1 == y.1 {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(score / a.per_trial.len() as f64)
}

fn check_aligned(a: &ModelScores, b: &ModelScores) -> Result<()> {
    let same = a.per_trial.len() == b.per_trial.len()
        && a.per_trial.iter().zip(&b.per_trial).all(|(x, y)| x.0 == y.0);
    if !same {
        return Err(Error::Validation(format!(
            "per-trial scores of '{}' and '{}' are not aligned by trial id",
            a.name, b.name
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComparisonRow {
    Trial { trial_id: u64, model: String, mean_nll: f64 },
    CenterOfMass { model: String, mean_nll: f64 },
    /// Win-rate of `a` over `b`.
    WinRate { a: String, b: String, rate: f64 },
}

/// Trial rows for every model, one center-of-mass row per model and one
/// win-rate row for every unordered model pair.
pub fn emit_comparison(models: &[ModelScores]) -> Result<Vec<ComparisonRow>> {
    let Some(first) = models.first() else {
        return Err(Error::param("nothing to compare"));
    };
    if first.per_trial.is_empty() {
        return Err(Error::param("no trials to compare"));
    }
    for m in &models[1..] {
        check_aligned(first, m)?;
    }
    let mut rows = Vec::new();
    for m in models {
        rows.extend(m.per_trial.iter().map(|&(trial_id, mean_nll)| ComparisonRow::Trial {
            trial_id,
            model: m.name.clone(),
            mean_nll,
        }));
    }
    for m in models {
        rows.push(ComparisonRow::CenterOfMass {
            model: m.name.clone(),
            mean_nll: m.mean(),
        });
    }
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            rows.push(ComparisonRow::WinRate {
                a: a.name.clone(),
                b: b.name.clone(),
                rate: win_rate(a, b)?,
            });
        }
    }
    Ok(rows)
}

/// Scatter schema `trial_id,model,mean_nll`. Summary rows use `mean` in the
/// trial column; win-rate rows use `win_rate` and name the pair as `a>b`.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("trial_id,model,mean_nll\n");
    for r in rows {
        let _ = match r {
            ComparisonRow::Trial {
                trial_id,
                model,
                mean_nll,
            } => writeln!(out, "{trial_id},{model},{}", fmt_real(*mean_nll)),
            ComparisonRow::CenterOfMass { model, mean_nll } => {
                writeln!(out, "mean,{model},{}", fmt_real(*mean_nll))
            }
            ComparisonRow::WinRate { a, b, rate } => {
                writeln!(out, "win_rate,{a}>{b},{}", fmt_real(*rate))
            }
        };
    }
    out
}

pub fn curves_csv(curve: &[crate::filtering::train::CurvePoint]) -> String {
    let mut out = String::from("iteration,split,loss\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.iteration, p.split, fmt_real(p.loss));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gaussian_eval;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let f = |x: f64| 2.0 - x + 3.0 * x * x - 0.5 * x * x * x;
        let anti = |x: f64| 2.0 * x - 0.5 * x * x + x * x * x - 0.125 * x.powi(4);
        let got = integrate_density(f, -1.3, 2.7, 5).unwrap();
        let want = anti(2.7) - anti(-1.3);
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn simpson_rejects_bad_arguments() {
        assert!(integrate_density(|x| x, 1.0, 1.0, 5).is_err());
        assert!(integrate_density(|x| x, 0.0, 1.0, 4).is_err());
        assert!(integrate_density(|x| x, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn standard_gaussian_mass() {
        let m = integrate_density(|x| gaussian_eval(x, 0.0, 1.0).unwrap(), -8.0, 8.0, 2001)
            .unwrap();
        assert!((m - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kl_of_shifted_gaussians() {
        let grid = GridEval::linspace(-8.0, 8.0, 4001);
        let p = GridEval::from_fn(grid.clone(), Manifold::RealLine, |x| {
            gaussian_eval(x, 0.0, 1.0).unwrap()
        })
        .unwrap();
        let q = GridEval::from_fn(grid, Manifold::RealLine, |x| {
            gaussian_eval(x, 0.5, 1.0).unwrap()
        })
        .unwrap();
        assert!((grid_kl(&p, &q).unwrap() - 0.125).abs() < 1e-3);
        assert!(grid_kl(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_support_violation() {
        let grid = vec![0.0, 1.0, 2.0];
        let p = GridEval::new(grid.clone(), vec![0.5, 0.5, 0.5], Manifold::RealLine).unwrap();
        let q = GridEval::new(grid, vec![0.5, 0.0, 0.5], Manifold::RealLine).unwrap();
        assert!(grid_kl(&p, &q).is_err());
        assert!(grid_kl(&q, &p).is_ok());
    }

    #[test]
    fn grid_must_increase() {
        assert!(GridEval::new(vec![0.0, 0.0], vec![1.0, 1.0], Manifold::RealLine).is_err());
        assert!(GridEval::new(vec![0.0, 1.0], vec![1.0, -1.0], Manifold::RealLine).is_err());
    }

    fn scores(name: &str, v: &[f64]) -> ModelScores {
        let ids: Vec<u64> = (0..v.len() as u64).collect();
        ModelScores::new(name, &ids, v).unwrap()
    }

    #[test]
    fn identical_models_split_evenly() {
        let a = scores("a", &[1.0, 2.0, 3.0]);
        let b = scores("b", &[1.0, 2.0, 3.0]);
        assert_eq!(win_rate(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn comparison_layout() {
        let models = vec![
            scores("a", &[1.0, 2.0, 3.0, 4.0]),
            scores("b", &[2.0, 2.0, 1.0, 5.0]),
            scores("c", &[0.0, 0.0, 0.0, 0.0]),
        ];
        let rows = emit_comparison(&models).unwrap();
        assert_eq!(rows.len(), 4 * 3 + 3 + 3);
        assert!(rows.contains(&ComparisonRow::CenterOfMass {
            model: "a".into(),
            mean_nll: 2.5
        }));
        assert!(rows.contains(&ComparisonRow::WinRate {
            a: "a".into(),
            b: "b".into(),
            rate: 0.625
        }));
        let csv = comparison_csv(&rows);
        assert_eq!(csv.lines().count(), rows.len() + 1);
        assert!(csv.contains("win_rate,a>b,6.2500000000000000e-1"));
    }

    #[test]
    fn misaligned_trials_are_rejected() {
        let a = ModelScores::new("a", &[0, 1], &[1.0, 2.0]).unwrap();
        let b = ModelScores::new("b", &[1, 0], &[1.0, 2.0]).unwrap();
        assert!(emit_comparison(&[a, b]).is_err());
    }

    #[test]
    fn real_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI] {
            assert_eq!(fmt_real(v).parse::<f64>().unwrap(), v);
        }
    }
}
