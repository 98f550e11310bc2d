//! Filter training: a dense network over the last `L` observations emits the
//! weights of a kernel mixture (or the logits of a quantized softmax) over the
//! current latent state.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::pairs::{make_training_pairs_strided, FeatureScaler, TrainingPairs};
use super::simulate::TrialRecord;
use crate::kernels::{wrap_angle, KernelFamily, KernelSpec, Manifold};
use crate::mixture::{
    kmn_nll, kmn_nll_values, preactivations, select_centers, MixtureDensity, MixtureHead,
};
use crate::ndnet::{Activation, DenseNet, Optimizer};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Kmn,
    Quantized,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmn" => Ok(HeadKind::Kmn),
            "quantized" => Ok(HeadKind::Quantized),
            other => Err(Error::param(format!("unknown head '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub head: HeadKind,
    /// Kernel grid for the KMN head; ignored by the quantized head.
    pub kernels: KernelSpec,
    /// Center thinning threshold; defaults to a tenth of the narrowest kernel.
    pub delta: Option<f64>,
    /// Bin width and covered range of the quantized head.
    pub bin_width: f64,
    pub bin_range: (f64, f64),
    pub window: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Optimizer steps between validation evaluations.
    pub eval_every: usize,
    /// Use every `pair_stride`-th time step of every trial for training.
    pub pair_stride: usize,
    /// Added to non-exponential outer activations before normalization.
    pub weight_floor: f64,
}

impl TrainConfig {
    /// Oscillator KMN defaults.
    pub fn oscillator(head: HeadKind) -> Self {
        TrainConfig {
            head,
            kernels: KernelSpec::oscillator_grid(),
            delta: None,
            bin_width: 0.25,
            bin_range: (-6.0, 6.0),
            window: 128,
            hidden: vec![256, 256],
            hidden_activation: Activation::Relu,
            epochs: 2,
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            seed: 0,
            eval_every: 500,
            pair_stride: 1,
            weight_floor: 1e-12,
        }
    }

    /// Phase (von Mises) defaults; quantized bins of width 2π/48.
    pub fn phase(head: HeadKind) -> Self {
        TrainConfig {
            kernels: KernelSpec::phase_grid(),
            bin_width: 2.0 * std::f64::consts::PI / 48.0,
            bin_range: (-std::f64::consts::PI, std::f64::consts::PI),
            ..Self::oscillator(head)
        }
    }

    pub fn outer_activation(&self) -> Activation {
        match self.head {
            HeadKind::Kmn => Activation::RectifiedQuadratic,
            HeadKind::Quantized => Activation::Exponential,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.kernels.smallest_scale() / 10.0)
    }

    pub fn validate(&self, manifold: Manifold) -> Result<()> {
        if self.head == HeadKind::Kmn && self.kernels.manifold() != manifold {
            return Err(Error::Validation(format!(
                "{:?} kernels live on {:?} but the dataset is on {:?}",
                self.kernels.family(),
                self.kernels.manifold(),
                manifold
            )));
        }
        if self.head == HeadKind::Kmn && self.kernels.family() == KernelFamily::Rectangular {
            return Err(Error::Validation(
                "use the quantized head for rectangular kernels".into(),
            ));
        }
        if self.window == 0 || self.batch_size == 0 || self.eval_every == 0 || self.pair_stride == 0
        {
            return Err(Error::Validation(
                "window, batch size, eval interval and stride must be >= 1".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Validation("hidden layer widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.weight_floor >= 0.0) {
            return Err(Error::Validation(
                "need learning rate > 0, lr decay > 0, weight floor >= 0".into(),
            ));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0) {
                return Err(Error::Validation("delta must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// A trained conditional density model over the latent state.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub kind: HeadKind,
    pub net: DenseNet,
    pub head: Arc<MixtureHead>,
    pub scaler: FeatureScaler,
    pub window: usize,
    pub weight_floor: f64,
    /// Manifold of the latent variable (the quantized head treats the circle
    /// as the interval `[−π, π)`).
    pub manifold: Manifold,
}

impl FilterModel {
    /// Map a latent value to the coordinate the head is defined on.
    pub fn head_coordinate(&self, x: f64) -> f64 {
        match (self.manifold, self.head.manifold()) {
            (Manifold::Circle, Manifold::RealLine) => {
                let w = wrap_angle(x);
                if w == std::f64::consts::PI {
                    -w
                } else {
                    w
                }
            }
            _ => x,
        }
    }

    /// Inverse of [`FilterModel::head_coordinate`].
    pub fn latent_coordinate(&self, h: f64) -> f64 {
        match (self.manifold, self.head.manifold()) {
            (Manifold::Circle, Manifold::RealLine) => wrap_angle(h),
            _ => h,
        }
    }

    fn scaled_features(&self, observations: &[f64]) -> Result<Array2<f64>> {
        if observations.len() != self.window {
            return Err(Error::Shape {
                expected: self.window,
                actual: observations.len(),
            });
        }
        Ok(Array2::from_shape_fn((1, self.window), |(_, i)| {
            self.scaler.apply(observations[i])
        }))
    }

    fn density_from_preactivation(&self, z: ArrayView1<f64>) -> Result<MixtureDensity> {
        let mut log_w = vec![0.0; self.head.n_components()];
        let z = z.to_vec();
        self.head
            .log_weights(self.net.output_activation(), &z, self.weight_floor, &mut log_w);
        MixtureDensity::from_log_weights(self.head.clone(), log_w)
    }

    /// Conditional density given the `L` observations preceding the target,
    /// oldest first.
    pub fn conditional_density(&self, observations: &[f64]) -> Result<MixtureDensity> {
        let feats = self.scaled_features(observations)?;
        let pre = preactivations(&self.net, feats.view())?;
        self.density_from_preactivation(pre.row(0))
    }

    /// Conditional densities for time indices `times` of `trial`.
    pub fn trial_densities(
        &self,
        trial: &TrialRecord,
        times: &[usize],
    ) -> Result<Vec<MixtureDensity>> {
        let mut feats = Array2::zeros((times.len(), self.window));
        for (row, &t) in times.iter().enumerate() {
            if t < self.window || t >= trial.len() {
                return Err(Error::Validation(format!(
                    "time index {t} is outside [{}, {}) for trial {}",
                    self.window,
                    trial.len(),
                    trial.trial_id
                )));
            }
            for (o, &y) in feats
                .row_mut(row)
                .iter_mut()
                .zip(&trial.observations[t - self.window..t])
            {
                *o = self.scaler.apply(y);
            }
        }
        let pre = preactivations(&self.net, feats.view())?;
        pre.axis_iter(Axis(0))
            .map(|z| self.density_from_preactivation(z))
            .collect()
    }

    /// Per-pair NLL of the true latent.
    pub fn pair_nll(&self, pairs: &TrainingPairs, trials: &[TrialRecord]) -> Result<Vec<f64>> {
        const CHUNK: usize = 2048;
        let mut out = Vec::with_capacity(pairs.len());
        let indices: Vec<usize> = (0..pairs.len()).collect();
        for chunk in indices.chunks(CHUNK) {
            let (targets, feats) = pairs.batch(chunk, trials, &self.scaler);
            let targets: Vec<f64> = targets.iter().map(|&x| self.head_coordinate(x)).collect();
            out.extend(kmn_nll_values(
                &targets,
                feats.view(),
                &self.net,
                &self.head,
                self.weight_floor,
            )?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FilterModel,
    pub curve: Vec<CurvePoint>,
    /// Set when the loss went non-finite; `model` is then the last model that
    /// passed a validation evaluation.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    pub fn validation_curve(&self) -> Vec<(usize, f64)> {
        self.curve
            .iter()
            .filter(|p| p.split == "valid")
            .map(|p| (p.iteration, p.loss))
            .collect()
    }
}

/// Build the (untrained) model: centers from the training targets, network
/// sized to the head.
pub fn init_model(
    config: &TrainConfig,
    train: &[TrialRecord],
    pairs: &TrainingPairs,
) -> Result<FilterModel> {
    let manifold = train
        .first()
        .map(TrialRecord::manifold)
        .ok_or_else(|| Error::Validation("training set is empty".into()))?;
    config.validate(manifold)?;
    if pairs.is_empty() {
        return Err(Error::Validation(format!(
            "no trial is longer than the window ({})",
            config.window
        )));
    }
    let head = match config.head {
        HeadKind::Kmn => {
            let targets: Vec<f64> = (0..pairs.len()).map(|i| pairs.target(i, train)).collect();
            let centers = select_centers(&targets, config.delta(), manifold)?;
            MixtureHead::new(centers, config.kernels.clone())?
        }
        HeadKind::Quantized => {
            let (lo, hi) = config.bin_range;
            MixtureHead::quantized(KernelSpec::rectangular_uniform(lo, hi, config.bin_width)?)?
        }
    };
    let scaler = FeatureScaler::fit(pairs, train)?;
    let mut dims = vec![config.window];
    dims.extend(&config.hidden);
    dims.push(head.n_components());
    let mut acts = vec![config.hidden_activation; config.hidden.len()];
    acts.push(config.outer_activation());
    let mut rng = seed::stream(config.seed, "init", 0);
    let net = DenseNet::new(&dims, &acts, &mut rng)?;
    Ok(FilterModel {
        kind: config.head,
        net,
        head: Arc::new(head),
        scaler,
        window: config.window,
        weight_floor: config.weight_floor,
        manifold,
    })
}

/// Mini-batch Adam on the mean NLL. Validation loss (mean over every
/// validation pair) is recorded every `eval_every` steps and at the end.
pub fn train_filter(
    config: &TrainConfig,
    train: &[TrialRecord],
    valid: &[TrialRecord],
) -> Result<TrainOutcome> {
    let pairs = make_training_pairs_strided(train, config.window, config.pair_stride)?;
    let valid_pairs = make_training_pairs_strided(valid, config.window, 1)?;
    let mut model = init_model(config, train, &pairs)?;
    if valid.iter().any(|t| t.manifold() != model.manifold) {
        return Err(Error::Validation("validation trials use a different manifold".into()));
    }
    let mut optimizer = Optimizer::adam(config.learning_rate)?;
    let mut curve = Vec::new();
    let mut last_good = model.clone();
    let mut iteration = 0usize;
    let mut running = (0.0, 0usize);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut lr = config.learning_rate;

    let record_valid = |model: &FilterModel, iteration: usize, curve: &mut Vec<CurvePoint>| {
        if valid_pairs.is_empty() {
            return Ok(());
        }
        let nll = model.pair_nll(&valid_pairs, valid)?;
        let loss = nll.iter().sum::<f64>() / nll.len() as f64;
        curve.push(CurvePoint {
            iteration,
            split: "valid".into(),
            loss,
        });
        Ok::<_, Error>(())
    };

    for epoch in 0..config.epochs {
        let mut rng = seed::stream(config.seed, "shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (targets, feats) = pairs.batch(chunk, train, &model.scaler);
            let targets: Vec<f64> = targets.iter().map(|&x| model.head_coordinate(x)).collect();
            let step = kmn_nll(
                &targets,
                feats.view(),
                &model.net,
                &model.head,
                model.weight_floor,
            )
            .and_then(|out| {
                if out.loss.is_finite() {
                    Ok(out)
                } else {
                    Err(Error::TrainingDiverged(format!(
                        "loss {} at iteration {}",
                        out.loss,
                        iteration + 1
                    )))
                }
            })
            .and_then(|out| {
                optimizer.step(&mut model.net, &out.gradients)?;
                Ok(out.loss)
            });
            let loss = match step {
                Ok(loss) => loss,
                Err(e @ Error::TrainingDiverged(_)) => {
                    return Ok(TrainOutcome {
                        model: last_good,
                        curve,
                        diverged: Some(e.to_string()),
                    })
                }
                Err(e) => return Err(e),
            };
            iteration += 1;
            running.0 += loss;
            running.1 += 1;
            if iteration % config.eval_every == 0 {
                curve.push(CurvePoint {
                    iteration,
                    split: "train".into(),
                    loss: running.0 / running.1 as f64,
                });
                running = (0.0, 0);
                record_valid(&model, iteration, &mut curve)?;
                last_good = model.clone();
            }
        }
        if config.lr_decay != 1.0 {
            lr *= config.lr_decay;
            optimizer.set_learning_rate(lr)?;
        }
    }
    if running.1 > 0 {
        curve.push(CurvePoint {
            iteration,
            split: "train".into(),
            loss: running.0 / running.1 as f64,
        });
        record_valid(&model, iteration, &mut curve)?;
    }
    Ok(TrainOutcome {
        model,
        curve,
        diverged: None,
    })
}
