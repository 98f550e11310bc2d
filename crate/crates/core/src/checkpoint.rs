//! Versioned JSON checkpoints for trained filter models.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::filtering::dataset::{read_json, write_json};
use crate::filtering::pairs::FeatureScaler;
use crate::filtering::train::{FilterModel, HeadKind};
use crate::kernels::{KernelSpec, Manifold};
use crate::mixture::{CenterSet, MixtureHead};
use crate::ndnet::{Activation, DenseNet};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub head: HeadKind,
    pub manifold: Manifold,
    pub window: usize,
    pub weight_floor: f64,
    pub scaler: FeatureScaler,
    pub kernels: KernelSpec,
    pub centers: Vec<f64>,
    pub delta: f64,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Per layer: row-major weights, then biases.
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &FilterModel) -> Self {
        let centers = model.head.centers();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            head: model.kind,
            manifold: model.manifold,
            window: model.window,
            weight_floor: model.weight_floor,
            scaler: model.scaler,
            kernels: model.head.kernels().clone(),
            centers: centers.centers().to_vec(),
            delta: centers.delta(),
            layer_dims: model.net.layer_dims(),
            activations: model.net.activations(),
            params: model.net.params(),
        }
    }

    pub fn into_model(self) -> Result<FilterModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let centers = CenterSet::new(self.centers, self.delta, self.kernels.manifold())?;
        let head = MixtureHead::new(centers, self.kernels)?;
        let mut net = DenseNet::zeros(&self.layer_dims, &self.activations)?;
        net.set_params(&self.params)?;
        if net.input_dim() != self.window {
            return Err(Error::Shape {
                expected: self.window,
                actual: net.input_dim(),
            });
        }
        if net.output_dim() != head.n_components() {
            return Err(Error::Shape {
                expected: head.n_components(),
                actual: net.output_dim(),
            });
        }
        if !net.output_activation().is_non_negative() {
            return Err(Error::Validation("checkpoint outer activation can go negative".into()));
        }
        Ok(FilterModel {
            kind: self.head,
            net,
            head: Arc::new(head),
            scaler: self.scaler,
            window: self.window,
            weight_floor: self.weight_floor,
            manifold: self.manifold,
        })
    }
}

pub fn save_model(path: &Path, model: &FilterModel) -> Result<()> {
    write_json(path, &Checkpoint::from_model(model))
}

pub fn load_model(path: &Path) -> Result<FilterModel> {
    read_json::<Checkpoint>(path)?.into_model()
}
