//! Synthetic filtering experiments: simulation, datasets, window filters
//! trained as conditional density estimators, and an EKF baseline.

pub mod dataset;
pub mod ekf;
pub mod evaluate;
pub mod pairs;
pub mod simulate;
pub mod train;

pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetManifest};
pub use ekf::{ekf_filter, EkfRun, GaussianBelief};
pub use evaluate::{evaluate_ekf_nll, evaluate_filter_nll, EkfBelief};
pub use pairs::{make_training_pairs, FeatureScaler, TrainingPairs};
pub use simulate::{
    simulate_oscillator, simulate_phase_trial, ExperimentParams, OscillatorParams,
    PhaseModelParams, TrialRecord,
};
pub use train::{train_filter, FilterModel, HeadKind, TrainConfig, TrainOutcome};
