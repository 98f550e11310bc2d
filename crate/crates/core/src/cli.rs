//! The `kmn` command line driver.
//!
//! Every command writes `run_manifest.json` into its output directory with the
//! resolved flags, the seed and the crate version. Passing that manifest back
//! through `--config` reproduces the run; flags given on the command line
//! override config values.

use std::ffi::OsString;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::checkpoint::{load_model, save_model};
use crate::evalkit::{
    comparison_csv, curves_csv, emit_comparison, emit_heatmap, fmt_real, heatmap_csv,
    write_text, GridEval, ModelScores,
};
use crate::filtering::dataset::{generate_dataset, read_dataset, write_dataset, write_json};
use crate::filtering::evaluate::{circle_grid, evaluate_ekf_nll, evaluate_filter_nll, EkfBelief};
use crate::filtering::simulate::{ExperimentParams, OscillatorParams, PhaseModelParams};
use crate::filtering::train::{train_filter, HeadKind, TrainConfig};
use crate::kernels::{KernelFamily, KernelSpec, Manifold};
use crate::seed;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "kmn", version, about = "Kernel mixture network filtering experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/valid trial files.
    Simulate(SimulateArgs),
    /// Train a window filter; writes checkpoint.json and curves.csv.
    Train(TrainArgs),
    /// Per-trial NLL of checkpoints (and optionally the EKF); writes scatter.csv.
    Evaluate(EvaluateArgs),
    /// Conditional density slices of one trial; writes density.csv.
    Density(DensityArgs),
    /// Draw from a conditional density; writes samples.csv.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Master seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file of default flag values, or a manifest from an earlier run.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Oscillator,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadArg {
    Kmn,
    Quantized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Gaussian,
    VonMises,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EkfBeliefArg {
    Predicted,
    Filtered,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Experiment::Oscillator)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 5000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 50)]
    pub n_valid: usize,
    /// Trial length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub obs_noise_sd: Option<f64>,
    /// Oscillator process noise amplitude.
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = HeadArg::Kmn)]
    pub head: HeadArg,
    /// Kernel family; defaults to the family matching the dataset manifold.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Kernel scales (σ, or 1/√κ for von Mises); defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    pub kernel_scales: Option<Vec<f64>>,
    /// Center thinning threshold.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Quantized bin width.
    #[arg(long)]
    pub bin_size: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub window: usize,
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1)]
    pub pair_stride: usize,
    /// Train on the first N training trials only.
    #[arg(long)]
    pub max_train: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints to score.
    #[arg(long, num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Display names for the checkpoints, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    /// Add the EKF baseline (oscillator only).
    #[arg(long)]
    pub ekf: bool,
    #[arg(long, value_enum, default_value_t = EkfBeliefArg::Filtered)]
    pub ekf_belief: EkfBeliefArg,
    /// Scored window when no checkpoint fixes it.
    #[arg(long, default_value_t = 128)]
    pub window: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DensityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation trial id.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Time indices, comma separated; defaults to every scored step.
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2001)]
    pub grid_points: usize,
    /// Grid range on the real line; defaults to the model support.
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset providing the conditioning window.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Target time index; the window is the preceding observations.
    #[arg(long)]
    pub time: Option<usize>,
    /// Read the conditioning window (oldest first) from this file, `-` for stdin.
    #[arg(long)]
    pub window_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    flags: &'a T,
}

fn write_manifest<T: Serialize>(out: &Path, command: &str, seed: u64, flags: &T) -> Result<()> {
    write_json(
        &out.join(MANIFEST_NAME),
        &RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            flags,
        },
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Turn a config object (or a manifest's `flags`) into command line tokens.
fn config_tokens(path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let object = match value.get("flags").unwrap_or(&value) {
        Value::Object(map) => map.clone(),
        _ => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "expected a JSON object of flags".into(),
            })
        }
    };
    let mut tokens = Vec::new();
    for (key, value) in object {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => tokens.push(flag.into()),
            Value::Array(items) => {
                let parts: Vec<String> = items.iter().map(scalar_token).collect();
                if key == "models" {
                    tokens.push(flag.into());
                    tokens.extend(parts.into_iter().map(OsString::from));
                } else {
                    tokens.push(flag.into());
                    tokens.push(parts.join(",").into());
                }
            }
            other => {
                tokens.push(flag.into());
                tokens.push(scalar_token(&other).into());
            }
        }
    }
    Ok(tokens)
}

fn scalar_token(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Clap command with repeated flags resolving to the last occurrence, which
/// is how explicit flags override `--config` values.
pub fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|sub| sub.args_override_self(true))
}

fn try_parse(args: Vec<OsString>) -> std::result::Result<Cli, CliError> {
    let matches = command().try_get_matches_from(args).map_err(CliError::Usage)?;
    Cli::from_arg_matches(&matches).map_err(CliError::Usage)
}

/// `--config` value among raw arguments, if any.
fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(2);
    let mut found = None;
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            found = it.next().map(PathBuf::from);
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

/// Parse `args` (program name first), splicing in `--config` defaults ahead
/// of the explicit flags so the explicit ones win.
pub fn parse_args<I, T>(args: I) -> std::result::Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let Some(config) = find_config(&args).filter(|_| args.len() >= 2) else {
        return try_parse(args);
    };
    let mut spliced = args[..2].to_vec();
    spliced.extend(config_tokens(&config).map_err(CliError::Run)?);
    spliced.extend_from_slice(&args[2..]);
    try_parse(spliced)
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Run(Error),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Density(a) => cmd_density(&a),
        Command::Sample(a) => cmd_sample(&a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(args) {
        Err(CliError::Usage(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            e.class().exit_code()
        }
        Ok(cli) => match run(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.class().exit_code()
            }
        },
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let params = match a.experiment {
        Experiment::Oscillator => {
            let d = OscillatorParams::default();
            ExperimentParams::Oscillator(OscillatorParams {
                duration: a.duration.unwrap_or(d.duration),
                dt: a.dt.unwrap_or(d.dt),
                obs_noise_sd: a.obs_noise_sd.unwrap_or(d.obs_noise_sd),
                noise_scale: a.noise_scale.unwrap_or(d.noise_scale),
                ..d
            })
        }
        Experiment::Phase => {
            if a.noise_scale.is_some() {
                return Err(Error::Validation(
                    "--noise-scale applies to the oscillator only".into(),
                ));
            }
            let d = PhaseModelParams::default();
            ExperimentParams::Phase(PhaseModelParams {
                duration: a.duration.unwrap_or(d.duration),
                dt: a.dt.unwrap_or(d.dt),
                obs_noise_sd: a.obs_noise_sd.unwrap_or(d.obs_noise_sd),
                ..d
            })
        }
    };
    let dataset = generate_dataset(&params, a.n_train, a.n_valid, a.common.seed)?;
    write_dataset(&a.common.out, &dataset)?;
    write_manifest(&a.common.out, "simulate", a.common.seed, a)
}

/// Resolve the training configuration for a dataset on `manifold`.
pub fn train_config(a: &TrainArgs, manifold: Manifold) -> Result<TrainConfig> {
    let head = match a.head {
        HeadArg::Kmn => HeadKind::Kmn,
        HeadArg::Quantized => HeadKind::Quantized,
    };
    let mut config = match manifold {
        Manifold::RealLine => TrainConfig::oscillator(head),
        Manifold::Circle => TrainConfig::phase(head),
    };
    let family = match a.kernel {
        Some(KernelArg::Gaussian) => KernelFamily::Gaussian,
        Some(KernelArg::VonMises) => KernelFamily::VonMises,
        None => match manifold {
            Manifold::RealLine => KernelFamily::Gaussian,
            Manifold::Circle => KernelFamily::VonMises,
        },
    };
    config.kernels = match (family, &a.kernel_scales) {
        (KernelFamily::Gaussian, Some(s)) => KernelSpec::gaussian(s.clone())?,
        (KernelFamily::Gaussian, None) => KernelSpec::oscillator_grid(),
        (KernelFamily::VonMises, Some(s)) => KernelSpec::von_mises_from_scales(s)?,
        (KernelFamily::VonMises, None) => KernelSpec::phase_grid(),
        (KernelFamily::Rectangular, _) => unreachable!("not selectable"),
    };
    if let Some(w) = a.bin_size {
        config.bin_width = w;
    }
    config.delta = a.delta;
    config.window = a.window;
    config.hidden = a.hidden.clone();
    config.epochs = a.epochs;
    config.batch_size = a.batch_size;
    config.learning_rate = a.lr;
    config.lr_decay = a.lr_decay;
    config.eval_every = a.eval_every;
    config.pair_stride = a.pair_stride;
    config.seed = a.common.seed;
    config.validate(manifold)?;
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut dataset = read_dataset(&a.data)?;
    let config = train_config(a, dataset.manifest.params.manifold())?;
    if let Some(n) = a.max_train {
        dataset.train.truncate(n);
    }
    create_dir(&a.common.out)?;
    let outcome = train_filter(&config, &dataset.train, &dataset.valid)?;
    save_model(&a.common.out.join("checkpoint.json"), &outcome.model)?;
    write_text(&a.common.out.join("curves.csv"), &curves_csv(&outcome.curve))?;
    write_manifest(&a.common.out, "train", a.common.seed, a)?;
    match outcome.diverged {
        Some(msg) => Err(Error::TrainingDiverged(format!(
            "{msg}; last good checkpoint saved"
        ))),
        None => Ok(()),
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let dataset = read_dataset(&a.data)?;
    let trials = &dataset.valid;
    let ids: Vec<u64> = trials.iter().map(|t| t.trial_id).collect();
    let names: Vec<String> = match &a.names {
        Some(n) if n.len() != a.models.len() => {
            return Err(Error::Validation(format!(
                "{} names for {} models",
                n.len(),
                a.models.len()
            )))
        }
        Some(n) => n.clone(),
        None => a.models.iter().map(|p| p.display().to_string()).collect(),
    };
    let mut scores = Vec::new();
    let mut window = None;
    for (path, name) in a.models.iter().zip(names) {
        let model = load_model(path)?;
        window.get_or_insert(model.window);
        scores.push(ModelScores::new(name, &ids, &evaluate_filter_nll(&model, trials)?)?);
    }
    if a.ekf {
        let belief = match a.ekf_belief {
            EkfBeliefArg::Predicted => EkfBelief::Predicted,
            EkfBeliefArg::Filtered => EkfBelief::Filtered,
        };
        let nll = evaluate_ekf_nll(trials, window.unwrap_or(a.window), belief)?;
        scores.push(ModelScores::new("ekf", &ids, &nll)?);
    }
    let rows = emit_comparison(&scores)?;
    create_dir(&a.common.out)?;
    write_text(&a.common.out.join("scatter.csv"), &comparison_csv(&rows))?;
    write_manifest(&a.common.out, "evaluate", a.common.seed, a)
}

pub fn cmd_density(a: &DensityArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let dataset = read_dataset(&a.data)?;
    let trial = dataset
        .valid
        .iter()
        .find(|t| t.trial_id == a.trial)
        .ok_or_else(|| Error::Validation(format!("no validation trial with id {}", a.trial)))?;
    let times = match &a.times {
        Some(t) => t.clone(),
        None => (model.window..trial.len()).collect(),
    };
    if let Some(&t) = times.iter().find(|&&t| t < model.window || t >= trial.len()) {
        return Err(Error::Validation(format!(
            "time index {t} is outside [{}, {})",
            model.window,
            trial.len()
        )));
    }
    if a.grid_points < 2 {
        return Err(Error::Validation("need at least two grid points".into()));
    }
    let grid = match model.manifold {
        Manifold::Circle => circle_grid(a.grid_points),
        Manifold::RealLine => {
            let (lo, hi) = model.head.support();
            GridEval::linspace(a.lo.unwrap_or(lo), a.hi.unwrap_or(hi), a.grid_points)
        }
    };
    let rows = emit_heatmap(&model, trial, &times, &grid)?;
    create_dir(&a.common.out)?;
    write_text(&a.common.out.join("density.csv"), &heatmap_csv(&rows))?;
    write_manifest(&a.common.out, "density", a.common.seed, a)
}

/// Comma- or whitespace-separated reals.
pub fn parse_window(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("'{s}' is not a finite number")))
        })
        .collect()
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let window = match (&a.window_file, &a.data) {
        (Some(path), None) => {
            let text = if path.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| Error::io("<stdin>", e))?;
                s
            } else {
                fs::read_to_string(path).map_err(|e| Error::io(path, e))?
            };
            parse_window(&text)?
        }
        (None, Some(data)) => {
            let dataset = read_dataset(data)?;
            let trial = dataset
                .valid
                .iter()
                .find(|t| t.trial_id == a.trial)
                .ok_or_else(|| {
                    Error::Validation(format!("no validation trial with id {}", a.trial))
                })?;
            let t = a.time.unwrap_or(trial.len() - 1);
            if t < model.window || t >= trial.len() {
                return Err(Error::Validation(format!(
                    "time index {t} is outside [{}, {})",
                    model.window,
                    trial.len()
                )));
            }
            trial.observations[t - model.window..t].to_vec()
        }
        _ => {
            return Err(Error::Validation(
                "give exactly one of --data or --window-file".into(),
            ))
        }
    };
    if window.len() != model.window {
        return Err(Error::Parse(format!(
            "conditioning window has {} values, the model needs {}",
            window.len(),
            model.window
        )));
    }
    let density = model.conditional_density(&window)?;
    let mut rng = seed::stream(a.common.seed, "sample", 0);
    let mut csv = String::from("index,x\n");
    for i in 0..a.n {
        let x = model.latent_coordinate(density.sample(&mut rng));
        csv.push_str(&format!("{i},{}\n", fmt_real(x)));
    }
    create_dir(&a.common.out)?;
    write_text(&a.common.out.join("samples.csv"), &csv)?;
    write_manifest(&a.common.out, "sample", a.common.seed, a)
}
