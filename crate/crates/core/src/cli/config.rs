//! Run configuration: a TOML file, command-line overrides and defaults,
//! resolved in that order of precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, EpsilonGrid};
use crate::data::{self, Dataset};
use crate::selection::{ErrorSignalKind, PupSchedule, SelectionKind, SelectionPolicy};
use crate::training::{AccuracySource, Mode, ProbeConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, splitting, model initialization and training.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write a numbered checkpoint every this many epochs; 0 keeps only the final model.
    pub checkpoint_every: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub data: DataSource,
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackConfig,
    /// Attack used for robust accuracy; defaults to `attack` without random start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_attack: Option<AttackConfig>,
    pub policy: PolicySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            split: [0.8, 0.0, 0.2],
            data: DataSource::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            attack: AttackConfig::default(),
            eval_attack: None,
            policy: PolicySection::default(),
            probe: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSource),
    Idx(IdxSource),
    Csv(CsvSource),
    Cache(CacheSource),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSource::default())
    }
}

/// Two-class Gaussian blobs from [`data::tradeoff_means`] unless `means` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSource {
    pub samples_per_class: usize,
    pub dims: usize,
    pub strong: f64,
    pub weak: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
}

impl Default for SynthSource {
    fn default() -> Self {
        Self {
            samples_per_class: 1250,
            dims: 20,
            strong: 0.25,
            weak: 0.08,
            sigma: 0.15,
            means: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSource {
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

fn default_label_column() -> String {
    "label".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSource {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; empty gives multinomial logistic regression.
    pub hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Mode,
    /// Clean samples per mini-batch (`b'`).
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<usize>,
    pub pup_accuracy: AccuracySource,
    pub error_signal: ErrorSignalKind,
    pub record_wall_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: Mode::DsRobust,
            batch: 128,
            epochs: 10,
            lr: 0.1,
            early_stop: None,
            pup_accuracy: AccuracySource::default(),
            error_signal: ErrorSignalKind::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// Defaults to the mode's usual policy: all rows for standard and robust,
    /// top loss for ds_robust, random for random_robust.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<SelectionKind>,
    /// Fixed P_up; 0.5 for top-loss and random selection, 1 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pup: Option<f64>,
    /// Shrink P_up each epoch by the previous epoch's error rate.
    pub adaptive: bool,
    pub initial: f64,
    pub floor: f64,
    /// Seed for random selection; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: None,
            pup: None,
            adaptive: false,
            initial: 1.0,
            floor: 0.1,
            seed: None,
        }
    }
}

/// Fixed probe set for the minimum-budget diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub size: usize,
    /// Explicit budgets; otherwise `0, grid_step, ..., grid_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub grid_max: f64,
    pub grid_step: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            size: 50,
            grid: None,
            grid_max: 0.4,
            grid_step: 0.01,
        }
    }
}

impl ProbeSection {
    pub fn epsilon_grid(&self) -> crate::Result<EpsilonGrid> {
        match &self.grid {
            Some(v) => EpsilonGrid::new(v.clone()),
            None => EpsilonGrid::linspace(0.0, self.grid_max, self.grid_step),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed fraction of each batch kept for the backward pass.
    #[arg(long)]
    pub pup: Option<f64>,
    /// standard, robust, ds_robust or random_robust.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// l-infinity attack budget (training and evaluation).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// PGD step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// PGD iterations.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Clean samples per mini-batch (b').
    #[arg(long)]
    pub batch: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Loads `path` if given, otherwise starts from the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, String> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(pup) = o.pup {
            self.policy.pup = Some(pup);
            self.policy.adaptive = false;
        }
        if let Some(mode) = o.mode {
            self.train.mode = mode;
        }
        let attacks = std::iter::once(&mut self.attack).chain(self.eval_attack.as_mut());
        for a in attacks {
            if let Some(eps) = o.epsilon {
                a.epsilon = eps;
            }
            if let Some(alpha) = o.alpha {
                a.alpha = alpha;
            }
            if let Some(steps) = o.steps {
                a.steps = steps;
            }
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
        }
        if let Some(lr) = o.lr {
            self.train.lr = lr;
        }
        if let Some(batch) = o.batch {
            self.train.batch = batch;
        }
        if let Some(out) = &o.output {
            self.output_dir = out.clone();
        }
    }

    /// Fills every mode-dependent default so the config records exactly what runs.
    pub fn resolve(&mut self) {
        if self.eval_attack.is_none() {
            self.eval_attack = Some(AttackConfig {
                random_start: false,
                ..self.attack
            });
        }
        let kind = *self.policy.kind.get_or_insert(match self.train.mode {
            Mode::Standard | Mode::Robust => SelectionKind::All,
            Mode::DsRobust => SelectionKind::TopLoss,
            Mode::RandomRobust => SelectionKind::Random,
        });
        self.policy.pup.get_or_insert(match kind {
            SelectionKind::All => 1.0,
            _ => 0.5,
        });
        self.policy.seed.get_or_insert(self.seed);
    }

    /// Checks a resolved config, including that input files exist.
    pub fn validate(&self) -> Result<(), String> {
        let [tr, va, te] = self.split;
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
            return Err(format!("split fractions must lie in [0, 1] and sum to 1, got {:?}", self.split));
        }
        if tr == 0.0 {
            return Err("split must give the training set a positive fraction".into());
        }
        if va == 0.0 && te == 0.0 {
            return Err("split must leave a validation or test fraction for evaluation".into());
        }
        if self.model.hidden.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        match &self.data {
            DataSource::Synthetic(s) => {
                if s.samples_per_class == 0 || s.dims == 0 {
                    return Err("synthetic data needs samples_per_class >= 1 and dims >= 1".into());
                }
                if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
                    return Err(format!("sigma must be finite and >= 0, got {}", s.sigma));
                }
                if let Some(means) = &s.means {
                    if means.len() < 2 || means.iter().any(|m| m.len() != s.dims) {
                        return Err(format!("means must list at least 2 vectors of length {}", s.dims));
                    }
                }
            }
            DataSource::Idx(s) => {
                require_file(&s.images)?;
                require_file(&s.labels)?;
            }
            DataSource::Csv(s) => require_file(&s.path)?,
            DataSource::Cache(s) => require_file(&s.path)?,
        }
        if self.policy.kind == Some(SelectionKind::All) && self.policy.pup != Some(1.0) && !self.policy.adaptive {
            return Err(format!(
                "P_up {} needs a selecting policy: use mode ds_robust or random_robust, or set policy.kind",
                self.policy.pup.unwrap_or(f64::NAN)
            ));
        }
        if let Some(p) = &self.probe {
            p.epsilon_grid().map_err(|e| format!("probe grid: {e}"))?;
        }
        self.train_config().validate().map_err(|e| e.to_string())
    }

    pub fn selection_policy(&self) -> SelectionPolicy {
        let p = &self.policy;
        let schedule = if p.adaptive {
            PupSchedule::Adaptive {
                initial: p.initial,
                floor: p.floor,
            }
        } else {
            PupSchedule::Fixed {
                pup: p.pup.unwrap_or(1.0),
            }
        };
        SelectionPolicy {
            kind: p.kind.unwrap_or(SelectionKind::All),
            schedule,
            seed: p.seed.unwrap_or(self.seed),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let probe = self.probe.as_ref().and_then(|p| {
            Some(ProbeConfig {
                size: p.size,
                grid: p.epsilon_grid().ok()?,
            })
        });
        TrainConfig {
            mode: self.train.mode,
            batch_clean_size: self.train.batch,
            epochs: self.train.epochs,
            lr: self.train.lr,
            attack: self.attack,
            policy: self.selection_policy(),
            eval_attack: self.eval_attack.unwrap_or(AttackConfig {
                random_start: false,
                ..self.attack
            }),
            seed: self.seed,
            early_stop: self.train.early_stop,
            pup_accuracy: self.train.pup_accuracy,
            error_signal: self.train.error_signal,
            probe,
            record_wall_time: self.train.record_wall_time,
        }
    }

    pub fn load_data(&self) -> crate::Result<Dataset> {
        match &self.data {
            DataSource::Synthetic(s) => {
                let means = s.means.clone().unwrap_or_else(|| data::tradeoff_means(s.dims, s.strong, s.weak));
                data::synth_gaussians(self.seed, s.samples_per_class, s.dims, &means, s.sigma)
            }
            DataSource::Idx(s) => data::load_idx(&s.images, &s.labels),
            DataSource::Csv(s) => data::load_csv(&s.path, &s.label_column),
            DataSource::Cache(s) => data::cache::load(&s.path),
        }
    }

    /// Layer widths for a dataset with `dims` features and `classes` classes.
    pub fn model_dims(&self, dims: usize, classes: usize) -> Vec<usize> {
        let mut v = vec![dims];
        v.extend(&self.model.hidden);
        v.push(classes);
        v
    }
}

pub(crate) fn require_file(path: &Path) -> Result<(), String> {
    if path.is_file() {
        Ok(())
    } else {
        Err(format!("{}: no such file", path.display()))
    }
}
