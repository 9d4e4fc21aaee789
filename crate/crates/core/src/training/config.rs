use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, EpsilonGrid};
use crate::error::{Error, Result};
use crate::selection::{ErrorSignalKind, SelectionPolicy};

/// Which rows a mini-batch is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `b'` clean rows.
    Standard,
    /// `b'` adversarial rows.
    Robust,
    /// `b'` adversarial rows followed by their `b'` clean sources, ranked by loss.
    DsRobust,
    /// Same layout as `DsRobust`, selected uniformly at random.
    RandomRobust,
}

impl Mode {
    pub fn rows_per_batch(self, clean: usize) -> usize {
        match self {
            Mode::Standard | Mode::Robust => clean,
            Mode::DsRobust | Mode::RandomRobust => 2 * clean,
        }
    }

    pub fn uses_attack(self) -> bool {
        !matches!(self, Mode::Standard)
    }

    /// The selection policy conventionally paired with this mode.
    pub fn default_policy(self, pup: f64, seed: u64) -> SelectionPolicy {
        match self {
            Mode::Standard | Mode::Robust => SelectionPolicy::all(),
            Mode::DsRobust => SelectionPolicy::top_loss(pup),
            Mode::RandomRobust => SelectionPolicy::random(pup, seed),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "standard" => Ok(Mode::Standard),
            "robust" => Ok(Mode::Robust),
            "ds_robust" => Ok(Mode::DsRobust),
            "random_robust" => Ok(Mode::RandomRobust),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Accuracy fed to the adaptive P_up schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracySource {
    #[default]
    ValidationStandard,
    ValidationRobust,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub size: usize,
    pub grid: EpsilonGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Clean samples drawn per mini-batch (`b'`).
    pub batch_clean_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub attack: AttackConfig,
    pub policy: SelectionPolicy,
    pub eval_attack: AttackConfig,
    pub seed: u64,
    /// Patience, in epochs, on evaluation robust accuracy.
    pub early_stop: Option<usize>,
    pub pup_accuracy: AccuracySource,
    pub error_signal: ErrorSignalKind,
    pub probe: Option<ProbeConfig>,
    /// Wall-clock time makes the metrics stream non-reproducible, so it is opt-in.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let attack = AttackConfig::default();
        Self {
            mode: Mode::Standard,
            batch_clean_size: 128,
            epochs: 10,
            lr: 0.1,
            attack,
            policy: SelectionPolicy::all(),
            eval_attack: attack,
            seed: 0,
            early_stop: None,
            pup_accuracy: AccuracySource::default(),
            error_signal: ErrorSignalKind::default(),
            probe: None,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_clean_size == 0 {
            return Err(Error::invalid("batch size b' must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.early_stop == Some(0) {
            return Err(Error::invalid("early-stop patience must be >= 1"));
        }
        self.attack.validate()?;
        self.eval_attack.validate()?;
        self.policy.validate()
    }
}
