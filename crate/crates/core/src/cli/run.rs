//! `train` and `sweep-pup`: full runs with a metrics stream, checkpoints
//! and a manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::CliError;
use crate::data::{self, cache, Dataset};
use crate::error::Error;
use crate::numerics::{checkpoint, Model};
use crate::training::{evaluate, EpochMetrics, Trainer};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TEST_SPLIT_FILE: &str = "test.cache";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    #[serde(flatten)]
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub advsel_version: String,
    pub seed: u64,
    /// Fully resolved configuration; loading it as a config file reproduces the run.
    pub config: RunConfig,
    pub model_dims: Vec<usize>,
    pub data: DataSummary,
    /// Class id to original label.
    pub label_mapping: Vec<String>,
    pub outputs: Outputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub dims: usize,
    pub classes: usize,
    /// Split that per-epoch accuracies are measured on.
    pub eval_split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub metrics: String,
    pub model: String,
    pub test_split: String,
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub epochs_run: usize,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    pub test_standard_accuracy: f64,
    pub test_robust_accuracy: f64,
    pub backward_passes: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> crate::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Executes a resolved, validated config.
pub fn execute(cfg: &RunConfig, command: &str) -> Result<RunResult, CliError> {
    let dataset = cfg.load_data()?;
    let (train, validation, test) = data::split(&dataset, cfg.split, cfg.seed)?;
    let (eval, eval_split): (&Dataset, &str) = if validation.is_empty() {
        (&test, "test")
    } else {
        (&validation, "validation")
    };
    let dims = cfg.model_dims(dataset.dims(), dataset.class_count());
    let model = Model::new_seeded(&dims, cfg.seed)?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    cache::save(&test, out.join(TEST_SPLIT_FILE))?;
    let label_mapping = match dataset.label_names() {
        Some(names) => names.to_vec(),
        None => (0..dataset.class_count()).map(|c| c.to_string()).collect(),
    };
    let mut manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        command: command.to_string(),
        advsel_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        model_dims: dims,
        data: DataSummary {
            train: train.len(),
            validation: validation.len(),
            test: test.len(),
            dims: dataset.dims(),
            classes: dataset.class_count(),
            eval_split: eval_split.to_string(),
        },
        label_mapping,
        outputs: Outputs {
            metrics: METRICS_FILE.to_string(),
            model: MODEL_FILE.to_string(),
            test_split: TEST_SPLIT_FILE.to_string(),
            checkpoints: Vec::new(),
        },
        result: None,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;

    let metrics_path = out.join(METRICS_FILE);
    let mut sink = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let every = cfg.checkpoint_every;
    let mut checkpoints = Vec::new();

    let train_cfg = cfg.train_config();
    let mut trainer = Trainer::new(train_cfg.clone(), model, &train, eval)?;
    trainer.run(|m, model| {
        let record = MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            metrics: m.clone(),
        };
        let line = serde_json::to_string(&record).expect("metrics serialize");
        writeln!(sink, "{line}").and_then(|_| sink.flush()).map_err(io_err(&metrics_path))?;
        if every > 0 && m.epoch % every == 0 {
            fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
            let name = format!("{CHECKPOINT_DIR}/epoch-{:04}.ckpt", m.epoch);
            checkpoint::save(model, out.join(&name))?;
            checkpoints.push(name);
        }
        Ok(())
    })?;
    drop(sink);

    let history = trainer.history();
    let last = history.last().expect("at least one epoch runs");
    let model = trainer.model();
    checkpoint::save(model, out.join(MODEL_FILE))?;
    let result = RunResult {
        epochs_run: history.len(),
        standard_accuracy: last.standard_accuracy,
        robust_accuracy: last.robust_accuracy,
        test_standard_accuracy: evaluate(model, &test, None)?,
        test_robust_accuracy: evaluate(model, &test, Some(&train_cfg.eval_attack))?,
        backward_passes: history.iter().map(|m| m.backward_passes).sum(),
    };
    manifest.outputs.checkpoints = checkpoints;
    manifest.result = Some(result.clone());
    write_json(&manifest_path, &manifest)?;
    Ok(result)
}

/// Applies overrides, resolves defaults and validates.
pub(crate) fn prepare(config: Option<&Path>, overrides: &super::config::Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load_or_default(config).map_err(CliError::Config)?;
    cfg.apply(overrides);
    cfg.resolve();
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

pub fn cmd_train(args: &super::TrainArgs) -> Result<(), CliError> {
    let cfg = prepare(args.config.as_deref(), &args.overrides)?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let r = execute(&cfg, "train")?;
    println!("epochs: {}", r.epochs_run);
    if cfg.split[1] > 0.0 {
        println!("validation standard accuracy: {:.4}", r.standard_accuracy);
        println!("validation robust accuracy: {:.4}", r.robust_accuracy);
    }
    println!("test standard accuracy: {:.4}", r.test_standard_accuracy);
    println!("test robust accuracy: {:.4}", r.test_robust_accuracy);
    println!("backward passes: {}", r.backward_passes);
    println!("outputs: {}", cfg.output_dir.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pup: f64,
    pub epochs_run: usize,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    pub test_standard_accuracy: f64,
    pub test_robust_accuracy: f64,
    pub backward_passes: usize,
    pub output_dir: PathBuf,
}

pub const SWEEP_FILE: &str = "sweep.csv";

pub fn cmd_sweep_pup(args: &super::SweepArgs) -> Result<(), CliError> {
    if args.pups.is_empty() {
        return Err(CliError::Config("--pups needs at least one value".into()));
    }
    let mut base = RunConfig::load_or_default(args.config.as_deref()).map_err(CliError::Config)?;
    base.apply(&args.overrides);
    let root = base.output_dir.clone();
    let mut configs = Vec::with_capacity(args.pups.len());
    for &pup in &args.pups {
        let mut cfg = base.clone();
        cfg.policy.pup = Some(pup);
        cfg.policy.adaptive = false;
        cfg.output_dir = root.join(format!("pup-{pup}"));
        cfg.resolve();
        cfg.validate().map_err(CliError::Config)?;
        configs.push(cfg);
    }

    let mut rows = Vec::with_capacity(configs.len());
    println!("{:>6} {:>9} {:>9} {:>9}", "pup", "standard", "robust", "backward");
    for (cfg, &pup) in configs.iter().zip(&args.pups) {
        let r = execute(cfg, "sweep-pup")?;
        println!("{pup:>6} {:>9.4} {:>9.4} {:>9}", r.standard_accuracy, r.robust_accuracy, r.backward_passes);
        rows.push(SweepRow {
            pup,
            epochs_run: r.epochs_run,
            standard_accuracy: r.standard_accuracy,
            robust_accuracy: r.robust_accuracy,
            test_standard_accuracy: r.test_standard_accuracy,
            test_robust_accuracy: r.test_robust_accuracy,
            backward_passes: r.backward_passes,
            output_dir: cfg.output_dir.clone(),
        });
    }
    let path = root.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.into()))?;
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::Runtime(e.into()))?;
    }
    w.flush().map_err(io_err(&path))?;
    println!("table: {}", path.display());
    Ok(())
}
