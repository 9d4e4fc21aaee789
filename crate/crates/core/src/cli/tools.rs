//! `eval`, `attack`, `gradcheck` and `export-curves`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::require_file;
use super::run::{MetricsRecord, METRICS_SCHEMA_VERSION};
use super::CliError;
use crate::attacks::{self, AttackConfig};
use crate::data::{self, cache, Dataset};
use crate::error::Error;
use crate::numerics::{argmax, check_gradients, checkpoint, GradcheckReport, Matrix, Model};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where `eval` and `attack` read samples from.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct DataArgs {
    /// Dataset cache file, such as a run's test.cache.
    #[arg(long, conflicts_with_all = ["images", "csv"])]
    pub data: Option<PathBuf>,
    /// IDX image file (with --labels).
    #[arg(long, requires = "labels", conflicts_with = "csv")]
    pub images: Option<PathBuf>,
    /// IDX label file (with --images).
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// CSV file with a header row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset, CliError> {
        if let Some(p) = &self.data {
            require_file(p).map_err(CliError::Config)?;
            return Ok(cache::load(p)?);
        }
        if let (Some(i), Some(l)) = (&self.images, &self.labels) {
            require_file(i).map_err(CliError::Config)?;
            require_file(l).map_err(CliError::Config)?;
            return Ok(data::load_idx(i, l)?);
        }
        if let Some(p) = &self.csv {
            require_file(p).map_err(CliError::Config)?;
            return Ok(data::load_csv(p, &self.label_column)?);
        }
        Err(CliError::Config("no dataset given: use --data, --images/--labels or --csv".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Pgd,
    Fgsm,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Pgd => "pgd",
            AttackMethod::Fgsm => "fgsm",
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct AttackFlags {
    #[arg(long, value_enum, default_value = "pgd")]
    pub method: AttackMethod,
    /// l-infinity budget.
    #[arg(long, default_value_t = 8.0 / 255.0)]
    pub epsilon: f64,
    /// PGD step size.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// PGD iterations.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Start PGD from a uniform point in the budget ball.
    #[arg(long)]
    pub random_start: bool,
    #[arg(long, default_value_t = 0.0)]
    pub clip_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_max: f64,
    /// Seed for the random start.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl AttackFlags {
    pub fn config(&self) -> Result<AttackConfig, CliError> {
        let c = AttackConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            steps: self.steps,
            random_start: self.random_start,
            clip_min: self.clip_min,
            clip_max: self.clip_max,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

const CHUNK: usize = 512;

/// Attacks every row of `ds`, 512 rows at a time, with one generator for the whole pass.
pub fn attack_dataset(model: &Model, ds: &Dataset, method: AttackMethod, cfg: &AttackConfig, seed: u64) -> crate::Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = ds.features().select_rows(chunk)?;
        let y: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
        parts.push(match method {
            AttackMethod::Pgd => attacks::pgd(model, &x, &y, cfg, &mut rng)?,
            AttackMethod::Fgsm => attacks::fgsm_in_range(model, &x, &y, cfg.epsilon, cfg.clip_min, cfg.clip_max)?,
        });
    }
    parts.iter().try_fold(Matrix::zeros(0, ds.dims()), |acc, m| Matrix::vstack(&acc, m))
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

fn load_pair(checkpoint_path: &Path, data: &DataArgs) -> Result<(Model, Dataset), CliError> {
    require_file(checkpoint_path).map_err(CliError::Config)?;
    let model = checkpoint::load(checkpoint_path)?;
    let ds = data.load()?;
    if ds.dims() != model.input_dim() {
        return Err(Error::dim("dataset features vs model input", model.input_dim(), ds.dims()).into());
    }
    if ds.class_count() > model.class_count() {
        return Err(Error::dim("dataset classes vs model outputs", model.class_count(), ds.class_count()).into());
    }
    Ok((model, ds))
}

fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub checkpoint: PathBuf,
    pub samples: usize,
    pub method: AttackMethod,
    pub attack: AttackConfig,
    pub seed: u64,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
}

pub fn cmd_eval(args: &super::EvalArgs) -> Result<(), CliError> {
    let attack = args.attack.config()?;
    let (model, ds) = load_pair(&args.checkpoint, &args.data)?;
    let clean = model.predict(ds.features())?;
    let adv = attack_dataset(&model, &ds, args.attack.method, &attack, args.attack.seed)?;
    let robust = model.predict(&adv)?;
    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        checkpoint: args.checkpoint.clone(),
        samples: ds.len(),
        method: args.attack.method,
        attack,
        seed: args.attack.seed,
        standard_accuracy: accuracy(&clean, ds.labels()),
        robust_accuracy: accuracy(&robust, ds.labels()),
    };
    println!("samples: {}", report.samples);
    println!("standard accuracy: {:.4}", report.standard_accuracy);
    println!(
        "robust accuracy: {:.4} ({}, epsilon {}, alpha {}, steps {})",
        report.robust_accuracy,
        report.method.name(),
        attack.epsilon,
        attack.alpha,
        attack.steps
    );
    if let Some(path) = &args.report {
        write_report(path, &report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    /// The adversarial prediction is wrong.
    pub flipped: bool,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub schema_version: u32,
    pub checkpoint: PathBuf,
    pub method: AttackMethod,
    pub attack: AttackConfig,
    pub seed: u64,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    pub flip_rate: f64,
    /// Every row lies in its budget ball and in the clip range.
    pub feasible: bool,
    pub samples: Vec<SampleOutcome>,
}

pub fn cmd_attack(args: &super::AttackArgs) -> Result<(), CliError> {
    let attack = args.attack.config()?;
    let (model, ds) = load_pair(&args.checkpoint, &args.data)?;
    let adv = attack_dataset(&model, &ds, args.attack.method, &attack, args.attack.seed)?;
    let feasible = attacks::is_feasible(ds.features(), &adv, attack.epsilon, attack.clip_min, attack.clip_max);
    let clean_logits = model.forward(ds.features())?;
    let adv_logits = model.forward(&adv)?;
    let samples: Vec<SampleOutcome> = (0..ds.len())
        .map(|i| {
            let label = ds.labels()[i];
            let adversarial_prediction = argmax(adv_logits.row(i));
            SampleOutcome {
                index: i,
                label,
                clean_prediction: argmax(clean_logits.row(i)),
                adversarial_prediction,
                flipped: adversarial_prediction != label,
                linf: attacks::linf_distance(ds.features().row(i), adv.row(i)),
            }
        })
        .collect();
    let n = samples.len().max(1) as f64;
    let flips = samples.iter().filter(|s| s.flipped).count();
    let report = AttackReport {
        schema_version: REPORT_SCHEMA_VERSION,
        checkpoint: args.checkpoint.clone(),
        method: args.attack.method,
        attack,
        seed: args.attack.seed,
        standard_accuracy: samples.iter().filter(|s| s.clean_prediction == s.label).count() as f64 / n,
        robust_accuracy: (samples.len() - flips) as f64 / n,
        flip_rate: flips as f64 / n,
        feasible,
        samples,
    };
    let mut attacked = Dataset::new(adv, ds.labels().to_vec(), ds.class_count())?;
    if let Some(names) = ds.label_names() {
        attacked = attacked.with_label_names(names.to_vec())?;
    }
    cache::save(&attacked, &args.out)?;
    println!("samples: {}", report.samples.len());
    println!("flip rate: {:.4}", report.flip_rate);
    println!("robust accuracy: {:.4}", report.robust_accuracy);
    println!("feasible: {}", report.feasible);
    println!("attacked dataset: {}", args.out.display());
    if let Some(path) = &args.report {
        write_report(path, &report)?;
    }
    if !feasible {
        return Err(CliError::Check("attacked samples left the budget ball".into()));
    }
    Ok(())
}

pub fn cmd_gradcheck(args: &super::GradcheckArgs) -> Result<(), CliError> {
    if args.dims.len() < 2 || args.dims.contains(&0) {
        return Err(CliError::Config("--dims needs at least input and output widths, all positive".into()));
    }
    if args.batch == 0 {
        return Err(CliError::Config("--batch must be >= 1".into()));
    }
    if !(args.step > 0.0) || !(args.tolerance > 0.0) {
        return Err(CliError::Config("--step and --tolerance must be positive".into()));
    }
    let model = Model::new_seeded(&args.dims, args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5eed);
    let n = args.dims[0];
    let classes = *args.dims.last().unwrap();
    let x = Matrix::from_vec(args.batch, n, (0..args.batch * n).map(|_| rng.gen::<f64>()).collect())?;
    let y: Vec<usize> = (0..args.batch).map(|_| rng.gen_range(0..classes)).collect();
    let mut analytic = model.mean_param_grad(&x, &y)?;
    if let Some(layer) = args.inject_fault {
        if layer >= analytic.layer_count() {
            return Err(CliError::Config(format!("--inject-fault layer {layer} out of range")));
        }
        corrupt_layer(&mut analytic.weights[layer]);
        for b in &mut analytic.biases[layer] {
            *b = *b * 1.1 + 1e-3;
        }
    }
    let report: GradcheckReport = check_gradients(&model, &x, &y, &analytic, args.step, args.tolerance)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(path) = &args.report {
        write_report(path, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {:.3e} exceeds tolerance {:.1e}",
            report.max_relative_error, report.tolerance
        )))
    }
}

fn corrupt_layer(w: &mut Matrix) {
    let v: Vec<f64> = w.as_slice().iter().map(|g| g * 1.1 + 1e-3).collect();
    *w = Matrix::from_vec(w.rows(), w.cols(), v).expect("same shape");
}

/// Fixed column order of the curves CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    pub train_loss: f64,
    pub mean_batch_loss: f64,
    pub effective_pup: f64,
    pub batches: usize,
    pub rows_seen: usize,
    pub selected_clean: usize,
    pub selected_adversarial: usize,
    pub mean_selected_clean: f64,
    pub mean_selected_adversarial: f64,
    pub adversarial_share: f64,
    pub backward_passes: usize,
    pub mean_min_eps: Option<f64>,
    pub probe_flipped: Option<usize>,
    pub wall_time_ms: Option<f64>,
}

pub const CURVE_COLUMNS: [&str; 17] = [
    "epoch",
    "standard_accuracy",
    "robust_accuracy",
    "train_loss",
    "mean_batch_loss",
    "effective_pup",
    "batches",
    "rows_seen",
    "selected_clean",
    "selected_adversarial",
    "mean_selected_clean",
    "mean_selected_adversarial",
    "adversarial_share",
    "backward_passes",
    "mean_min_eps",
    "probe_flipped",
    "wall_time_ms",
];

impl From<&crate::training::EpochMetrics> for CurveRow {
    fn from(m: &crate::training::EpochMetrics) -> Self {
        Self {
            epoch: m.epoch,
            standard_accuracy: m.standard_accuracy,
            robust_accuracy: m.robust_accuracy,
            train_loss: m.train_loss,
            mean_batch_loss: m.mean_batch_loss,
            effective_pup: m.effective_pup,
            batches: m.batches,
            rows_seen: m.rows_seen,
            selected_clean: m.selected_clean,
            selected_adversarial: m.selected_adversarial,
            mean_selected_clean: m.mean_selected_clean(),
            mean_selected_adversarial: m.mean_selected_adversarial(),
            adversarial_share: m.adversarial_share(),
            backward_passes: m.backward_passes,
            mean_min_eps: m.mean_min_eps,
            probe_flipped: m.probe_flipped,
            wall_time_ms: m.wall_time_ms,
        }
    }
}

/// Reads a metrics stream, rejecting unknown schema versions.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "metrics stream",
            detail: format!("line {}: {e}", n + 1),
        })?;
        if rec.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "metrics stream",
                detail: format!("line {}: unsupported schema version {}", n + 1, rec.schema_version),
            }
            .into());
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn cmd_export_curves(args: &super::ExportArgs) -> Result<(), CliError> {
    require_file(&args.metrics).map_err(CliError::Config)?;
    let records = read_metrics(&args.metrics)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| CliError::Runtime(e.into()))?;
    if records.is_empty() {
        w.write_record(CURVE_COLUMNS).map_err(|e| CliError::Runtime(e.into()))?;
    }
    for r in &records {
        w.serialize(CurveRow::from(&r.metrics)).map_err(|e| CliError::Runtime(e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    println!("wrote {} rows to {}", records.len(), args.out.display());
    Ok(())
}
