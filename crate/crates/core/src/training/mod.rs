//! Mini-batch adversarial training with loss-ranked selection.
//!
//! Every mini-batch draws `b'` clean samples, generates their PGD
//! counterparts against the current parameters, ranks the mixed batch by
//! error signal and backpropagates only the selected rows.

mod config;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{AccuracySource, Mode, ProbeConfig, TrainConfig};
pub use metrics::EpochMetrics;

use crate::attacks::{self, AttackConfig, EpsilonGrid};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Model};
use crate::selection::{self, SelectionKind, SelectionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Clean,
    Adversarial,
}

/// A composed training batch. In the mixed modes rows `0..b'` are the
/// adversarial counterparts of rows `b'..2b'`.
#[derive(Debug, Clone)]
pub struct BatchComposition {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub origins: Vec<Origin>,
    /// Dataset row each batch row was derived from.
    pub sources: Vec<usize>,
}

impl BatchComposition {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks every adversarial row against its clean source row.
    pub fn audit(&self, dataset: &Dataset, attack: &AttackConfig) -> bool {
        self.origins.iter().enumerate().all(|(r, origin)| {
            let row = self.inputs.row(r);
            let src = dataset.features().row(self.sources[r]);
            match origin {
                Origin::Clean => row == src,
                Origin::Adversarial => row
                    .iter()
                    .zip(src)
                    .all(|(&a, &x)| (a - x).abs() <= attack.epsilon && a >= attack.clip_min && a <= attack.clip_max),
            }
        })
    }
}

/// Builds the batch for `indices` according to `mode`.
pub fn compose_batch<R: Rng + ?Sized>(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
    attack: &AttackConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<BatchComposition> {
    if indices.is_empty() {
        return Err(Error::invalid("batch needs at least one sample"));
    }
    let clean = dataset.features().select_rows(indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels()[i]).collect();
    let n = indices.len();
    let batch = match mode {
        Mode::Standard => BatchComposition {
            inputs: clean,
            labels,
            origins: vec![Origin::Clean; n],
            sources: indices.to_vec(),
        },
        Mode::Robust => BatchComposition {
            inputs: attacks::pgd(model, &clean, &labels, attack, rng)?,
            labels,
            origins: vec![Origin::Adversarial; n],
            sources: indices.to_vec(),
        },
        Mode::DsRobust | Mode::RandomRobust => {
            let adv = attacks::pgd(model, &clean, &labels, attack, rng)?;
            let mut origins = vec![Origin::Adversarial; n];
            origins.extend(std::iter::repeat_n(Origin::Clean, n));
            BatchComposition {
                inputs: adv.vstack(&clean)?,
                labels: labels.iter().chain(&labels).copied().collect(),
                origins,
                sources: indices.iter().chain(indices).copied().collect(),
            }
        }
    };
    Ok(batch)
}

/// (clean, adversarial) counts among the selected rows.
pub fn selection_composition(selection: &SelectionResult, batch: &BatchComposition) -> (usize, usize) {
    selection
        .selected
        .iter()
        .fold((0, 0), |(c, a), &i| match batch.origins[i] {
            Origin::Clean => (c + 1, a),
            Origin::Adversarial => (c, a + 1),
        })
}

const EVAL_CHUNK: usize = 512;

/// Fraction of samples whose argmax prediction equals the label, on clean
/// inputs or on PGD-attacked inputs when `attack` is given.
pub fn evaluate(model: &Model, dataset: &Dataset, attack: Option<&AttackConfig>) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = dataset.features().select_rows(chunk)?;
        let y: Vec<usize> = chunk.iter().map(|&i| dataset.labels()[i]).collect();
        let x = match attack {
            Some(cfg) => attacks::pgd(model, &x, &y, cfg, &mut rng)?,
            None => x,
        };
        let pred = model.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub per_sample: Vec<Option<f64>>,
    /// Mean over samples with a defined minimum budget.
    pub mean: Option<f64>,
    pub flipped: usize,
}

/// Minimum adversarial budget of every probe sample.
pub fn min_eps_probe(model: &Model, probe: &Dataset, grid: &EpsilonGrid, template: &AttackConfig) -> Result<ProbeResult> {
    let per_sample = attacks::min_adversarial_eps_batch(model, probe.features(), probe.labels(), grid, template)?;
    let defined: Vec<f64> = per_sample.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(ProbeResult {
        flipped: defined.len(),
        per_sample,
        mean,
    })
}

/// Picks the fixed probe subset for a run.
pub fn probe_indices(len: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, Stream::Probe));
    let mut idx = rand::seq::index::sample(&mut rng, len, size.min(len)).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Clone, Copy)]
enum Stream {
    Shuffle = 1,
    Attack = 2,
    Select = 3,
    Probe = 4,
}

fn derive_seed(seed: u64, epoch: usize, stream: Stream) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (stream as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mutable state carried across epochs.
#[derive(Debug, Clone)]
pub struct EpochState {
    /// 1-based index of the next epoch.
    pub epoch: usize,
    /// P_up used by the next epoch.
    pub pup: f64,
    pub last_accuracy: Option<f64>,
    pub probe: Option<Dataset>,
}

impl EpochState {
    pub fn new(cfg: &TrainConfig, eval: &Dataset) -> Result<Self> {
        let probe = match &cfg.probe {
            Some(p) if p.size > 0 && !eval.is_empty() => Some(eval.subset(&probe_indices(eval.len(), p.size, cfg.seed))?),
            _ => None,
        };
        Ok(Self {
            epoch: 1,
            pup: cfg.policy.schedule.initial(),
            last_accuracy: None,
            probe,
        })
    }
}

/// One pass over the shuffled training set.
pub fn train_epoch(
    model: Model,
    train: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
    state: &mut EpochState,
) -> Result<(Model, EpochMetrics)> {
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let started = Instant::now();
    let epoch = state.epoch;
    let pup = match cfg.policy.kind {
        SelectionKind::All => 1.0,
        _ => state.pup,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, Stream::Shuffle)));
    let mut attack_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, Stream::Attack));
    let mut select_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.policy.seed, epoch, Stream::Select));

    let mut model = model;
    let mut m = EpochMetrics {
        epoch,
        effective_pup: pup,
        ..EpochMetrics::default()
    };
    let mut batch_loss_sum = 0.0;
    for chunk in order.chunks(cfg.batch_clean_size) {
        let batch = compose_batch(&model, train, chunk, &cfg.attack, cfg.mode, &mut attack_rng)?;
        let logits = model.forward(&batch.inputs)?;
        let losses = selection::error_signal_with(&logits, &batch.labels, cfg.error_signal)?;
        let selection = cfg.policy.select(&losses, pup, &mut select_rng)?;
        let (clean, adv) = selection_composition(&selection, &batch);
        let grads = model.param_grad_selected(&batch.inputs, &batch.labels, &selection.selected)?;
        model.apply_sgd(&grads, cfg.lr)?;

        m.batches += 1;
        m.rows_seen += batch.len();
        m.selected_clean += clean;
        m.selected_adversarial += adv;
        m.backward_passes += selection.len();
        batch_loss_sum += losses.iter().sum::<f64>();
    }
    m.mean_batch_loss = batch_loss_sum / m.rows_seen as f64;
    m.train_loss = model.mean_loss(train.features(), train.labels())?;
    m.standard_accuracy = evaluate(&model, eval, None)?;
    m.robust_accuracy = evaluate(&model, eval, Some(&cfg.eval_attack))?;
    if let (Some(probe), Some(pc)) = (&state.probe, &cfg.probe) {
        let r = min_eps_probe(&model, probe, &pc.grid, &cfg.eval_attack)?;
        m.mean_min_eps = r.mean;
        m.probe_flipped = Some(r.flipped);
    }
    if cfg.record_wall_time {
        m.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }

    let accuracy = match cfg.pup_accuracy {
        AccuracySource::ValidationStandard => m.standard_accuracy,
        AccuracySource::ValidationRobust => m.robust_accuracy,
        AccuracySource::Train => evaluate(&model, train, None)?,
    };
    state.last_accuracy = Some(accuracy);
    state.pup = cfg.policy.schedule.next(state.pup, Some(accuracy), cfg.mode.rows_per_batch(cfg.batch_clean_size));
    state.epoch += 1;
    Ok((model, m))
}

/// Multi-epoch driver with optional early stopping on robust accuracy.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a Dataset,
    eval: &'a Dataset,
    model: Model,
    state: EpochState,
    history: Vec<EpochMetrics>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, model: Model, train: &'a Dataset, eval: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if model.input_dim() != train.dims() {
            return Err(Error::dim("model input vs dataset features", model.input_dim(), train.dims()));
        }
        if eval.dims() != train.dims() && !eval.is_empty() {
            return Err(Error::dim("evaluation features", train.dims(), eval.dims()));
        }
        if train.classes_present() < 2 {
            return Err(Error::invalid("training data must contain at least 2 classes"));
        }
        if train.class_count() > model.class_count() {
            return Err(Error::dim("model classes", train.class_count(), model.class_count()));
        }
        let state = EpochState::new(&cfg, eval)?;
        Ok(Self {
            cfg,
            train,
            eval,
            model,
            state,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn state(&self) -> &EpochState {
        &self.state
    }

    /// Runs a single epoch.
    pub fn step(&mut self) -> Result<&EpochMetrics> {
        let model = self.model.clone();
        let (model, metrics) = train_epoch(model, self.train, self.eval, &self.cfg, &mut self.state)?;
        self.model = model;
        self.history.push(metrics);
        Ok(self.history.last().unwrap())
    }

    /// Runs up to `epochs` epochs, calling `on_epoch` after each.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&EpochMetrics, &Model) -> Result<()>,
    {
        self.run_while(|m, model| on_epoch(m, model).map(|_| true))
    }

    /// Like [`Trainer::run`], but also stops once `on_epoch` returns `false`.
    pub fn run_while<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&EpochMetrics, &Model) -> Result<bool>,
    {
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0usize;
        while self.state.epoch <= self.cfg.epochs {
            self.step()?;
            let m = self.history.last().unwrap();
            if !on_epoch(m, &self.model)? {
                break;
            }
            if let Some(patience) = self.cfg.early_stop {
                if m.robust_accuracy > best {
                    best = m.robust_accuracy;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains a fresh run to completion and returns the final model and metrics.
pub fn train(cfg: TrainConfig, model: Model, train: &Dataset, eval: &Dataset) -> Result<(Model, Vec<EpochMetrics>)> {
    let mut t = Trainer::new(cfg, model, train, eval)?;
    t.run(|_, _| Ok(()))?;
    let history = t.history.clone();
    Ok((t.into_model(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;
    use crate::selection::SelectionPolicy;

    fn data() -> Dataset {
        synth_gaussians(1, 20, 3, &[vec![0.3, 0.3, 0.3], vec![0.7, 0.7, 0.7]], 0.1).unwrap()
    }

    #[test]
    fn standard_batch_is_clean_only() {
        let d = data();
        let m = Model::new_seeded(&[3, 4, 2], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = compose_batch(&m, &d, &[0, 5, 30], &AttackConfig::default(), Mode::Standard, &mut rng).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.origins.iter().all(|o| *o == Origin::Clean));
        assert!(b.audit(&d, &AttackConfig::default()));
    }

    #[test]
    fn zero_budget_mixed_batch_duplicates_clean_rows() {
        let d = data();
        let m = Model::new_seeded(&[3, 4, 2], 0).unwrap();
        let cfg = AttackConfig { epsilon: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = compose_batch(&m, &d, &[1, 2, 3], &cfg, Mode::DsRobust, &mut rng).unwrap();
        assert_eq!(b.len(), 6);
        for r in 0..3 {
            assert_eq!(b.inputs.row(r), b.inputs.row(r + 3));
        }
    }

    #[test]
    fn composition_counts_follow_layout() {
        let d = data();
        let m = Model::new_seeded(&[3, 4, 2], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = compose_batch(&m, &d, &[0, 1, 2, 3], &AttackConfig::default(), Mode::DsRobust, &mut rng).unwrap();
        let sel = SelectionResult { selected: vec![0, 1, 4], losses: vec![0.0; 8] };
        assert_eq!(selection_composition(&sel, &b), (1, 2));
        let all = selection::select_all(&[0.0; 8]);
        assert_eq!(selection_composition(&all, &b), (4, 4));
    }

    #[test]
    fn constant_logits_accuracy_is_class_zero_frequency() {
        let d = data();
        let mut m = Model::new_seeded(&[3, 2], 0).unwrap();
        m.layers[0].weights.as_mut_slice().fill(0.0);
        let acc = evaluate(&m, &d, None).unwrap();
        assert_eq!(acc, 0.5);
        let robust = evaluate(&m, &d, Some(&AttackConfig { epsilon: 0.0, ..Default::default() })).unwrap();
        assert_eq!(robust, acc);
    }

    #[test]
    fn probe_with_zero_grid_counts_misclassified() {
        let d = data();
        let m = Model::new_seeded(&[3, 4, 2], 2).unwrap();
        let grid = EpsilonGrid::new(vec![0.0]).unwrap();
        let r = min_eps_probe(&m, &d, &grid, &AttackConfig::default()).unwrap();
        let wrong = 40 - (evaluate(&m, &d, None).unwrap() * 40.0).round() as usize;
        assert_eq!(r.flipped, wrong);
    }

    #[test]
    fn rejects_bad_config() {
        let d = data();
        let m = Model::new_seeded(&[3, 4, 2], 2).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(Trainer::new(cfg, m.clone(), &d, &d).is_err());
        let cfg = TrainConfig { batch_clean_size: 0, ..TrainConfig::default() };
        assert!(Trainer::new(cfg, m, &d, &d).is_err());
    }

    #[test]
    fn adaptive_pup_shrinks_between_epochs() {
        let d = data();
        let m = Model::new_seeded(&[3, 8, 2], 2).unwrap();
        let cfg = TrainConfig {
            mode: Mode::DsRobust,
            epochs: 3,
            batch_clean_size: 8,
            lr: 0.2,
            policy: SelectionPolicy::adaptive(0.0),
            attack: AttackConfig { epsilon: 0.05, alpha: 0.02, steps: 3, ..Default::default() },
            ..TrainConfig::default()
        };
        let (_, hist) = train(cfg, m, &d, &d).unwrap();
        assert_eq!(hist[0].effective_pup, 1.0);
        let expect = (1.0 - hist[0].standard_accuracy).max(1.0 / 16.0);
        assert!((hist[1].effective_pup - expect).abs() < 1e-15);
        assert!(hist.windows(2).all(|w| w[1].effective_pup <= w[0].effective_pup));
    }

    #[test]
    fn early_stop_halts_run() {
        let d = data();
        let m = Model::new_seeded(&[3, 2], 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            early_stop: Some(1),
            lr: 1e-9,
            ..TrainConfig::default()
        };
        let (_, hist) = train(cfg, m, &d, &d).unwrap();
        assert!(hist.len() < 50);
    }
}
