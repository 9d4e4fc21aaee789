//! Loss-ranked sample selection within a mixed clean/adversarial batch.
//!
//! Each batch row gets an error signal (its softmax cross-entropy). The
//! `P_up` fraction of rows with the largest error is kept and only those
//! rows are backpropagated. `P_up` is either fixed or shrinks every epoch
//! by the factor `(1 - accuracy)` observed in the previous epoch.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{loss, Matrix};

/// How the per-sample error signal is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSignalKind {
    /// `logsumexp(z) - z[y]`.
    #[default]
    CrossEntropy,
    /// `sum_c (logsumexp(z) - onehot(y)_c) = C * logsumexp(z) - 1`.
    /// Label independent; kept only to audit that reading of the formula.
    LiteralSum,
}

pub fn error_signal(logits: &Matrix, y: &[usize]) -> Result<Vec<f64>> {
    error_signal_with(logits, y, ErrorSignalKind::CrossEntropy)
}

pub fn error_signal_with(logits: &Matrix, y: &[usize], kind: ErrorSignalKind) -> Result<Vec<f64>> {
    if y.len() != logits.rows() {
        return Err(Error::dim("label count", logits.rows(), y.len()));
    }
    let classes = logits.cols();
    if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::LabelOutOfRange { row, label, classes });
    }
    Ok(logits
        .iter_rows()
        .zip(y)
        .map(|(z, &label)| match kind {
            ErrorSignalKind::CrossEntropy => loss::cross_entropy(z, label),
            ErrorSignalKind::LiteralSum => classes as f64 * loss::logsumexp(z) - 1.0,
        })
        .collect())
}

/// Number of rows kept out of `batch` at fraction `pup`: `max(1, ceil(pup * batch))`.
/// The product is rounded down by 1e-9 first so that e.g. `0.3 * 10` yields 3, not 4.
pub fn selection_count(batch: usize, pup: f64) -> usize {
    let k = (pup * batch as f64 - 1e-9).ceil() as usize;
    k.clamp(1, batch.max(1))
}

fn check_pup(pup: f64) -> Result<()> {
    if !(pup > 0.0 && pup <= 1.0) {
        return Err(Error::invalid(format!("P_up must lie in (0, 1], got {pup}")));
    }
    Ok(())
}

/// Selected batch rows, ascending, together with the losses they were ranked by.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub losses: Vec<f64>,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.losses.len()
    }

    /// 0/1 weight per batch row.
    pub fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.batch_size()];
        for &i in &self.selected {
            m[i] = 1.0;
        }
        m
    }

    pub fn unselected(&self) -> Vec<usize> {
        let mask = self.mask();
        (0..mask.len()).filter(|&i| mask[i] == 0.0).collect()
    }
}

/// Larger loss first, then lower index.
fn rank_order(losses: &[f64], a: usize, b: usize) -> Ordering {
    losses[b].total_cmp(&losses[a]).then(a.cmp(&b))
}

/// Keeps the `selection_count(b, pup)` rows with the greatest loss; equal
/// losses favour the lower index. Indices are returned in ascending order.
pub fn select_top(losses: &[f64], pup: f64) -> Result<SelectionResult> {
    if losses.is_empty() {
        return Err(Error::invalid("cannot select from an empty batch"));
    }
    check_pup(pup)?;
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("selection losses"));
    }
    let k = selection_count(losses.len(), pup);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(losses, a, b));
        order.truncate(k);
    }
    order.sort_unstable();
    Ok(SelectionResult {
        selected: order,
        losses: losses.to_vec(),
    })
}

/// Uniform sample of `selection_count(b, pup)` rows without replacement.
pub fn select_random<R: Rng + ?Sized>(batch: usize, pup: f64, rng: &mut R) -> Result<SelectionResult> {
    if batch == 0 {
        return Err(Error::invalid("cannot select from an empty batch"));
    }
    check_pup(pup)?;
    let k = selection_count(batch, pup);
    let mut selected = if k == batch {
        (0..batch).collect()
    } else {
        rand::seq::index::sample(rng, batch, k).into_vec()
    };
    selected.sort_unstable();
    Ok(SelectionResult {
        selected,
        losses: vec![0.0; batch],
    })
}

pub fn select_all(losses: &[f64]) -> SelectionResult {
    SelectionResult {
        selected: (0..losses.len()).collect(),
        losses: losses.to_vec(),
    }
}

/// `max(floor, (1 - acc_prev) * p_prev)`, never above `p_prev`.
pub fn update_pup(p_prev: f64, acc_prev: f64, floor: f64) -> f64 {
    let acc = acc_prev.clamp(0.0, 1.0);
    let next = ((1.0 - acc) * p_prev).max(floor);
    next.min(p_prev)
}

/// Floor that keeps at least one row selected at the given batch size.
pub fn effective_floor(floor: f64, batch: usize) -> f64 {
    floor.max(1.0 / batch.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    All,
    TopLoss,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PupSchedule {
    Fixed { pup: f64 },
    Adaptive { initial: f64, floor: f64 },
}

impl PupSchedule {
    pub fn initial(&self) -> f64 {
        match *self {
            PupSchedule::Fixed { pup } => pup,
            PupSchedule::Adaptive { initial, .. } => initial,
        }
    }

    /// P_up for the next epoch given the current one and the last accuracy.
    pub fn next(&self, current: f64, last_accuracy: Option<f64>, batch: usize) -> f64 {
        match *self {
            PupSchedule::Fixed { pup } => pup,
            PupSchedule::Adaptive { floor, .. } => match last_accuracy {
                Some(acc) => update_pup(current, acc, effective_floor(floor, batch)),
                None => current,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PupSchedule::Fixed { pup } => check_pup(pup),
            PupSchedule::Adaptive { initial, floor } => {
                check_pup(initial)?;
                if !(0.0..1.0).contains(&floor) {
                    return Err(Error::invalid(format!("P_up floor must lie in [0, 1), got {floor}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPolicy {
    pub kind: SelectionKind,
    pub schedule: PupSchedule,
    /// Seed of the generator used by [`SelectionKind::Random`].
    pub seed: u64,
}

impl SelectionPolicy {
    pub fn all() -> Self {
        Self {
            kind: SelectionKind::All,
            schedule: PupSchedule::Fixed { pup: 1.0 },
            seed: 0,
        }
    }

    pub fn top_loss(pup: f64) -> Self {
        Self {
            kind: SelectionKind::TopLoss,
            schedule: PupSchedule::Fixed { pup },
            seed: 0,
        }
    }

    pub fn adaptive(floor: f64) -> Self {
        Self {
            kind: SelectionKind::TopLoss,
            schedule: PupSchedule::Adaptive { initial: 1.0, floor },
            seed: 0,
        }
    }

    pub fn random(pup: f64, seed: u64) -> Self {
        Self {
            kind: SelectionKind::Random,
            schedule: PupSchedule::Fixed { pup },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()
    }

    /// Applies the policy to one batch at fraction `pup`.
    pub fn select<R: Rng + ?Sized>(&self, losses: &[f64], pup: f64, rng: &mut R) -> Result<SelectionResult> {
        match self.kind {
            SelectionKind::All => {
                if losses.is_empty() {
                    return Err(Error::invalid("cannot select from an empty batch"));
                }
                Ok(select_all(losses))
            }
            SelectionKind::TopLoss => select_top(losses, pup),
            SelectionKind::Random => {
                let mut r = select_random(losses.len(), pup, rng)?;
                r.losses = losses.to_vec();
                Ok(r)
            }
        }
    }
}
