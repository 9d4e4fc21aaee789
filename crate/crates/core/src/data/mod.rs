//! Labeled datasets with features normalized into [0, 1].

pub mod cache;
mod csv;
mod idx;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use self::csv::{load_csv, parse_csv};
pub use idx::{load_idx, parse_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synth::{synth_gaussians, tradeoff_means};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    label_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::dim("dataset labels", features.rows(), labels.len()));
        }
        if class_count == 0 {
            return Err(Error::invalid("class_count must be positive"));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: class_count,
            });
        }
        if let Some(v) = features.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("feature value {v} lies outside [0, 1]")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            label_names: None,
        })
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.class_count {
            return Err(Error::dim("label names", self.class_count, names.len()));
        }
        self.label_names = Some(names);
        Ok(self)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Original label strings indexed by dense id, when loaded from text.
    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            label_names: self.label_names.clone(),
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Number of classes that actually occur.
    pub fn classes_present(&self) -> usize {
        self.class_histogram().iter().filter(|&&c| c > 0).count()
    }
}

/// Stratified, seed-deterministic split into (train, validation, test).
///
/// Within every class the first `round(f_train * n)` shuffled samples go to
/// train, the next `round(f_val * n)` to validation, and the rest to test.
/// Each split keeps dataset order.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("split fractions must lie in [0, 1]"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, expected 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..dataset.class_count {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        parts[0].extend_from_slice(&members[..n_train]);
        parts[1].extend_from_slice(&members[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&members[n_train + n_val..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((dataset.subset(&parts[0])?, dataset.subset(&parts[1])?, dataset.subset(&parts[2])?))
}
