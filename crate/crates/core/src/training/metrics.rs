use serde::{Deserialize, Serialize};

/// Per-epoch record. Selection counts are sums over the epoch's batches;
/// divide by `batches` for per-batch averages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    /// Mean clean cross-entropy over the training set after the epoch.
    pub train_loss: f64,
    /// Mean error signal over all composed rows, measured before each update.
    pub mean_batch_loss: f64,
    pub effective_pup: f64,
    pub batches: usize,
    pub rows_seen: usize,
    pub selected_clean: usize,
    pub selected_adversarial: usize,
    /// Rows that took part in a backward pass.
    pub backward_passes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_min_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_flipped: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl EpochMetrics {
    pub fn selected(&self) -> usize {
        self.selected_clean + self.selected_adversarial
    }

    /// Fraction of selected rows that were adversarial.
    pub fn adversarial_share(&self) -> f64 {
        let s = self.selected();
        if s == 0 {
            0.0
        } else {
            self.selected_adversarial as f64 / s as f64
        }
    }

    pub fn mean_selected_clean(&self) -> f64 {
        self.selected_clean as f64 / self.batches.max(1) as f64
    }

    pub fn mean_selected_adversarial(&self) -> f64 {
        self.selected_adversarial as f64 / self.batches.max(1) as f64
    }
}
