//! Softmax cross-entropy on raw logits.
//!
//! Probabilities are only formed inside these helpers, always after
//! subtracting the row maximum.

pub fn logsumexp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}

/// `logsumexp(z) - z[label]`, clamped at zero against rounding.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    (logsumexp(logits) - logits[label]).max(0.0)
}

/// Writes `softmax(z) - onehot(label)` into `out` and returns the loss.
pub fn cross_entropy_grad(logits: &[f64], label: usize, out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out[label] -= 1.0;
    (max + sum.ln() - logits[label]).max(0.0)
}
