//! ℓ∞-bounded gradient-sign attacks and the minimum-budget search.
//!
//! All attacks keep the source labels untouched and return inputs that
//! satisfy `|x' - x| <= epsilon` and `clip_min <= x' <= clip_max` exactly,
//! elementwise, when evaluated in `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub clip_min: f64,
    pub clip_max: f64,
}

impl Default for AttackConfig {
    /// 8/255 budget, 0.01 step size, 20 iterations on [0, 1] inputs.
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 0.01,
            steps: 20,
            random_start: false,
            clip_min: 0.0,
            clip_max: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.clip_min < self.clip_max) || !self.clip_min.is_finite() || !self.clip_max.is_finite() {
            return Err(Error::invalid(format!(
                "clip range [{}, {}] is empty",
                self.clip_min, self.clip_max
            )));
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// Strictly increasing list of candidate budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EpsilonGrid(Vec<f64>);

impl EpsilonGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("epsilon grid is empty"));
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("epsilon grid values must be finite and >= 0"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("epsilon grid must be strictly increasing"));
        }
        Ok(Self(values))
    }

    /// `start, start + step, ...` up to and including `stop` (within rounding).
    pub fn linspace(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || stop < start {
            return Err(Error::invalid("linspace needs step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Self::new((0..n).map(|i| start + step * i as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EpsilonGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EpsilonGrid> for Vec<f64> {
    fn from(g: EpsilonGrid) -> Self {
        g.0
    }
}

/// Bounds of the feasible interval `[x - eps, x + eps] ∩ [min, max]`,
/// nudged inward by an ulp where rounding would otherwise let
/// `|bound - x|` exceed `eps`.
#[inline]
fn feasible_interval(x: f64, eps: f64, min: f64, max: f64) -> (f64, f64) {
    let mut lo = x - eps;
    while x - lo > eps {
        lo = lo.next_up();
    }
    let mut hi = x + eps;
    while hi - x > eps {
        hi = hi.next_down();
    }
    (lo.max(min), hi.min(max))
}

#[inline]
fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_inputs(x: &Matrix, min: f64, max: f64) -> Result<()> {
    if let Some(v) = x.as_slice().iter().find(|&&v| !(min..=max).contains(&v)) {
        return Err(Error::invalid(format!("input value {v} lies outside the clip range [{min}, {max}]")));
    }
    Ok(())
}

/// Projects `candidate` elementwise onto the feasible set around `origin`.
fn project(candidate: &mut Matrix, origin: &Matrix, eps: f64, min: f64, max: f64) {
    for (c, &x) in candidate.as_mut_slice().iter_mut().zip(origin.as_slice()) {
        let (lo, hi) = feasible_interval(x, eps, min, max);
        *c = c.clamp(lo, hi);
    }
}

/// Single signed-gradient step of size `epsilon` on [0, 1] inputs.
pub fn fgsm(model: &Model, x: &Matrix, y: &[usize], epsilon: f64) -> Result<Matrix> {
    fgsm_in_range(model, x, y, epsilon, 0.0, 1.0)
}

pub fn fgsm_in_range(
    model: &Model,
    x: &Matrix,
    y: &[usize],
    epsilon: f64,
    clip_min: f64,
    clip_max: f64,
) -> Result<Matrix> {
    AttackConfig {
        epsilon,
        clip_min,
        clip_max,
        ..AttackConfig::default()
    }
    .validate()?;
    check_inputs(x, clip_min, clip_max)?;
    let (_, grad) = model.loss_and_input_grad(x, y)?;
    let mut adv = x.clone();
    for (a, &g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *a += epsilon * sign(g);
    }
    project(&mut adv, x, epsilon, clip_min, clip_max);
    Ok(adv)
}

/// Iterative PGD; the gradient is taken at the current iterate.
pub fn pgd<R: Rng + ?Sized>(model: &Model, x: &Matrix, y: &[usize], cfg: &AttackConfig, rng: &mut R) -> Result<Matrix> {
    pgd_inspect(model, x, y, cfg, rng, |_, _| {})
}

/// PGD that hands every iterate (0 = starting point) to `inspect`.
pub fn pgd_inspect<R, F>(
    model: &Model,
    x: &Matrix,
    y: &[usize],
    cfg: &AttackConfig,
    rng: &mut R,
    mut inspect: F,
) -> Result<Matrix>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &Matrix),
{
    cfg.validate()?;
    check_inputs(x, cfg.clip_min, cfg.clip_max)?;
    model.check_labels(x.rows(), y)?;
    let mut adv = x.clone();
    if cfg.random_start && cfg.epsilon > 0.0 {
        for v in adv.as_mut_slice() {
            *v += rng.gen_range(-cfg.epsilon..=cfg.epsilon);
        }
        project(&mut adv, x, cfg.epsilon, cfg.clip_min, cfg.clip_max);
    }
    inspect(0, &adv);
    for step in 1..=cfg.steps {
        let (_, grad) = model.loss_and_input_grad(&adv, y)?;
        for (a, &g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *a += cfg.alpha * sign(g);
        }
        project(&mut adv, x, cfg.epsilon, cfg.clip_min, cfg.clip_max);
        inspect(step, &adv);
    }
    Ok(adv)
}

/// Elementwise feasibility check of `adv` against `origin`.
pub fn is_feasible(origin: &Matrix, adv: &Matrix, epsilon: f64, clip_min: f64, clip_max: f64) -> bool {
    origin.shape() == adv.shape()
        && origin
            .as_slice()
            .iter()
            .zip(adv.as_slice())
            .all(|(&x, &a)| (a - x).abs() <= epsilon && a >= clip_min && a <= clip_max)
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smallest grid budget at which deterministic PGD changes the model's
/// prediction on `x`. An already misclassified sample reports the first
/// grid value.
pub fn min_adversarial_eps(
    model: &Model,
    x: &[f64],
    y: usize,
    grid: &EpsilonGrid,
    template: &AttackConfig,
) -> Result<Option<f64>> {
    let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(min_adversarial_eps_batch(model, &row, &[y], grid, template)?[0])
}

/// Row-wise [`min_adversarial_eps`]; rows are attacked independently so the
/// result equals the per-row scan.
pub fn min_adversarial_eps_batch(
    model: &Model,
    x: &Matrix,
    y: &[usize],
    grid: &EpsilonGrid,
    template: &AttackConfig,
) -> Result<Vec<Option<f64>>> {
    let values = grid.values();
    if values.is_empty() {
        return Err(Error::invalid("epsilon grid is empty"));
    }
    model.check_labels(x.rows(), y)?;
    let clean_pred = model.predict(x)?;
    let mut result = vec![None; x.rows()];
    let mut pending: Vec<usize> = Vec::new();
    for (i, (&p, &label)) in clean_pred.iter().zip(y).enumerate() {
        if p != label {
            result[i] = Some(values[0]);
        } else {
            pending.push(i);
        }
    }
    // PGD never touches the generator without a random start
    let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
    for &eps in values {
        if pending.is_empty() {
            break;
        }
        if eps == 0.0 {
            continue;
        }
        let cfg = AttackConfig {
            epsilon: eps,
            random_start: false,
            ..*template
        };
        let rows = x.select_rows(&pending)?;
        let labels: Vec<usize> = pending.iter().map(|&i| y[i]).collect();
        let adv = pgd(model, &rows, &labels, &cfg, &mut no_rng)?;
        let adv_pred = model.predict(&adv)?;
        let mut still = Vec::with_capacity(pending.len());
        for (k, &i) in pending.iter().enumerate() {
            if adv_pred[k] != clean_pred[i] {
                result[i] = Some(eps);
            } else {
                still.push(i);
            }
        }
        pending = still;
    }
    Ok(result)
}

/// Whether each row's prediction on `adv` differs from the true label.
pub fn misclassified(model: &Model, adv: &Matrix, y: &[usize]) -> Result<Vec<bool>> {
    Ok(model.predict(adv)?.iter().zip(y).map(|(p, l)| p != l).collect())
}
