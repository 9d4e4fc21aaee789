//! Central finite-difference oracles for the analytic gradients.
//!
//! Coordinates whose perturbation flips any ReLU on/off state are treated
//! as kink coordinates and excluded from the comparison; the loss is not
//! differentiable there and the difference quotient is meaningless.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Relative error denominators are floored at this magnitude so that
/// coordinates with a vanishing gradient are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Location of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCoord {
    pub layer: usize,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCoordinate {
    pub coord: ParamCoord,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: usize,
    pub checked: usize,
    pub excluded_kinks: usize,
    pub max_relative_error: f64,
    pub worst: Option<WorstCoordinate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCheck {
    pub checked: usize,
    pub excluded_kinks: usize,
    pub max_relative_error: f64,
    /// (row, column) of the worst input coordinate.
    pub worst: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
    pub input: InputCheck,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn for_each_param(model: &Model, mut f: impl FnMut(ParamCoord)) {
    for (l, layer) in model.layers().iter().enumerate() {
        let (rows, cols) = layer.weights().shape();
        for row in 0..rows {
            for col in 0..cols {
                f(ParamCoord { layer: l, kind: ParamKind::Weight, row, col });
            }
        }
        for row in 0..layer.biases().len() {
            f(ParamCoord { layer: l, kind: ParamKind::Bias, row, col: 0 });
        }
    }
}

fn param_slot(model: &mut Model, c: ParamCoord) -> &mut f64 {
    let layer = &mut model.layers[c.layer];
    match c.kind {
        ParamKind::Weight => {
            let cols = layer.weights.cols();
            &mut layer.weights.as_mut_slice()[c.row * cols + c.col]
        }
        ParamKind::Bias => &mut layer.biases[c.row],
    }
}

fn grad_slot(grads: &mut Gradients, c: ParamCoord) -> &mut f64 {
    match c.kind {
        ParamKind::Weight => {
            let cols = grads.weights[c.layer].cols();
            &mut grads.weights[c.layer].as_mut_slice()[c.row * cols + c.col]
        }
        ParamKind::Bias => &mut grads.biases[c.layer][c.row],
    }
}

pub fn grad_value(grads: &Gradients, c: ParamCoord) -> f64 {
    match c.kind {
        ParamKind::Weight => grads.weights[c.layer].get(c.row, c.col),
        ParamKind::Bias => grads.biases[c.layer][c.row],
    }
}

struct ParamProbe {
    coord: ParamCoord,
    numeric: f64,
    kink: bool,
}

fn probe_params(model: &Model, x: &Matrix, y: &[usize], step: f64) -> Result<Vec<ParamProbe>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    model.check_labels(x.rows(), y)?;
    let base_pattern = model.activation_pattern(x)?;
    let mut probes = Vec::with_capacity(model.parameter_count());
    let mut work = model.clone();
    let mut failure = None;
    for_each_param(model, |coord| {
        if failure.is_some() {
            return;
        }
        let original = *param_slot(&mut work, coord);
        let mut eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
            *param_slot(&mut work, coord) = original + delta;
            let loss = work.mean_loss(x, y)?;
            let pattern = work.activation_pattern(x)?;
            Ok((loss, pattern))
        };
        match (eval(step), eval(-step)) {
            (Ok((lp, pp)), Ok((lm, pm))) => {
                probes.push(ParamProbe {
                    coord,
                    numeric: (lp - lm) / (2.0 * step),
                    kink: pp != base_pattern || pm != base_pattern,
                });
            }
            (Err(e), _) | (_, Err(e)) => failure = Some(e),
        }
        *param_slot(&mut work, coord) = original;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(probes),
    }
}

/// Central-difference estimate of the mean-loss gradient over the batch.
pub fn finite_diff_param_grad(model: &Model, x: &Matrix, y: &[usize], step: f64) -> Result<Gradients> {
    let probes = probe_params(model, x, y, step)?;
    let mut grads = Gradients::zeros_like(model);
    for p in probes {
        *grad_slot(&mut grads, p.coord) = p.numeric;
    }
    Ok(grads)
}

/// Central-difference estimate of each sample's loss gradient with respect
/// to its own input row, plus a per-coordinate kink flag.
pub fn finite_diff_input_grad(model: &Model, x: &Matrix, y: &[usize], step: f64) -> Result<(Matrix, Vec<bool>)> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    model.check_labels(x.rows(), y)?;
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut kinks = vec![false; x.rows() * x.cols()];
    for s in 0..x.rows() {
        let mut row = x.select_rows(&[s])?;
        let label = [y[s]];
        let base = model.activation_pattern(&row)?;
        for i in 0..x.cols() {
            let original = row.get(0, i);
            row.set(0, i, original + step);
            let lp = model.mean_loss(&row, &label)?;
            let pp = model.activation_pattern(&row)?;
            row.set(0, i, original - step);
            let lm = model.mean_loss(&row, &label)?;
            let pm = model.activation_pattern(&row)?;
            row.set(0, i, original);
            grad.set(s, i, (lp - lm) / (2.0 * step));
            kinks[s * x.cols() + i] = pp != base || pm != base;
        }
    }
    Ok((grad, kinks))
}

/// Compares `analytic` parameter gradients and the model's analytic input
/// gradients against central differences.
pub fn check_gradients(
    model: &Model,
    x: &Matrix,
    y: &[usize],
    analytic: &Gradients,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let probes = probe_params(model, x, y, step)?;
    let mut layers: Vec<LayerCheck> = (0..model.layers().len())
        .map(|layer| LayerCheck {
            layer,
            checked: 0,
            excluded_kinks: 0,
            max_relative_error: 0.0,
            worst: None,
        })
        .collect();
    for p in probes {
        let lc = &mut layers[p.coord.layer];
        if p.kink {
            lc.excluded_kinks += 1;
            continue;
        }
        lc.checked += 1;
        let a = grad_value(analytic, p.coord);
        let err = relative_error(a, p.numeric);
        if lc.worst.is_none() || err > lc.max_relative_error {
            lc.max_relative_error = err;
            lc.worst = Some(WorstCoordinate {
                coord: p.coord,
                analytic: a,
                numeric: p.numeric,
                relative_error: err,
            });
        }
    }

    let (_, analytic_x) = model.loss_and_input_grad(x, y)?;
    let (numeric_x, kinks) = finite_diff_input_grad(model, x, y, step)?;
    let mut input = InputCheck {
        checked: 0,
        excluded_kinks: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for s in 0..x.rows() {
        for i in 0..x.cols() {
            if kinks[s * x.cols() + i] {
                input.excluded_kinks += 1;
                continue;
            }
            input.checked += 1;
            let err = relative_error(analytic_x.get(s, i), numeric_x.get(s, i));
            if input.worst.is_none() || err > input.max_relative_error {
                input.max_relative_error = err;
                input.worst = Some((s, i));
            }
        }
    }

    let max_relative_error = layers
        .iter()
        .map(|l| l.max_relative_error)
        .fold(input.max_relative_error, f64::max);
    Ok(GradcheckReport {
        step,
        tolerance,
        layers,
        input,
        max_relative_error,
        passed: max_relative_error < tolerance,
    })
}
