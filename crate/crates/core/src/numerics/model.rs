use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss;
use super::matrix::{argmax, Matrix};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One affine layer: `z = W a + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) weights: Matrix,
    pub(crate) biases: Vec<f64>,
}

impl Layer {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Fully-connected feed-forward classifier producing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layer_dims: Vec<usize>,
    pub(crate) layers: Vec<Layer>,
    activation: Activation,
}

/// Parameter gradients, shaped exactly like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// Largest absolute entry across all layers.
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter())
            .chain(self.biases.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }
}

/// Cached activations from a forward pass over a batch.
pub(crate) struct Trace {
    /// `activations[0]` is the input, `activations[l]` the post-ReLU output of layer `l`.
    activations: Vec<Matrix>,
    /// Pre-activations of every layer; the last entry holds the logits.
    pre: Vec<Matrix>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &Matrix {
        self.pre.last().expect("model has at least one layer")
    }
}

impl Model {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn new_seeded(layer_dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(layer_dims, &mut rng)
    }

    pub fn init<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
                Layer {
                    weights: Matrix::from_raw(fan_out, fan_in, data),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            activation: Activation::Relu,
        })
    }

    /// Builds a model from explicit parameters; `weights[l]` is `out x in`.
    pub fn from_parameters(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        if weights.len() != biases.len() {
            return Err(Error::dim("bias vector count", weights.len(), biases.len()));
        }
        let mut dims = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let prev = *dims.last().unwrap();
            if w.cols() != prev {
                return Err(Error::dim(format!("layer {l} input"), prev, w.cols()));
            }
            if b.len() != w.rows() {
                return Err(Error::dim(format!("layer {l} biases"), w.rows(), b.len()));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("bias parameters"));
            }
            dims.push(w.rows());
        }
        validate_dims(&dims)?;
        let layers = weights
            .into_iter()
            .zip(biases)
            .map(|(weights, biases)| Layer { weights, biases })
            .collect();
        Ok(Self {
            layer_dims: dims,
            layers,
            activation: Activation::Relu,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    /// Pre-softmax logits for every input row.
    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        let trace = self.trace(inputs)?;
        let logits = trace.pre.into_iter().last().unwrap();
        if !logits.is_finite() {
            return Err(Error::NonFinite("forward"));
        }
        Ok(logits)
    }

    /// Argmax class per row, ties to the lowest class index.
    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// Per-sample cross-entropy losses.
    pub fn losses(&self, x: &Matrix, y: &[usize]) -> Result<Vec<f64>> {
        let logits = self.forward(x)?;
        self.check_labels(x.rows(), y)?;
        Ok(logits
            .iter_rows()
            .zip(y)
            .map(|(z, &label)| loss::cross_entropy(z, label))
            .collect())
    }

    /// Mean cross-entropy over the batch.
    pub fn mean_loss(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let l = self.losses(x, y)?;
        Ok(l.iter().sum::<f64>() / l.len().max(1) as f64)
    }

    /// Per-sample losses and the gradient of each sample's own loss with
    /// respect to its input row.
    pub fn loss_and_input_grad(&self, x: &Matrix, y: &[usize]) -> Result<(Vec<f64>, Matrix)> {
        let trace = self.trace(x)?;
        self.check_labels(x.rows(), y)?;
        let (losses, delta) = output_delta(trace.logits(), y);
        let grad_x = self.backward(&trace, delta, None);
        let grad_x = grad_x.expect("input gradient requested");
        if !grad_x.is_finite() {
            return Err(Error::NonFinite("input gradient"));
        }
        Ok((losses, grad_x))
    }

    /// Mean gradient over the samples whose weight is 1; weight-0 samples
    /// are never backpropagated.
    pub fn param_grad(&self, x: &Matrix, y: &[usize], weights_per_sample: &[f64]) -> Result<Gradients> {
        if weights_per_sample.len() != x.rows() {
            return Err(Error::dim("sample weights", x.rows(), weights_per_sample.len()));
        }
        let mut selected = Vec::new();
        for (i, &w) in weights_per_sample.iter().enumerate() {
            if w == 1.0 {
                selected.push(i);
            } else if w != 0.0 {
                return Err(Error::invalid(format!("sample weight {w} at row {i} is not 0 or 1")));
            }
        }
        self.param_grad_selected(x, y, &selected)
    }

    /// Mean gradient over the rows listed in `selected` (ascending order
    /// gives the canonical reduction order).
    pub fn param_grad_selected(&self, x: &Matrix, y: &[usize], selected: &[usize]) -> Result<Gradients> {
        if selected.is_empty() {
            return Err(Error::EmptySelection);
        }
        self.check_labels(x.rows(), y)?;
        let sub = x.select_rows(selected)?;
        let labels: Vec<usize> = selected.iter().map(|&i| y[i]).collect();
        self.mean_param_grad(&sub, &labels)
    }

    /// Mean gradient of the batch loss with respect to all parameters.
    pub fn mean_param_grad(&self, x: &Matrix, y: &[usize]) -> Result<Gradients> {
        if x.rows() == 0 {
            return Err(Error::EmptySelection);
        }
        let trace = self.trace(x)?;
        self.check_labels(x.rows(), y)?;
        let (_, delta) = output_delta(trace.logits(), y);
        let mut grads = Gradients::zeros_like(self);
        self.backward(&trace, delta, Some(&mut grads));
        grads.scale(1.0 / x.rows() as f64);
        if !grads.is_finite() {
            return Err(Error::NonFinite("parameter gradient"));
        }
        Ok(grads)
    }

    /// One descent step `theta - mu * grad`.
    pub fn sgd_step(&self, grads: &Gradients, mu: f64) -> Result<Model> {
        let mut next = self.clone();
        next.apply_sgd(grads, mu)?;
        Ok(next)
    }

    pub fn apply_sgd(&mut self, grads: &Gradients, mu: f64) -> Result<()> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {mu}")));
        }
        self.check_grad_shapes(grads)?;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= mu * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(gb) {
                *b -= mu * g;
            }
        }
        if self.layers.iter().any(|l| !l.weights.is_finite() || l.biases.iter().any(|b| !b.is_finite())) {
            return Err(Error::NonFinite("sgd_step"));
        }
        Ok(())
    }

    fn check_grad_shapes(&self, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::dim("gradient layer count", self.layers.len(), grads.weights.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if grads.weights[l].shape() != layer.weights.shape() {
                return Err(Error::dim(
                    format!("layer {l} weight gradient"),
                    layer.weights.as_slice().len(),
                    grads.weights[l].as_slice().len(),
                ));
            }
            if grads.biases[l].len() != layer.biases.len() {
                return Err(Error::dim(format!("layer {l} bias gradient"), layer.biases.len(), grads.biases[l].len()));
            }
        }
        Ok(())
    }

    pub(crate) fn check_labels(&self, rows: usize, y: &[usize]) -> Result<()> {
        if y.len() != rows {
            return Err(Error::dim("label count", rows, y.len()));
        }
        let classes = self.class_count();
        if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { row, label, classes });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, inputs: &Matrix) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = inputs.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if current.cols() != layer.in_dim() {
                return Err(Error::dim(format!("layer {l} input"), layer.in_dim(), current.cols()));
            }
            let z = affine(&current, layer);
            let next = if l < last { relu(&z) } else { z.clone() };
            activations.push(current);
            pre.push(z);
            current = next;
        }
        Ok(Trace { activations, pre })
    }

    /// ReLU on/off pattern of every hidden unit for every row.
    pub(crate) fn activation_pattern(&self, inputs: &Matrix) -> Result<Vec<bool>> {
        let trace = self.trace(inputs)?;
        let hidden = &trace.pre[..trace.pre.len() - 1];
        Ok(hidden
            .iter()
            .flat_map(|z| z.as_slice().iter().map(|&v| v > 0.0))
            .collect())
    }

    /// Backpropagates `delta` (dL/dlogits per row). Accumulates parameter
    /// gradients into `grads` when given, otherwise returns dL/dinput.
    /// Samples are reduced in ascending row order.
    fn backward(&self, trace: &Trace, mut delta: Matrix, mut grads: Option<&mut Gradients>) -> Option<Matrix> {
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_prev = &trace.activations[l];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[l];
                let gb = &mut g.biases[l];
                for s in 0..delta.rows() {
                    let d_row = delta.row(s);
                    let a_row = a_prev.row(s);
                    for (o, &d) in d_row.iter().enumerate() {
                        gb[o] += d;
                        for (gwi, &a) in gw.row_mut(o).iter_mut().zip(a_row) {
                            *gwi += d * a;
                        }
                    }
                }
                if l == 0 {
                    return None;
                }
            }
            // dL/da_prev = delta W
            let mut d_prev = Matrix::zeros(delta.rows(), layer.in_dim());
            for s in 0..delta.rows() {
                let out = d_prev.row_mut(s);
                for (o, &d) in delta.row(s).iter().enumerate() {
                    for (acc, &w) in out.iter_mut().zip(layer.weights.row(o)) {
                        *acc += d * w;
                    }
                }
            }
            if l == 0 {
                return Some(d_prev);
            }
            // ReLU derivative, with the subgradient at exactly 0 taken as 0
            let z_prev = &trace.pre[l - 1];
            for (dv, &z) in d_prev.as_mut_slice().iter_mut().zip(z_prev.as_slice()) {
                if z <= 0.0 {
                    *dv = 0.0;
                }
            }
            delta = d_prev;
        }
        None
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("layer_dims needs an input and an output dimension"));
    }
    if dims.contains(&0) {
        return Err(Error::invalid("layer dimensions must be positive"));
    }
    if dims[dims.len() - 1] < 2 {
        return Err(Error::invalid("a classifier needs at least 2 output classes"));
    }
    Ok(())
}

fn affine(a: &Matrix, layer: &Layer) -> Matrix {
    let out_dim = layer.out_dim();
    let mut z = Matrix::zeros(a.rows(), out_dim);
    for s in 0..a.rows() {
        let a_row = a.row(s);
        let z_row = z.row_mut(s);
        for (o, zo) in z_row.iter_mut().enumerate() {
            let w_row = layer.weights.row(o);
            let mut acc = layer.biases[o];
            for (&w, &x) in w_row.iter().zip(a_row) {
                acc += w * x;
            }
            *zo = acc;
        }
    }
    z
}

fn relu(z: &Matrix) -> Matrix {
    let data = z.as_slice().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Matrix::from_raw(z.rows(), z.cols(), data)
}

/// Per-row losses and `softmax - onehot` deltas. Labels must already be validated.
fn output_delta(logits: &Matrix, y: &[usize]) -> (Vec<f64>, Matrix) {
    let mut delta = Matrix::zeros(logits.rows(), logits.cols());
    let losses = (0..logits.rows())
        .map(|s| loss::cross_entropy_grad(logits.row(s), y[s], delta.row_mut(s)))
        .collect();
    (losses, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_model() -> Model {
        Model::from_parameters(
            vec![Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()],
            vec![vec![0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let mut m = Model::new_seeded(&[3, 4, 2], 1).unwrap();
        for l in &mut m.layers {
            l.weights.as_mut_slice().fill(0.0);
        }
        let x = Matrix::from_rows(&[[0.3, 0.9, 0.1], [1.0, 0.0, 0.5]]).unwrap();
        let z = m.forward(&x).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let z = identity_model()
            .forward(&Matrix::from_rows(&[[3.0, 5.0]]).unwrap())
            .unwrap();
        assert_eq!(z.as_slice(), &[3.0, 5.0]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let m = Model::new_seeded(&[3, 4, 2], 1).unwrap();
        let err = m.forward(&Matrix::zeros(1, 5)).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn label_out_of_range() {
        let m = identity_model();
        let err = m.loss_and_input_grad(&Matrix::zeros(1, 2), &[2]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn linear_input_grad_closed_form() {
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]]).unwrap();
        let m = Model::from_parameters(vec![w.clone()], vec![vec![0.1, -0.2]]).unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.4, 0.6]]).unwrap();
        let (_, g) = m.loss_and_input_grad(&x, &[1]).unwrap();
        let z = m.forward(&x).unwrap();
        let e0 = z.get(0, 0).exp();
        let e1 = z.get(0, 1).exp();
        let r = [e0 / (e0 + e1), e1 / (e0 + e1) - 1.0];
        for i in 0..3 {
            let expect = w.get(0, i) * r[0] + w.get(1, i) * r[1];
            assert_relative_eq!(g.get(0, i), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn saturated_sample_has_vanishing_input_grad() {
        let w = Matrix::from_rows(&[[100.0, 0.0], [-100.0, 0.0]]).unwrap();
        let m = Model::from_parameters(vec![w], vec![vec![0.0, 0.0]]).unwrap();
        let (l, g) = m.loss_and_input_grad(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!(l[0] < 1e-80);
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-80));
    }

    #[test]
    fn single_selected_sample_matches_its_own_gradient() {
        let m = Model::new_seeded(&[3, 5, 3], 4).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [0.9, 0.1, 0.4], [0.5, 0.5, 0.5]]).unwrap();
        let y = [0, 2, 1];
        let masked = m.param_grad(&x, &y, &[0.0, 1.0, 0.0]).unwrap();
        let single = m
            .mean_param_grad(&x.select_rows(&[1]).unwrap(), &[2])
            .unwrap();
        assert_eq!(masked, single);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let m = Model::new_seeded(&[3, 6, 2], 9).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [0.9, 0.1, 0.4]]).unwrap();
        let y = [0, 1];
        let g1 = m.mean_param_grad(&x, &y).unwrap();
        let g2 = m.mean_param_grad(&x.vstack(&x).unwrap(), &[0, 1, 0, 1]).unwrap();
        for (a, b) in g1.weights.iter().zip(&g2.weights) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-15);
        }
        for (a, b) in g1.biases.iter().flatten().zip(g2.biases.iter().flatten()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn param_grad_rejects_empty_and_fractional_weights() {
        let m = identity_model();
        let x = Matrix::zeros(2, 2);
        assert!(matches!(m.param_grad(&x, &[0, 1], &[0.0, 0.0]), Err(Error::EmptySelection)));
        assert!(matches!(m.param_grad(&x, &[0, 1], &[0.5, 1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sgd_arithmetic_and_zero_grad() {
        let m = Model::from_parameters(vec![Matrix::from_rows(&[[1.0], [0.0]]).unwrap()], vec![vec![0.0, 0.0]]).unwrap();
        let mut g = Gradients::zeros_like(&m);
        assert_eq!(m.sgd_step(&g, 0.1).unwrap(), m);
        g.weights[0].set(0, 0, 0.5);
        let next = m.sgd_step(&g, 0.1).unwrap();
        assert_relative_eq!(next.layers[0].weights.get(0, 0), 0.95, epsilon = 1e-15);
        assert!(m.sgd_step(&g, 0.0).is_err());
    }

    #[test]
    fn sgd_step_rejects_mismatched_gradients() {
        let a = Model::new_seeded(&[2, 3, 2], 0).unwrap();
        let b = Model::new_seeded(&[2, 4, 2], 0).unwrap();
        let err = a.sgd_step(&Gradients::zeros_like(&b), 0.1).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn sgd_decreases_loss_on_fixed_batch() {
        let m = Model::new_seeded(&[2, 2], 3).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]]).unwrap();
        let y = [0, 1, 0];
        let mut cur = m;
        let mut prev = cur.mean_loss(&x, &y).unwrap();
        for _ in 0..50 {
            let g = cur.mean_param_grad(&x, &y).unwrap();
            cur = cur.sgd_step(&g, 0.05).unwrap();
            let l = cur.mean_loss(&x, &y).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn glorot_bounds_and_seed_determinism() {
        let a = Model::new_seeded(&[10, 6, 3], 11).unwrap();
        let b = Model::new_seeded(&[10, 6, 3], 11).unwrap();
        assert_eq!(a, b);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a.layers[0].weights.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(a.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        assert_eq!(a.parameter_count(), 10 * 6 + 6 + 6 * 3 + 3);
    }
}
