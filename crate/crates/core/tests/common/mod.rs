//! Independent reference implementations used as test oracles. Nothing
//! here calls into the engine's own numerics beyond reading parameters.
#![allow(dead_code)]

use advsel::numerics::{Matrix, Model};

/// Parameters copied out of a model as plain nested vectors.
#[derive(Clone, Debug)]
pub struct Params {
    /// `w[l][out][in]`
    pub w: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

impl Params {
    pub fn of(model: &Model) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for layer in model.layers() {
            let m = layer.weights();
            w.push((0..m.rows()).map(|r| m.row(r).to_vec()).collect());
            b.push(layer.biases().to_vec());
        }
        Params { w, b }
    }

    pub fn count(&self) -> usize {
        self.w.iter().map(|l| l.len() * l[0].len()).sum::<usize>() + self.b.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat view in layer order: weights row-major, then biases.
    pub fn get(&self, mut i: usize) -> f64 {
        for (w, b) in self.w.iter().zip(&self.b) {
            let n = w.len() * w[0].len();
            if i < n {
                return w[i / w[0].len()][i % w[0].len()];
            }
            i -= n;
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut i: usize, v: f64) {
        for (w, b) in self.w.iter_mut().zip(self.b.iter_mut()) {
            let cols = w[0].len();
            let n = w.len() * cols;
            if i < n {
                w[i / cols][i % cols] = v;
                return;
            }
            i -= n;
            if i < b.len() {
                b[i] = v;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range")
    }
}

/// Logits and the on/off pattern of every hidden unit, with scalar loops.
pub fn forward(p: &Params, x: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut a = x.to_vec();
    let mut pattern = Vec::new();
    let last = p.w.len() - 1;
    for (l, (w, b)) in p.w.iter().zip(&p.b).enumerate() {
        let mut z = vec![0.0; w.len()];
        for o in 0..w.len() {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += w[o][i] * a[i];
            }
            z[o] = s + b[o];
        }
        if l < last {
            for v in z.iter_mut() {
                pattern.push(*v > 0.0);
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        a = z;
    }
    (a, pattern)
}

/// Softmax cross-entropy with a max shift.
pub fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

pub fn mean_loss(p: &Params, x: &Matrix, y: &[usize]) -> f64 {
    (0..x.rows()).map(|r| cross_entropy(&forward(p, x.row(r)).0, y[r])).sum::<f64>() / x.rows() as f64
}

fn patterns(p: &Params, x: &Matrix) -> Vec<Vec<bool>> {
    (0..x.rows()).map(|r| forward(p, x.row(r)).1).collect()
}

/// Central differences of the mean loss for every parameter, in the
/// order of [`Params::get`]. `None` marks coordinates whose ±h
/// perturbation changes any ReLU state.
pub fn fd_params(model: &Model, x: &Matrix, y: &[usize], h: f64) -> Vec<Option<f64>> {
    let base = Params::of(model);
    let base_pat = patterns(&base, x);
    (0..base.count())
        .map(|i| {
            let v = base.get(i);
            let mut plus = base.clone();
            plus.set(i, v + h);
            let mut minus = base.clone();
            minus.set(i, v - h);
            if patterns(&plus, x) != base_pat || patterns(&minus, x) != base_pat {
                return None;
            }
            Some((mean_loss(&plus, x, y) - mean_loss(&minus, x, y)) / (2.0 * h))
        })
        .collect()
}

/// Central differences of each sample's own loss with respect to its input.
pub fn fd_inputs(model: &Model, x: &Matrix, y: &[usize], h: f64) -> Vec<Option<f64>> {
    let p = Params::of(model);
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let row = x.row(r).to_vec();
        let base_pat = forward(&p, &row).1;
        for i in 0..row.len() {
            let mut a = row.clone();
            a[i] += h;
            let mut b = row.clone();
            b[i] -= h;
            let (za, pa) = forward(&p, &a);
            let (zb, pb) = forward(&p, &b);
            if pa != base_pat || pb != base_pat {
                out.push(None);
            } else {
                out.push(Some((cross_entropy(&za, y[r]) - cross_entropy(&zb, y[r])) / (2.0 * h)));
            }
        }
    }
    out
}

/// Flattened analytic gradient in the order of [`Params::get`].
pub fn flatten(g: &advsel::numerics::Gradients) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        v.extend_from_slice(w.as_slice());
        v.extend_from_slice(b);
    }
    v
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Top-k by a stable sort on descending loss; ties keep index order.
pub fn top_k_oracle(losses: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap());
    let mut top = idx[..k].to_vec();
    top.sort();
    top
}

/// `max(1, ceil(p * b))` computed with exact rational arithmetic when
/// `p` is a multiple of 1/1000.
pub fn count_oracle(b: usize, p_thousandths: usize) -> usize {
    ((p_thousandths * b).div_ceil(1000)).max(1)
}
