//! Forward pass, losses, backpropagation and the SGD step.

use crate::error::{Error, Result};
use crate::nn::model::{GradientSet, LayerParams, Matrix, ModelParams};

/// Floor applied inside every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cached layer outputs of one forward pass: `outputs[0]` is the input batch,
/// `outputs[l + 1]` the (post-activation) output of layer `l`. The last entry
/// holds the logits.
#[derive(Debug, Clone)]
pub struct Trace {
    outputs: Vec<Matrix>,
}

impl Trace {
    pub fn logits(&self) -> &Matrix {
        self.outputs.last().expect("trace holds at least the input")
    }

    pub fn into_logits(mut self) -> Matrix {
        self.outputs.pop().expect("trace holds at least the input")
    }
}

fn affine(layer: &LayerParams, input: &Matrix) -> Matrix {
    let (rows, out_dim) = (input.rows(), layer.out_dim());
    let mut out = Matrix::zeros(rows, out_dim);
    for r in 0..rows {
        let x = input.row(r);
        let y = out.row_mut(r);
        for (o, yo) in y.iter_mut().enumerate() {
            let w = layer.weights.row(o);
            let mut acc = layer.bias[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            *yo = acc;
        }
    }
    out
}

pub fn forward_trace(model: &ModelParams, features: &Matrix) -> Result<Trace> {
    let mut outputs = Vec::with_capacity(model.num_layers() + 1);
    outputs.push(features.clone());
    let activations = model.spec().activations();
    for (l, layer) in model.layers().iter().enumerate() {
        let input = outputs.last().expect("non-empty");
        if input.cols() != layer.in_dim() {
            return Err(Error::DimensionMismatch {
                layer: l,
                expected: layer.in_dim(),
                found: input.cols(),
            });
        }
        let mut z = affine(layer, input);
        if let Some(&act) = activations.get(l) {
            for v in z.as_mut_slice() {
                *v = act.apply(*v);
            }
        }
        outputs.push(z);
    }
    Ok(Trace { outputs })
}

/// Logits `[B x C]` of `model` on `features`.
pub fn forward(model: &ModelParams, features: &Matrix) -> Result<Matrix> {
    let logits = forward_trace(model, features)?.into_logits();
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(logits)
}

/// Backpropagates `dlogits` (the loss gradient with respect to the logits)
/// through the cached trace.
pub fn backward(model: &ModelParams, trace: &Trace, dlogits: &Matrix) -> GradientSet {
    let mut grads = GradientSet::zeros_like(model);
    let activations = model.spec().activations();
    let mut delta = dlogits.clone();
    for l in (0..model.num_layers()).rev() {
        let input = &trace.outputs[l];
        let layer = &model.layers()[l];
        let g = &mut grads.layers[l];
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let x = input.row(r);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                g.bias[o] += dv;
                for (gw, xi) in g.weights.row_mut(o).iter_mut().zip(x) {
                    *gw += dv * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        let act = activations[l - 1];
        let mut prev = Matrix::zeros(delta.rows(), layer.in_dim());
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let p = prev.row_mut(r);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                for (pi, wi) in p.iter_mut().zip(layer.weights.row(o)) {
                    *pi += dv * wi;
                }
            }
            for (pi, &a) in p.iter_mut().zip(input.row(r)) {
                *pi *= act.derivative_from_output(a);
            }
        }
        delta = prev;
    }
    grads
}

/// Row-wise softmax of `logits / temperature`, stabilised by max subtraction.
pub fn softmax(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(
            "temperature",
            format!("must be positive, got {temperature}"),
        ));
    }
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(probs)
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    for (index, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy of `probs` against integer labels.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    check_labels(labels, probs.cols())?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -probs.get(r, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Batch mean of `sum_c p(c) ln(p(c) / q(c))`.
///
/// Terms with `p(c) == 0` contribute nothing; `q` is floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.shape() != q.shape() || p.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "KL between {:?} and {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let mut total = 0.0;
    for (&pc, &qc) in p.as_slice().iter().zip(q.as_slice()) {
        if pc > 0.0 {
            total += pc * (pc.ln() - qc.max(PROB_FLOOR).ln());
        }
    }
    Ok(total / p.rows() as f64)
}

/// Gradient of [`cross_entropy`] (temperature 1) with respect to the logits.
pub fn cross_entropy_logit_grad(probs: &Matrix, labels: &[usize]) -> Matrix {
    let scale = 1.0 / labels.len() as f64;
    let mut g = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    g
}

/// Gradient of `KL(teacher || softmax(z / T))` with respect to the student logits `z`.
pub fn kl_student_logit_grad(teacher: &Matrix, student: &Matrix, temperature: f64) -> Matrix {
    let scale = 1.0 / (temperature * student.rows() as f64);
    let data = student
        .as_slice()
        .iter()
        .zip(teacher.as_slice())
        .map(|(q, p)| (q - p) * scale)
        .collect();
    Matrix::from_vec(student.rows(), student.cols(), data).expect("same shape")
}

/// `p' = p - lr * g` on every parameter.
pub fn sgd_step(model: &mut ModelParams, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::param("lr", format!("must be non-negative, got {lr}")));
    }
    if !grads.is_congruent(model) {
        return Err(Error::ShapeMismatch("gradient set does not match the model".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    for (p, g) in model.values_mut().zip(grads.values()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Argmax class per row; ties resolve to the lowest index.
pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
