//! The three training objectives and their analytic gradients.
//!
//! KL terms are always written `KL(teacher || student)`: the teacher's class
//! distribution is the first argument and is treated as a constant, so
//! gradients only reach the student. Both distributions in a distillation term
//! are taken at the same temperature; the cross-entropy term always uses
//! temperature 1. No `T^2` rescaling is applied.

use crate::error::{Error, Result};
use crate::nn::model::{Batch, GradientSet, Matrix, ModelParams};
use crate::nn::ops::{
    backward, cross_entropy, cross_entropy_logit_grad, forward_trace, kl_divergence, kl_student_logit_grad, softmax,
    Trace,
};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_width(model: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.features.cols() != model.spec().input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: model.spec().input_dim(),
            found: batch.features.cols(),
        });
    }
    Ok(())
}

fn check_outputs(student: &Matrix, teacher: &Matrix) -> Result<()> {
    if student.shape() != teacher.shape() {
        return Err(Error::ShapeMismatch(format!(
            "student emits {:?} but teacher emits {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    Ok(())
}

/// `alpha * CE(student, y) + (1 - alpha) * KL(teacher || student)` evaluated on a
/// cached student trace; returns the loss and its gradient with respect to the
/// student logits.
pub fn blended_objective(
    student: &Trace,
    teacher_probs: &Matrix,
    labels: &[usize],
    alpha: f64,
    temperature: f64,
) -> Result<(f64, Matrix)> {
    check_alpha(alpha)?;
    let logits = student.logits();
    check_outputs(logits, teacher_probs)?;
    let p1 = softmax(logits, 1.0)?;
    let ce = cross_entropy(&p1, labels)?;
    let mut grad = cross_entropy_logit_grad(&p1, labels);

    let student_t = if temperature == 1.0 {
        p1
    } else {
        softmax(logits, temperature)?
    };
    let kl = kl_divergence(teacher_probs, &student_t)?;
    let kl_grad = kl_student_logit_grad(teacher_probs, &student_t, temperature);

    for (g, k) in grad.as_mut_slice().iter_mut().zip(kl_grad.as_slice()) {
        *g = alpha * *g + (1.0 - alpha) * k;
    }
    Ok((alpha * ce + (1.0 - alpha) * kl, grad))
}

/// `KL(teacher || student)` on a cached student trace, with the logit gradient.
pub fn distillation_objective(student: &Trace, teacher_probs: &Matrix, temperature: f64) -> Result<(f64, Matrix)> {
    let logits = student.logits();
    check_outputs(logits, teacher_probs)?;
    let q = softmax(logits, temperature)?;
    let kl = kl_divergence(teacher_probs, &q)?;
    Ok((kl, kl_student_logit_grad(teacher_probs, &q, temperature)))
}

/// Client-side objective: the personalized model learns from its labels and
/// from the Plug-in model acting as teacher.
pub fn client_loss_and_grads(
    client_model: &ModelParams,
    plugin_model: &ModelParams,
    batch: &Batch,
    alpha: f64,
    temperature: f64,
) -> Result<(f64, GradientSet)> {
    check_alpha(alpha)?;
    check_width(client_model, batch)?;
    check_width(plugin_model, batch)?;
    let teacher = softmax(forward_trace(plugin_model, &batch.features)?.logits(), temperature)?;
    let trace = forward_trace(client_model, &batch.features)?;
    let (loss, dlogits) = blended_objective(&trace, &teacher, &batch.labels, alpha, temperature)?;
    Ok((loss, backward(client_model, &trace, &dlogits)))
}

/// Plug-in objective: the Plug-in model distils the personalized model.
pub fn plugin_loss_and_grads(
    client_model: &ModelParams,
    plugin_model: &ModelParams,
    batch: &Batch,
    temperature: f64,
) -> Result<(f64, GradientSet)> {
    check_width(client_model, batch)?;
    check_width(plugin_model, batch)?;
    let teacher = softmax(forward_trace(client_model, &batch.features)?.logits(), temperature)?;
    let trace = forward_trace(plugin_model, &batch.features)?;
    let (loss, dlogits) = distillation_objective(&trace, &teacher, temperature)?;
    Ok((loss, backward(plugin_model, &trace, &dlogits)))
}

/// Plain cross-entropy objective used by the baselines.
pub fn cross_entropy_loss_and_grads(model: &ModelParams, batch: &Batch) -> Result<(f64, GradientSet)> {
    check_width(model, batch)?;
    let trace = forward_trace(model, &batch.features)?;
    let probs = softmax(trace.logits(), 1.0)?;
    let loss = cross_entropy(&probs, &batch.labels)?;
    let dlogits = cross_entropy_logit_grad(&probs, &batch.labels);
    Ok((loss, backward(model, &trace, &dlogits)))
}

/// Adds the proximal term `(mu / 2) * ||model - anchor||^2` to `grads` and
/// returns its value.
pub fn add_proximal_term(model: &ModelParams, anchor: &ModelParams, mu: f64, grads: &mut GradientSet) -> Result<f64> {
    model.ensure_same_architecture(anchor)?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let mut sq = 0.0;
    for ((g, w), a) in grads.values_mut().zip(model.values()).zip(anchor.values()) {
        let d = w - a;
        sq += d * d;
        *g += mu * d;
    }
    Ok(0.5 * mu * sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Activation, ModelSpec};
    use crate::seed::rng_from;
    use rand::Rng;

    fn fixture(seed: u64) -> (ModelParams, ModelParams, Batch) {
        let mut rng = rng_from(seed);
        let a = ModelParams::init(&ModelSpec::mlp(4, &[5], 3, Activation::Tanh).unwrap(), &mut rng);
        let b = ModelParams::init(&ModelSpec::mlp(4, &[3, 3], 3, Activation::Tanh).unwrap(), &mut rng);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let labels = (0..6).map(|_| rng.random_range(0..3)).collect();
        (a, b, Batch::new(Matrix::from_rows(&rows).unwrap(), labels).unwrap())
    }

    #[test]
    fn alpha_one_is_pure_cross_entropy() {
        let (client, plugin, batch) = fixture(1);
        let (loss, grads) = client_loss_and_grads(&client, &plugin, &batch, 1.0, 1.0).unwrap();
        let (ce, ce_grads) = cross_entropy_loss_and_grads(&client, &batch).unwrap();
        assert_eq!(loss, ce);
        assert_eq!(grads, ce_grads);
    }

    #[test]
    fn identical_teacher_gives_zero_distillation() {
        let (client, _, batch) = fixture(2);
        let (loss, grads) = client_loss_and_grads(&client, &client, &batch, 0.0, 1.0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grads.values().all(|g| g.abs() < 1e-9));
        let (loss, grads) = plugin_loss_and_grads(&client, &client, &batch, 2.0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grads.values().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn loss_is_affine_in_alpha() {
        let (client, plugin, batch) = fixture(3);
        let at = |a| client_loss_and_grads(&client, &plugin, &batch, a, 1.5).unwrap().0;
        let (l0, l1) = (at(0.0), at(1.0));
        for a in [0.1, 0.37, 0.5, 0.9] {
            assert!((at(a) - (a * l1 + (1.0 - a) * l0)).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        let (client, plugin, batch) = fixture(4);
        assert!(client_loss_and_grads(&client, &plugin, &batch, 1.1, 1.0).is_err());
        assert!(client_loss_and_grads(&client, &plugin, &batch, -0.1, 1.0).is_err());
    }

    #[test]
    fn mismatched_widths_rejected() {
        let (client, _, batch) = fixture(5);
        let wrong = ModelParams::zeros(&ModelSpec::mlp(7, &[2], 3, Activation::Tanh).unwrap());
        assert!(matches!(
            plugin_loss_and_grads(&client, &wrong, &batch, 1.0),
            Err(Error::DimensionMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn proximal_term_value() {
        let (client, _, _) = fixture(6);
        let mut anchor = client.clone();
        anchor.scale(0.5);
        let mut g = GradientSet::zeros_like(&client);
        let v = add_proximal_term(&client, &anchor, 2.0, &mut g).unwrap();
        let sq: f64 = client.values().map(|w| (0.5 * w) * (0.5 * w)).sum();
        assert!((v - sq).abs() < 1e-12);
        for (gi, w) in g.values().zip(client.values()) {
            assert!((gi - 2.0 * 0.5 * w).abs() < 1e-12);
        }
    }
}
