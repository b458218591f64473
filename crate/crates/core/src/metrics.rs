//! Evaluation metrics and the empirical convergence-rate fit.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, predict, ModelParams};

/// Minimum number of rounds [`rate_slope`] accepts.
pub const RATE_CHECK_MIN_RECORDS: usize = 50;

/// Macro-averaged F1 over `classes`, with 0/0 taken as 0 for precision,
/// recall and F1 alike.
pub fn macro_f1(predicted: &[usize], actual: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fneg = vec![0usize; classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p == a {
            tp[a] += 1;
        } else {
            fp[p] += 1;
            fneg[a] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let total: f64 = (0..classes)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fneg[c]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    total / classes as f64
}

/// `(accuracy, macro-F1)` of `model` on `test`.
pub fn evaluate(model: &ModelParams, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::param("test_set", "cannot evaluate on an empty test set"));
    }
    let logits = forward(model, &test.features())?;
    let predicted = predict(&logits);
    let actual = test.labels();
    let correct = predicted.iter().zip(&actual).filter(|(p, a)| p == a).count();
    Ok((
        correct as f64 / test.len() as f64,
        macro_f1(&predicted, &actual, test.num_classes()),
    ))
}

/// Least-squares slope of `ln(mean_{s<=t} g_s)` against `ln t` over the
/// trailing 80% of rounds, with rounds numbered from 1.
pub fn rate_slope(grad_sq: &[f64]) -> Result<f64> {
    let n = grad_sq.len();
    if n < RATE_CHECK_MIN_RECORDS {
        return Err(Error::InsufficientRecords {
            needed: RATE_CHECK_MIN_RECORDS,
            found: n,
        });
    }
    let mut running = Vec::with_capacity(n);
    let mut sum = 0.0;
    for (i, &g) in grad_sq.iter().enumerate() {
        sum += g;
        running.push(sum / (i + 1) as f64);
    }
    let start = n / 5;
    let points: Vec<(f64, f64)> = (start..n).map(|i| (((i + 1) as f64).ln(), running[i].ln())).collect();
    if points.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::NonFinite("log of the running mean gradient norm".into()));
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::nn::{LayerParams, Matrix, ModelSpec};

    #[test]
    fn f1_hand_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3), 1.0);
        // All predictions class 0 on a balanced two-class set: F1 = (2/3 + 0) / 2.
        let f1 = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        // A class absent from both predictions and labels scores 0.
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3), 2.0 / 3.0);
    }

    fn identity_model() -> ModelParams {
        let spec = ModelSpec::new(vec![(2, 2)], vec![]).unwrap();
        let layer = LayerParams {
            weights: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        ModelParams::from_layers(spec, vec![layer]).unwrap()
    }

    fn ds(points: &[([f64; 2], usize)]) -> Dataset {
        let samples = points
            .iter()
            .map(|(f, l)| Sample {
                features: f.to_vec(),
                label: *l,
                group: None,
            })
            .collect();
        Dataset::new(samples, 2, 2).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let m = identity_model();
        let perfect = ds(&[([1.0, 0.0], 0), ([0.0, 1.0], 1)]);
        assert_eq!(evaluate(&m, &perfect).unwrap(), (1.0, 1.0));
        let skewed = ds(&[([1.0, 0.0], 0), ([1.0, 0.0], 0), ([1.0, 0.0], 1), ([1.0, 0.0], 1)]);
        let (acc, f1) = evaluate(&m, &skewed).unwrap();
        assert_eq!(acc, 0.5);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
        let reversed = skewed.subset(&[3, 2, 1, 0]);
        assert_eq!(evaluate(&m, &reversed).unwrap(), (acc, f1));
        assert!(evaluate(&m, &skewed.subset(&[])).is_err());
    }

    #[test]
    fn rate_slope_of_constant_sequence_is_zero() {
        assert!(rate_slope(&[2.5; 80]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn rate_slope_needs_fifty_records() {
        assert!(matches!(
            rate_slope(&[1.0; 49]),
            Err(Error::InsufficientRecords { needed: 50, found: 49 })
        ));
    }

    #[test]
    fn rate_slope_matches_harmonic_oracle() {
        // g_t = 1/t has running mean H_t / t. The oracle evaluates H_t from its
        // asymptotic expansion and fits the same window independently.
        let n = 400;
        let g: Vec<f64> = (1..=n).map(|t| 1.0 / t as f64).collect();
        let euler = 0.577_215_664_901_532_9;
        let harmonic = |t: f64| t.ln() + euler + 1.0 / (2.0 * t) - 1.0 / (12.0 * t * t) + 1.0 / (120.0 * t.powi(4));
        let ts: Vec<f64> = (n / 5 + 1..=n).map(|t| t as f64).collect();
        let xs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = ts.iter().map(|&t| (harmonic(t) / t).ln()).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let oracle = num / den;
        let slope = rate_slope(&g).unwrap();
        assert!((slope - oracle).abs() < 1e-9, "{slope} vs {oracle}");
        assert!(slope < -0.75 && slope > -1.0);
    }
}
