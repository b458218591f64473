use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Distance from the origin of the innermost ring of class means.
const MEAN_RADIUS: f64 = 2.0;

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Per-coordinate standard deviation around each class mean.
    pub spread: f64,
    /// When set, each sample is tagged with a uniformly drawn group id in `0..groups`.
    #[serde(default)]
    pub groups: Option<u64>,
}

/// Mean of class `c`: `±MEAN_RADIUS` on axis `c mod dim`, the sign flipping for
/// every second block of `dim` classes, and the radius growing for each further
/// block of `2 * dim` classes. Classes `0..dim` sit on the vertices of a scaled
/// simplex.
pub fn class_mean(class: usize, dim: usize) -> Vec<f64> {
    let axis = class % dim;
    let block = class / dim;
    let sign = if block.is_multiple_of(2) { 1.0 } else { -1.0 };
    let ring = (block / 2) as f64;
    let mut mean = vec![0.0; dim];
    mean[axis] = sign * MEAN_RADIUS * (1.0 + ring);
    mean
}

pub fn synth_gaussian_mixture(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::param("classes", "need at least two classes"));
    }
    if spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::param("dim", "dimension and per-class count must be positive"));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::param(
            "spread",
            format!("must be non-negative, got {}", spec.spread),
        ));
    }
    if spec.groups == Some(0) {
        return Err(Error::param("groups", "group count must be positive"));
    }
    let mut rng = rng_from(seed);
    let mut samples = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let mean = class_mean(class, spec.dim);
        for _ in 0..spec.per_class {
            let features = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.spread * z
                })
                .collect();
            let group = spec.groups.map(|g| rng.random_range(0..g));
            samples.push(Sample {
                features,
                label: class,
                group,
            });
        }
    }
    Dataset::new(samples, spec.classes, spec.dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, dim: usize, per_class: usize, spread: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes,
            dim,
            per_class,
            spread,
            groups: None,
        }
    }

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn means_are_distinct() {
        let means: Vec<_> = (0..20).map(|c| class_mean(c, 4)).collect();
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                assert!(sq_dist(&means[i], &means[j]) > 1.0, "{i} {j}");
            }
        }
    }

    #[test]
    fn zero_spread_is_perfectly_separable() {
        let ds = synth_gaussian_mixture(&spec(5, 3, 10, 0.0), 1).unwrap();
        for s in ds.samples() {
            assert_eq!(s.features, class_mean(s.label, 3));
        }
        // 1-nearest-neighbour (excluding self) recovers every label.
        let n = ds.len();
        for i in 0..n {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = sq_dist(&ds.samples()[i].features, &ds.samples()[a].features);
                    let db = sq_dist(&ds.samples()[i].features, &ds.samples()[b].features);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(ds.samples()[nearest].label, ds.samples()[i].label);
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = synth_gaussian_mixture(&spec(3, 4, 20, 0.7), 9).unwrap();
        let b = synth_gaussian_mixture(&spec(3, 4, 20, 0.7), 9).unwrap();
        let c = synth_gaussian_mixture(&spec(3, 4, 20, 0.7), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn linear_oracle_separates_default_fixture() {
        // Nearest class mean estimated on one half, scored on the other: the
        // Bayes-optimal linear rule for isotropic, equal-variance components.
        let ds = synth_gaussian_mixture(&spec(4, 8, 200, 0.3), 21).unwrap();
        let (train, test): (Vec<_>, Vec<_>) = ds.samples().iter().enumerate().partition(|(i, _)| i % 2 == 0);
        let mut centroids = vec![vec![0.0; 8]; 4];
        let mut counts = vec![0.0; 4];
        for (_, s) in &train {
            counts[s.label] += 1.0;
            for (c, v) in centroids[s.label].iter_mut().zip(&s.features) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n);
        }
        let correct = test
            .iter()
            .filter(|(_, s)| {
                let pred = (0..4)
                    .min_by(|&a, &b| {
                        sq_dist(&s.features, &centroids[a])
                            .partial_cmp(&sq_dist(&s.features, &centroids[b]))
                            .unwrap()
                    })
                    .unwrap();
                pred == s.label
            })
            .count();
        assert!(correct as f64 / test.len() as f64 >= 0.95);
    }

    #[test]
    fn invalid_parameters() {
        assert!(synth_gaussian_mixture(&spec(1, 3, 5, 0.1), 0).is_err());
        assert!(synth_gaussian_mixture(&spec(2, 0, 5, 0.1), 0).is_err());
        assert!(synth_gaussian_mixture(&spec(2, 3, 5, -0.1), 0).is_err());
    }
}
