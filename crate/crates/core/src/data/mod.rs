//! Datasets, synthetic generation, partitioning and corruption.

mod corrupt;
mod feature_csv;
mod partition;
mod synth;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};

pub use self::corrupt::{inject_gaussian_noise, inject_label_errors, CLEAN_SNR_DB};
pub use self::feature_csv::{load_feature_csv, write_feature_csv};
pub use self::partition::{
    dirichlet_partition, group_partition, iid_partition, label_entropy, PartitionPlan, PartitionStrategy,
};
pub use self::synth::{synth_gaussian_mixture, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    /// Speaker/actor-style tag used by group partitioning.
    pub group: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if num_classes == 0 || feature_dim == 0 {
            return Err(Error::param(
                "dataset",
                "class count and feature width must be positive",
            ));
        }
        for (index, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "sample {index} has {} features, expected {feature_dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label: s.label,
                    classes: num_classes,
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("features of sample {index}")));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    pub fn features(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| s.features.iter().copied()).collect();
        Matrix::from_vec(self.len(), self.feature_dim, data).expect("validated widths")
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            data.extend_from_slice(&s.features);
            labels.push(s.label);
        }
        Batch::new(Matrix::from_vec(indices.len(), self.feature_dim, data)?, labels)
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }
}

/// Shuffles `0..n` and carves off `floor(fraction * n)` indices as a holdout.
/// Returns `(kept, holdout)`, each sorted ascending.
pub fn holdout_split<R: Rng + ?Sized>(n: usize, fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let take = ((fraction * n as f64).floor() as usize).min(n);
    let mut holdout = order[..take].to_vec();
    let mut kept = order[take..].to_vec();
    holdout.sort_unstable();
    kept.sort_unstable();
    (kept, holdout)
}
