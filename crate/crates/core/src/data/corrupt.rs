use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// SNR at or above which noise injection is a pass-through.
pub const CLEAN_SNR_DB: f64 = 100.0;

/// Adds white Gaussian noise at `snr_db` relative to the dataset-mean squared
/// feature entry: `sigma^2 = P_s / 10^(snr_db / 10)`.
pub fn inject_gaussian_noise(ds: &Dataset, snr_db: f64, seed: u64) -> Dataset {
    if snr_db >= CLEAN_SNR_DB || ds.is_empty() {
        return ds.clone();
    }
    let entries = (ds.len() * ds.feature_dim()) as f64;
    let power = ds
        .samples()
        .iter()
        .flat_map(|s| s.features.iter())
        .map(|v| v * v)
        .sum::<f64>()
        / entries;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut out = ds.clone();
    if sigma == 0.0 || !sigma.is_finite() {
        return out;
    }
    let noise = Normal::new(0.0, sigma).expect("finite positive sigma");
    let mut rng = rng_from(seed);
    for s in out.samples_mut() {
        for v in &mut s.features {
            *v += noise.sample(&mut rng);
        }
    }
    out
}

/// Relabels exactly `floor(rate * n)` samples, chosen without replacement, to a
/// class drawn uniformly from the other `C - 1` classes.
pub fn inject_label_errors(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param("rate", format!("must lie in [0, 1], got {rate}")));
    }
    let classes = ds.num_classes();
    if classes < 2 {
        return Err(Error::param("classes", "label errors need at least two classes"));
    }
    let flips = (rate * ds.len() as f64).floor() as usize;
    let mut out = ds.clone();
    let mut rng = rng_from(seed);
    let mut chosen = sample(&mut rng, ds.len(), flips).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let s = &mut out.samples_mut()[i];
        let r = rng.random_range(0..classes - 1);
        s.label = if r >= s.label { r + 1 } else { r };
    }
    Ok(out)
}
