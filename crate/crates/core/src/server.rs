//! Server-side aggregation: Layer-wise Pruning Aggregation (LPA) and FedAvg.
//!
//! All sums run over uploads sorted by client id, so results do not depend on
//! the order in which uploads arrive. Layer deviations are measured against the
//! *unweighted* mean of the cohort, while the final aggregate of each trusted
//! set is weighted by sample count.

use serde::{Deserialize, Serialize};

use crate::client::ClientUpload;
use crate::error::{Error, Result};
use crate::nn::{LayerParams, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub client_id: usize,
    pub layer: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedSet {
    pub layer: usize,
    /// Ascending client ids.
    pub members: Vec<usize>,
    pub total_weight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Fraction of the cohort pruned from the low-deviation end.
    pub v_l: f64,
    /// Fraction of the cohort pruned from the high-deviation end.
    pub v_h: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { v_l: 0.1, v_h: 0.1 }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_l", self.v_l), ("v_h", self.v_h)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// `(low, high)` counts pruned from a cohort of `cohort` clients.
    pub fn pruned_counts(&self, cohort: usize) -> (usize, usize) {
        let n = cohort as f64;
        ((self.v_l * n).floor() as usize, (self.v_h * n).floor() as usize)
    }

    pub fn trusted_size(&self, cohort: usize) -> usize {
        let (lo, hi) = self.pruned_counts(cohort);
        cohort.saturating_sub(lo + hi)
    }

    /// Fails when pruning would leave no client for a cohort of this size.
    pub fn check_cohort(&self, cohort: usize) -> Result<()> {
        let (lo, hi) = self.pruned_counts(cohort);
        if lo + hi >= cohort {
            return Err(Error::EmptyTrustedSet {
                layer: 0,
                cohort,
                pruned: lo + hi,
            });
        }
        Ok(())
    }
}

/// Per-layer record of one pruning decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAudit {
    pub layer: usize,
    /// `(client_id, deviation)` sorted ascending by deviation, then id.
    pub deviations: Vec<(usize, f64)>,
    pub trusted: Vec<usize>,
}

fn check_homogeneous(models: &[&ModelParams]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::param("uploads", "need at least one upload"))?;
    for m in &models[1..] {
        first.ensure_same_architecture(m)?;
    }
    Ok(())
}

/// Running weighted mean `m += (w / W) (x - m)`, clamped to the segment
/// between `m` and `x`. Identical inputs reproduce themselves exactly and every
/// output lies within the range of its inputs.
fn accumulate(mean: &mut [f64], x: &[f64], frac: f64) {
    for (m, &v) in mean.iter_mut().zip(x) {
        let next = *m + frac * (v - *m);
        *m = next.clamp(m.min(v), m.max(v));
    }
}

fn flat(layer: &LayerParams) -> Vec<f64> {
    layer.values().copied().collect()
}

fn unflatten(shape: &LayerParams, values: Vec<f64>) -> LayerParams {
    let mut out = shape.clone();
    for (dst, v) in out.values_mut().zip(values) {
        *dst = v;
    }
    out
}

/// Weighted mean of layer `l` over `members`, taken in the given order.
fn weighted_layer(members: &[(&ModelParams, f64)], l: usize) -> LayerParams {
    let template = &members[0].0.layers()[l];
    let mut mean = flat(template);
    let mut total = members[0].1;
    for &(m, w) in &members[1..] {
        total += w;
        accumulate(&mut mean, &flat(&m.layers()[l]), w / total);
    }
    unflatten(template, mean)
}

/// Unweighted per-layer mean, summed in slice order.
pub fn layer_mean(uploads: &[ModelParams]) -> Result<ModelParams> {
    let refs: Vec<&ModelParams> = uploads.iter().collect();
    check_homogeneous(&refs)?;
    let members: Vec<(&ModelParams, f64)> = refs.into_iter().map(|m| (m, 1.0)).collect();
    let layers = (0..uploads[0].num_layers())
        .map(|l| weighted_layer(&members, l))
        .collect();
    ModelParams::from_layers(uploads[0].spec().clone(), layers)
}

fn l2_distance(a: &LayerParams, b: &LayerParams) -> f64 {
    a.values()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Deviation of every upload's layers from `mean`, ordered by layer then upload.
pub fn layer_deviations(uploads: &[ClientUpload], mean: &ModelParams) -> Result<Vec<LayerDeviation>> {
    for u in uploads {
        mean.ensure_same_architecture(&u.model)?;
    }
    let mut out = Vec::with_capacity(uploads.len() * mean.num_layers());
    for (l, ml) in mean.layers().iter().enumerate() {
        for u in uploads {
            let deviation = l2_distance(&u.model.layers()[l], ml);
            if !deviation.is_finite() {
                return Err(Error::NonFinite(format!(
                    "deviation of client {} at layer {l}",
                    u.client_id
                )));
            }
            out.push(LayerDeviation {
                client_id: u.client_id,
                layer: l,
                deviation,
            });
        }
    }
    Ok(out)
}

fn sorted_deviations(devs: &[LayerDeviation]) -> Ranked {
    let mut sorted: Vec<(usize, f64)> = devs.iter().map(|d| (d.client_id, d.deviation)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    sorted
}

/// `(client id, deviation)` pairs in ascending deviation order.
type Ranked = Vec<(usize, f64)>;

/// Ranked deviations and ascending trusted ids of one layer.
fn trusted_members(devs: &[LayerDeviation], cfg: &AggregationConfig) -> Result<(Ranked, Vec<usize>)> {
    let layer = devs.first().map_or(0, |d| d.layer);
    let sorted = sorted_deviations(devs);
    let (lo, hi) = cfg.pruned_counts(sorted.len());
    if lo + hi >= sorted.len() {
        return Err(Error::EmptyTrustedSet {
            layer,
            cohort: sorted.len(),
            pruned: lo + hi,
        });
    }
    let mut members: Vec<usize> = sorted[lo..sorted.len() - hi].iter().map(|p| p.0).collect();
    members.sort_unstable();
    Ok((sorted, members))
}

/// Drops the `floor(v_l |S|)` lowest and `floor(v_h |S|)` highest deviations of
/// one layer, ties broken by ascending client id. `total_weight` counts one
/// per member; use [`lpa_aggregate`] for sample-weighted totals.
pub fn trusted_set(devs: &[LayerDeviation], cfg: &AggregationConfig) -> Result<TrustedSet> {
    cfg.validate()?;
    let layer = devs.first().map_or(0, |d| d.layer);
    if devs.iter().any(|d| d.layer != layer) {
        return Err(Error::param("devs", "deviations span more than one layer"));
    }
    let (_, members) = trusted_members(devs, cfg)?;
    Ok(TrustedSet {
        layer,
        total_weight: members.len(),
        members,
    })
}

fn sorted_uploads(uploads: &[ClientUpload]) -> Result<Vec<&ClientUpload>> {
    let mut sorted: Vec<&ClientUpload> = uploads.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::param(
            "uploads",
            format!("duplicate client id {}", w[0].client_id),
        ));
    }
    if sorted.is_empty() {
        return Err(Error::param("uploads", "need at least one upload"));
    }
    if let Some(u) = sorted.iter().find(|u| u.n_k == 0) {
        return Err(Error::param(
            "uploads",
            format!("client {} reports zero samples", u.client_id),
        ));
    }
    let models: Vec<&ModelParams> = sorted.iter().map(|u| &u.model).collect();
    check_homogeneous(&models)?;
    Ok(sorted)
}

/// Layer-wise pruning aggregation, also returning the per-layer audit.
pub fn lpa_aggregate_audited(
    uploads: &[ClientUpload],
    cfg: &AggregationConfig,
) -> Result<(ModelParams, Vec<LayerAudit>)> {
    cfg.validate()?;
    let sorted = sorted_uploads(uploads)?;
    let owned: Vec<ClientUpload> = sorted.iter().map(|u| (*u).clone()).collect();
    let models: Vec<ModelParams> = owned.iter().map(|u| u.model.clone()).collect();
    let mean = layer_mean(&models)?;
    let devs = layer_deviations(&owned, &mean)?;

    let n = owned.len();
    let mut layers = Vec::with_capacity(mean.num_layers());
    let mut audit = Vec::with_capacity(mean.num_layers());
    for (l, layer_devs) in devs.chunks(n).enumerate() {
        let (deviations, trusted) = trusted_members(layer_devs, cfg)?;
        let members: Vec<(&ModelParams, f64)> = owned
            .iter()
            .filter(|u| trusted.binary_search(&u.client_id).is_ok())
            .map(|u| (&u.model, u.n_k as f64))
            .collect();
        layers.push(weighted_layer(&members, l));
        audit.push(LayerAudit {
            layer: l,
            deviations,
            trusted,
        });
    }
    Ok((ModelParams::from_layers(mean.spec().clone(), layers)?, audit))
}

pub fn lpa_aggregate(uploads: &[ClientUpload], cfg: &AggregationConfig) -> Result<ModelParams> {
    lpa_aggregate_audited(uploads, cfg).map(|(m, _)| m)
}

/// Sample-weighted mean of all uploads.
pub fn fedavg_aggregate(uploads: &[ClientUpload]) -> Result<ModelParams> {
    let sorted = sorted_uploads(uploads)?;
    let members: Vec<(&ModelParams, f64)> = sorted.iter().map(|u| (&u.model, u.n_k as f64)).collect();
    let first = members[0].0;
    let layers = (0..first.num_layers()).map(|l| weighted_layer(&members, l)).collect();
    ModelParams::from_layers(first.spec().clone(), layers)
}
