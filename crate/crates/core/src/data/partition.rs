//! Client partitioning of a parent dataset.
//!
//! Dirichlet plans draw, for every class, a proportion vector over clients
//! from `Dirichlet(alpha * 1_N)` and hand out that class's samples by
//! largest-remainder rounding. A client left empty afterwards takes one sample
//! from the currently largest client (lowest id on ties), repeated until every
//! client holds at least one sample.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    Iid,
    Dirichlet,
    Group,
}

/// Disjoint per-client index lists into a parent dataset.
///
/// Serialized as `{"strategy", "alpha"?, "seed", "clients": [[indices]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub strategy: PartitionStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
    pub clients: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Checks disjointness, full coverage of `0..parent_len` and non-empty clients.
    pub fn validate(&self, parent_len: usize) -> Result<()> {
        let mut seen = vec![false; parent_len];
        for (k, client) in self.clients.iter().enumerate() {
            if client.is_empty() {
                return Err(Error::param("partition", format!("client {k} is empty")));
            }
            for &i in client {
                if i >= parent_len {
                    return Err(Error::param("partition", format!("index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::param("partition", format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::param("partition", format!("index {missing} unassigned")));
        }
        Ok(())
    }

    /// Class histogram of every client.
    pub fn histograms(&self, parent: &Dataset) -> Vec<Vec<usize>> {
        self.clients
            .iter()
            .map(|idx| {
                let mut h = vec![0; parent.num_classes()];
                for &i in idx {
                    h[parent.samples()[i].label] += 1;
                }
                h
            })
            .collect()
    }
}

/// Shannon entropy (nats) of a class histogram.
pub fn label_entropy(histogram: &[usize]) -> f64 {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return 0.0;
    }
    histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .fold(0.0, |acc, h| acc + h)
}

fn check_clients(ds: &Dataset, n_clients: usize) -> Result<()> {
    if n_clients < 2 {
        return Err(Error::param("clients", "need at least two clients"));
    }
    if n_clients > ds.len() {
        return Err(Error::param(
            "clients",
            format!("{n_clients} clients but only {} samples", ds.len()),
        ));
    }
    Ok(())
}

/// Uniform shuffle cut into near-equal shares (the first `n % N` clients get one extra).
pub fn iid_partition(ds: &Dataset, n_clients: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(ds, n_clients)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng_from(seed));
    let base = ds.len() / n_clients;
    let extra = ds.len() % n_clients;
    let mut clients = Vec::with_capacity(n_clients);
    let mut start = 0;
    for k in 0..n_clients {
        let size = base + usize::from(k < extra);
        let mut idx = order[start..start + size].to_vec();
        idx.sort_unstable();
        clients.push(idx);
        start += size;
    }
    Ok(PartitionPlan {
        strategy: PartitionStrategy::Iid,
        alpha: None,
        seed,
        clients,
    })
}

/// Largest-remainder apportionment of `total` items by `proportions`
/// (ties go to the lower index).
fn apportion(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

pub fn dirichlet_partition(ds: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    check_clients(ds, n_clients)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param("alpha", e.to_string()))?;
    let mut rng = rng_from(seed);
    let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n_clients];

    for class in 0..ds.num_classes() {
        let mut members: Vec<usize> = ds
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        members.shuffle(&mut rng);
        let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let proportions: Vec<f64> = if total > 0.0 && total.is_finite() {
            draws.iter().map(|d| d / total).collect()
        } else {
            vec![1.0 / n_clients as f64; n_clients]
        };
        let mut start = 0;
        for (k, count) in apportion(&proportions, members.len()).into_iter().enumerate() {
            clients[k].extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }

    for client in &mut clients {
        client.sort_unstable();
    }
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..n_clients)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .expect("at least two clients");
        let moved = clients[donor].pop().expect("donor holds at least two samples");
        clients[empty].push(moved);
    }

    Ok(PartitionPlan {
        strategy: PartitionStrategy::Dirichlet,
        alpha: Some(alpha),
        seed,
        clients,
    })
}

/// One client per distinct group id, ordered by ascending group id.
pub fn group_partition(ds: &Dataset) -> Result<PartitionPlan> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples().iter().enumerate() {
        let g = s
            .group
            .ok_or_else(|| Error::param("group", format!("sample {i} has no group id")))?;
        groups.entry(g).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(Error::param("group", "dataset is empty"));
    }
    Ok(PartitionPlan {
        strategy: PartitionStrategy::Group,
        alpha: None,
        seed: 0,
        clients: groups.into_values().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_mixture, Sample, SyntheticSpec};

    fn balanced(classes: usize, per_class: usize) -> Dataset {
        synth_gaussian_mixture(
            &SyntheticSpec {
                classes,
                dim: 2,
                per_class,
                spread: 0.5,
                groups: None,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(apportion(&[0.2, 0.3, 0.5], 10), vec![2, 3, 5]);
        assert_eq!(apportion(&[0.34, 0.33, 0.33], 2), vec![1, 1, 0]);
        assert_eq!(apportion(&[1.0, 0.0], 0), vec![0, 0]);
    }

    #[test]
    fn dirichlet_plans_are_partitions() {
        let ds = balanced(10, 30);
        for (alpha, seed) in [(0.05, 1), (0.1, 2), (1.0, 3), (100.0, 4)] {
            let plan = dirichlet_partition(&ds, 10, alpha, seed).unwrap();
            plan.validate(ds.len()).unwrap();
        }
    }

    #[test]
    fn extreme_skew_repairs_empty_clients() {
        let ds = balanced(2, 5);
        let plan = dirichlet_partition(&ds, 9, 0.01, 7).unwrap();
        plan.validate(ds.len()).unwrap();
        assert!(plan.clients.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn concentration_limit_is_uniform() {
        let ds = balanced(4, 500);
        let plan = dirichlet_partition(&ds, 5, 1e6, 11).unwrap();
        for h in plan.histograms(&ds) {
            for &count in &h {
                assert!((count as f64 - 100.0).abs() <= 5.0, "{h:?}");
            }
        }
    }

    #[test]
    fn too_many_clients() {
        let ds = balanced(2, 2);
        assert!(dirichlet_partition(&ds, 5, 1.0, 0).is_err());
        assert!(iid_partition(&ds, 1, 0).is_err());
    }

    #[test]
    fn iid_shares_are_near_equal() {
        let ds = balanced(3, 11);
        let plan = iid_partition(&ds, 4, 5).unwrap();
        plan.validate(ds.len()).unwrap();
        let sizes: Vec<_> = plan.clients.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![9, 8, 8, 8]);
    }

    fn grouped(groups: &[u64]) -> Dataset {
        let samples = groups
            .iter()
            .enumerate()
            .map(|(i, &g)| Sample {
                features: vec![i as f64],
                label: i % 2,
                group: Some(g),
            })
            .collect();
        Dataset::new(samples, 2, 1).unwrap()
    }

    #[test]
    fn group_partition_follows_tags() {
        let ds = grouped(&[5, 2, 5, 9, 2, 5]);
        let plan = group_partition(&ds).unwrap();
        assert_eq!(plan.clients, vec![vec![1, 4], vec![0, 2, 5], vec![3]]);
        plan.validate(ds.len()).unwrap();

        let single = group_partition(&grouped(&[1, 1, 1])).unwrap();
        assert_eq!(single.clients, vec![vec![0, 1, 2]]);

        let mut samples = ds.samples().to_vec();
        samples[3].group = None;
        let untagged = Dataset::new(samples, 2, 1).unwrap();
        assert!(group_partition(&untagged).is_err());
    }

    #[test]
    fn group_partition_ignores_input_order() {
        let tags = [3, 1, 3, 2, 1, 1, 2];
        let ds = grouped(&tags);
        let perm = [6, 2, 0, 5, 1, 4, 3];
        let shuffled = ds.subset(&perm);
        let a = group_partition(&ds).unwrap();
        let b = group_partition(&shuffled).unwrap();
        assert_eq!(a.num_clients(), b.num_clients());
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            let mut fa: Vec<i64> = ca.iter().map(|&i| ds.samples()[i].features[0] as i64).collect();
            let mut fb: Vec<i64> = cb.iter().map(|&i| shuffled.samples()[i].features[0] as i64).collect();
            fa.sort_unstable();
            fb.sort_unstable();
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn plan_json_shape() {
        let ds = balanced(2, 3);
        let plan = dirichlet_partition(&ds, 2, 0.5, 42).unwrap();
        let v: serde_json::Value = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["strategy"], "dirichlet");
        assert_eq!(v["alpha"], 0.5);
        assert_eq!(v["seed"], 42);
        assert_eq!(v["clients"].as_array().unwrap().len(), 2);
        let back: PartitionPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
        let g = serde_json::to_value(group_partition(&grouped(&[1, 2])).unwrap()).unwrap();
        assert!(g.get("alpha").is_none());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(label_entropy(&[5, 0, 0]), 0.0);
        assert!((label_entropy(&[1, 1]) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(label_entropy(&[0, 0]), 0.0);
    }
}
