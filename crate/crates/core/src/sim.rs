//! The federation round loop.
//!
//! [`Federation::new`] derives everything a run needs (data, splits, client
//! fleet, adversaries, initial models) from the config and master seed alone.
//! [`Federation::run_round`] then samples a cohort, trains it in parallel,
//! aggregates and evaluates. Client updates touch disjoint state and their
//! results are gathered in client-id order, so outcomes do not depend on
//! scheduling.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::client::{
    fedavg_update, fedmlac_update, fedprox_update, make_heterogeneous_fleet, ClientState, ClientUpload,
};
use crate::config::{AdversaryKind, Algorithm, DataSource, EvalMode, FederationConfig};
use crate::data::{
    dirichlet_partition, group_partition, holdout_split, iid_partition, inject_gaussian_noise, inject_label_errors,
    load_feature_csv, synth_gaussian_mixture, Dataset, PartitionPlan, PartitionStrategy, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::nn::ModelParams;
use crate::seed::{derive_seed, rng_for, tag};
use crate::server::{fedavg_aggregate, lpa_aggregate_audited, LayerAudit};

/// Outcome of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based index of the round that produced this record.
    pub round: u64,
    pub sampled: Vec<usize>,
    /// Accuracy and macro-F1 as selected by the eval mode.
    pub test_acc: f64,
    pub macro_f1: f64,
    pub global_acc: f64,
    pub global_f1: f64,
    /// Mean over clients with a non-empty local test split.
    pub personalized_acc: f64,
    pub personalized_f1: f64,
    pub mean_train_loss: f64,
    pub mean_grad_sq: f64,
    /// Trusted-set size per layer; the cohort size when nothing is pruned.
    pub trusted_sizes: Vec<usize>,
}

impl RoundRecord {
    pub fn trusted_min(&self) -> usize {
        self.trusted_sizes.iter().copied().min().unwrap_or(0)
    }

    pub fn trusted_max(&self) -> usize {
        self.trusted_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// Receives every round as it completes.
pub trait RoundSink {
    fn record(&mut self, record: &RoundRecord, audit: &[LayerAudit]) -> Result<()>;
}

/// Uniform sample without replacement of `max(1, round(ratio * n))` client
/// ids, ascending. A pure function of `(master_seed, round)`.
pub fn sample_clients(n: usize, active_ratio: f64, master_seed: u64, round: u64) -> Vec<usize> {
    let size = ((active_ratio * n as f64).round() as usize).clamp(1, n.max(1));
    let mut ids = sample(&mut rng_for(&[master_seed, tag::ROUND, round]), n, size).into_vec();
    ids.sort_unstable();
    ids
}

pub fn load_dataset(cfg: &FederationConfig) -> Result<Dataset> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => synth_gaussian_mixture(
            &SyntheticSpec {
                classes: d.classes,
                dim: d.dim,
                per_class: d.per_class,
                spread: d.spread,
                groups: d.groups,
            },
            derive_seed(&[cfg.federation.master_seed, tag::DATA]),
        ),
        DataSource::Csv => load_feature_csv(d.path.as_ref().expect("validated path"), None),
    }
}

pub fn partition(cfg: &FederationConfig, pool: &Dataset) -> Result<PartitionPlan> {
    let n = cfg.federation.clients;
    let seed = derive_seed(&[cfg.federation.master_seed, tag::PARTITION]);
    let plan = match cfg.data.partition {
        PartitionStrategy::Iid => iid_partition(pool, n, seed)?,
        PartitionStrategy::Dirichlet => dirichlet_partition(pool, n, cfg.data.dirichlet_alpha, seed)?,
        PartitionStrategy::Group => group_partition(pool)?,
    };
    if plan.num_clients() != n {
        return Err(Error::config(
            "federation.clients",
            format!(
                "the data holds {} groups but {n} clients are configured",
                plan.num_clients()
            ),
        ));
    }
    Ok(plan)
}

#[derive(Debug, Clone)]
pub struct Federation {
    cfg: FederationConfig,
    clients: Vec<ClientState>,
    global: ModelParams,
    test_set: Dataset,
    adversaries: Vec<usize>,
    plan: PartitionPlan,
    homogeneous: bool,
    round: u64,
}

impl Federation {
    pub fn new(cfg: FederationConfig) -> Result<Self> {
        let data = load_dataset(&cfg)?;
        Self::with_dataset(cfg, data)
    }

    /// Builds the federation over an already loaded pool of samples.
    pub fn with_dataset(cfg: FederationConfig, data: Dataset) -> Result<Self> {
        cfg.validate()?;
        let master = cfg.federation.master_seed;
        let (dim, classes) = (data.feature_dim(), data.num_classes());

        let (pool_idx, test_idx) =
            holdout_split(data.len(), cfg.data.test_fraction, &mut rng_for(&[master, tag::SPLIT]));
        let pool = data.subset(&pool_idx);
        let test_set = data.subset(&test_idx);
        let plan = partition(&cfg, &pool)?;
        let n = plan.num_clients();

        let adv = &cfg.adversary;
        let adv_root = adv.adversary_seed.unwrap_or(master);
        let adversaries = if adv.kind == AdversaryKind::None {
            Vec::new()
        } else {
            let count = ((adv.fraction * n as f64 + 1e-9).floor() as usize).min(n);
            let mut ids = sample(&mut rng_for(&[adv_root, tag::ADVERSARY]), n, count).into_vec();
            ids.sort_unstable();
            ids
        };

        let plugin_spec = cfg.plugin_spec(dim, classes)?;
        let local_specs = cfg.local_specs(dim, classes)?;
        let homogeneous = local_specs.len() == 1 && local_specs[0] == plugin_spec;
        let algorithm = cfg.federation.algorithm;
        let global = if algorithm.is_mutual() {
            ModelParams::init(&plugin_spec, &mut rng_for(&[master, tag::PLUGIN_INIT]))
        } else {
            ModelParams::init(&local_specs[0], &mut rng_for(&[master, tag::PLUGIN_INIT]))
        };
        let fleet = make_heterogeneous_fleet(&local_specs, n, derive_seed(&[master, tag::FLEET]))?;

        let mut clients = Vec::with_capacity(n);
        for (k, (indices, spec)) in plan.clients.iter().zip(fleet).enumerate() {
            let local = pool.subset(indices);
            let (train_idx, test_idx) = holdout_split(
                local.len(),
                cfg.data.local_test_fraction,
                &mut rng_for(&[master, tag::LOCAL_SPLIT, k as u64]),
            );
            let mut train = local.subset(&train_idx);
            if adversaries.binary_search(&k).is_ok() {
                let seed = derive_seed(&[adv_root, tag::CORRUPTION, k as u64]);
                train = match adv.kind {
                    AdversaryKind::LabelFlip => inject_label_errors(&train, adv.rate, seed)?,
                    AdversaryKind::FeatureNoise => inject_gaussian_noise(&train, adv.snr_db, seed),
                    AdversaryKind::None | AdversaryKind::ModelScale => train,
                };
            }
            let model = if algorithm.is_mutual() {
                ModelParams::init(&spec, &mut rng_for(&[master, tag::LOCAL_INIT, k as u64]))
            } else {
                global.clone()
            };
            let seed = derive_seed(&[master, tag::CLIENT, k as u64]);
            clients.push(ClientState::new(k, train, local.subset(&test_idx), model, seed)?);
        }

        Ok(Self {
            cfg,
            clients,
            global,
            test_set,
            adversaries,
            plan,
            homogeneous,
            round: 0,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global_model(&self) -> &ModelParams {
        &self.global
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test_set
    }

    pub fn adversaries(&self) -> &[usize] {
        &self.adversaries
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    /// Rounds completed so far.
    pub fn rounds_done(&self) -> u64 {
        self.round
    }

    fn local_update(&self, state: &mut ClientState, round: u64) -> Result<ClientUpload> {
        let local = self.cfg.effective_local();
        match self.cfg.federation.algorithm {
            Algorithm::Fedmlac | Algorithm::FedmlacNoLpa => fedmlac_update(state, &self.global, &local, round),
            Algorithm::FedmlacNoMl => {
                let mut up = fedmlac_update(state, &self.global, &local, round)?;
                if self.homogeneous {
                    up.model = state.local_model.clone();
                }
                Ok(up)
            }
            Algorithm::Fedavg => fedavg_update(state, &self.global, &local, round),
            Algorithm::Fedprox => fedprox_update(state, &self.global, &local, round),
        }
    }

    /// Mean accuracy and F1 of each client's own model (the global model for
    /// the baselines) on its local test split.
    pub fn personalized_metrics(&self) -> Result<(f64, f64)> {
        let mutual = self.cfg.federation.algorithm.is_mutual();
        let scores: Vec<(f64, f64)> = self
            .clients
            .par_iter()
            .filter(|c| !c.test.is_empty())
            .map(|c| evaluate(if mutual { &c.local_model } else { &self.global }, &c.test))
            .collect::<Result<_>>()?;
        if scores.is_empty() {
            return Ok((0.0, 0.0));
        }
        let n = scores.len() as f64;
        Ok((
            scores.iter().map(|s| s.0).sum::<f64>() / n,
            scores.iter().map(|s| s.1).sum::<f64>() / n,
        ))
    }

    fn round_inner(&mut self, t: u64) -> Result<(RoundRecord, Vec<LayerAudit>)> {
        let run = &self.cfg.federation;
        let sampled = sample_clients(self.clients.len(), run.active_ratio, run.master_seed, t);
        let mut selected = vec![false; self.clients.len()];
        for &k in &sampled {
            selected[k] = true;
        }

        let mut clients = std::mem::take(&mut self.clients);
        let result: Result<Vec<ClientUpload>> = clients
            .par_iter_mut()
            .filter(|c| selected[c.id])
            .map(|c| self.local_update(c, t))
            .collect();
        self.clients = clients;
        let mut uploads = result?;

        if self.cfg.adversary.kind == AdversaryKind::ModelScale {
            for up in &mut uploads {
                if self.adversaries.binary_search(&up.client_id).is_ok() {
                    up.model.scale(self.cfg.adversary.factor);
                }
            }
        }

        let (global, audit) = if run.algorithm.uses_lpa() {
            lpa_aggregate_audited(&uploads, &self.cfg.aggregation)?
        } else {
            (fedavg_aggregate(&uploads)?, Vec::new())
        };
        if !global.is_finite() {
            return Err(Error::NonFinite("aggregated global model".into()));
        }
        self.global = global;

        let (global_acc, global_f1) = evaluate(&self.global, &self.test_set)?;
        let (personalized_acc, personalized_f1) = self.personalized_metrics()?;
        let (test_acc, macro_f1) = match run.eval_mode {
            EvalMode::Global => (global_acc, global_f1),
            EvalMode::Personalized => (personalized_acc, personalized_f1),
        };
        let k = uploads.len() as f64;
        let trusted_sizes = if audit.is_empty() {
            vec![uploads.len(); self.global.num_layers()]
        } else {
            audit.iter().map(|a| a.trusted.len()).collect()
        };
        let record = RoundRecord {
            round: t + 1,
            sampled,
            test_acc,
            macro_f1,
            global_acc,
            global_f1,
            personalized_acc,
            personalized_f1,
            mean_train_loss: uploads.iter().map(|u| u.train_loss).sum::<f64>() / k,
            mean_grad_sq: uploads.iter().map(|u| u.grad_sq_norm).sum::<f64>() / k,
            trusted_sizes,
        };
        Ok((record, audit))
    }

    /// Runs the next round; errors carry the 1-based round index.
    pub fn run_round(&mut self) -> Result<(RoundRecord, Vec<LayerAudit>)> {
        let t = self.round;
        let out = self.round_inner(t).map_err(|e| Error::Round {
            round: t + 1,
            source: Box::new(e),
        })?;
        self.round += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationSummary {
    pub records: Vec<RoundRecord>,
    pub global: ModelParams,
    pub local_models: Vec<ModelParams>,
    pub adversaries: Vec<usize>,
}

impl SimulationSummary {
    pub fn final_record(&self) -> &RoundRecord {
        self.records.last().expect("at least one round")
    }
}

/// Runs all configured rounds, streaming each to `sink` as it completes.
pub fn run_federation(mut fed: Federation, mut sink: Option<&mut dyn RoundSink>) -> Result<SimulationSummary> {
    let rounds = fed.cfg.federation.rounds;
    let mut records = Vec::with_capacity(rounds as usize);
    while fed.round < rounds {
        let (record, audit) = fed.run_round()?;
        if let Some(s) = sink.as_deref_mut() {
            s.record(&record, &audit)?;
        }
        records.push(record);
    }
    Ok(SimulationSummary {
        records,
        local_models: fed.clients.iter().map(|c| c.local_model.clone()).collect(),
        global: fed.global,
        adversaries: fed.adversaries,
    })
}

pub fn run_simulation(cfg: &FederationConfig, sink: Option<&mut dyn RoundSink>) -> Result<SimulationSummary> {
    run_federation(Federation::new(cfg.clone())?, sink)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> FederationConfig {
        let mut cfg = FederationConfig::default();
        cfg.federation.algorithm = algorithm;
        cfg.federation.rounds = 3;
        cfg.federation.clients = 4;
        cfg.federation.active_ratio = 0.5;
        cfg.data.per_class = 30;
        cfg.model.plugin_hidden = vec![6];
        cfg.aggregation.v_l = 0.0;
        cfg.aggregation.v_h = 0.0;
        cfg
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_clients(7, 1.0, 3, 0), (0..7).collect::<Vec<_>>());
        let s = sample_clients(10, 0.2, 3, 5);
        assert_eq!(s.len(), 2);
        assert_ne!(s[0], s[1]);
        assert_eq!(s, sample_clients(10, 0.2, 3, 5));
        assert_eq!(sample_clients(10, 0.01, 3, 5).len(), 1);
    }

    #[test]
    fn sampling_frequency_is_uniform() {
        let mut counts = [0usize; 10];
        for t in 0..10_000 {
            for k in sample_clients(10, 0.2, 77, t) {
                counts[k] += 1;
            }
        }
        for c in counts {
            assert!((1850..=2150).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn frozen_learning_rate_keeps_global_bitwise() {
        let mut cfg = small(Algorithm::Fedmlac);
        cfg.federation.rounds = 1;
        cfg.federation.active_ratio = 0.25;
        cfg.local.lr = 0.0;
        let fed = Federation::new(cfg).unwrap();
        let before = fed.global_model().clone();
        let summary = run_federation(fed, None).unwrap();
        assert_eq!(summary.records[0].sampled.len(), 1);
        assert_eq!(summary.global, before);
    }

    #[test]
    fn all_algorithms_run() {
        for alg in [
            Algorithm::Fedmlac,
            Algorithm::FedmlacNoLpa,
            Algorithm::FedmlacNoMl,
            Algorithm::Fedavg,
            Algorithm::Fedprox,
        ] {
            let s = run_simulation(&small(alg), None).unwrap();
            assert_eq!(s.records.len(), 3);
            for r in &s.records {
                assert!((0.0..=1.0).contains(&r.test_acc) && (0.0..=1.0).contains(&r.macro_f1));
                assert_eq!(r.trusted_sizes.len(), 2);
            }
        }
    }

    #[test]
    fn ablation_without_pruning_matches_lpa() {
        let a = run_simulation(&small(Algorithm::Fedmlac), None).unwrap();
        let b = run_simulation(&small(Algorithm::FedmlacNoLpa), None).unwrap();
        assert_eq!(a.global, b.global);
        assert_eq!(a.local_models, b.local_models);
    }

    #[test]
    fn zero_fraction_adversary_is_inert() {
        let clean = small(Algorithm::Fedmlac);
        for kind in [
            AdversaryKind::LabelFlip,
            AdversaryKind::FeatureNoise,
            AdversaryKind::ModelScale,
        ] {
            let mut cfg = clean.clone();
            cfg.adversary.kind = kind;
            cfg.adversary.rate = 0.5;
            cfg.adversary.snr_db = 5.0;
            cfg.adversary.factor = 40.0;
            let a = run_simulation(&clean, None).unwrap();
            let b = run_simulation(&cfg, None).unwrap();
            assert!(b.adversaries.is_empty());
            assert_eq!(a.records, b.records);
            assert_eq!(a.global, b.global);
        }
    }

    #[test]
    fn adversary_count_rounds_down() {
        let mut cfg = small(Algorithm::Fedavg);
        cfg.federation.clients = 10;
        cfg.adversary.kind = AdversaryKind::LabelFlip;
        cfg.adversary.fraction = 0.3;
        assert_eq!(Federation::new(cfg.clone()).unwrap().adversaries().len(), 3);
        cfg.adversary.fraction = 0.25;
        assert_eq!(Federation::new(cfg).unwrap().adversaries().len(), 2);
    }

    #[test]
    fn no_ml_uploads_local_models_on_homogeneous_fleet() {
        let mut cfg = small(Algorithm::FedmlacNoMl);
        cfg.federation.rounds = 1;
        cfg.federation.active_ratio = 0.25;
        let s = run_simulation(&cfg, None).unwrap();
        let k = s.records[0].sampled[0];
        assert_eq!(s.global, s.local_models[k]);
    }

    #[test]
    fn heterogeneous_no_ml_leaves_plugin_untouched() {
        let mut cfg = small(Algorithm::FedmlacNoMl);
        cfg.model.local_hidden = vec![vec![5], vec![3, 3]];
        let fed = Federation::new(cfg).unwrap();
        let start = fed.global_model().clone();
        let s = run_federation(fed, None).unwrap();
        assert_eq!(s.global, start);
    }

    #[test]
    fn group_count_must_match_clients() {
        let mut cfg = small(Algorithm::Fedavg);
        cfg.data.groups = Some(3);
        cfg.data.partition = PartitionStrategy::Group;
        let err = Federation::new(cfg.clone()).unwrap_err();
        assert!(err.is_config());
        cfg.federation.clients = 3;
        cfg.federation.active_ratio = 1.0;
        assert_eq!(Federation::new(cfg).unwrap().clients().len(), 3);
    }
}
