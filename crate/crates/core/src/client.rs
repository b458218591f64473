//! Client-side local updates.
//!
//! [`fedmlac_update`] runs mutual learning between the client's personalized
//! model and a downloaded copy of the Plug-in model; [`fedavg_update`] and
//! [`fedprox_update`] are the homogeneous baselines. Every update consumes a
//! broadcast model by reference and returns an owned [`ClientUpload`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::loss::{add_proximal_term, blended_objective, cross_entropy_loss_and_grads, distillation_objective};
use crate::nn::ops::{backward, forward_trace, sgd_step, softmax};
use crate::nn::{ModelParams, ModelSpec};
use crate::seed::{derive_seed, rng_from};

/// Which client model teaches the Plug-in model within a batch iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherMode {
    /// The personalized model as it was at the top of the batch iteration.
    #[default]
    Snapshot,
    /// The personalized model right after its own step on the batch.
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalUpdateConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the cross-entropy term in the client objective.
    pub alpha: f64,
    pub temperature: f64,
    pub prox_mu: f64,
    pub teacher: TeacherMode,
    /// When false the Plug-in copy is returned untouched. Set by the
    /// orchestrator from the algorithm, never read from config files.
    #[serde(skip, default = "enabled")]
    pub plugin_updates: bool,
}

fn enabled() -> bool {
    true
}

impl Default for LocalUpdateConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            lr: 0.01,
            alpha: 0.5,
            temperature: 1.0,
            prox_mu: 0.0,
            teacher: TeacherMode::Snapshot,
            plugin_updates: true,
        }
    }
}

impl LocalUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::param(
                "lr",
                format!("must be a non-negative real, got {}", self.lr),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param(
                "temperature",
                format!("must be positive, got {}", self.temperature),
            ));
        }
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::param(
                "prox_mu",
                format!("must be non-negative, got {}", self.prox_mu),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub train: Dataset,
    /// Local evaluation split, used for personalized accuracy.
    pub test: Dataset,
    pub local_model: ModelParams,
    pub rng_seed: u64,
}

impl ClientState {
    pub fn new(id: usize, train: Dataset, test: Dataset, local_model: ModelParams, rng_seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::param("train", format!("client {id} has no training samples")));
        }
        let spec = local_model.spec();
        if spec.output_dim() != train.num_classes() || spec.input_dim() != train.feature_dim() {
            return Err(Error::ArchitectureMismatch(format!(
                "client {id}: model maps {} -> {} but data has {} features and {} classes",
                spec.input_dim(),
                spec.output_dim(),
                train.feature_dim(),
                train.num_classes()
            )));
        }
        Ok(Self {
            id,
            train,
            test,
            local_model,
            rng_seed,
        })
    }

    pub fn num_train(&self) -> usize {
        self.train.len()
    }
}

/// Training settings echoed back with every upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateMeta {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct ClientUpload {
    pub client_id: usize,
    /// The trained Plug-in copy (FedMLAC) or the trained local model (baselines).
    pub model: ModelParams,
    pub n_k: usize,
    /// Mean training objective over all steps.
    pub train_loss: f64,
    /// Mean squared gradient norm of the uploaded model's objective over all steps.
    pub grad_sq_norm: f64,
    pub meta: UpdateMeta,
}

/// Visiting order of the training samples for one epoch; a pure function of
/// `(client seed, round, epoch)`.
pub fn batch_order(client_seed: u64, round: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(&[client_seed, round, epoch as u64])));
    order
}

fn wrap(client_id: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        e @ Error::NonFiniteLoss { .. } => e,
        Error::NonFinite(what) => Error::NonFinite(format!("client {client_id}: {what}")),
        other => other,
    }
}

fn check_io(id: usize, model: &ModelParams, data: &Dataset, what: &str) -> Result<()> {
    let spec = model.spec();
    if spec.input_dim() != data.feature_dim() || spec.output_dim() != data.num_classes() {
        return Err(Error::ArchitectureMismatch(format!(
            "client {id}: {what} maps {} -> {} but data has {} features and {} classes",
            spec.input_dim(),
            spec.output_dim(),
            data.feature_dim(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Mutual-learning local update.
///
/// For every batch: the personalized model steps on
/// `alpha * CE + (1 - alpha) * KL(plugin || local)`, then the Plug-in copy steps
/// on `KL(local || plugin)` with the personalized model as teacher (its
/// pre-step snapshot unless `cfg.teacher` is [`TeacherMode::Fresh`]). The
/// personalized model persists in `state`; the trained Plug-in copy is uploaded.
pub fn fedmlac_update(
    state: &mut ClientState,
    plugin: &ModelParams,
    cfg: &LocalUpdateConfig,
    round: u64,
) -> Result<ClientUpload> {
    cfg.validate()?;
    check_io(state.id, plugin, &state.train, "plug-in model")?;
    let id = state.id;
    let mut plugin = plugin.clone();
    let n = state.train.len();
    let t = cfg.temperature;
    let mut steps = 0;
    let mut loss_sum = 0.0;
    let mut grad_sum = 0.0;

    for epoch in 0..cfg.epochs {
        let order = batch_order(state.rng_seed, round, epoch, n);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = state.train.batch(chunk)?;
            let client_trace = forward_trace(&state.local_model, &batch.features)?;
            let plugin_trace = forward_trace(&plugin, &batch.features)?;
            let plugin_probs = softmax(plugin_trace.logits(), t)?;

            let (loss, dlogits) = blended_objective(&client_trace, &plugin_probs, &batch.labels, cfg.alpha, t)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    client_id: id,
                    step: steps,
                });
            }
            let client_grads = backward(&state.local_model, &client_trace, &dlogits);
            sgd_step(&mut state.local_model, &client_grads, cfg.lr).map_err(wrap(id))?;

            if cfg.plugin_updates {
                let teacher = match cfg.teacher {
                    TeacherMode::Snapshot => softmax(client_trace.logits(), t)?,
                    TeacherMode::Fresh => softmax(forward_trace(&state.local_model, &batch.features)?.logits(), t)?,
                };
                let (plugin_loss, pdl) = distillation_objective(&plugin_trace, &teacher, t)?;
                if !plugin_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        client_id: id,
                        step: steps,
                    });
                }
                let plugin_grads = backward(&plugin, &plugin_trace, &pdl);
                grad_sum += plugin_grads.squared_norm();
                sgd_step(&mut plugin, &plugin_grads, cfg.lr).map_err(wrap(id))?;
            } else {
                grad_sum += client_grads.squared_norm();
            }
            loss_sum += loss;
            steps += 1;
        }
    }

    Ok(ClientUpload {
        client_id: id,
        model: plugin,
        n_k: n,
        train_loss: loss_sum / steps as f64,
        grad_sq_norm: grad_sum / steps as f64,
        meta: UpdateMeta {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            steps,
        },
    })
}

fn supervised_update(
    state: &mut ClientState,
    global_model: &ModelParams,
    cfg: &LocalUpdateConfig,
    round: u64,
    prox_mu: f64,
) -> Result<ClientUpload> {
    cfg.validate()?;
    state
        .local_model
        .ensure_same_architecture(global_model)
        .map_err(|e| match e {
            Error::ArchitectureMismatch(m) => Error::ArchitectureMismatch(format!("client {}: {m}", state.id)),
            other => other,
        })?;
    let id = state.id;
    state.local_model = global_model.clone();
    let n = state.train.len();
    let mut steps = 0;
    let mut loss_sum = 0.0;
    let mut grad_sum = 0.0;

    for epoch in 0..cfg.epochs {
        let order = batch_order(state.rng_seed, round, epoch, n);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = state.train.batch(chunk)?;
            let (mut loss, mut grads) = cross_entropy_loss_and_grads(&state.local_model, &batch)?;
            if prox_mu > 0.0 {
                loss += add_proximal_term(&state.local_model, global_model, prox_mu, &mut grads)?;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    client_id: id,
                    step: steps,
                });
            }
            grad_sum += grads.squared_norm();
            sgd_step(&mut state.local_model, &grads, cfg.lr).map_err(wrap(id))?;
            loss_sum += loss;
            steps += 1;
        }
    }

    Ok(ClientUpload {
        client_id: id,
        model: state.local_model.clone(),
        n_k: n,
        train_loss: loss_sum / steps as f64,
        grad_sq_norm: grad_sum / steps as f64,
        meta: UpdateMeta {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            steps,
        },
    })
}

/// Copies the global model into the client and trains it on cross-entropy.
pub fn fedavg_update(
    state: &mut ClientState,
    global_model: &ModelParams,
    cfg: &LocalUpdateConfig,
    round: u64,
) -> Result<ClientUpload> {
    supervised_update(state, global_model, cfg, round, 0.0)
}

/// As [`fedavg_update`], with the proximal pull `(mu / 2) * ||w - w_global||^2`.
pub fn fedprox_update(
    state: &mut ClientState,
    global_model: &ModelParams,
    cfg: &LocalUpdateConfig,
    round: u64,
) -> Result<ClientUpload> {
    supervised_update(state, global_model, cfg, round, cfg.prox_mu)
}

/// Uniform seeded assignment of one architecture per client.
pub fn make_heterogeneous_fleet(specs: &[ModelSpec], n_clients: usize, seed: u64) -> Result<Vec<ModelSpec>> {
    if specs.is_empty() {
        return Err(Error::param("local_specs", "need at least one architecture"));
    }
    let mut rng = rng_from(seed);
    Ok((0..n_clients)
        .map(|_| specs[rng.random_range(0..specs.len())].clone())
        .collect())
}
