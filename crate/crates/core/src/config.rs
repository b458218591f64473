//! Simulation configuration.
//!
//! Configs are TOML documents with six sections: `federation`, `data`,
//! `model`, `local`, `aggregation` and `adversary`. Every key name is unique
//! across sections, so overrides may name a key bare (`master_seed=7`) or
//! qualified (`federation.master_seed=7`). Omitted keys take their
//! defaults. Precedence, highest first: override, file, `FEDMLAC_SEED`
//! (seed only), default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::LocalUpdateConfig;
use crate::data::PartitionStrategy;
use crate::error::{Error, Result};
use crate::nn::{Activation, ModelSpec};
use crate::server::AggregationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fedmlac,
    FedmlacNoLpa,
    FedmlacNoMl,
    Fedavg,
    Fedprox,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fedmlac => "fedmlac",
            Algorithm::FedmlacNoLpa => "fedmlac_no_lpa",
            Algorithm::FedmlacNoMl => "fedmlac_no_ml",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
        }
    }

    /// True for the three variants that keep a personalized model per client.
    pub fn is_mutual(self) -> bool {
        matches!(
            self,
            Algorithm::Fedmlac | Algorithm::FedmlacNoLpa | Algorithm::FedmlacNoMl
        )
    }

    pub fn uses_lpa(self) -> bool {
        matches!(self, Algorithm::Fedmlac | Algorithm::FedmlacNoMl)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which model the `test_acc` and `macro_f1` metric columns describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// The aggregated global model on the held-out clean test set.
    #[default]
    Global,
    /// Each client's own model on its local test split, averaged over clients.
    Personalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub clients: usize,
    pub active_ratio: f64,
    pub master_seed: u64,
    pub eval_mode: EvalMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fedmlac,
            rounds: 5000,
            clients: 10,
            active_ratio: 0.2,
            master_seed: 0,
            eval_mode: EvalMode::Global,
        }
    }
}

impl RunConfig {
    /// Clients sampled per round: `max(1, round(active_ratio * N))`.
    pub fn cohort_size(&self) -> usize {
        ((self.active_ratio * self.clients as f64).round() as usize).clamp(1, self.clients.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Feature CSV, for `source = "csv"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<u64>,
    pub partition: PartitionStrategy,
    pub dirichlet_alpha: f64,
    /// Share of the pooled data held out as the global clean test set.
    pub test_fraction: f64,
    /// Share of every client's data held out for personalized evaluation.
    pub local_test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            classes: 4,
            dim: 8,
            per_class: 100,
            spread: 1.0,
            groups: None,
            partition: PartitionStrategy::Dirichlet,
            dirichlet_alpha: 0.5,
            test_fraction: 0.1,
            local_test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub plugin_hidden: Vec<usize>,
    /// Hidden widths of each local architecture. Empty means the local models
    /// share the Plug-in architecture; more than one entry builds a
    /// heterogeneous fleet.
    pub local_hidden: Vec<Vec<usize>>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            plugin_hidden: vec![16],
            local_hidden: Vec::new(),
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    #[default]
    None,
    LabelFlip,
    FeatureNoise,
    ModelScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub kind: AdversaryKind,
    /// Share of clients that are adversarial, rounded down.
    pub fraction: f64,
    /// Label-flip rate on adversarial training splits.
    pub rate: f64,
    pub snr_db: f64,
    /// Multiplier applied to adversarial uploads.
    pub factor: f64,
    /// Seed for adversary selection and corruption; derived from the master
    /// seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversary_seed: Option<u64>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            kind: AdversaryKind::None,
            fraction: 0.0,
            rate: 0.0,
            snr_db: crate::data::CLEAN_SNR_DB,
            factor: 1.0,
            adversary_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub federation: RunConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub local: LocalUpdateConfig,
    pub aggregation: AggregationConfig,
    pub adversary: AdversaryConfig,
}

fn field_err(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidParameter { reason, .. } => Error::config(field, reason),
        other => Error::config(field, other.to_string()),
    }
}

fn check_unit(field: &str, v: f64, upper_inclusive: bool) -> Result<()> {
    let ok = v >= 0.0 && if upper_inclusive { v <= 1.0 } else { v < 1.0 };
    if !ok {
        let range = if upper_inclusive { "[0, 1]" } else { "[0, 1)" };
        return Err(Error::config(field, format!("must lie in {range}, got {v}")));
    }
    Ok(())
}

impl FederationConfig {
    pub fn plugin_spec(&self, input: usize, classes: usize) -> Result<ModelSpec> {
        ModelSpec::mlp(input, &self.model.plugin_hidden, classes, self.model.activation)
            .map_err(field_err("model.plugin_hidden"))
    }

    /// Local architectures; a single entry means a homogeneous fleet.
    pub fn local_specs(&self, input: usize, classes: usize) -> Result<Vec<ModelSpec>> {
        if self.model.local_hidden.is_empty() {
            return Ok(vec![self.plugin_spec(input, classes)?]);
        }
        self.model
            .local_hidden
            .iter()
            .map(|h| ModelSpec::mlp(input, h, classes, self.model.activation).map_err(field_err("model.local_hidden")))
            .collect()
    }

    /// Local update settings as the configured algorithm applies them.
    pub fn effective_local(&self) -> LocalUpdateConfig {
        let mut local = self.local.clone();
        if self.federation.algorithm == Algorithm::FedmlacNoMl {
            local.alpha = 1.0;
            local.plugin_updates = false;
        }
        local
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.federation;
        if run.rounds == 0 {
            return Err(Error::config("federation.rounds", "must be at least 1"));
        }
        if run.clients < 2 {
            return Err(Error::config("federation.clients", "need at least two clients"));
        }
        if !(run.active_ratio > 0.0 && run.active_ratio <= 1.0) {
            return Err(Error::config(
                "federation.active_ratio",
                format!("must lie in (0, 1], got {}", run.active_ratio),
            ));
        }

        let data = &self.data;
        if data.source == DataSource::Csv && data.path.is_none() {
            return Err(Error::config("data.path", "required when source = \"csv\""));
        }
        if data.source == DataSource::Synthetic {
            if data.classes < 2 {
                return Err(Error::config("data.classes", "need at least two classes"));
            }
            if data.dim == 0 || data.per_class == 0 {
                return Err(Error::config("data.dim", "dimension and per_class must be positive"));
            }
            if !(data.spread >= 0.0 && data.spread.is_finite()) {
                return Err(Error::config("data.spread", "must be non-negative"));
            }
        }
        if data.partition == PartitionStrategy::Dirichlet
            && !(data.dirichlet_alpha > 0.0 && data.dirichlet_alpha.is_finite())
        {
            return Err(Error::config(
                "data.dirichlet_alpha",
                format!("must be positive, got {}", data.dirichlet_alpha),
            ));
        }
        check_unit("data.test_fraction", data.test_fraction, false)?;
        check_unit("data.local_test_fraction", data.local_test_fraction, false)?;

        // Widths are checked with placeholder input and class counts.
        self.plugin_spec(1, 2)?;
        let locals = self.local_specs(1, 2)?;
        if !run.algorithm.is_mutual() && locals.len() > 1 {
            return Err(Error::config(
                "model.local_hidden",
                format!("{} needs a single shared architecture", run.algorithm),
            ));
        }

        self.local.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::config(format!("local.{name}"), reason),
            other => other,
        })?;

        let agg = &self.aggregation;
        check_unit("aggregation.v_l", agg.v_l, false)?;
        check_unit("aggregation.v_h", agg.v_h, false)?;
        if run.algorithm.uses_lpa() {
            let cohort = run.cohort_size();
            let (lo, hi) = agg.pruned_counts(cohort);
            if lo + hi >= cohort {
                return Err(Error::config(
                    "aggregation",
                    format!(
                        "floor(v_l * |S|) + floor(v_h * |S|) = {lo} + {hi} must stay below the cohort size |S| = {cohort}"
                    ),
                ));
            }
        }

        let adv = &self.adversary;
        check_unit("adversary.fraction", adv.fraction, true)?;
        check_unit("adversary.rate", adv.rate, true)?;
        if !adv.snr_db.is_finite() {
            return Err(Error::config("adversary.snr_db", "must be finite"));
        }
        if !adv.factor.is_finite() {
            return Err(Error::config("adversary.factor", "must be finite"));
        }
        Ok(())
    }

    /// Parses a TOML document, applies overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message()))?;
        if let Some(seed) = env_seed {
            let has_seed = table
                .get("federation")
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("master_seed"));
            if !has_seed {
                let value: u64 = seed
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("FEDMLAC_SEED", format!("not an unsigned integer: {seed:?}")))?;
                let value = i64::try_from(value)
                    .map_err(|_| Error::config("FEDMLAC_SEED", "exceeds the TOML integer range"))?;
                section_mut(&mut table, "federation")?.insert("master_seed".into(), toml::Value::Integer(value));
            }
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: FederationConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(error_field(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text, overrides, env_seed)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn error_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

fn section_mut<'a>(table: &'a mut toml::Table, section: &str) -> Result<&'a mut toml::Table> {
    table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::config(section, "must be a table"))
}

/// Section that owns `key` in the configuration schema.
fn section_of(key: &str) -> Option<String> {
    let defaults = toml::Table::try_from(FederationConfig::default()).expect("defaults serialize");
    let optional = [("data", "path"), ("data", "groups"), ("adversary", "adversary_seed")];
    defaults
        .iter()
        .find(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(s, _)| s.clone())
        .or_else(|| optional.iter().find(|(_, k)| *k == key).map(|(s, _)| s.to_string()))
}

/// Applies one `KEY=VALUE` override. Values parse as TOML and fall back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must have the form KEY=VALUE"))?;
    let key = key.trim();
    let (section, name) = match key.split_once('.') {
        Some((s, k)) => (s.to_string(), k.to_string()),
        None => (
            section_of(key).ok_or_else(|| Error::config(key, "unknown configuration key"))?,
            key.to_string(),
        ),
    };
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    section_mut(table, &section)?.insert(name, value);
    Ok(())
}

/// Everything needed to replay a run: the resolved config plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: FederationConfig,
    pub data_source: String,
    pub outputs: Vec<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn data_descriptor(cfg: &FederationConfig) -> String {
        let d = &cfg.data;
        match d.source {
            DataSource::Synthetic => format!(
                "synthetic gaussian mixture: classes={} dim={} per_class={} spread={}",
                d.classes, d.dim, d.per_class, d.spread
            ),
            DataSource::Csv => format!("csv: {}", d.path.as_deref().unwrap_or(Path::new("")).display()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| Error::config("manifest", e.to_string()))?;
        m.config.validate()?;
        Ok(m)
    }
}
