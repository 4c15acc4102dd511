//! Run configuration: one TOML file of flat dotted keys, overridable per key by
//! `DESKGRID_<KEY>` environment variables (dots become underscores).

use std::path::{Path, PathBuf};

use deskgrid_core::cluster::Timing;
use deskgrid_core::envsim::{ActionSpace, SuiteProfile};
use deskgrid_core::grpo::{ReferenceReset, TrainerConfig};
use deskgrid_core::replay::ReplayConfig;
use deskgrid_core::rl::RlConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {key} {problem}")]
    Invalid { key: &'static str, problem: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Wire-protocol listen address of the controller.
    pub bind: String,
    pub http_bind: String,
    /// Controller to join (workers) or train against; unset means an in-process cluster.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
    /// In-process workers when no controller is given.
    pub workers: usize,
    pub slots: u32,
    pub heartbeat_ms: u64,
    pub heartbeat_timeout_ms: u64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            bind: "127.0.0.1:7100".into(),
            http_bind: "127.0.0.1:7180".into(),
            controller: None,
            workers: 2,
            slots: 16,
            heartbeat_ms: 1000,
            heartbeat_timeout_ms: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub reference_reset: ReferenceReset,
    pub tasks_per_round: usize,
    pub capacity: usize,
    pub staleness_limit: u64,
    pub min_batch_steps: usize,
    pub max_batch_steps: usize,
    pub threads: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        let r = ReplayConfig::default();
        TrainerSection {
            group_size: t.group_size,
            clip_eps: t.clip_eps,
            kl_coef: t.kl_coef,
            learning_rate: t.learning_rate,
            reference_reset: t.reference_reset,
            tasks_per_round: RlConfig::default().tasks_per_round,
            capacity: r.capacity,
            staleness_limit: r.staleness_limit,
            min_batch_steps: r.min_batch_steps,
            max_batch_steps: r.max_batch_steps,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub rollout: u64,
    pub bc: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { rollout: 1, bc: 3, eval: 1527 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub suite: String,
    pub space: ActionSpace,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Seeds,
    pub cluster: ClusterSection,
    pub trainer: TrainerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            suite: "ablation".into(),
            space: ActionSpace::ApiGui,
            schedule: None,
            out: PathBuf::from("runs/latest"),
            seeds: Seeds::default(),
            cluster: ClusterSection::default(),
            trainer: TrainerSection::default(),
        }
    }
}

/// Optional keys absent from the serialized defaults.
const OPTIONAL_KEYS: [&str; 2] = ["schedule", "cluster.controller"];

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn set(table: &mut toml::Table, key: &str, value: toml::Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let inner = table.entry(head).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = inner {
                set(t, rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

/// Parses an override as a TOML scalar, falling back to a plain string.
fn scalar(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

pub fn env_name(key: &str) -> String {
    format!("DESKGRID_{}", key.replace('.', "_").to_uppercase())
}

impl RunConfig {
    /// Every settable dotted key.
    pub fn keys() -> Vec<String> {
        let mut keys = vec![];
        flatten("", &toml::Value::try_from(RunConfig::default()).expect("defaults serialize"), &mut keys);
        keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
        keys.sort();
        keys
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::build(text, &|_| None)
    }

    /// File (if any) plus environment overrides, validated.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read(p.to_path_buf(), e))?,
            None => String::new(),
        };
        Self::build(&text, &|name| std::env::var(name).ok())
    }

    pub fn build(text: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for key in Self::keys() {
            if let Some(v) = env(&env_name(&key)) {
                set(&mut table, &key, scalar(&v));
            }
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, problem: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, problem: problem.into() })
            }
        }
        let t = &self.trainer;
        let c = &self.cluster;
        self.suite_profile()?;
        check(t.group_size >= 2, "trainer.group_size", "must be at least 2")?;
        check(t.clip_eps > 0.0 && t.clip_eps < 1.0, "trainer.clip_eps", "must lie in (0, 1)")?;
        check(t.kl_coef >= 0.0 && t.kl_coef.is_finite(), "trainer.kl_coef", "must be finite and non-negative")?;
        check(t.learning_rate > 0.0 && t.learning_rate.is_finite(), "trainer.learning_rate", "must be positive")?;
        check(t.tasks_per_round >= 1, "trainer.tasks_per_round", "must be at least 1")?;
        check(t.capacity >= t.group_size, "trainer.capacity", "must hold at least one group")?;
        check(t.min_batch_steps >= 1, "trainer.min_batch_steps", "must be at least 1")?;
        check(t.min_batch_steps <= t.max_batch_steps, "trainer.max_batch_steps", "must be ≥ min_batch_steps")?;
        check(t.threads >= 1, "trainer.threads", "must be at least 1")?;
        check(c.slots >= 1, "cluster.slots", "must be at least 1")?;
        check(c.workers >= 1, "cluster.workers", "must be at least 1")?;
        check(c.heartbeat_ms >= 10, "cluster.heartbeat_ms", "must be at least 10")?;
        check(c.heartbeat_timeout_ms > c.heartbeat_ms, "cluster.heartbeat_timeout_ms", "must exceed heartbeat_ms")?;
        Ok(())
    }

    pub fn suite_profile(&self) -> Result<SuiteProfile, ConfigError> {
        self.suite.parse().map_err(|problem| ConfigError::Invalid { key: "suite", problem })
    }

    pub fn timing(&self) -> Timing {
        Timing { heartbeat_interval_ms: self.cluster.heartbeat_ms, heartbeat_timeout_ms: self.cluster.heartbeat_timeout_ms }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            group_size: t.group_size,
            clip_eps: t.clip_eps,
            kl_coef: t.kl_coef,
            learning_rate: t.learning_rate,
            reference_reset: t.reference_reset,
            ..TrainerConfig::default()
        }
    }

    pub fn replay_config(&self) -> ReplayConfig {
        let t = &self.trainer;
        ReplayConfig {
            capacity: t.capacity,
            staleness_limit: t.staleness_limit,
            min_batch_steps: t.min_batch_steps,
            max_batch_steps: t.max_batch_steps,
        }
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig { tasks_per_round: self.trainer.tasks_per_round, seed: self.seeds.rollout, space: self.space, threads: self.trainer.threads }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Written into every run directory; enough to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest { version: env!("CARGO_PKG_VERSION").into(), command: command.into(), config: config.clone() }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.toml"), toml::to_string(self).expect("manifest serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_env_overrides() {
        let text = "trainer.group_size = 4\ncluster.slots = 8\nsuite = \"smoke\"\n";
        let env = |k: &str| match k {
            "DESKGRID_TRAINER_LEARNING_RATE" => Some("0.3".to_string()),
            "DESKGRID_CLUSTER_CONTROLLER" => Some("10.0.0.1:7100".to_string()),
            "DESKGRID_SLOTS" => Some("99".to_string()),
            _ => None,
        };
        let c = RunConfig::build(text, &env).unwrap();
        assert_eq!(c.trainer.group_size, 4);
        assert_eq!(c.cluster.slots, 8);
        assert_eq!(c.trainer.learning_rate, 0.3);
        assert_eq!(c.cluster.controller.as_deref(), Some("10.0.0.1:7100"));
        assert_eq!(c.suite, "smoke");
    }

    #[test]
    fn validation_and_unknown_keys() {
        assert!(matches!(RunConfig::from_toml("trainer.group_size = 1"), Err(ConfigError::Invalid { key: "trainer.group_size", .. })));
        assert!(matches!(RunConfig::from_toml("trainer.clip_eps = 1.5"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(RunConfig::from_toml("suite = \"huge\""), Err(ConfigError::Invalid { key: "suite", .. })));
        assert!(matches!(RunConfig::from_toml("trainer.typo = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut c = RunConfig::default();
        c.schedule = Some("s.json".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(RunConfig::keys().contains(&"trainer.max_batch_steps".to_string()));
    }
}
