//! Service configuration file and the resources it points at.
//!
//! Relative paths inside the file resolve against the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::FixedOffset;
use serde::{Deserialize, Serialize};

use ridechat_core::dialog::{Assignment, RoutingTable};
use ridechat_core::engine::Assistant;
use ridechat_core::eval::DEFAULT_THRESHOLD;
use ridechat_core::geo::{PoiDatabase, RoutePlanner, Tariff, TariffTable};
use ridechat_core::heuristic::HeuristicModel;
use ridechat_core::kb::{index_kb, KbIndex};
use ridechat_core::llm::{BackendRouter, Completion, ScriptedBackend};
use ridechat_core::prompt::{PromptSet, TEMPLATE_NAMES};

use crate::gateway::HostedBackend;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("bad data file {path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("bad timezone `{0}`, expected an offset like +08:00")]
    Timezone(String),
    #[error("routing refers to endpoint `{0}` but no tier with that key is configured")]
    MissingConfig(String),
    #[error("tier `{key}`: {message}")]
    Tier { key: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Chat-completion endpoint over HTTP.
    Hosted,
    /// Rule file, optionally falling back to the heuristic model.
    Scripted,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retries: u32,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Scripted tiers only: answer with the heuristic model when no rule matches.
    #[serde(default)]
    pub heuristic_fallback: bool,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_port() -> u16 {
    8080
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_timezone() -> String {
    "+08:00".into()
}

fn default_threshold() -> u8 {
    DEFAULT_THRESHOLD
}

/// Partial override of the stage-to-tier assignments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingOverride {
    pub planning: Option<Assignment>,
    pub replier_selection: Option<Assignment>,
    pub specialized: Option<Assignment>,
    pub error_handling: Option<Assignment>,
    pub knowledge_enhanced: Option<Assignment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Offset used for the clock when a turn carries no client time.
    #[serde(default = "default_timezone")]
    pub timezone: String,
    pub pois: PathBuf,
    pub kb: PathBuf,
    #[serde(default)]
    pub tariffs: Option<PathBuf>,
    /// Directory of `<template>.txt` files overriding the shipped prompts.
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    pub log: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
    #[serde(default)]
    pub routing: RoutingOverride,
    #[serde(default)]
    pub tiers: BTreeMap<String, TierConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut cfg: ServiceConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.offset()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.resolve(&self.log)
    }

    pub fn offset(&self) -> Result<FixedOffset, ConfigError> {
        self.timezone.parse().map_err(|_| ConfigError::Timezone(self.timezone.clone()))
    }

    pub fn routing_table(&self) -> RoutingTable {
        let mut t = RoutingTable::default();
        let o = &self.routing;
        for (slot, over) in [
            (&mut t.planning, &o.planning),
            (&mut t.replier_selection, &o.replier_selection),
            (&mut t.specialized, &o.specialized),
            (&mut t.error_handling, &o.error_handling),
            (&mut t.knowledge_enhanced, &o.knowledge_enhanced),
        ] {
            if let Some(a) = over {
                *slot = a.clone();
            }
        }
        t.endpoints = self.tiers.keys().cloned().collect();
        t
    }

    /// Loads every data file and builds the backends.
    pub fn load_resources(&self) -> Result<Resources, ConfigError> {
        let pois_path = self.resolve(&self.pois);
        let db = PoiDatabase::from_jsonl(&read(&pois_path)?).map_err(|e| data(&pois_path, e))?;
        let kb_path = self.resolve(&self.kb);
        let kb = index_kb(&read(&kb_path)?).map_err(|e| data(&kb_path, e))?;
        let tariffs = match &self.tariffs {
            Some(p) => {
                let p = self.resolve(p);
                load_tariffs(&read(&p)?).map_err(|m| ConfigError::Data { path: p, message: m })?
            }
            None => TariffTable::default(),
        };
        let mut prompts = PromptSet::default();
        if let Some(dir) = &self.prompts_dir {
            let dir = self.resolve(dir);
            for name in TEMPLATE_NAMES {
                let file = dir.join(format!("{name}.txt"));
                if file.exists() {
                    prompts.set(name, read(&file)?);
                }
            }
        }
        let routing = self.routing_table();
        if let Some(missing) = routing.required_keys().into_iter().find(|k| !self.tiers.contains_key(k)) {
            return Err(ConfigError::MissingConfig(missing));
        }
        let mut backends = BackendRouter::new();
        for (key, tier) in &self.tiers {
            backends.insert(key.clone(), self.build_backend(key, tier)?);
        }
        Ok(Resources {
            db: Arc::new(db),
            router: Arc::new(RoutePlanner::new(tariffs)),
            kb: Arc::new(kb),
            prompts,
            routing,
            backends,
        })
    }

    pub fn build_backend(&self, key: &str, tier: &TierConfig) -> Result<Arc<dyn Completion>, ConfigError> {
        let bad = |message: &str| ConfigError::Tier { key: key.into(), message: message.into() };
        Ok(match tier.kind {
            BackendKind::Heuristic => Arc::new(HeuristicModel),
            BackendKind::Scripted => {
                let path = self.resolve(tier.script.as_deref().ok_or_else(|| bad("scripted tier needs `script`"))?);
                let mut b = ScriptedBackend::from_jsonl(&read(&path)?).map_err(|e| data(&path, e))?;
                if tier.heuristic_fallback {
                    b = b.with_fallback(Arc::new(HeuristicModel));
                }
                Arc::new(b)
            }
            BackendKind::Hosted => {
                let url = tier.url.clone().ok_or_else(|| bad("hosted tier needs `url`"))?;
                let model = tier.model.clone().unwrap_or_else(|| key.to_string());
                if tier.timeout_secs.is_nan() || tier.timeout_secs <= 0.0 {
                    return Err(bad("timeout_secs must be positive"));
                }
                let api_key = tier.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(HostedBackend::new(
                    url,
                    model,
                    Duration::from_secs_f64(tier.timeout_secs),
                    tier.retries,
                    api_key,
                ))
            }
        })
    }
}

/// Everything an [`Assistant`] is built from.
#[derive(Clone)]
pub struct Resources {
    pub db: Arc<PoiDatabase>,
    pub router: Arc<RoutePlanner>,
    pub kb: Arc<KbIndex>,
    pub prompts: PromptSet,
    pub routing: RoutingTable,
    pub backends: BackendRouter,
}

impl Resources {
    pub fn assistant(&self) -> Assistant {
        self.assistant_with(self.routing.clone(), Arc::new(self.backends.clone()))
    }

    pub fn assistant_with(&self, routing: RoutingTable, backend: Arc<dyn Completion>) -> Assistant {
        Assistant::new(self.db.clone(), self.router.clone(), self.kb.clone(), backend)
            .with_routing(routing)
            .with_prompts(self.prompts.clone())
    }
}

/// One `{car_type, base, per_km, per_min}` record per line; file order is
/// quote order.
pub fn load_tariffs(source: &str) -> Result<TariffTable, String> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Tariff = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(t);
    }
    TariffTable::new(out).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })
}

fn data(path: &Path, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Data { path: path.into(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ServiceConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults_and_overrides() {
        let cfg = parse(
            r#"
            pois = "pois.jsonl"
            kb = "kb.jsonl"
            log = "log.jsonl"
            [routing]
            planning = { tier = "MEDIUM", fine_tuned = false }
            [tiers.medium]
            kind = "heuristic"
            "#,
        );
        assert_eq!(cfg.port, 8080);
        assert_eq!(cfg.threshold, 4);
        assert_eq!(cfg.offset().unwrap(), FixedOffset::east_opt(8 * 3600).unwrap());
        let t = cfg.routing_table();
        assert_eq!(t.planning.key(), "medium");
        assert_eq!(t.specialized.key(), "medium-ft");
        assert!(t.endpoints.contains("medium") && t.endpoints.len() == 1);
    }

    #[test]
    fn unconfigured_tier_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("pois.jsonl"), "{\"display_name\":\"A\",\"lat\":1.0,\"lng\":1.0,\"id\":1}\n")
            .unwrap();
        fs::write(dir.path().join("kb.jsonl"), "{\"question\":\"q\",\"answer\":\"a\",\"id\":\"x\"}\n").unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "pois = \"pois.jsonl\"\nkb = \"kb.jsonl\"\nlog = \"l\"\n[tiers.large-ft]\nkind = \"heuristic\"\n",
        )
        .unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert!(matches!(cfg.load_resources(), Err(ConfigError::MissingConfig(k)) if k == "large"));
    }

    #[test]
    fn tariff_file() {
        let t = load_tariffs("{\"car_type\":\"Express\",\"base\":10,\"per_km\":2,\"per_min\":0.5}\n").unwrap();
        assert_eq!(t.car_types().collect::<Vec<_>>(), ["Express"]);
        assert!(load_tariffs("").is_err());
        assert!(load_tariffs("{\"car_type\":1}").is_err());
    }

    #[test]
    fn bad_timezone() {
        let mut cfg = parse("pois = \"p\"\nkb = \"k\"\nlog = \"l\"\n");
        cfg.timezone = "Mars".into();
        assert!(matches!(cfg.offset(), Err(ConfigError::Timezone(_))));
    }
}
