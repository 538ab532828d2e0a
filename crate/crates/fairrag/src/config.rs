//! TOML configuration with `${ENV_VAR}` interpolation for secrets.
//!
//! Every field has a default so a missing file or empty table still yields
//! a runnable configuration; CLI flags override anything here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::Deserialize;

use crate::domain::ModelTier;
use crate::econ::{CostModel, LatencyModel};
use crate::error::{Error, Result};
use crate::gateway::RoutingTable;
use crate::orchestrator::PipelineConfig;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub paths: PathsConfig,
    pub pipeline: PipelineSection,
    pub gateway: GatewayConfig,
    pub econ: EconSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub index_dir: PathBuf,
    /// Empty → use the compiled-in prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub corpus: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            index_dir: PathBuf::from("index"),
            prompts_dir: None,
            corpus: PathBuf::from("corpus.jsonl"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub max_iter: usize,
    pub top_k: usize,
    pub filter_batch_size: usize,
    pub filter_memoization: bool,
    pub sparse_only_fallback: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let d = PipelineConfig::default();
        PipelineSection {
            max_iter: d.max_iter,
            top_k: d.top_k,
            filter_batch_size: d.filter_batch_size,
            filter_memoization: d.filter_memoization,
            sparse_only_fallback: d.sparse_only_fallback,
        }
    }
}

impl PipelineSection {
    pub fn to_pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            max_iter: self.max_iter,
            top_k: self.top_k,
            filter_batch_size: self.filter_batch_size,
            filter_memoization: self.filter_memoization,
            sparse_only_fallback: self.sparse_only_fallback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub base_url: String,
    /// JSONL rule file for scripted mode.
    pub script: Option<PathBuf>,
    pub model_small: String,
    pub model_large: String,
    pub model_reasoner: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub inflight_cap: usize,
    /// Pin every role to one tier, as in the static ablations.
    pub static_tier: Option<ModelTier>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Scripted,
            base_url: String::new(),
            script: None,
            model_small: "small".to_string(),
            model_large: "large".to_string(),
            model_reasoner: "reasoner".to_string(),
            api_key_env: None,
            inflight_cap: 8,
            static_tier: None,
        }
    }
}

impl GatewayConfig {
    pub fn routing(&self) -> RoutingTable {
        match self.static_tier {
            Some(tier) => RoutingTable::static_tier(tier),
            None => RoutingTable::default(),
        }
    }

    pub fn models(&self) -> BTreeMap<ModelTier, String> {
        BTreeMap::from([
            (ModelTier::Small, self.model_small.clone()),
            (ModelTier::Large, self.model_large.clone()),
            (ModelTier::Reasoner, self.model_reasoner.clone()),
        ])
    }

    pub fn api_key(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconSection {
    pub m: f64,
    pub h: f64,
    pub r: f64,
}

impl Default for EconSection {
    fn default() -> Self {
        let d = LatencyModel::default();
        EconSection {
            m: d.m,
            h: d.h,
            r: d.r,
        }
    }
}

impl EconSection {
    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            m: self.m,
            h: self.h,
            r: self.r,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel::default()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub correctness_threshold: f64,
    pub judge: GatewayConfig,
    pub judge_tier: ModelTier,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            correctness_threshold: 4.0,
            judge: GatewayConfig::default(),
            judge_tier: ModelTier::Large,
        }
    }
}

/// Replaces each `${NAME}` with the environment variable's value.
fn interpolate_env(raw: &str) -> Result<String> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    let mut out = String::with_capacity(raw.len());
    let mut last = 0;
    for m in re.captures_iter(raw) {
        let whole = m.get(0).unwrap();
        let var = &m[1];
        let value = std::env::var(var)
            .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?;
        out.push_str(&raw[last..whole.start()]);
        out.push_str(&value);
        last = whole.end();
    }
    out.push_str(&raw[last..]);
    Ok(out)
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let raw = std::fs::read_to_string(path)?;
        Config::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Config> {
        let interpolated = interpolate_env(raw)?;
        toml::from_str(&interpolated).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.pipeline.max_iter, 3);
        assert_eq!(c.pipeline.filter_batch_size, 10);
        assert_eq!(c.gateway.mode, GatewayMode::Scripted);
        assert_eq!(c.eval.correctness_threshold, 4.0);
        assert_eq!(c.econ.m, 0.001866);
    }

    #[test]
    fn env_interpolation_substitutes() {
        std::env::set_var("FAIRRAG_TEST_URL", "http://localhost:9");
        let c = Config::parse("[gateway]\nbase_url = \"${FAIRRAG_TEST_URL}/v1\"\n").unwrap();
        assert_eq!(c.gateway.base_url, "http://localhost:9/v1");
    }

    #[test]
    fn missing_env_var_is_named() {
        let err = Config::parse("[gateway]\nbase_url = \"${FAIRRAG_DEFINITELY_UNSET_VAR}\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("FAIRRAG_DEFINITELY_UNSET_VAR"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("[pipeline]\nmax_itr = 2\n").is_err());
    }

    #[test]
    fn static_tier_pins_routing() {
        let c = Config::parse("[gateway]\nstatic_tier = \"reasoner\"\n").unwrap();
        let routing = c.gateway.routing();
        assert_eq!(
            routing.route(crate::gateway::AgentRole::Decomposer, None),
            ModelTier::Reasoner
        );
    }
}
