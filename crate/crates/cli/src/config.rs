//! Run configuration: a TOML file whose values command-line flags override.
//!
//! ```toml
//! [paths]
//! manifest = "corpus/manifest.csv"
//! features = "work/features.csv"
//! model = "work/model.json"
//! stats = "work/stats.json"
//! rules = "rules/v1.json"
//! cache = "work/llm-cache"
//! output = "runs/latest"
//!
//! [pipeline]
//! tau = 0.7
//! version = "v4_hybrid"
//! split = "test"
//!
//! [endpoint]
//! base_url = "https://api.openai.com/v1"
//! model_name = "gpt-4o-mini"
//! api_key_env = "OPENAI_API_KEY"
//! ```

use std::path::{Path, PathBuf};

use emoroute::reasoning::LlmEndpointConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Rules used by the refined and hybrid configurations.
    pub refined_rules: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub tau: f64,
    pub version: String,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub svm_c: f64,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
    pub seed: u64,
    /// Manifest split to run inference on; every entry when unset.
    pub split: Option<String>,
    pub train_splits: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: emoroute::hybrid::DEFAULT_TAU,
            version: "v4_hybrid".into(),
            frame_ms: 25.0,
            hop_ms: 10.0,
            svm_c: 1.0,
            svm_tol: 1e-3,
            svm_max_passes: 100,
            seed: 0,
            split: None,
            train_splits: vec!["set1".into(), "set2".into(), "set3".into()],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub pipeline: PipelineConfig,
    pub endpoint: LlmEndpointConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Returns the configured path or a configuration error naming the flag
/// and key that would supply it.
pub fn require<'a>(p: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing --{flag} (or paths.{key} in the config file)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.pipeline.tau, 0.7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[pipeline]\ntau_value = 0.5\n").is_err());
    }

    #[test]
    fn partial_sections() {
        let cfg: RunConfig = toml::from_str(
            "[paths]\nmanifest = \"m.csv\"\n[pipeline]\ntau = 0.9\n[endpoint]\nbase_url = \"mock://calm\"\n",
        )
        .unwrap();
        assert_eq!(cfg.paths.manifest.as_deref(), Some(Path::new("m.csv")));
        assert_eq!(cfg.pipeline.tau, 0.9);
        assert_eq!(cfg.pipeline.version, "v4_hybrid");
        assert_eq!(cfg.endpoint.base_url, "mock://calm");
        assert_eq!(cfg.endpoint.max_in_flight, 4);
    }
}
