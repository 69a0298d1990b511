//! Structured configuration with `[server]`, `[ingest]`, `[validation]`,
//! `[geo]`, `[detector]`, `[explain]`, `[report]`, `[pipeline]` and
//! `[simulation]` sections. Every field has a default.
//!
//! Environment overrides use the `HAZARDPIPE_` prefix and `__` as the path
//! separator, e.g. `HAZARDPIPE_GEO__RESOLUTION_M=100`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Region;
use crate::sim::ScenarioConfig;

pub const ENV_PREFIX: &str = "HAZARDPIPE_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override `{key}`: {reason}")]
    Override { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub server: ServerConfig,
    pub ingest: IngestConfig,
    pub validation: ValidationConfig,
    pub geo: GeoConfig,
    pub detector: DetectorConfig,
    pub explain: ExplainConfig,
    pub report: ReportConfig,
    pub pipeline: PipelineConfig,
    pub simulation: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: String,
    /// Deployment secret mixed into submitter hashes.
    pub salt: String,
    /// Validator ids registered as experts at startup.
    pub experts: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: "data".into(),
            salt: "change-me".into(),
            experts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub max_payload_bytes: usize,
    pub dedup_threshold: u32,
    /// EXIF vs declared position disagreement that raises a quality flag.
    pub geo_disagreement_m: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            max_payload_bytes: 20 * 1024 * 1024,
            dedup_threshold: 4,
            geo_disagreement_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub quorum: usize,
    pub tau_hi: f64,
    pub tau_lo: f64,
    pub uncertainty_escalation: f64,
    pub eta: f64,
    pub credibility_floor: f64,
    pub credibility_initial: f64,
    /// Weight of the rural bonus in task priority.
    pub beta: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            quorum: 3,
            tau_hi: 0.7,
            tau_lo: 0.3,
            uncertainty_escalation: 0.6,
            eta: 0.05,
            credibility_floor: 0.1,
            credibility_initial: 0.5,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoConfig {
    pub region: Region,
    pub resolution_m: f64,
    pub kernel_radius: u32,
    pub site_threshold: f64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            region: Region::mallorca(),
            resolution_m: 250.0,
            kernel_radius: 1,
            site_threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    /// External detector command line (`program arg...`); empty means mock.
    pub command: Vec<String>,
    pub pool_size: usize,
    /// Apply the F1-optimal threshold found by recalibration.
    pub adopt_recalibrated_threshold: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            confidence_threshold: 0.5,
            command: Vec::new(),
            pool_size: 1,
            adopt_recalibrated_threshold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub overlay_alpha: f64,
    pub lime_rows: usize,
    pub lime_cols: usize,
    pub lime_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub top_k: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            overlay_alpha: 0.4,
            lime_rows: 6,
            lime_cols: 6,
            lime_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1e-3,
            top_k: 5,
            workers: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub severity_high: u32,
    pub severity_medium: u32,
    pub backend_timeout_s: f64,
    pub language: String,
    pub tone: String,
    /// Narrative backend endpoint; empty means template only.
    pub backend_url: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            severity_high: 10,
            severity_medium: 3,
            backend_timeout_s: 10.0,
            language: "en".into(),
            tone: "neutral".into(),
            backend_url: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub recalibrate_every: usize,
    pub min_feedback: usize,
    pub baseline_manual_latency_h: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            recalibrate_every: 100,
            min_feedback: 50,
            baseline_manual_latency_h: 10.0,
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Accepts either a full config or a bare scenario (top-level
    /// `n_images`, `seed`, ...), which lands in `[simulation]`.
    pub fn from_scenario_or_config_str(s: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(s)?;
        let sections = [
            "server",
            "ingest",
            "validation",
            "geo",
            "detector",
            "explain",
            "report",
            "pipeline",
            "simulation",
        ];
        if table.is_empty() || table.keys().any(|k| sections.contains(&k.as_str())) {
            return Self::from_toml_str(s);
        }
        Ok(Config {
            simulation: toml::from_str(s)?,
            ..Config::default()
        })
    }

    /// Applies `HAZARDPIPE_*` overrides from the process environment.
    pub fn with_env(self) -> Result<Self, ConfigError> {
        self.with_overrides(std::env::vars())
    }

    pub fn with_overrides(
        self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut tree = toml::Value::try_from(&self).expect("config serializes to TOML");
        let mut touched = false;
        for (key, raw) in vars {
            let Some(path) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let segments: Vec<String> = path.split("__").map(|s| s.to_ascii_lowercase()).collect();
            let err = |reason: &str| ConfigError::Override {
                key: key.clone(),
                reason: reason.into(),
            };
            let mut node = &mut tree;
            for seg in &segments[..segments.len() - 1] {
                node = node
                    .get_mut(seg.as_str())
                    .ok_or_else(|| err("unknown section"))?;
            }
            let table = node.as_table_mut().ok_or_else(|| err("not a table"))?;
            let leaf = segments.last().expect("split yields one segment");
            if !table.contains_key(leaf) {
                return Err(err("unknown key"));
            }
            table.insert(leaf.clone(), parse_scalar(&raw));
            touched = true;
        }
        if !touched {
            return Ok(self);
        }
        tree.try_into().map_err(|e: toml::de::Error| ConfigError::Override {
            key: ENV_PREFIX.into(),
            reason: e.to_string(),
        })
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        let text = toml::to_string(&cfg).unwrap();
        assert!(text.contains("[validation]"));
        assert!(text.contains("[geo]"));
        assert_eq!(Config::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(Config::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn partial_sections() {
        let cfg = Config::from_toml_str("[validation]\nquorum = 5\n").unwrap();
        assert_eq!(cfg.validation.quorum, 5);
        assert_eq!(cfg.validation.tau_hi, 0.7);
    }

    #[test]
    fn bare_scenario_files() {
        let cfg = Config::from_scenario_or_config_str("n_images = 50\nn_sites = 5\n").unwrap();
        assert_eq!(cfg.simulation.n_images, 50);
        assert_eq!(cfg.validation, ValidationConfig::default());
        let cfg = Config::from_scenario_or_config_str("[simulation]\nn_images = 60\n").unwrap();
        assert_eq!(cfg.simulation.n_images, 60);
    }

    #[test]
    fn env_overrides() {
        let cfg = Config::default()
            .with_overrides([
                ("HAZARDPIPE_GEO__RESOLUTION_M".to_string(), "100".to_string()),
                ("HAZARDPIPE_SERVER__BIND".to_string(), "0.0.0.0:9000".to_string()),
                ("HAZARDPIPE_SIMULATION__SEED".to_string(), "7".to_string()),
                ("PATH".to_string(), "/bin".to_string()),
            ])
            .unwrap();
        assert_eq!(cfg.geo.resolution_m, 100.0);
        assert_eq!(cfg.server.bind, "0.0.0.0:9000");
        assert_eq!(cfg.simulation.seed, 7);
        assert!(Config::default()
            .with_overrides([("HAZARDPIPE_GEO__NOPE".to_string(), "1".to_string())])
            .is_err());
    }
}
