use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::manifest::{DEFAULT_PATTERN_NAMESPACE, DEFAULT_PIPELINE_NAMESPACE};

pub const CONFIG_ENV: &str = "SNAPPATTERN_CONFIG";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7070";
pub const CLUSTER_CPUS: u32 = 8;
pub const CLUSTER_MEMORY_GB: u32 = 24;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Namespaces {
    pub pipeline: String,
    pub patterns: String,
    pub monitoring: String,
}

impl Default for Namespaces {
    fn default() -> Self {
        Namespaces {
            pipeline: DEFAULT_PIPELINE_NAMESPACE.into(),
            patterns: DEFAULT_PATTERN_NAMESPACE.into(),
            monitoring: "monitoring".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorMode {
    #[default]
    Real,
    Fake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub namespaces: Namespaces,
    pub executor: ExecutorMode,
    pub prometheus_url: Url,
    pub data_dir: PathBuf,
    pub listen: String,
    pub readiness_timeout_s: u64,
    pub readiness_poll_ms: u64,
    pub window_seconds: u64,
    pub minikube: String,
    pub kubectl: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            namespaces: Namespaces::default(),
            executor: ExecutorMode::Real,
            prometheus_url: Url::parse("http://127.0.0.1:30090/").expect("static url"),
            data_dir: PathBuf::from("snappattern-data"),
            listen: DEFAULT_LISTEN.into(),
            readiness_timeout_s: 180,
            readiness_poll_ms: 2_000,
            window_seconds: crate::metrics::DEFAULT_WINDOW_SECONDS,
            minikube: "minikube".into(),
            kubectl: "kubectl".into(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Explicit path, else `SNAPPATTERN_CONFIG`, else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
        {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn collector(&self) -> crate::metrics::CollectorConfig {
        crate::metrics::CollectorConfig {
            namespaces: vec![self.namespaces.pipeline.clone(), self.namespaces.patterns.clone()],
            pipeline_namespace: self.namespaces.pipeline.clone(),
            window_seconds: self.window_seconds,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ServiceConfig::parse(
            "executor: fake\ndata_dir: /tmp/x\nnamespaces:\n  monitoring: obs\n",
            Path::new("c.yaml"),
        )
        .unwrap();
        assert_eq!(cfg.executor, ExecutorMode::Fake);
        assert_eq!(cfg.namespaces.pipeline, "pipeline");
        assert_eq!(cfg.namespaces.monitoring, "obs");
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::parse("executer: fake\n", Path::new("c.yaml")).is_err());
    }
}
