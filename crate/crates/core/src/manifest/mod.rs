//! Manifest parsing and DNS-swap injection planning.
//!
//! Injecting a pattern on Service `X` in namespace `T`:
//!
//! * `X` is renamed to `X-original` (selector untouched),
//! * a policy ConfigMap, proxy Deployment and proxy Service are created in
//!   the pattern namespace,
//! * a Service named `X` of type ExternalName is created in `T` pointing at
//!   the proxy Service, so callers keep resolving `X`,
//! * gateway offloading adds an Ingress in front of the proxy.
//!
//! Every created resource is labeled `snappattern/pattern` and
//! `snappattern/target`; removal relies on the target label alone.

mod model;
mod plan;
pub mod readiness;
mod render;
mod selection;
pub mod yaml;

use thiserror::Error;

pub use model::{
    parse_manifests, parse_manifests_in, ContainerView, DeploymentView, ManifestDocument,
    ResourceId, ServicePort, ServiceView, WorkloadManifestSet, INDEXED_KINDS,
};
pub use plan::{
    apply_plan, plan_injection, plan_removal, GeneratedResource, InjectionPlan, Rename,
};
pub use readiness::{check_readiness, ReadinessReport, ResourceReadiness, ResourceStatus, StatusProbe};
pub use render::{
    render_ingress_offload, render_plan, render_plan_stream, render_sql_cache_config,
    sql_cache_config_text,
};
pub use selection::{
    validate_selection, CacheVariant, IssueCode, PatternSelection, QueryRule, SelectionIssue,
    SqlCacheParams,
};

pub const LABEL_PATTERN: &str = "snappattern/pattern";
pub const LABEL_TARGET: &str = "snappattern/target";
pub const LABEL_VARIANT: &str = "snappattern/variant";
pub const ORIGINAL_SUFFIX: &str = "-original";
pub const DEFAULT_PATTERN_NAMESPACE: &str = "snappattern-patterns";
pub const DEFAULT_PIPELINE_NAMESPACE: &str = "pipeline";
pub const PROXY_IMAGE: &str = "snappattern/pattern-proxy:0.1.0";
pub const PROXYSQL_IMAGE: &str = "proxysql/proxysql:2.6.3";
pub const PROXY_PORT: u16 = 8080;
pub const PROXYSQL_PORT: u16 = 6033;

/// The bundled six-service sample pipeline.
pub const SAMPLE_PIPELINE: &str = include_str!("../../assets/sample-pipeline.yaml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifestError {
    #[error("document {document}{}: {message}", line.map(|l| format!(", line {l}")).unwrap_or_default())]
    Parse {
        document: usize,
        line: Option<usize>,
        message: String,
    },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("pattern not injected on {0}")]
    NotInjected(String),
    #[error("invalid selection: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<SelectionIssue>),
}
