//! The control service: cluster lifecycle, manifest sets, injections, load
//! runs and metrics export behind one HTTP API.

mod api;
mod config;
mod executor;
mod store;

use std::sync::Arc;

pub use api::{execute_plan, router, ApiError, AppState, InjectionRequest, RunRequest};
pub use config::{
    ConfigError, ExecutorMode, Namespaces, ServiceConfig, CLUSTER_CPUS, CLUSTER_MEMORY_GB, CONFIG_ENV,
    DEFAULT_LISTEN,
};
pub use executor::{
    ClusterExecutor, ExecutorCall, ExecutorError, ExecutorOp, FakeExecutor, ServiceSummary, ShellExecutor,
    MONITORING_ASSETS,
};
pub use store::{
    ArtifactPaths, InjectionRecord, InjectionStatus, ManifestSetRecord, RunRecord, RunStatus, Store,
};

use crate::metrics::HttpPrometheus;

/// Builds the executor and Prometheus client the config asks for.
pub fn open_from_config(config: ServiceConfig) -> Result<Arc<AppState>, String> {
    let executor: Arc<dyn ClusterExecutor> = match config.executor {
        ExecutorMode::Real => Arc::new(ShellExecutor::new(&config.minikube, &config.kubectl)),
        ExecutorMode::Fake => Arc::new(FakeExecutor::new()),
    };
    let prometheus = Arc::new(HttpPrometheus::new(config.prometheus_url.clone()));
    AppState::open(config, executor, prometheus)
}
