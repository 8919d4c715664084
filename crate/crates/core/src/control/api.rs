use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ServiceConfig, CLUSTER_CPUS, CLUSTER_MEMORY_GB};
use super::executor::{ClusterExecutor, ExecutorError, MONITORING_ASSETS};
use super::store::{
    InjectionRecord, InjectionStatus, ManifestSetRecord, RunRecord, RunStatus, Store,
};
use crate::clock::{MonotonicClock, SharedClock};
use crate::manifest::yaml::to_document_stream;
use crate::manifest::{
    apply_plan, check_readiness, parse_manifests_in, plan_injection, plan_removal, InjectionPlan, ManifestError,
    ResourceId, WorkloadManifestSet, LABEL_TARGET,
};
use crate::metrics::{collect_run, export_csv_string, export_series_json, PromSource, RunMeta};
use crate::workload::{
    run_load, summarize, CsvSink, HttpRequester, ProfileName, RequestTemplate, SummaryWindow, WorkloadProfile,
    DEFAULT_STEP_INTERVAL_S,
};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("{what} `{id}` not found"))
    }

    fn storage(e: std::io::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "STORAGE", e.to_string())
    }
}

impl From<ExecutorError> for ApiError {
    fn from(e: ExecutorError) -> Self {
        ApiError::new(StatusCode::BAD_GATEWAY, "EXECUTOR_FAILED", e.to_string())
            .with_details(json!({"command": e.command, "output": e.output}))
    }
}

impl From<ManifestError> for ApiError {
    fn from(e: ManifestError) -> Self {
        let message = e.to_string();
        match e {
            ManifestError::Parse { document, line, message: m } => {
                ApiError::new(StatusCode::BAD_REQUEST, "MANIFEST_PARSE", message)
                    .with_details(json!({"document": document, "line": line, "message": m}))
            }
            ManifestError::Invalid(issues) => ApiError::new(StatusCode::BAD_REQUEST, "INVALID_SELECTION", message)
                .with_details(json!({ "issues": issues })),
            ManifestError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "TARGET_NOT_FOUND", message),
            ManifestError::NotInjected(_) => ApiError::new(StatusCode::CONFLICT, "NOT_INJECTED", message),
            ManifestError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "CONFLICT", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok_json(status: StatusCode, body: impl Serialize) -> ApiResult {
    Ok((status, Json(body)).into_response())
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", e.to_string())
            .with_details(json!({"path": e.path().to_string()}))
    })
}

pub struct AppState {
    pub config: ServiceConfig,
    pub executor: Arc<dyn ClusterExecutor>,
    pub prometheus: Arc<dyn PromSource>,
    pub store: Store,
    clock: SharedClock,
    cluster: tokio::sync::Mutex<()>,
    metrics: tokio::sync::Mutex<()>,
    /// Current in-memory model of each manifest set, injections applied.
    models: parking_lot::Mutex<BTreeMap<String, WorkloadManifestSet>>,
}

impl AppState {
    /// Opens the store and rebuilds each manifest set's model by replaying
    /// its injections that were not removed.
    pub fn open(
        config: ServiceConfig,
        executor: Arc<dyn ClusterExecutor>,
        prometheus: Arc<dyn PromSource>,
    ) -> Result<Arc<Self>, String> {
        let store = Store::open(&config.data_dir).map_err(|e| format!("{}: {e}", config.data_dir.display()))?;
        let mut models = BTreeMap::new();
        for rec in store.manifest_sets() {
            let text = std::fs::read_to_string(store.manifest_path(&rec.id)).map_err(|e| e.to_string())?;
            let mut set = parse_manifests_in(&text, &config.namespaces.pipeline).map_err(|e| e.to_string())?;
            for inj in store.injections() {
                if inj.manifest_set_id == rec.id && inj.status != InjectionStatus::Removed {
                    let plan = plan_injection(&set, &inj.selection).map_err(|e| e.to_string())?;
                    set = apply_plan(&set, &plan).map_err(|e| e.to_string())?;
                }
            }
            models.insert(rec.id.clone(), set);
        }
        Ok(Arc::new(AppState {
            config,
            executor,
            prometheus,
            store,
            clock: MonotonicClock::shared(),
            cluster: tokio::sync::Mutex::new(()),
            metrics: tokio::sync::Mutex::new(()),
            models: parking_lot::Mutex::new(models),
        }))
    }

    pub fn model(&self, manifest_set_id: &str) -> Option<WorkloadManifestSet> {
        self.models.lock().get(manifest_set_id).cloned()
    }
}

/// Applies a plan with the shortest possible DNS gap: new names first,
/// then each replaced name is deleted and re-applied, then leftovers go.
pub async fn execute_plan(executor: &dyn ClusterExecutor, plan: &InjectionPlan) -> Result<(), ExecutorError> {
    let mut applies: Vec<(ResourceId, Value)> = Vec::new();
    for r in &plan.mutations {
        applies.push((ResourceId::new(&r.from.kind, &r.from.namespace, &r.to), r.document.clone()));
    }
    for c in &plan.creations {
        applies.push((c.id(), c.body.clone()));
    }
    let mut deletes: Vec<ResourceId> = plan.deletions.clone();
    deletes.extend(plan.mutations.iter().map(|r| r.from.clone()));

    let replaced: BTreeSet<ResourceId> = applies
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| deletes.contains(id))
        .collect();
    let fresh: Vec<&Value> = applies.iter().filter(|(id, _)| !replaced.contains(id)).map(|(_, v)| v).collect();
    let replacing: Vec<&Value> = applies.iter().filter(|(id, _)| replaced.contains(id)).map(|(_, v)| v).collect();
    let leftovers: Vec<ResourceId> = deletes.iter().filter(|id| !replaced.contains(*id)).cloned().collect();

    if !fresh.is_empty() {
        executor.apply(&to_document_stream(fresh)).await?;
    }
    if !replaced.is_empty() {
        executor.delete(&replaced.iter().cloned().collect::<Vec<_>>()).await?;
        executor.apply(&to_document_stream(replacing)).await?;
    }
    if !leftovers.is_empty() {
        executor.delete(&leftovers).await?;
    }
    Ok(())
}

async fn create_cluster(State(app): State<Arc<AppState>>) -> ApiResult {
    let _guard = app.cluster.lock().await;
    let mut steps = vec![app.executor.create_cluster(CLUSTER_CPUS, CLUSTER_MEMORY_GB).await?];
    for (name, text) in MONITORING_ASSETS {
        let out = app.executor.apply(text).await.map_err(|e| {
            ApiError::from(e.clone()).with_details(json!({"command": e.command, "output": e.output, "asset": name}))
        })?;
        steps.push(out);
    }
    ok_json(StatusCode::OK, json!({"status": "up", "cpus": CLUSTER_CPUS, "memory_gb": CLUSTER_MEMORY_GB, "steps": steps}))
}

async fn delete_cluster(State(app): State<Arc<AppState>>) -> ApiResult {
    let _guard = app.cluster.lock().await;
    let out = app.executor.delete_cluster().await?;
    ok_json(StatusCode::OK, json!({"status": "down", "output": out}))
}

async fn upload_manifests(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "MANIFEST_PARSE", e.to_string()))?;
    let set = parse_manifests_in(text, &app.config.namespaces.pipeline)?;
    let id = app.store.allocate_manifest_set();
    let rec = ManifestSetRecord {
        id: id.clone(),
        created_at_unix_ms: crate::workload::unix_ms_now(),
        document_count: set.len(),
        services: set.services().map(|s| s.name).collect(),
        warnings: set.warnings().to_vec(),
        deployed: false,
    };
    app.store.save_manifest_set(&rec, Some(text)).map_err(ApiError::storage)?;
    app.models.lock().insert(id, set);
    ok_json(StatusCode::CREATED, rec)
}

fn with_namespace(mut body: Value, namespace: &str) -> Value {
    if let Some(meta) = body.get_mut("metadata").and_then(Value::as_object_mut) {
        meta.entry("namespace").or_insert_with(|| Value::from(namespace));
    }
    body
}

async fn deploy_manifest_set(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let _guard = app.cluster.lock().await;
    let mut rec = app.store.manifest_set(&id).ok_or_else(|| ApiError::not_found("manifest set", &id))?;
    let set = app.model(&id).ok_or_else(|| ApiError::not_found("manifest set", &id))?;
    let docs: Vec<Value> = set
        .documents()
        .iter()
        .map(|d| with_namespace(d.body.clone(), &d.namespace))
        .collect();
    let out = app.executor.apply(&to_document_stream(docs.iter())).await?;
    rec.deployed = true;
    app.store.save_manifest_set(&rec, None).map_err(ApiError::storage)?;
    ok_json(StatusCode::OK, json!({"manifest_set": rec, "output": out}))
}

#[derive(Deserialize)]
struct ServiceFilter {
    namespace: Option<String>,
}

async fn list_services(State(app): State<Arc<AppState>>, Query(q): Query<ServiceFilter>) -> ApiResult {
    let ns = q.namespace.filter(|n| !n.is_empty());
    let services = app.executor.list_services(ns.as_deref()).await?;
    ok_json(StatusCode::OK, services)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionRequest {
    pub manifest_set_id: String,
    pub selection: crate::manifest::PatternSelection,
}

async fn inject(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: InjectionRequest = parse_body(&body)?;
    let _guard = app.cluster.lock().await;
    let rec = app
        .store
        .manifest_set(&req.manifest_set_id)
        .ok_or_else(|| ApiError::not_found("manifest set", &req.manifest_set_id))?;
    if !rec.deployed {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "NOT_DEPLOYED",
            format!("manifest set {} has not been deployed", rec.id),
        ));
    }
    let set = app.model(&rec.id).ok_or_else(|| ApiError::not_found("manifest set", &rec.id))?;
    let sel = &req.selection;
    let target = ResourceId::service(&sel.target_namespace, &sel.target_service);
    if set
        .get(&target)
        .is_some_and(|d| d.labels().contains_key(LABEL_TARGET))
    {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "ALREADY_INJECTED",
            format!("{target} already has a pattern injected"),
        ));
    }
    let plan = plan_injection(&set, sel)?;
    let next = apply_plan(&set, &plan)?;
    execute_plan(app.executor.as_ref(), &plan).await?;
    app.models.lock().insert(rec.id.clone(), next);

    let readiness = check_readiness(
        app.executor.as_ref(),
        &plan,
        Duration::from_secs(app.config.readiness_timeout_s),
        Duration::from_millis(app.config.readiness_poll_ms),
        app.clock.as_ref(),
    )
    .await;
    let mut inj = InjectionRecord {
        id: app.store.allocate_injection(),
        manifest_set_id: rec.id.clone(),
        selection: sel.clone(),
        status: InjectionStatus::Active,
        created_at_unix_ms: crate::workload::unix_ms_now(),
        created: plan.creations.iter().map(|c| c.id()).collect(),
        readiness: Some(readiness.clone()),
    };
    if !readiness.overall {
        inj.status = InjectionStatus::NotReady;
        app.store.save_injection(&inj).map_err(ApiError::storage)?;
        return Err(ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            "READINESS_TIMEOUT",
            format!("injected resources for {target} did not become ready"),
        )
        .with_details(json!({"injection_id": inj.id, "readiness": readiness})));
    }
    app.store.save_injection(&inj).map_err(ApiError::storage)?;
    ok_json(StatusCode::CREATED, inj)
}

async fn remove_injection(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let _guard = app.cluster.lock().await;
    let mut inj = app.store.injection(&id).ok_or_else(|| ApiError::not_found("injection", &id))?;
    if inj.status == InjectionStatus::Removed {
        return ok_json(StatusCode::OK, inj);
    }
    let set = app
        .model(&inj.manifest_set_id)
        .ok_or_else(|| ApiError::not_found("manifest set", &inj.manifest_set_id))?;
    let plan = plan_removal(&set, &inj.selection)?;
    let next = apply_plan(&set, &plan)?;
    execute_plan(app.executor.as_ref(), &plan).await?;
    app.models.lock().insert(inj.manifest_set_id.clone(), next);
    inj.status = InjectionStatus::Removed;
    app.store.save_injection(&inj).map_err(ApiError::storage)?;
    ok_json(StatusCode::OK, inj)
}

async fn list_injections(State(app): State<Arc<AppState>>) -> ApiResult {
    ok_json(StatusCode::OK, app.store.injections())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub profile: ProfileName,
    pub duration_s: u64,
    pub targets: Vec<url::Url>,
    #[serde(default)]
    pub step_users: Option<u32>,
    #[serde(default)]
    pub step_interval_s: Option<u64>,
    #[serde(default)]
    pub request: Option<RequestTemplate>,
    /// Labels the run with this injection's pattern.
    #[serde(default)]
    pub injection_id: Option<String>,
    /// Explicit pattern label; defaults to the injection's pattern or `baseline`.
    #[serde(default)]
    pub pattern: Option<String>,
}

impl RunRequest {
    fn profile(&self) -> Result<WorkloadProfile, ApiError> {
        let p = WorkloadProfile {
            name: self.profile,
            step_users: self.step_users.or(self.profile.step_users()).unwrap_or(0),
            step_interval_s: self.step_interval_s.unwrap_or(DEFAULT_STEP_INTERVAL_S),
            duration_s: self.duration_s,
            targets: self.targets.clone(),
            request: self.request.clone().unwrap_or_default(),
        };
        p.validate()
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_PROFILE", e.to_string()))?;
        Ok(p)
    }
}

async fn start_run(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: RunRequest = parse_body(&body)?;
    let profile = req.profile()?;
    let injection = match &req.injection_id {
        Some(id) => Some(app.store.injection(id).ok_or_else(|| ApiError::not_found("injection", id))?),
        None => None,
    };
    let pattern = req
        .pattern
        .clone()
        .or_else(|| injection.as_ref().map(|i| i.selection.pattern.as_str().to_string()))
        .unwrap_or_else(|| "baseline".into());
    let run_id = app.store.allocate_run().map_err(ApiError::storage)?;
    let mut rec = RunRecord {
        run_id: run_id.clone(),
        pattern,
        injection_id: req.injection_id.clone(),
        pattern_selection: injection.map(|i| i.selection),
        workload_profile: profile.clone(),
        started_at_unix_ms: None,
        ended_at_unix_ms: None,
        status: RunStatus::Created,
        artifacts: app.store.artifact_paths(&run_id),
        summary: None,
        error: None,
    };
    app.store.save_run(&rec).map_err(ApiError::storage)?;

    let sink = Arc::new(CsvSink::create(&rec.artifacts.outcomes_csv).map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "STORAGE", e.to_string())
    })?);
    let handle = run_load(profile, Arc::new(HttpRequester::default()), sink);
    rec.status = RunStatus::Running;
    rec.started_at_unix_ms = Some(handle.started_at_unix_ms());
    app.store.save_run(&rec).map_err(ApiError::storage)?;

    let response = rec.clone();
    let app2 = app.clone();
    tokio::spawn(async move {
        let result = handle.wait().await;
        rec.ended_at_unix_ms = Some(crate::workload::unix_ms_now());
        match result {
            Ok(stats) => {
                let outcomes = crate::workload::read_outcomes_csv(&rec.artifacts.outcomes_csv).unwrap_or_default();
                rec.summary = Some(summarize(
                    &outcomes,
                    &SummaryWindow {
                        start_unix_ms: stats.started_at_unix_ms,
                        duration_s: stats.duration_s,
                        step_interval_s: rec.workload_profile.step_interval_s,
                    },
                ));
                rec.status = RunStatus::Done;
            }
            Err(e) => {
                rec.status = RunStatus::Failed;
                rec.error = Some(e.to_string());
            }
        }
        if let Err(e) = app2.store.save_run(&rec) {
            tracing::error!(run = %rec.run_id, "saving run record: {e}");
        }
    });
    ok_json(StatusCode::CREATED, response)
}

async fn get_run(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let rec = app.store.run(&id).ok_or_else(|| ApiError::not_found("run", &id))?;
    ok_json(StatusCode::OK, rec)
}

async fn list_runs(State(app): State<Arc<AppState>>) -> ApiResult {
    ok_json(StatusCode::OK, app.store.runs())
}

/// Collects metrics for a finished run once; later calls reuse the files.
async fn ensure_metrics(app: &AppState, id: &str) -> Result<RunRecord, ApiError> {
    let rec = app.store.run(id).ok_or_else(|| ApiError::not_found("run", id))?;
    if rec.status != RunStatus::Done {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "RUN_NOT_FINISHED",
            format!("run {id} is {:?}", rec.status).to_lowercase(),
        ));
    }
    let _guard = app.metrics.lock().await;
    if rec.artifacts.metrics_csv.exists() && rec.artifacts.series_json.exists() {
        return Ok(rec);
    }
    let started = rec.started_at_unix_ms.unwrap_or_default();
    let ended = rec.ended_at_unix_ms.unwrap_or(started);
    let meta = RunMeta {
        run_id: rec.run_id.clone(),
        pattern: rec.pattern.clone(),
        workload: rec.workload_profile.name.as_str().to_string(),
        from_unix_s: started / 1000,
        to_unix_s: ended.div_ceil(1000).max(started / 1000 + 1),
    };
    let table = collect_run(app.prometheus.as_ref(), &app.config.collector(), &meta)
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "METRICS_FAILED", e.to_string()))?;
    let dir = app.store.run_dir(id);
    if !table.missing.is_empty() {
        let missing = serde_json::to_string_pretty(&table.missing).expect("serializable");
        std::fs::write(dir.join("metrics-missing.json"), missing).map_err(ApiError::storage)?;
    }
    std::fs::write(&rec.artifacts.series_json, export_series_json(&table)).map_err(ApiError::storage)?;
    std::fs::write(&rec.artifacts.metrics_csv, export_csv_string(&table)).map_err(ApiError::storage)?;
    Ok(rec)
}

async fn run_metrics_csv(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let rec = ensure_metrics(&app, &id).await?;
    let bytes = std::fs::read(&rec.artifacts.metrics_csv).map_err(ApiError::storage)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response())
}

async fn run_series_json(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let rec = ensure_metrics(&app, &id).await?;
    let bytes = std::fs::read(&rec.artifacts.series_json).map_err(ApiError::storage)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint")
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/cluster", post(create_cluster).delete(delete_cluster))
        .route("/manifest-sets", post(upload_manifests))
        .route("/manifest-sets/{id}/deploy", post(deploy_manifest_set))
        .route("/services", get(list_services))
        .route("/injections", post(inject).get(list_injections))
        .route("/injections/{id}", delete(remove_injection))
        .route("/runs", post(start_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/metrics.csv", get(run_metrics_csv))
        .route("/runs/{id}/series.json", get(run_series_json))
        .fallback(fallback)
        .with_state(app)
}
