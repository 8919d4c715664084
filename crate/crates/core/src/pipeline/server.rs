use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use url::Url;

use super::stages::{apply_stage, bundled_records, validate_chain, Document, Record, StageKind, StageSpec};

/// Chain used by `GET /run` on the coordinator.
pub fn default_chain() -> Vec<StageSpec> {
    vec![
        StageSpec::new(StageKind::Anonymize, json!({"strategy": "mask", "fields": ["author"]})),
        StageSpec::new(StageKind::Format, json!({"output": "json"})),
    ]
}

/// Which server a fixture process runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    DataProduct,
    Stage(StageKind),
    Coordinator,
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "data-product" => Ok(Role::DataProduct),
            "coordinator" => Ok(Role::Coordinator),
            other => other.parse().map(Role::Stage).map_err(|_| {
                format!("unknown stage `{other}` (expected data-product, filter, aggregate, anonymize, format or coordinator)")
            }),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::DataProduct => f.write_str("data-product"),
            Role::Stage(k) => write!(f, "{k}"),
            Role::Coordinator => f.write_str("coordinator"),
        }
    }
}

/// Base URLs the coordinator calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUrls {
    pub data_product: Url,
    pub filter: Url,
    pub aggregate: Url,
    pub anonymize: Url,
    pub format: Url,
}

impl StageUrls {
    pub fn get(&self, kind: StageKind) -> &Url {
        match kind {
            StageKind::Filter => &self.filter,
            StageKind::Aggregate => &self.aggregate,
            StageKind::Anonymize => &self.anonymize,
            StageKind::Format => &self.format,
        }
    }

    pub fn set(&mut self, kind: StageKind, url: Url) {
        match kind {
            StageKind::Filter => self.filter = url,
            StageKind::Aggregate => self.aggregate = url,
            StageKind::Anonymize => self.anonymize = url,
            StageKind::Format => self.format = url,
        }
    }

    /// Reads `DATA_PRODUCT_URL`, `FILTER_URL`, `AGGREGATE_URL`,
    /// `ANONYMIZE_URL` and `FORMAT_URL`.
    pub fn from_env() -> Result<Self, String> {
        let var = |name: &str| -> Result<Url, String> {
            let raw = std::env::var(name).map_err(|_| format!("{name} is not set"))?;
            Url::parse(&raw).map_err(|e| format!("{name}: {e}"))
        };
        Ok(StageUrls {
            data_product: var("DATA_PRODUCT_URL")?,
            filter: var("FILTER_URL")?,
            aggregate: var("AGGREGATE_URL")?,
            anonymize: var("ANONYMIZE_URL")?,
            format: var("FORMAT_URL")?,
        })
    }
}

fn error_body(status: StatusCode, code: &str, message: String, extra: Value) -> Response {
    let mut body = json!({"code": code, "message": message});
    if let (Value::Object(b), Value::Object(e)) = (&mut body, extra) {
        b.extend(e);
    }
    (status, Json(body)).into_response()
}

fn document_response(doc: &Document) -> Response {
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, doc.content_type())
        .body(Body::from(doc.to_body()))
        .expect("static response parts")
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn data_product_router() -> Router {
    let body = Arc::new(serde_json::to_string(&bundled_records()).expect("records serialize"));
    Router::new()
        .route(
            "/data",
            get(move || {
                let body = body.clone();
                async move { ([(header::CONTENT_TYPE, "application/json")], body.as_str().to_owned()) }
            }),
        )
        .route("/healthz", get(healthz))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageRequest {
    pub records: Vec<Record>,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageReply {
    pub records: Vec<Record>,
}

/// One POST endpoint at `/<stage>`. Record stages answer `{records}`;
/// format answers with the rendered document.
pub fn stage_router(kind: StageKind) -> Router {
    let handler = move |Json(req): Json<StageRequest>| async move {
        match apply_stage(&StageSpec::new(kind, req.params), &req.records) {
            Ok(Document::Records(records)) if kind != StageKind::Format => {
                Json(StageReply { records }).into_response()
            }
            Ok(doc) => document_response(&doc),
            Err(e) => error_body(StatusCode::BAD_REQUEST, "BAD_PARAMS", e.to_string(), json!({})),
        }
    };
    Router::new()
        .route(&format!("/{kind}"), post(handler))
        .route("/healthz", get(healthz))
}

struct Coordinator {
    urls: StageUrls,
    client: reqwest::Client,
}

struct StageFailure {
    stage: String,
    message: String,
}

impl StageFailure {
    fn new(stage: impl fmt::Display, message: impl fmt::Display) -> Self {
        StageFailure {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

impl Coordinator {
    async fn fetch_data(&self) -> Result<Vec<Record>, StageFailure> {
        let url = self
            .urls
            .data_product
            .join("data")
            .map_err(|e| StageFailure::new("data-product", e))?;
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| StageFailure::new("data-product", e))?;
        if !resp.status().is_success() {
            return Err(StageFailure::new("data-product", format!("status {}", resp.status())));
        }
        resp.json().await.map_err(|e| StageFailure::new("data-product", e))
    }

    async fn call(&self, spec: &StageSpec, records: Vec<Record>) -> Result<Document, StageFailure> {
        let fail = |m: String| StageFailure::new(spec.stage, m);
        let url = self
            .urls
            .get(spec.stage)
            .join(spec.stage.as_str())
            .map_err(|e| fail(e.to_string()))?;
        let resp = self
            .client
            .post(url)
            .json(&StageRequest {
                records,
                params: spec.params.clone(),
            })
            .send()
            .await
            .map_err(|e| fail(e.to_string()))?;
        let status = resp.status();
        let content_type = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        let text = resp.text().await.map_err(|e| fail(e.to_string()))?;
        if !status.is_success() {
            return Err(fail(format!("status {status}: {text}")));
        }
        if content_type.starts_with("text/csv") {
            return Ok(Document::Csv(text));
        }
        if spec.stage == StageKind::Format {
            return serde_json::from_str(&text)
                .map(Document::Records)
                .map_err(|e| fail(e.to_string()));
        }
        serde_json::from_str::<StageReply>(&text)
            .map(|r| Document::Records(r.records))
            .map_err(|e| fail(e.to_string()))
    }

    async fn run(&self, chain: &[StageSpec]) -> Response {
        if let Err(e) = validate_chain(chain) {
            return error_body(StatusCode::BAD_REQUEST, "BAD_CHAIN", e.to_string(), json!({}));
        }
        let result = async {
            let mut doc = Document::Records(self.fetch_data().await?);
            for spec in chain {
                let Document::Records(records) = doc else {
                    unreachable!("validated: format is last");
                };
                doc = self.call(spec, records).await?;
            }
            Ok::<_, StageFailure>(doc)
        }
        .await;
        match result {
            Ok(doc) => document_response(&doc),
            Err(f) => error_body(
                StatusCode::BAD_GATEWAY,
                "STAGE_FAILED",
                format!("stage {} failed: {}", f.stage, f.message),
                json!({"stage": f.stage}),
            ),
        }
    }
}

/// `POST /run` takes a chain `[{stage, params}]`; `GET /run` runs the
/// default chain.
pub fn coordinator_router(urls: StageUrls) -> Router {
    let state = Arc::new(Coordinator {
        urls,
        client: reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("client builds"),
    });
    Router::new()
        .route(
            "/run",
            post(|State(c): State<Arc<Coordinator>>, Json(chain): Json<Vec<StageSpec>>| async move {
                c.run(&chain).await
            })
            .get(|State(c): State<Arc<Coordinator>>| async move { c.run(&default_chain()).await }),
        )
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub fn router_for(role: Role, urls: Option<StageUrls>) -> Result<Router, String> {
    Ok(match role {
        Role::DataProduct => data_product_router(),
        Role::Stage(kind) => stage_router(kind),
        Role::Coordinator => coordinator_router(match urls {
            Some(u) => u,
            None => StageUrls::from_env()?,
        }),
    })
}

/// Serves `router` on an ephemeral loopback port.
pub async fn spawn_router(router: Router) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, router).await;
    });
    Ok((addr, task))
}

fn base_url(addr: SocketAddr) -> Url {
    Url::parse(&format!("http://{addr}/")).expect("socket address forms a url")
}

/// Every fixture server running in-process on loopback ports.
pub struct LocalPipeline {
    pub stages: StageUrls,
    pub coordinator: Option<Url>,
    tasks: Vec<JoinHandle<()>>,
}

impl LocalPipeline {
    /// Data product and the four stages, without a coordinator.
    pub async fn start_stages() -> std::io::Result<Self> {
        let mut tasks = Vec::new();
        let (dp, t) = spawn_router(data_product_router()).await?;
        tasks.push(t);
        let mut urls = Vec::new();
        for kind in StageKind::ALL {
            let (addr, t) = spawn_router(stage_router(kind)).await?;
            tasks.push(t);
            urls.push(base_url(addr));
        }
        let [filter, aggregate, anonymize, format]: [Url; 4] = urls.try_into().expect("four stages");
        Ok(LocalPipeline {
            stages: StageUrls {
                data_product: base_url(dp),
                filter,
                aggregate,
                anonymize,
                format,
            },
            coordinator: None,
            tasks,
        })
    }

    /// Everything, with the coordinator wired straight to the stages.
    pub async fn start() -> std::io::Result<Self> {
        let mut p = Self::start_stages().await?;
        let urls = p.stages.clone();
        p.start_coordinator(urls).await?;
        Ok(p)
    }

    /// Starts a coordinator against `urls`, which may route through proxies.
    pub async fn start_coordinator(&mut self, urls: StageUrls) -> std::io::Result<Url> {
        let (addr, t) = spawn_router(coordinator_router(urls)).await?;
        self.tasks.push(t);
        let url = base_url(addr);
        self.coordinator = Some(url.clone());
        Ok(url)
    }
}

impl Drop for LocalPipeline {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
