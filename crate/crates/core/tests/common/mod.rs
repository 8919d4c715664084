#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use reqwest::{Method, StatusCode};
use serde_json::Value;
use snappattern::control::{router, AppState, ExecutorMode, FakeExecutor, ServiceConfig};
use snappattern::metrics::fixture::RecordedPrometheus;
use snappattern::metrics::PromSource;
use tempfile::TempDir;
use url::Url;

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
pub fn assert_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

pub fn test_config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        executor: ExecutorMode::Fake,
        data_dir: dir.to_path_buf(),
        readiness_timeout_s: 1,
        readiness_poll_ms: 20,
        ..ServiceConfig::default()
    }
}

/// A control service on a loopback port backed by the fake executor.
pub struct Harness {
    pub base: Url,
    pub fake: Arc<FakeExecutor>,
    pub app: Arc<AppState>,
    pub dir: Arc<TempDir>,
    client: reqwest::Client,
    task: tokio::task::JoinHandle<()>,
}

impl Harness {
    pub async fn start() -> Harness {
        let dir = Arc::new(tempfile::tempdir().unwrap());
        Self::start_in(dir, Arc::new(FakeExecutor::new())).await
    }

    pub async fn start_in(dir: Arc<TempDir>, fake: Arc<FakeExecutor>) -> Harness {
        let config = test_config(dir.path());
        let prom: Arc<dyn PromSource> = Arc::new(RecordedPrometheus::desk(&config.collector()));
        let app = AppState::open(config, fake.clone(), prom).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let r = router(app.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, r).await.unwrap();
        });
        Harness {
            base: Url::parse(&format!("http://{addr}/")).unwrap(),
            fake,
            app,
            dir,
            client: reqwest::Client::new(),
            task,
        }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, text) = self.call_text(method, path, body).await;
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, value)
    }

    pub async fn call_text(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, String) {
        let mut req = self.client.request(method, self.base.join(path).unwrap());
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        (resp.status(), resp.text().await.unwrap())
    }

    pub async fn upload(&self, text: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(self.base.join("manifest-sets").unwrap())
            .body(text.to_string())
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    /// Uploads and deploys the sample pipeline; returns the set id.
    pub async fn deployed_sample(&self) -> String {
        let (status, rec) = self.upload(snappattern::manifest::SAMPLE_PIPELINE).await;
        assert_eq!(status, 201);
        let id = rec["id"].as_str().unwrap().to_string();
        let (status, _) = self.call(Method::POST, &format!("manifest-sets/{id}/deploy"), None).await;
        assert_eq!(status, 200);
        id
    }

    /// Polls a run until it leaves `running`.
    pub async fn wait_run(&self, run_id: &str) -> Value {
        loop {
            let (_, rec) = self.call(Method::GET, &format!("runs/{run_id}"), None).await;
            if rec["status"] != "running" && rec["status"] != "created" {
                return rec;
            }
            tokio::time::sleep(std::time::Duration::from_millis(100)).await;
        }
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub fn transcript_json(fake: &FakeExecutor) -> String {
    let mut s = serde_json::to_string_pretty(&fake.transcript()).unwrap();
    s.push('\n');
    s
}
