use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;
use url::Url;

use super::{end_to_end_headers, ProxyRequest, ProxyResponse};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum UpstreamError {
    #[error("upstream connection failed: {0}")]
    Connect(String),
    #[error("upstream timed out: {0}")]
    Timeout(String),
    #[error("upstream transport error: {0}")]
    Transport(String),
}

/// Where the proxy sends traffic it decides to forward.
#[async_trait]
pub trait Upstream: Send + Sync {
    async fn send(&self, request: ProxyRequest) -> Result<ProxyResponse, UpstreamError>;

    /// Host name used in cache keys.
    fn host(&self) -> &str;
}

/// Forwards requests over HTTP to `base`.
#[derive(Debug, Clone)]
pub struct HttpUpstream {
    base: Url,
    host: String,
    client: reqwest::Client,
}

impl HttpUpstream {
    pub fn new(base: Url, connect_timeout: Duration, request_timeout: Duration) -> Self {
        let host = base.host_str().unwrap_or_default().to_string();
        let client = reqwest::Client::builder()
            .connect_timeout(connect_timeout)
            .timeout(request_timeout)
            .pool_max_idle_per_host(64)
            .build()
            .expect("reqwest client builds with static configuration");
        HttpUpstream { base, host, client }
    }

    fn target(&self, path_and_query: &str) -> String {
        let base = self.base.as_str().trim_end_matches('/');
        format!("{base}{path_and_query}")
    }
}

#[async_trait]
impl Upstream for HttpUpstream {
    async fn send(&self, request: ProxyRequest) -> Result<ProxyResponse, UpstreamError> {
        let resp = self
            .client
            .request(request.method.clone(), self.target(&request.path_and_query))
            .headers(end_to_end_headers(&request.headers))
            .body(request.body)
            .send()
            .await
            .map_err(classify)?;
        let status = resp.status();
        let headers = end_to_end_headers(resp.headers());
        let body = resp.bytes().await.map_err(classify)?;
        Ok(ProxyResponse {
            status,
            headers,
            body,
        })
    }

    fn host(&self) -> &str {
        &self.host
    }
}

fn classify(err: reqwest::Error) -> UpstreamError {
    if err.is_timeout() {
        UpstreamError::Timeout(err.to_string())
    } else if err.is_connect() {
        UpstreamError::Connect(err.to_string())
    } else {
        UpstreamError::Transport(err.to_string())
    }
}
