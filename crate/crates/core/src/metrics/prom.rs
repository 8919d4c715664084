//! Prometheus `query_range` client and response parsing.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;
use url::Url;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("prometheus returned an error ({error_type}): {message}")]
    Server { error_type: String, message: String },
    #[error("http: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Parse(String),
    #[error("invalid query range: {0}")]
    Range(String),
}

/// One labeled series of `(timestamp_s, value)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub labels: BTreeMap<String, String>,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// First present label among `keys`, or empty.
    pub fn label(&self, keys: &[&str]) -> String {
        keys.iter()
            .find_map(|k| self.labels.get(*k))
            .cloned()
            .unwrap_or_default()
    }
}

#[derive(Deserialize)]
struct Envelope {
    status: String,
    #[serde(default)]
    data: Option<Data>,
    #[serde(default, rename = "errorType")]
    error_type: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct Data {
    #[serde(rename = "resultType")]
    result_type: String,
    result: Vec<RawSeries>,
}

#[derive(Deserialize)]
struct RawSeries {
    #[serde(default)]
    metric: BTreeMap<String, String>,
    #[serde(default)]
    values: Vec<(Value, String)>,
}

fn parse_sample_value(s: &str) -> Result<f64, QueryError> {
    match s {
        "NaN" => Ok(f64::NAN),
        "+Inf" | "Inf" => Ok(f64::INFINITY),
        "-Inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse()
            .map_err(|_| QueryError::Parse(format!("sample value `{other}`"))),
    }
}

/// Parses a `query_range` response body (matrix result).
pub fn parse_query_range(body: &str) -> Result<Vec<Series>, QueryError> {
    let env: Envelope = serde_json::from_str(body).map_err(|e| QueryError::Parse(e.to_string()))?;
    if env.status != "success" {
        return Err(QueryError::Server {
            error_type: env.error_type.unwrap_or_default(),
            message: env.error.unwrap_or_else(|| format!("status `{}`", env.status)),
        });
    }
    let data = env.data.ok_or_else(|| QueryError::Parse("missing data".into()))?;
    if data.result_type != "matrix" {
        return Err(QueryError::Parse(format!("expected matrix, got {}", data.result_type)));
    }
    data.result
        .into_iter()
        .map(|raw| {
            let points = raw
                .values
                .iter()
                .map(|(t, v)| {
                    let t = t
                        .as_f64()
                        .ok_or_else(|| QueryError::Parse(format!("timestamp `{t}`")))?;
                    Ok((t, parse_sample_value(v)?))
                })
                .collect::<Result<Vec<_>, QueryError>>()?;
            Ok(Series {
                labels: raw.metric,
                points,
            })
        })
        .collect()
}

/// Anything answering range queries.
#[async_trait]
pub trait PromSource: Send + Sync {
    async fn query_range(&self, query: &str, start_s: f64, end_s: f64, step_s: f64) -> Result<Vec<Series>, QueryError>;
}

pub fn check_range(start_s: f64, end_s: f64, step_s: f64) -> Result<(), QueryError> {
    if !(start_s < end_s) {
        return Err(QueryError::Range(format!("start {start_s} must precede end {end_s}")));
    }
    if !(step_s > 0.0) {
        return Err(QueryError::Range(format!("step {step_s} must be positive")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HttpPrometheus {
    base: Url,
    client: reqwest::Client,
}

impl HttpPrometheus {
    pub fn new(base: Url) -> Self {
        HttpPrometheus {
            base,
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("client builds"),
        }
    }
}

#[async_trait]
impl PromSource for HttpPrometheus {
    async fn query_range(&self, query: &str, start_s: f64, end_s: f64, step_s: f64) -> Result<Vec<Series>, QueryError> {
        check_range(start_s, end_s, step_s)?;
        let url = self
            .base
            .join("api/v1/query_range")
            .map_err(|e| QueryError::Http(e.to_string()))?;
        let resp = self
            .client
            .get(url)
            .query(&[
                ("query", query.to_string()),
                ("start", start_s.to_string()),
                ("end", end_s.to_string()),
                ("step", step_s.to_string()),
            ])
            .send()
            .await
            .map_err(|e| QueryError::Http(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| QueryError::Http(e.to_string()))?;
        match parse_query_range(&body) {
            Err(QueryError::Parse(_)) if !status.is_success() => {
                Err(QueryError::Http(format!("status {status}")))
            }
            other => other,
        }
    }
}

/// `query_range` against an endpoint URL.
pub async fn query_range(
    endpoint: &Url,
    query: &str,
    start_s: f64,
    end_s: f64,
    step_s: f64,
) -> Result<Vec<Series>, QueryError> {
    HttpPrometheus::new(endpoint.clone())
        .query_range(query, start_s, end_s, step_s)
        .await
}
