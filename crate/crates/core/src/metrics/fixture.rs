//! Recorded Prometheus responses replayed against any query window.
//!
//! A recording's timestamps are relative to its first sample; on replay the
//! first sample lands on the query start.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::Deserialize;
use serde_json::json;

use super::collect::CollectorConfig;
use super::prom::{check_range, parse_query_range, PromSource, QueryError, Series};

const KEPLER_PIPELINE: &str = include_str!("../../assets/prometheus-recording/kepler-pipeline.json");
const KEPLER_PATTERNS: &str = include_str!("../../assets/prometheus-recording/kepler-patterns.json");
const SPAN_LATENCY: &str = include_str!("../../assets/prometheus-recording/span-latency.json");
const SPAN_CALLS: &str = include_str!("../../assets/prometheus-recording/span-calls.json");

#[derive(Debug, Clone)]
enum Recording {
    Series(Vec<Series>),
    Error(QueryError),
}

#[derive(Debug, Default)]
pub struct RecordedPrometheus {
    recordings: BTreeMap<String, Recording>,
    queries: Mutex<Vec<String>>,
}

fn rebase(series: Vec<Series>) -> Vec<Series> {
    let origin = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(f64::INFINITY, f64::min);
    series
        .into_iter()
        .map(|s| Series {
            labels: s.labels,
            points: s.points.into_iter().map(|(t, v)| (t - origin, v)).collect(),
        })
        .collect()
}

impl RecordedPrometheus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a raw `query_range` response body for `query`.
    pub fn with_response(mut self, query: &str, body: &str) -> Result<Self, QueryError> {
        let rec = match parse_query_range(body) {
            Ok(series) => Recording::Series(rebase(series)),
            Err(e @ QueryError::Server { .. }) => Recording::Error(e),
            Err(e) => return Err(e),
        };
        self.recordings.insert(query.to_string(), rec);
        Ok(self)
    }

    pub fn with_series(mut self, query: &str, series: Vec<Series>) -> Self {
        self.recordings.insert(query.to_string(), Recording::Series(rebase(series)));
        self
    }

    pub fn with_error(mut self, query: &str, message: &str) -> Self {
        self.recordings.insert(
            query.to_string(),
            Recording::Error(QueryError::Server {
                error_type: "execution".into(),
                message: message.into(),
            }),
        );
        self
    }

    /// The bundled desk recording keyed by the queries `config` renders.
    pub fn desk(config: &CollectorConfig) -> Self {
        let queries = config.rendered_queries().expect("default templates render");
        let mut rec = RecordedPrometheus::new();
        for ((ns, column), query) in queries {
            let body = match column.as_str() {
                "joules" if ns == config.pipeline_namespace => KEPLER_PIPELINE,
                "joules" => KEPLER_PATTERNS,
                "request_count" => SPAN_CALLS,
                _ => SPAN_LATENCY,
            };
            let body = body.replace("__NAMESPACE__", &ns);
            rec = rec.with_response(&query, &body).expect("bundled recording parses");
        }
        rec
    }

    /// Queries received so far, in order.
    pub fn queries(&self) -> Vec<String> {
        self.queries.lock().clone()
    }

    fn answer(&self, query: &str, start_s: f64, end_s: f64, step_s: f64) -> Result<Vec<Series>, QueryError> {
        check_range(start_s, end_s, step_s)?;
        self.queries.lock().push(query.to_string());
        match self.recordings.get(query) {
            None => Err(QueryError::Server {
                error_type: "bad_data".into(),
                message: format!("no recording for query {query}"),
            }),
            Some(Recording::Error(e)) => Err(e.clone()),
            Some(Recording::Series(series)) => Ok(series
                .iter()
                .map(|s| Series {
                    labels: s.labels.clone(),
                    points: s
                        .points
                        .iter()
                        .map(|&(t, v)| (start_s + t, v))
                        .filter(|&(t, _)| t <= end_s)
                        .collect(),
                })
                .collect()),
        }
    }
}

#[async_trait]
impl PromSource for RecordedPrometheus {
    async fn query_range(&self, query: &str, start_s: f64, end_s: f64, step_s: f64) -> Result<Vec<Series>, QueryError> {
        self.answer(query, start_s, end_s, step_s)
    }
}

#[derive(Deserialize)]
struct RangeParams {
    query: String,
    start: f64,
    end: f64,
    step: f64,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "+Inf" } else { "-Inf" }.into()
    } else {
        v.to_string()
    }
}

async fn serve_range(State(rec): State<Arc<RecordedPrometheus>>, Query(p): Query<RangeParams>) -> impl IntoResponse {
    match rec.answer(&p.query, p.start, p.end, p.step) {
        Ok(series) => {
            let result: Vec<_> = series
                .iter()
                .map(|s| {
                    json!({
                        "metric": s.labels,
                        "values": s.points.iter().map(|&(t, v)| json!([t, fmt_value(v)])).collect::<Vec<_>>(),
                    })
                })
                .collect();
            (
                StatusCode::OK,
                Json(json!({"status": "success", "data": {"resultType": "matrix", "result": result}})),
            )
        }
        Err(QueryError::Server { error_type, message }) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({"status": "error", "errorType": error_type, "error": message})),
        ),
        Err(e) => (
            StatusCode::BAD_REQUEST,
            Json(json!({"status": "error", "errorType": "bad_data", "error": e.to_string()})),
        ),
    }
}

/// HTTP face of a recording, serving `/api/v1/query_range`.
pub fn router(recording: Arc<RecordedPrometheus>) -> Router {
    Router::new()
        .route("/api/v1/query_range", get(serve_range))
        .with_state(recording)
}
