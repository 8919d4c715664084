use std::sync::Arc;

use serde_json::Value;
use snappattern::metrics::fixture::{router, RecordedPrometheus};
use snappattern::metrics::{
    collect_run, export_csv_string, read_csv, CollectorConfig, HttpPrometheus, PromSource, QueryError, RunMeta,
};
use url::Url;

const PIPELINE_RECORDING: &str = include_str!("../assets/prometheus-recording/kepler-pipeline.json");

fn meta(from: u64, to: u64) -> RunMeta {
    RunMeta {
        run_id: "run-1".into(),
        pattern: "baseline".into(),
        workload: "low".into(),
        from_unix_s: from,
        to_unix_s: to,
    }
}

/// Per-window joules straight from the recording: each series' counter
/// difference between consecutive 10 s samples, summed over series.
fn recording_windows(count: usize) -> Vec<f64> {
    let doc: Value = serde_json::from_str(PIPELINE_RECORDING).unwrap();
    let mut out = vec![0.0; count];
    for series in doc["data"]["result"].as_array().unwrap() {
        let vals: Vec<f64> = series["values"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[1].as_str().unwrap().parse().unwrap())
            .collect();
        for k in 0..count {
            out[k] += vals[k + 1] - vals[k];
        }
    }
    out
}

#[tokio::test]
async fn desk_recording_fills_every_column() {
    let cfg = CollectorConfig::default();
    let rec = RecordedPrometheus::desk(&cfg);
    let table = collect_run(&rec, &cfg, &meta(5_000, 5_060)).await.unwrap();
    assert!(table.missing.is_empty(), "{:?}", table.missing);
    assert_eq!(table.rows.len(), 12);

    let pipeline: Vec<_> = table.rows.iter().filter(|r| r.namespace == "pipeline").collect();
    let expected = recording_windows(6);
    for (row, want) in pipeline.iter().zip(&expected) {
        assert!((row.joules.unwrap() - want).abs() < 1e-9);
        assert!(row.request_count.is_some() && row.p95_latency_ms.is_some());
    }
    let patterns: Vec<_> = table.rows.iter().filter(|r| r.namespace != "pipeline").collect();
    assert!(patterns.iter().all(|r| r.joules == Some(15.0) && r.p95_latency_ms.is_none()));
}

#[tokio::test]
async fn failed_namespace_is_flagged_not_fatal() {
    let cfg = CollectorConfig::default();
    let patterns_query = cfg.energy.render("snappattern-patterns", &cfg.range()).unwrap();
    let rec = RecordedPrometheus::desk(&cfg).with_error(&patterns_query, "query timed out");
    let table = collect_run(&rec, &cfg, &meta(0, 30)).await.unwrap();
    assert!(table.is_missing("snappattern-patterns", "joules"));
    assert!(!table.is_missing("pipeline", "joules"));
    assert!(table
        .rows
        .iter()
        .all(|r| (r.namespace == "pipeline") == r.joules.is_some()));
}

#[tokio::test]
async fn http_client_reports_typed_server_errors() {
    let cfg = CollectorConfig::default();
    let rec = Arc::new(RecordedPrometheus::desk(&cfg).with_error("broken", "bad query"));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(rec)).await });
    let prom = HttpPrometheus::new(Url::parse(&format!("http://{addr}/")).unwrap());

    let err = prom.query_range("broken", 0.0, 10.0, 10.0).await.unwrap_err();
    assert_eq!(
        err,
        QueryError::Server {
            error_type: "execution".into(),
            message: "bad query".into()
        }
    );

    let table = collect_run(&prom, &cfg, &meta(1_000, 1_030)).await.unwrap();
    let csv = export_csv_string(&table);
    assert_eq!(read_csv(csv.as_bytes()).unwrap(), table.rows);
}
