use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 9] = [
    "run_id",
    "pattern",
    "workload",
    "namespace",
    "window_start_unix_s",
    "window_seconds",
    "joules",
    "request_count",
    "p95_latency_ms",
];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One (run, namespace, window) row. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub pattern: String,
    pub workload: String,
    pub namespace: String,
    pub window_start_unix_s: u64,
    pub window_seconds: u64,
    pub joules: Option<f64>,
    pub request_count: Option<f64>,
    pub p95_latency_ms: Option<f64>,
}

impl MetricsRow {
    fn sort_key(&self) -> (&str, u64, &str, &str, &str) {
        (
            &self.namespace,
            self.window_start_unix_s,
            &self.run_id,
            &self.pattern,
            &self.workload,
        )
    }
}

/// A column that could not be filled for a namespace, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingColumn {
    pub run_id: String,
    pub namespace: String,
    pub column: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub missing: Vec<MissingColumn>,
}

impl MetricsTable {
    pub fn merge(&mut self, other: MetricsTable) {
        self.rows.extend(other.rows);
        self.missing.extend(other.missing);
        self.sort();
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn is_missing(&self, namespace: &str, column: &str) -> bool {
        self.missing
            .iter()
            .any(|m| m.namespace == namespace && m.column == column)
    }

    pub fn namespace_joules(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            if let Some(j) = r.joules {
                *out.entry(r.namespace.clone()).or_default() += j;
            }
        }
        out
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>, TableError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| TableError::Header(vec![format!("bad number `{s}`")]))
}

/// Writes the table as CSV sorted by (namespace, window_start).
pub fn export_csv<W: Write>(table: &MetricsTable, out: W) -> Result<(), TableError> {
    let mut rows: Vec<&MetricsRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.pattern.clone(),
            r.workload.clone(),
            r.namespace.clone(),
            r.window_start_unix_s.to_string(),
            r.window_seconds.to_string(),
            cell(r.joules),
            cell(r.request_count),
            cell(r.p95_latency_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv_string(table: &MetricsTable) -> String {
    let mut buf = Vec::new();
    export_csv(table, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, TableError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(TableError::Header(header));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let int = |i: usize| {
                rec[i]
                    .parse::<u64>()
                    .map_err(|_| TableError::Header(vec![format!("bad integer `{}`", &rec[i])]))
            };
            Ok(MetricsRow {
                run_id: rec[0].to_string(),
                pattern: rec[1].to_string(),
                workload: rec[2].to_string(),
                namespace: rec[3].to_string(),
                window_start_unix_s: int(4)?,
                window_seconds: int(5)?,
                joules: parse_cell(&rec[6])?,
                request_count: parse_cell(&rec[7])?,
                p95_latency_ms: parse_cell(&rec[8])?,
            })
        })
        .collect()
}

/// One line for a joules-over-time chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub pattern: String,
    pub workload: String,
    pub namespace: String,
    pub points: Vec<(u64, f64)>,
}

/// Groups rows by (pattern, workload, namespace); points are
/// (window_start, joules) for rows with energy data.
pub fn export_series(table: &MetricsTable) -> Vec<PlotSeries> {
    let mut groups: BTreeMap<(String, String, String), Vec<(u64, f64)>> = BTreeMap::new();
    for r in &table.rows {
        let points = groups
            .entry((r.pattern.clone(), r.workload.clone(), r.namespace.clone()))
            .or_default();
        if let Some(j) = r.joules {
            points.push((r.window_start_unix_s, j));
        }
    }
    groups
        .into_iter()
        .map(|((pattern, workload, namespace), mut points)| {
            points.sort_by_key(|p| p.0);
            PlotSeries {
                pattern,
                workload,
                namespace,
                points,
            }
        })
        .collect()
}

pub fn export_series_json(table: &MetricsTable) -> String {
    serde_json::to_string(&export_series(table)).expect("series serialize")
}
