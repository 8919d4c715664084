use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::energy::{group_samples, samples_from_series, window_energy_on_grid, DEFAULT_WINDOW_SECONDS};
use super::prom::{PromSource, Series};
use super::table::{MetricsRow, MetricsTable, MissingColumn};

pub const ENERGY_QUERY: &str =
    r#"sum without (mode) (kepler_container_joules_total{container_namespace="{namespace}"})"#;
pub const LATENCY_QUERY: &str = r#"histogram_quantile(0.95, sum by (le) (rate(traces_span_metrics_duration_milliseconds_bucket{k8s_namespace_name="{namespace}", span_kind="SPAN_KIND_SERVER"}[{range}])))"#;
pub const REQUEST_QUERY: &str = r#"sum(increase(traces_span_metrics_calls_total{k8s_namespace_name="{namespace}", span_kind="SPAN_KIND_SERVER"}[{range}]))"#;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectError {
    #[error("template `{name}` left placeholder {placeholder}")]
    Placeholder { name: String, placeholder: String },
    #[error("run window [{from}, {to}) is empty")]
    EmptyWindow { from: u64, to: u64 },
    #[error("window length must be positive")]
    ZeroWindow,
}

/// A PromQL template with `{namespace}` and `{range}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromQueryTemplate {
    pub name: String,
    pub template: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Label matchers always contain `=`, so a bare `{word}` is a placeholder.
    RE.get_or_init(|| Regex::new(r"\{[A-Za-z_]+\}").expect("static regex"))
}

impl PromQueryTemplate {
    pub fn new(name: &str, template: &str) -> Self {
        PromQueryTemplate {
            name: name.into(),
            template: template.into(),
        }
    }

    pub fn render(&self, namespace: &str, range: &str) -> Result<String, CollectError> {
        let out = self
            .template
            .replace("{namespace}", namespace)
            .replace("{range}", range);
        match placeholder_re().find(&out) {
            Some(m) => Err(CollectError::Placeholder {
                name: self.name.clone(),
                placeholder: m.as_str().to_string(),
            }),
            None => Ok(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectorConfig {
    pub namespaces: Vec<String>,
    /// Namespace whose request count and latency are queried.
    pub pipeline_namespace: String,
    pub window_seconds: u64,
    pub energy: PromQueryTemplate,
    pub latency: PromQueryTemplate,
    pub requests: PromQueryTemplate,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        CollectorConfig {
            namespaces: vec![
                crate::manifest::DEFAULT_PIPELINE_NAMESPACE.to_string(),
                crate::manifest::DEFAULT_PATTERN_NAMESPACE.to_string(),
            ],
            pipeline_namespace: crate::manifest::DEFAULT_PIPELINE_NAMESPACE.to_string(),
            window_seconds: DEFAULT_WINDOW_SECONDS,
            energy: PromQueryTemplate::new("energy", ENERGY_QUERY),
            latency: PromQueryTemplate::new("p95_latency", LATENCY_QUERY),
            requests: PromQueryTemplate::new("request_count", REQUEST_QUERY),
        }
    }
}

impl CollectorConfig {
    pub fn range(&self) -> String {
        format!("{}s", self.window_seconds)
    }

    /// Every query `collect_run` will dispatch, keyed by (namespace, column).
    pub fn rendered_queries(&self) -> Result<BTreeMap<(String, String), String>, CollectError> {
        let range = self.range();
        let mut out = BTreeMap::new();
        for ns in &self.namespaces {
            out.insert((ns.clone(), "joules".into()), self.energy.render(ns, &range)?);
        }
        let ns = &self.pipeline_namespace;
        out.insert((ns.clone(), "request_count".into()), self.requests.render(ns, &range)?);
        out.insert((ns.clone(), "p95_latency_ms".into()), self.latency.render(ns, &range)?);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub pattern: String,
    pub workload: String,
    pub from_unix_s: u64,
    pub to_unix_s: u64,
}

/// Per-window values from a rate-style query whose point at `t` covers
/// `[t - w, t)`. Multiple series keep the largest finite value.
fn windowed_values(series: &[Series], from: u64, count: u64, w: u64) -> Vec<Option<f64>> {
    let mut out = vec![None; count as usize];
    for s in series {
        for &(t, v) in &s.points {
            if !v.is_finite() {
                continue;
            }
            let start = t - w as f64 - from as f64;
            if start < 0.0 {
                continue;
            }
            let k = (start / w as f64).round() as usize;
            if k < out.len() {
                out[k] = Some(out[k].map_or(v, |prev: f64| prev.max(v)));
            }
        }
    }
    out
}

/// Queries every configured namespace for the run window and assembles
/// the table. Failed queries leave empty cells and a `missing` entry.
pub async fn collect_run(
    source: &dyn PromSource,
    config: &CollectorConfig,
    meta: &RunMeta,
) -> Result<MetricsTable, CollectError> {
    let w = config.window_seconds;
    if w == 0 {
        return Err(CollectError::ZeroWindow);
    }
    if meta.to_unix_s <= meta.from_unix_s {
        return Err(CollectError::EmptyWindow {
            from: meta.from_unix_s,
            to: meta.to_unix_s,
        });
    }
    let queries = config.rendered_queries()?;
    let count = (meta.to_unix_s - meta.from_unix_s).div_ceil(w);
    let from = meta.from_unix_s;
    let end = from + count * w;

    let mut table = MetricsTable::default();
    let flag = |table: &mut MetricsTable, ns: &str, column: &str, reason: String| {
        table.missing.push(MissingColumn {
            run_id: meta.run_id.clone(),
            namespace: ns.to_string(),
            column: column.to_string(),
            reason,
        });
    };

    for ns in &config.namespaces {
        let query = &queries[&(ns.clone(), "joules".to_string())];
        let joules: Vec<Option<f64>> = match source.query_range(query, from as f64, end as f64, w as f64).await {
            Ok(series) if series.is_empty() => {
                flag(&mut table, ns, "joules", "no series returned".into());
                vec![None; count as usize]
            }
            Ok(series) => {
                let mut totals = vec![0.0; count as usize];
                for group in group_samples(&samples_from_series(&series)).values() {
                    for (k, win) in window_energy_on_grid(group, from as f64, count, w).iter().enumerate() {
                        totals[k] += win.joules;
                    }
                }
                totals.into_iter().map(Some).collect()
            }
            Err(e) => {
                flag(&mut table, ns, "joules", e.to_string());
                vec![None; count as usize]
            }
        };

        let (mut requests, mut latency) = (vec![None; count as usize], vec![None; count as usize]);
        if *ns == config.pipeline_namespace {
            for (column, slot) in [("request_count", &mut requests), ("p95_latency_ms", &mut latency)] {
                let query = &queries[&(ns.clone(), column.to_string())];
                match source
                    .query_range(query, (from + w) as f64, end as f64, w as f64)
                    .await
                {
                    Ok(series) => *slot = windowed_values(&series, from, count, w),
                    Err(e) => flag(&mut table, ns, column, e.to_string()),
                }
            }
        }

        for k in 0..count as usize {
            table.rows.push(MetricsRow {
                run_id: meta.run_id.clone(),
                pattern: meta.pattern.clone(),
                workload: meta.workload.clone(),
                namespace: ns.clone(),
                window_start_unix_s: from + k as u64 * w,
                window_seconds: w,
                joules: joules[k],
                request_count: requests[k],
                p95_latency_ms: latency[k],
            });
        }
    }
    table.sort();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_render_fully() {
        let cfg = CollectorConfig::default();
        let q = cfg.energy.render("pipeline", "10s").unwrap();
        assert_eq!(
            q,
            r#"sum without (mode) (kepler_container_joules_total{container_namespace="pipeline"})"#
        );
        let lat = cfg.latency.render("pipeline", "10s").unwrap();
        assert!(lat.contains("[10s]") && lat.contains(r#"k8s_namespace_name="pipeline""#));
    }

    #[test]
    fn leftover_placeholder_rejected() {
        let t = PromQueryTemplate::new("bad", r#"up{job="{job}"}"#);
        assert_eq!(
            t.render("ns", "10s"),
            Err(CollectError::Placeholder {
                name: "bad".into(),
                placeholder: "{job}".into()
            })
        );
    }

    #[test]
    fn rate_points_map_to_window_start() {
        let s = Series {
            labels: BTreeMap::new(),
            points: vec![(110.0, 4.0), (120.0, f64::NAN), (130.0, 6.0)],
        };
        assert_eq!(windowed_values(&[s], 100, 3, 10), vec![Some(4.0), None, Some(6.0)]);
    }
}
