//! Counter windowing and namespace attribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::prom::Series;

pub const DEFAULT_WINDOW_SECONDS: u64 = 10;
pub const NAMESPACE_LABELS: [&str; 2] = ["container_namespace", "namespace"];
pub const POD_LABELS: [&str; 2] = ["pod_name", "pod"];
pub const CONTAINER_LABELS: [&str; 2] = ["container_name", "container"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub timestamp_s: f64,
    pub namespace: String,
    pub pod: String,
    pub container: String,
    pub joules_total: f64,
}

pub fn samples_from_series(series: &[Series]) -> Vec<EnergySample> {
    series
        .iter()
        .flat_map(|s| {
            let namespace = s.label(&NAMESPACE_LABELS);
            let pod = s.label(&POD_LABELS);
            let container = s.label(&CONTAINER_LABELS);
            s.points
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(move |&(t, v)| EnergySample {
                    timestamp_s: t,
                    namespace: namespace.clone(),
                    pod: pod.clone(),
                    container: container.clone(),
                    joules_total: v,
                })
        })
        .collect()
}

/// Groups samples by (namespace, pod, container), each group time-ordered.
pub fn group_samples(samples: &[EnergySample]) -> BTreeMap<(String, String, String), Vec<EnergySample>> {
    let mut groups: BTreeMap<_, Vec<EnergySample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.namespace.clone(), s.pod.clone(), s.container.clone()))
            .or_default()
            .push(s.clone());
    }
    for v in groups.values_mut() {
        v.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyWindow {
    pub window_start_s: f64,
    pub window_seconds: u64,
    pub namespace: String,
    pub pod: String,
    pub joules: f64,
}

/// Reset-adjusted running total: a drop between adjacent samples counts the
/// post-reset value as that segment's increase.
fn adjusted_cumulative(samples: &[EnergySample]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(samples.len());
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        if i > 0 {
            let prev = samples[i - 1].joules_total;
            let delta = s.joules_total - prev;
            total += if delta >= 0.0 { delta } else { s.joules_total };
        }
        cum.push(total);
    }
    cum
}

/// Adjusted counter at the latest sample at or before `t`; before the first
/// sample the counter is at its starting point.
fn counter_at(samples: &[EnergySample], cum: &[f64], t: f64) -> f64 {
    let idx = samples.partition_point(|s| s.timestamp_s <= t);
    if idx == 0 {
        0.0
    } else {
        cum[idx - 1]
    }
}

/// Windows over one (namespace, pod) series, on a grid starting at the
/// first sample and ending at the last one.
pub fn window_energy(samples: &[EnergySample], window_seconds: u64) -> Vec<EnergyWindow> {
    if samples.len() < 2 || window_seconds == 0 {
        return Vec::new();
    }
    let origin = samples[0].timestamp_s;
    let span = samples[samples.len() - 1].timestamp_s - origin;
    let count = (span / window_seconds as f64).ceil() as u64;
    window_energy_on_grid(samples, origin, count, window_seconds)
}

/// Windows `[origin + k·w, origin + (k+1)·w)` for `k < count`.
pub fn window_energy_on_grid(
    samples: &[EnergySample],
    origin: f64,
    count: u64,
    window_seconds: u64,
) -> Vec<EnergyWindow> {
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let cum = adjusted_cumulative(samples);
    let w = window_seconds as f64;
    (0..count)
        .map(|k| {
            let start = origin + k as f64 * w;
            let end = start + w;
            EnergyWindow {
                window_start_s: start,
                window_seconds,
                namespace: first.namespace.clone(),
                pod: first.pod.clone(),
                joules: counter_at(samples, &cum, end) - counter_at(samples, &cum, start),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Attribution {
    pub per_namespace: BTreeMap<String, f64>,
    pub grand_total: f64,
}

pub fn attribute_by_namespace(windows: &[EnergyWindow]) -> Attribution {
    let mut per_namespace: BTreeMap<String, f64> = BTreeMap::new();
    for w in windows {
        *per_namespace.entry(w.namespace.clone()).or_default() += w.joules;
    }
    let grand_total = per_namespace.values().sum();
    Attribution {
        per_namespace,
        grand_total,
    }
}
