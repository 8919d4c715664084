use serde::{Deserialize, Serialize};

use super::runner::RequestOutcome;

/// Where a run sits in time, for throughput and per-step grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryWindow {
    pub start_unix_ms: u64,
    pub duration_s: u64,
    pub step_interval_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAggregate {
    pub step: u32,
    pub start_s: u64,
    pub total: u64,
    pub errors: u64,
    pub p95_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub total: u64,
    pub successes: u64,
    pub error_count: u64,
    pub throughput_rps: f64,
    pub p50_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub steps: Vec<StepAggregate>,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `⌈p·n/100⌉` (1-based). Empty input gives 0.
pub fn nearest_rank(sorted: &[f64], percentile: u32) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(percentile) * n).div_ceil(100).clamp(1, n);
    sorted[(rank - 1) as usize]
}

fn sorted_latencies<'a>(outcomes: impl Iterator<Item = &'a RequestOutcome>) -> Vec<f64> {
    let mut v: Vec<f64> = outcomes.map(|o| o.latency_ms).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn summarize(outcomes: &[RequestOutcome], window: &SummaryWindow) -> WorkloadReport {
    if outcomes.is_empty() {
        return WorkloadReport::default();
    }
    let total = outcomes.len() as u64;
    let error_count = outcomes.iter().filter(|o| o.status.is_error()).count() as u64;
    let latencies = sorted_latencies(outcomes.iter());
    let throughput_rps = if window.duration_s == 0 {
        0.0
    } else {
        total as f64 / window.duration_s as f64
    };

    let interval_ms = window.step_interval_s.max(1) * 1000;
    let step_of = |o: &RequestOutcome| (o.started_at_unix_ms.saturating_sub(window.start_unix_ms) / interval_ms) as u32;
    let last_step = outcomes.iter().map(step_of).max().unwrap_or(0);
    let steps = (0..=last_step)
        .map(|step| {
            let members: Vec<&RequestOutcome> = outcomes.iter().filter(|o| step_of(o) == step).collect();
            StepAggregate {
                step,
                start_s: u64::from(step) * window.step_interval_s,
                total: members.len() as u64,
                errors: members.iter().filter(|o| o.status.is_error()).count() as u64,
                p95_latency_ms: nearest_rank(&sorted_latencies(members.into_iter()), 95),
            }
        })
        .collect();

    WorkloadReport {
        total,
        successes: total - error_count,
        error_count,
        throughput_rps,
        p50_latency_ms: nearest_rank(&latencies, 50),
        p95_latency_ms: nearest_rank(&latencies, 95),
        p99_latency_ms: nearest_rank(&latencies, 99),
        steps,
    }
}
