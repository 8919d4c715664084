//! Post-apply readiness polling.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::model::ResourceId;
use super::plan::InjectionPlan;
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum ResourceStatus {
    Ready,
    Pending,
    Failed { reason: String },
}

/// Anything that can report whether a Deployment has ready replicas.
#[async_trait]
pub trait StatusProbe: Send + Sync {
    async fn resource_status(&self, id: &ResourceId) -> ResourceStatus;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReadiness {
    pub resource: ResourceId,
    pub status: ResourceStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadinessReport {
    pub resources: Vec<ResourceReadiness>,
    pub overall: bool,
    pub elapsed_ms: u64,
    pub polls: u32,
}

impl ReadinessReport {
    pub fn pending(&self) -> Vec<&ResourceId> {
        self.with_status(|s| matches!(s, ResourceStatus::Pending))
    }

    pub fn failed(&self) -> Vec<&ResourceId> {
        self.with_status(|s| matches!(s, ResourceStatus::Failed { .. }))
    }

    fn with_status(&self, pred: impl Fn(&ResourceStatus) -> bool) -> Vec<&ResourceId> {
        self.resources
            .iter()
            .filter(|r| pred(&r.status))
            .map(|r| &r.resource)
            .collect()
    }
}

/// Waits one interval, then polls every created Deployment; repeats until
/// all are ready, one has failed, or `timeout` has elapsed.
pub async fn check_readiness(
    probe: &dyn StatusProbe,
    plan: &InjectionPlan,
    timeout: Duration,
    poll_interval: Duration,
    clock: &dyn Clock,
) -> ReadinessReport {
    let started = clock.now();
    let targets = plan.created_deployments();
    let mut polls = 0;
    loop {
        clock.sleep(poll_interval).await;
        polls += 1;
        let mut resources = Vec::with_capacity(targets.len());
        for id in &targets {
            resources.push(ResourceReadiness {
                resource: id.clone(),
                status: probe.resource_status(id).await,
            });
        }
        let elapsed = clock.now().since(started);
        let all_ready = resources.iter().all(|r| r.status == ResourceStatus::Ready);
        let any_failed = resources
            .iter()
            .any(|r| matches!(r.status, ResourceStatus::Failed { .. }));
        if all_ready || any_failed || elapsed >= timeout {
            return ReadinessReport {
                resources,
                overall: all_ready,
                elapsed_ms: elapsed.as_millis() as u64,
                polls,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::manifest::{plan_injection, parse_manifests, PatternSelection, SAMPLE_PIPELINE};
    use crate::proxy::PatternKind;
    use parking_lot::Mutex;
    use std::collections::HashMap;

    /// Reports each resource's scripted status for poll n (last one repeats).
    struct Scripted {
        script: HashMap<String, Vec<ResourceStatus>>,
        polls: Mutex<HashMap<String, usize>>,
    }

    #[async_trait]
    impl StatusProbe for Scripted {
        async fn resource_status(&self, id: &ResourceId) -> ResourceStatus {
            let mut polls = self.polls.lock();
            let n = polls.entry(id.name.clone()).or_default();
            let steps = &self.script[&id.name];
            let s = steps[(*n).min(steps.len() - 1)].clone();
            *n += 1;
            s
        }
    }

    fn plan() -> InjectionPlan {
        let set = parse_manifests(SAMPLE_PIPELINE).unwrap();
        plan_injection(&set, &PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")).unwrap()
    }

    #[tokio::test]
    async fn ready_on_second_poll() {
        let probe = Scripted {
            script: HashMap::from([(
                "filter-service-cb-proxy".to_string(),
                vec![ResourceStatus::Pending, ResourceStatus::Ready],
            )]),
            polls: Mutex::default(),
        };
        let clock = ManualClock::new();
        let interval = Duration::from_millis(500);
        let report = check_readiness(&probe, &plan(), Duration::from_secs(30), interval, clock.as_ref()).await;
        assert!(report.overall);
        assert_eq!(report.polls, 2);
        assert!(report.elapsed_ms >= 2 * 500);
    }

    #[tokio::test]
    async fn never_ready_times_out() {
        let probe = Scripted {
            script: HashMap::from([("filter-service-cb-proxy".to_string(), vec![ResourceStatus::Pending])]),
            polls: Mutex::default(),
        };
        let clock = ManualClock::new();
        let report = check_readiness(&probe, &plan(), Duration::from_secs(5), Duration::from_secs(1), clock.as_ref()).await;
        assert!(!report.overall);
        assert_eq!(report.elapsed_ms, 5_000);
        assert_eq!(report.pending().len(), 1);
    }

    #[tokio::test]
    async fn failure_is_named() {
        let set = parse_manifests(SAMPLE_PIPELINE).unwrap();
        let mut plan_a = plan();
        let other = plan_injection(&set, &PatternSelection::new(PatternKind::RequestCollapsing, "data-product-service")).unwrap();
        plan_a.creations.extend(other.creations);
        let probe = Scripted {
            script: HashMap::from([
                ("filter-service-cb-proxy".to_string(), vec![ResourceStatus::Ready]),
                (
                    "data-product-service-rc-proxy".to_string(),
                    vec![ResourceStatus::Failed { reason: "ImagePullBackOff".into() }],
                ),
            ]),
            polls: Mutex::default(),
        };
        let clock = ManualClock::new();
        let report = check_readiness(&probe, &plan_a, Duration::from_secs(5), Duration::from_secs(1), clock.as_ref()).await;
        assert!(!report.overall);
        assert_eq!(report.failed()[0].name, "data-product-service-rc-proxy");
    }
}
