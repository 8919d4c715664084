//! The cluster executor contract, a scripted fake, and a shell adapter.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::process::Stdio;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

use crate::manifest::readiness::{ResourceStatus, StatusProbe};
use crate::manifest::{parse_manifests, ManifestDocument, ResourceId};

pub const MONITORING_ASSETS: [(&str, &str); 4] = [
    ("namespaces", include_str!("../../assets/monitoring/00-namespaces.yaml")),
    ("prometheus", include_str!("../../assets/monitoring/10-prometheus.yaml")),
    ("kepler", include_str!("../../assets/monitoring/20-kepler.yaml")),
    ("otel-collector", include_str!("../../assets/monitoring/30-otel-collector.yaml")),
];

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[error("`{command}` failed: {output}")]
pub struct ExecutorError {
    pub command: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSummary {
    pub name: String,
    pub namespace: String,
    pub ports: Vec<u16>,
}

/// Everything the control service asks of a cluster. Documents are YAML
/// streams passed through untouched.
#[async_trait]
pub trait ClusterExecutor: StatusProbe {
    async fn create_cluster(&self, cpus: u32, memory_gb: u32) -> Result<String, ExecutorError>;
    async fn delete_cluster(&self) -> Result<String, ExecutorError>;
    async fn apply(&self, documents: &str) -> Result<String, ExecutorError>;
    async fn delete(&self, resources: &[ResourceId]) -> Result<String, ExecutorError>;
    async fn list_services(&self, namespace: Option<&str>) -> Result<Vec<ServiceSummary>, ExecutorError>;
}

/// One entry of the fake's transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ExecutorCall {
    CreateCluster { cpus: u32, memory_gb: u32 },
    DeleteCluster,
    Apply { resources: Vec<String> },
    Delete { resources: Vec<String> },
    ListServices { namespace: Option<String> },
}

impl fmt::Display for ExecutorCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecutorCall::CreateCluster { cpus, memory_gb } => write!(f, "create-cluster cpus={cpus} memory={memory_gb}g"),
            ExecutorCall::DeleteCluster => f.write_str("delete-cluster"),
            ExecutorCall::Apply { resources } => write!(f, "apply {}", resources.join(" ")),
            ExecutorCall::Delete { resources } => write!(f, "delete {}", resources.join(" ")),
            ExecutorCall::ListServices { namespace } => {
                write!(f, "list-services {}", namespace.as_deref().unwrap_or("*"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExecutorOp {
    CreateCluster,
    DeleteCluster,
    Apply,
    Delete,
    ListServices,
}

impl ExecutorCall {
    pub fn op(&self) -> ExecutorOp {
        match self {
            ExecutorCall::CreateCluster { .. } => ExecutorOp::CreateCluster,
            ExecutorCall::DeleteCluster => ExecutorOp::DeleteCluster,
            ExecutorCall::Apply { .. } => ExecutorOp::Apply,
            ExecutorCall::Delete { .. } => ExecutorOp::Delete,
            ExecutorCall::ListServices { .. } => ExecutorOp::ListServices,
        }
    }
}

#[derive(Default)]
struct FakeState {
    cluster_up: bool,
    resources: BTreeMap<ResourceId, Value>,
    transcript: Vec<ExecutorCall>,
    op_counts: BTreeMap<ExecutorOp, usize>,
    failures: BTreeMap<(ExecutorOp, usize), String>,
    statuses: BTreeMap<ResourceId, VecDeque<ResourceStatus>>,
}

/// In-memory cluster that records every call. Deployments report ready
/// unless a status script says otherwise.
#[derive(Default)]
pub struct FakeExecutor {
    state: Mutex<FakeState>,
}

impl FakeExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the `occurrence`-th call (0-based) of `op` fail with `output`.
    pub fn fail_on(&self, op: ExecutorOp, occurrence: usize, output: &str) {
        self.state.lock().failures.insert((op, occurrence), output.into());
    }

    /// Statuses returned for `id` in order; the last one repeats.
    pub fn script_status(&self, id: ResourceId, statuses: Vec<ResourceStatus>) {
        self.state.lock().statuses.insert(id, statuses.into());
    }

    pub fn transcript(&self) -> Vec<ExecutorCall> {
        self.state.lock().transcript.clone()
    }

    pub fn clear_transcript(&self) {
        self.state.lock().transcript.clear();
    }

    pub fn resource_ids(&self) -> Vec<ResourceId> {
        self.state.lock().resources.keys().cloned().collect()
    }

    pub fn cluster_up(&self) -> bool {
        self.state.lock().cluster_up
    }

    fn record(&self, call: ExecutorCall) -> Result<(), ExecutorError> {
        let mut st = self.state.lock();
        let op = call.op();
        let n = st.op_counts.entry(op).or_default();
        let index = *n;
        *n += 1;
        let command = call.to_string();
        st.transcript.push(call);
        match st.failures.remove(&(op, index)) {
            Some(output) => Err(ExecutorError { command, output }),
            None => Ok(()),
        }
    }
}

fn parse_documents(documents: &str) -> Result<Vec<ManifestDocument>, ExecutorError> {
    let set = parse_manifests(documents).map_err(|e| ExecutorError {
        command: "apply".into(),
        output: e.to_string(),
    })?;
    Ok(set.documents().to_vec())
}

#[async_trait]
impl StatusProbe for FakeExecutor {
    async fn resource_status(&self, id: &ResourceId) -> ResourceStatus {
        let mut st = self.state.lock();
        if let Some(script) = st.statuses.get_mut(id) {
            let status = if script.len() > 1 { script.pop_front() } else { script.front().cloned() };
            if let Some(s) = status {
                return s;
            }
        }
        if st.resources.contains_key(id) {
            ResourceStatus::Ready
        } else {
            ResourceStatus::Pending
        }
    }
}

#[async_trait]
impl ClusterExecutor for FakeExecutor {
    async fn create_cluster(&self, cpus: u32, memory_gb: u32) -> Result<String, ExecutorError> {
        self.record(ExecutorCall::CreateCluster { cpus, memory_gb })?;
        self.state.lock().cluster_up = true;
        Ok("cluster created".into())
    }

    async fn delete_cluster(&self) -> Result<String, ExecutorError> {
        self.record(ExecutorCall::DeleteCluster)?;
        let mut st = self.state.lock();
        st.cluster_up = false;
        st.resources.clear();
        Ok("cluster deleted".into())
    }

    async fn apply(&self, documents: &str) -> Result<String, ExecutorError> {
        let docs = parse_documents(documents)?;
        let ids: Vec<ResourceId> = docs.iter().filter_map(ManifestDocument::id).collect();
        self.record(ExecutorCall::Apply {
            resources: ids.iter().map(ToString::to_string).collect(),
        })?;
        let mut st = self.state.lock();
        for d in docs {
            if let Some(id) = d.id() {
                st.resources.insert(id, d.body);
            }
        }
        Ok(format!("{} applied", ids.len()))
    }

    async fn delete(&self, resources: &[ResourceId]) -> Result<String, ExecutorError> {
        self.record(ExecutorCall::Delete {
            resources: resources.iter().map(ToString::to_string).collect(),
        })?;
        let mut st = self.state.lock();
        for id in resources {
            st.resources.remove(id);
        }
        Ok(format!("{} deleted", resources.len()))
    }

    async fn list_services(&self, namespace: Option<&str>) -> Result<Vec<ServiceSummary>, ExecutorError> {
        self.record(ExecutorCall::ListServices {
            namespace: namespace.map(str::to_string),
        })?;
        let st = self.state.lock();
        Ok(st
            .resources
            .iter()
            .filter(|(id, _)| id.kind == "Service" && namespace.is_none_or(|ns| id.namespace == ns))
            .map(|(id, body)| ServiceSummary {
                name: id.name.clone(),
                namespace: id.namespace.clone(),
                ports: service_ports(body),
            })
            .collect())
    }
}

fn service_ports(body: &Value) -> Vec<u16> {
    body.pointer("/spec/ports")
        .and_then(Value::as_array)
        .map(|ports| {
            ports
                .iter()
                .filter_map(|p| p.get("port").and_then(Value::as_u64))
                .filter_map(|p| u16::try_from(p).ok())
                .collect()
        })
        .unwrap_or_default()
}

/// Shells out to `minikube` and `kubectl`.
#[derive(Debug, Clone)]
pub struct ShellExecutor {
    minikube: String,
    kubectl: String,
}

impl ShellExecutor {
    pub fn new(minikube: &str, kubectl: &str) -> Self {
        ShellExecutor {
            minikube: minikube.into(),
            kubectl: kubectl.into(),
        }
    }

    async fn run(&self, program: &str, args: &[String], stdin: Option<&str>) -> Result<String, ExecutorError> {
        let command = format!("{program} {}", args.join(" "));
        let fail = |output: String| ExecutorError {
            command: command.clone(),
            output,
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        if let (Some(input), Some(mut pipe)) = (stdin, child.stdin.take()) {
            pipe.write_all(input.as_bytes()).await.map_err(|e| fail(e.to_string()))?;
        }
        let out = child.wait_with_output().await.map_err(|e| fail(e.to_string()))?;
        let text = format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        if out.status.success() {
            Ok(text)
        } else {
            Err(fail(text))
        }
    }

    async fn kubectl(&self, args: &[&str], stdin: Option<&str>) -> Result<String, ExecutorError> {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        self.run(&self.kubectl, &args, stdin).await
    }
}

fn deployment_status(body: &Value) -> ResourceStatus {
    let conditions = body
        .pointer("/status/conditions")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    if let Some(c) = conditions.iter().find(|c| {
        c.get("type").and_then(Value::as_str) == Some("Progressing")
            && c.get("reason").and_then(Value::as_str) == Some("ProgressDeadlineExceeded")
    }) {
        return ResourceStatus::Failed {
            reason: c
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("progress deadline exceeded")
                .into(),
        };
    }
    let wanted = body.pointer("/spec/replicas").and_then(Value::as_u64).unwrap_or(1);
    let ready = body.pointer("/status/readyReplicas").and_then(Value::as_u64).unwrap_or(0);
    if ready >= wanted {
        ResourceStatus::Ready
    } else {
        ResourceStatus::Pending
    }
}

#[async_trait]
impl StatusProbe for ShellExecutor {
    async fn resource_status(&self, id: &ResourceId) -> ResourceStatus {
        let kind = id.kind.to_ascii_lowercase();
        match self
            .kubectl(&["get", &kind, &id.name, "-n", &id.namespace, "-o", "json"], None)
            .await
        {
            Ok(text) => match serde_json::from_str::<Value>(&text) {
                Ok(body) => deployment_status(&body),
                Err(e) => ResourceStatus::Failed { reason: e.to_string() },
            },
            Err(_) => ResourceStatus::Pending,
        }
    }
}

#[async_trait]
impl ClusterExecutor for ShellExecutor {
    async fn create_cluster(&self, cpus: u32, memory_gb: u32) -> Result<String, ExecutorError> {
        let args = vec!["start".to_string(), format!("--cpus={cpus}"), format!("--memory={memory_gb}g")];
        self.run(&self.minikube, &args, None).await
    }

    async fn delete_cluster(&self) -> Result<String, ExecutorError> {
        self.run(&self.minikube, &["delete".to_string()], None).await
    }

    async fn apply(&self, documents: &str) -> Result<String, ExecutorError> {
        self.kubectl(&["apply", "-f", "-"], Some(documents)).await
    }

    async fn delete(&self, resources: &[ResourceId]) -> Result<String, ExecutorError> {
        let mut out = String::new();
        for id in resources {
            let kind = id.kind.to_ascii_lowercase();
            out += &self
                .kubectl(
                    &["delete", &kind, &id.name, "-n", &id.namespace, "--ignore-not-found"],
                    None,
                )
                .await?;
        }
        Ok(out)
    }

    async fn list_services(&self, namespace: Option<&str>) -> Result<Vec<ServiceSummary>, ExecutorError> {
        let text = match namespace {
            Some(ns) => self.kubectl(&["get", "services", "-n", ns, "-o", "json"], None).await?,
            None => self.kubectl(&["get", "services", "-A", "-o", "json"], None).await?,
        };
        let list: Value = serde_json::from_str(&text).map_err(|e| ExecutorError {
            command: "kubectl get services".into(),
            output: e.to_string(),
        })?;
        Ok(list
            .get("items")
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .map(|item| ServiceSummary {
                        name: item.pointer("/metadata/name").and_then(Value::as_str).unwrap_or_default().into(),
                        namespace: item
                            .pointer("/metadata/namespace")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .into(),
                        ports: service_ports(item),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}
