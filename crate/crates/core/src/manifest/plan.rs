use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::model::{ManifestDocument, ResourceId, ServiceView, WorkloadManifestSet};
use super::render::{render_ingress_offload, render_sql_cache_config};
use super::selection::{validate_selection, IssueCode, PatternSelection, SelectionIssue};
use super::yaml::to_canonical_yaml;
use super::{
    ManifestError, LABEL_PATTERN, LABEL_TARGET, LABEL_VARIANT, ORIGINAL_SUFFIX, PROXYSQL_IMAGE,
    PROXYSQL_PORT, PROXY_IMAGE, PROXY_PORT,
};
use crate::proxy::{PatternKind, PolicyDocument, PolicyError};

/// Renames a Service in place. `document` is the renamed manifest as it
/// should be applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rename {
    pub from: ResourceId,
    pub to: String,
    pub document: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedResource {
    pub kind: String,
    pub name: String,
    pub namespace: String,
    pub body: Value,
}

impl GeneratedResource {
    pub fn new(body: Value) -> Self {
        let doc = ManifestDocument::from_value(body, "default");
        GeneratedResource {
            kind: doc.kind,
            name: doc.name.unwrap_or_default(),
            namespace: doc.namespace,
            body: doc.body,
        }
    }

    pub fn id(&self) -> ResourceId {
        ResourceId::new(&self.kind, &self.namespace, &self.name)
    }

    /// Canonical manifest text.
    pub fn document(&self) -> String {
        to_canonical_yaml(&self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub pattern: PatternKind,
    pub target: ResourceId,
    /// Applied first; only removal plans delete.
    pub deletions: Vec<ResourceId>,
    pub mutations: Vec<Rename>,
    pub creations: Vec<GeneratedResource>,
}

impl InjectionPlan {
    pub fn empty(pattern: PatternKind, target: ResourceId) -> Self {
        InjectionPlan {
            pattern,
            target,
            deletions: Vec::new(),
            mutations: Vec::new(),
            creations: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.deletions.is_empty() && self.mutations.is_empty() && self.creations.is_empty()
    }

    /// Namespace of every created resource.
    pub fn namespace_assignments(&self) -> Vec<(ResourceId, String)> {
        self.creations
            .iter()
            .map(|c| (c.id(), c.namespace.clone()))
            .collect()
    }

    pub fn created_deployments(&self) -> Vec<ResourceId> {
        self.creations
            .iter()
            .filter(|c| c.kind == "Deployment")
            .map(GeneratedResource::id)
            .collect()
    }
}

pub(crate) fn pattern_labels(selection: &PatternSelection) -> Map<String, Value> {
    let mut labels = Map::new();
    labels.insert(LABEL_PATTERN.into(), Value::from(selection.pattern.as_str()));
    labels.insert(LABEL_TARGET.into(), Value::from(selection.target_service.as_str()));
    if selection.is_sql() {
        labels.insert(LABEL_VARIANT.into(), Value::from("sql"));
    }
    labels
}

pub(crate) fn proxy_name(selection: &PatternSelection) -> String {
    if selection.is_sql() {
        format!("{}-ca-proxysql", selection.target_service)
    } else {
        format!("{}-{}-proxy", selection.target_service, selection.pattern.abbreviation())
    }
}

pub(crate) fn original_host(selection: &PatternSelection) -> String {
    format!(
        "{}{}.{}.svc.cluster.local",
        selection.target_service, ORIGINAL_SUFFIX, selection.target_namespace
    )
}

/// Drops fields the API server owns so the document can be re-applied.
pub(crate) fn strip_server_fields(body: &mut Value) {
    if let Some(meta) = body.get_mut("metadata").and_then(Value::as_object_mut) {
        for key in ["resourceVersion", "uid", "creationTimestamp", "generation", "managedFields", "selfLink"] {
            meta.remove(key);
        }
        if let Some(ann) = meta.get_mut("annotations").and_then(Value::as_object_mut) {
            ann.remove("kubectl.kubernetes.io/last-applied-configuration");
            if ann.is_empty() {
                meta.remove("annotations");
            }
        }
    }
    if let Some(spec) = body.get_mut("spec").and_then(Value::as_object_mut) {
        spec.remove("clusterIP");
        spec.remove("clusterIPs");
    }
    if let Some(obj) = body.as_object_mut() {
        obj.remove("status");
    }
}

fn renamed_document(doc: &ManifestDocument, to: &str) -> Value {
    let mut renamed = doc.clone();
    renamed.rename(to);
    let mut body = renamed.body;
    strip_server_fields(&mut body);
    body
}

fn invalid_params(e: PolicyError) -> ManifestError {
    ManifestError::Invalid(vec![SelectionIssue::new(IssueCode::ParamRange, e.to_string())])
}

/// Plans the DNS swap for one selection.
pub fn plan_injection(
    manifests: &WorkloadManifestSet,
    selection: &PatternSelection,
) -> Result<InjectionPlan, ManifestError> {
    let target_id = ResourceId::service(&selection.target_namespace, &selection.target_service);
    let target_doc = manifests
        .get(&target_id)
        .ok_or_else(|| ManifestError::NotFound(target_id.to_string()))?;
    if target_doc.labels().contains_key(LABEL_TARGET) {
        return Err(ManifestError::Conflict(format!("{target_id} is already a pattern alias")));
    }
    validate_selection(manifests, selection).map_err(ManifestError::Invalid)?;
    let original = format!("{}{}", selection.target_service, ORIGINAL_SUFFIX);
    let original_id = ResourceId::service(&selection.target_namespace, &original);
    if manifests.contains(&original_id) {
        return Err(ManifestError::Conflict(format!("{original_id} already exists")));
    }
    let service = manifests
        .service(&selection.target_namespace, &selection.target_service)
        .expect("target checked above");

    let mut plan = InjectionPlan::empty(selection.pattern, target_id.clone());
    plan.mutations.push(Rename {
        from: target_id,
        to: original.clone(),
        document: renamed_document(target_doc, &original),
    });

    let creations = if selection.is_sql() {
        sql_creations(selection, &service)?
    } else {
        http_creations(selection, &service)?
    };
    for c in &creations {
        if manifests.contains(&c.id()) && c.id() != plan.target {
            return Err(ManifestError::Conflict(format!("{} already exists", c.id())));
        }
    }
    plan.creations = creations;
    plan.creations
        .sort_by(|a, b| (&a.kind, &a.name, &a.namespace).cmp(&(&b.kind, &b.name, &b.namespace)));
    Ok(plan)
}

fn http_creations(
    selection: &PatternSelection,
    service: &ServiceView,
) -> Result<Vec<GeneratedResource>, ManifestError> {
    let policy = selection.policy().map_err(invalid_params)?;
    let port = service.ports[0].port;
    let name = proxy_name(selection);
    let config_name = format!("{}-{}-policy", selection.target_service, selection.pattern.abbreviation());

    let mut doc = PolicyDocument::new(policy);
    doc.upstream = Some(format!("http://{}:{}", original_host(selection), port));
    doc.listen = Some(format!("0.0.0.0:{PROXY_PORT}"));
    doc.service_name = Some(selection.target_service.clone());
    let policy_text = to_canonical_yaml(&doc.to_value());
    let policy_digest = hex::encode(Sha256::digest(policy_text.as_bytes()));

    let labels = pattern_labels(selection);
    let mut pod_labels = Map::new();
    pod_labels.insert("app.kubernetes.io/name".into(), Value::from(name.as_str()));
    pod_labels.extend(labels.clone());

    let config_map = json!({
        "apiVersion": "v1",
        "kind": "ConfigMap",
        "metadata": {
            "name": config_name,
            "namespace": selection.pattern_namespace,
            "labels": labels,
        },
        "data": { "policy.yaml": policy_text },
    });
    let deployment = json!({
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": {
            "name": name,
            "namespace": selection.pattern_namespace,
            "labels": pod_labels,
        },
        "spec": {
            "replicas": 1,
            "selector": { "matchLabels": { "app.kubernetes.io/name": name } },
            "template": {
                "metadata": {
                    "labels": pod_labels,
                    "annotations": { "snappattern/policy-sha256": policy_digest },
                },
                "spec": {
                    "containers": [{
                        "name": "proxy",
                        "image": PROXY_IMAGE,
                        "args": ["proxy", "run", "--config", "/etc/snappattern/policy.yaml"],
                        "ports": [{ "name": "http", "containerPort": PROXY_PORT }],
                        "readinessProbe": {
                            "tcpSocket": { "port": PROXY_PORT },
                            "periodSeconds": 2,
                        },
                        "volumeMounts": [{
                            "name": "policy",
                            "mountPath": "/etc/snappattern",
                            "readOnly": true,
                        }],
                    }],
                    "volumes": [{ "name": "policy", "configMap": { "name": config_name } }],
                },
            },
        },
    });
    let mut out = vec![
        GeneratedResource::new(config_map),
        GeneratedResource::new(deployment),
        GeneratedResource::new(proxy_service(selection, service, &name, PROXY_PORT)),
        GeneratedResource::new(alias_service(selection, service, &name)),
    ];
    if selection.pattern == PatternKind::GatewayOffloading {
        out.push(render_ingress_offload(selection, port).map_err(invalid_params)?);
    }
    Ok(out)
}

fn sql_creations(
    selection: &PatternSelection,
    service: &ServiceView,
) -> Result<Vec<GeneratedResource>, ManifestError> {
    let name = proxy_name(selection);
    let config = render_sql_cache_config(selection, &original_host(selection), service.ports[0].port)?;
    let labels = pattern_labels(selection);
    let mut pod_labels = Map::new();
    pod_labels.insert("app.kubernetes.io/name".into(), Value::from(name.as_str()));
    pod_labels.extend(labels);
    let deployment = json!({
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": {
            "name": name,
            "namespace": selection.pattern_namespace,
            "labels": pod_labels,
        },
        "spec": {
            "replicas": 1,
            "selector": { "matchLabels": { "app.kubernetes.io/name": name } },
            "template": {
                "metadata": { "labels": pod_labels },
                "spec": {
                    "containers": [{
                        "name": "proxysql",
                        "image": PROXYSQL_IMAGE,
                        "ports": [{ "name": "mysql", "containerPort": PROXYSQL_PORT }],
                        "readinessProbe": {
                            "tcpSocket": { "port": PROXYSQL_PORT },
                            "periodSeconds": 2,
                        },
                        "volumeMounts": [{
                            "name": "config",
                            "mountPath": "/etc/proxysql.cnf",
                            "subPath": "proxysql.cnf",
                            "readOnly": true,
                        }],
                    }],
                    "volumes": [{ "name": "config", "configMap": { "name": config.name } }],
                },
            },
        },
    });
    Ok(vec![
        config,
        GeneratedResource::new(deployment),
        GeneratedResource::new(proxy_service(selection, service, &name, PROXYSQL_PORT)),
        GeneratedResource::new(alias_service(selection, service, &name)),
    ])
}

fn mirrored_ports(service: &ServiceView, target_port: Option<u16>) -> Vec<Value> {
    service
        .ports
        .iter()
        .map(|p| {
            let mut port = Map::new();
            if let Some(n) = &p.name {
                port.insert("name".into(), Value::from(n.as_str()));
            }
            port.insert("port".into(), Value::from(p.port));
            if let Some(t) = target_port {
                port.insert("targetPort".into(), Value::from(t));
            }
            if let Some(proto) = &p.protocol {
                port.insert("protocol".into(), Value::from(proto.as_str()));
            }
            Value::Object(port)
        })
        .collect()
}

/// The proxy Service in the pattern namespace, exposing the original ports.
fn proxy_service(selection: &PatternSelection, service: &ServiceView, name: &str, target_port: u16) -> Value {
    json!({
        "apiVersion": "v1",
        "kind": "Service",
        "metadata": {
            "name": name,
            "namespace": selection.pattern_namespace,
            "labels": pattern_labels(selection),
        },
        "spec": {
            "selector": { "app.kubernetes.io/name": name },
            "ports": mirrored_ports(service, Some(target_port)),
        },
    })
}

/// The Service that keeps the original name in the target namespace and
/// resolves to the proxy Service.
fn alias_service(selection: &PatternSelection, service: &ServiceView, proxy: &str) -> Value {
    json!({
        "apiVersion": "v1",
        "kind": "Service",
        "metadata": {
            "name": selection.target_service,
            "namespace": selection.target_namespace,
            "labels": pattern_labels(selection),
        },
        "spec": {
            "type": "ExternalName",
            "externalName": format!("{proxy}.{}.svc.cluster.local", selection.pattern_namespace),
            "ports": mirrored_ports(service, None),
        },
    })
}

/// Plans the inverse of [`plan_injection`]: delete everything labeled with
/// the target and rename `<name>-original` back.
pub fn plan_removal(
    manifests: &WorkloadManifestSet,
    selection: &PatternSelection,
) -> Result<InjectionPlan, ManifestError> {
    let target = ResourceId::service(&selection.target_namespace, &selection.target_service);
    let mut deletions = manifests.labeled(LABEL_TARGET, &selection.target_service);
    if deletions.is_empty() {
        return Err(ManifestError::NotInjected(target.to_string()));
    }
    deletions.sort();
    let original_id = ResourceId::service(
        &selection.target_namespace,
        &format!("{}{}", selection.target_service, ORIGINAL_SUFFIX),
    );
    let original_doc = manifests
        .get(&original_id)
        .ok_or_else(|| ManifestError::Conflict(format!("{original_id} is missing; cannot restore {target}")))?;
    let mut plan = InjectionPlan::empty(selection.pattern, target.clone());
    plan.deletions = deletions;
    plan.mutations.push(Rename {
        from: original_id,
        to: selection.target_service.clone(),
        document: renamed_document(original_doc, &selection.target_service),
    });
    Ok(plan)
}

/// Applies a plan to an in-memory set: deletions, then renames, then
/// creations.
pub fn apply_plan(
    manifests: &WorkloadManifestSet,
    plan: &InjectionPlan,
) -> Result<WorkloadManifestSet, ManifestError> {
    let mut out = manifests.clone();
    for id in &plan.deletions {
        out.remove(id)
            .ok_or_else(|| ManifestError::NotFound(id.to_string()))?;
    }
    for rename in &plan.mutations {
        out.rename(&rename.from, &rename.to)?;
    }
    for c in &plan.creations {
        out.push(ManifestDocument::from_value(c.body.clone(), &c.namespace))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{parse_manifests, SAMPLE_PIPELINE};

    fn sample() -> WorkloadManifestSet {
        parse_manifests(SAMPLE_PIPELINE).unwrap()
    }

    #[test]
    fn circuit_breaker_on_filter() {
        let set = sample();
        let plan = plan_injection(&set, &PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")).unwrap();
        assert_eq!(plan.mutations.len(), 1);
        assert_eq!(plan.mutations[0].to, "filter-service-original");
        let kinds: Vec<_> = plan.creations.iter().map(|c| (c.kind.as_str(), c.name.as_str())).collect();
        assert_eq!(
            kinds,
            vec![
                ("ConfigMap", "filter-service-cb-policy"),
                ("Deployment", "filter-service-cb-proxy"),
                ("Service", "filter-service"),
                ("Service", "filter-service-cb-proxy"),
            ]
        );
        for c in &plan.creations {
            let labels = &c.body["metadata"]["labels"];
            assert_eq!(labels[LABEL_PATTERN], "circuit_breaker");
            assert_eq!(labels[LABEL_TARGET], "filter-service");
        }
        // selector of the renamed service is untouched
        assert_eq!(plan.mutations[0].document["spec"]["selector"]["app"], "filter-service");
    }

    #[test]
    fn config_map_carries_exact_policy() {
        let set = sample();
        let sel = PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")
            .with_parameters(json!({"failure_threshold": 3, "retry": {"max_retries": 1}}));
        let plan = plan_injection(&set, &sel).unwrap();
        let text = plan.creations[0].body["data"]["policy.yaml"].as_str().unwrap();
        let doc = PolicyDocument::parse(text).unwrap();
        assert_eq!(doc.policy, sel.policy().unwrap());
        assert_eq!(
            doc.upstream.as_deref(),
            Some("http://filter-service-original.pipeline.svc.cluster.local:8080")
        );
    }

    #[test]
    fn gateway_adds_ingress() {
        let set = sample();
        let plan = plan_injection(&set, &PatternSelection::new(PatternKind::GatewayOffloading, "coordinator-service")).unwrap();
        assert!(plan.creations.iter().any(|c| c.kind == "Ingress"));
    }

    #[test]
    fn existing_original_name_conflicts() {
        let text = format!(
            "{SAMPLE_PIPELINE}---\napiVersion: v1\nkind: Service\nmetadata:\n  name: filter-service-original\n  namespace: pipeline\nspec:\n  ports: [{{port: 1}}]\n"
        );
        let set = parse_manifests(&text).unwrap();
        let err = plan_injection(&set, &PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")).unwrap_err();
        assert!(matches!(err, ManifestError::Conflict(_)));
    }

    #[test]
    fn missing_target() {
        let err = plan_injection(&sample(), &PatternSelection::new(PatternKind::CircuitBreaker, "nope")).unwrap_err();
        assert!(matches!(err, ManifestError::NotFound(_)));
    }

    #[test]
    fn removal_requires_labels() {
        let err = plan_removal(&sample(), &PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")).unwrap_err();
        assert!(matches!(err, ManifestError::NotInjected(_)));
    }

    #[test]
    fn double_injection_conflicts() {
        let set = sample();
        let sel = PatternSelection::new(PatternKind::CircuitBreaker, "filter-service");
        let injected = apply_plan(&set, &plan_injection(&set, &sel).unwrap()).unwrap();
        assert!(matches!(plan_injection(&injected, &sel), Err(ManifestError::Conflict(_))));
    }

    #[test]
    fn rendering_strips_server_fields() {
        let text = SAMPLE_PIPELINE.replace(
            "  name: filter-service\n  namespace: pipeline\n  labels:\n    app: filter-service\nspec:\n  selector:",
            "  name: filter-service\n  namespace: pipeline\n  uid: abc\n  resourceVersion: \"7\"\n  labels:\n    app: filter-service\nspec:\n  clusterIP: 10.0.0.7\n  selector:",
        );
        assert_ne!(text, SAMPLE_PIPELINE);
        let set = parse_manifests(&text).unwrap();
        let sel = PatternSelection::new(PatternKind::CircuitBreaker, "filter-service");
        let plan = plan_injection(&set, &sel).unwrap();
        let doc = &plan.mutations[0].document;
        assert!(doc["metadata"].get("uid").is_none());
        assert!(doc["spec"].get("clusterIP").is_none());
        // the in-memory model keeps them, so the round trip is exact
        let back = apply_plan(&apply_plan(&set, &plan).unwrap(), &plan_removal(&apply_plan(&set, &plan).unwrap(), &sel).unwrap()).unwrap();
        assert_eq!(back.semantic_model(), set.semantic_model());
    }
}
