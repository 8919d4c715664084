use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use serde_json::Value;

use super::ManifestError;

/// Kinds the injector understands; everything else passes through untouched.
pub const INDEXED_KINDS: [&str; 4] = ["Deployment", "Service", "ConfigMap", "Ingress"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct ResourceId {
    pub kind: String,
    pub namespace: String,
    pub name: String,
}

impl ResourceId {
    pub fn new(kind: &str, namespace: &str, name: &str) -> Self {
        ResourceId {
            kind: kind.to_string(),
            namespace: namespace.to_string(),
            name: name.to_string(),
        }
    }

    pub fn service(namespace: &str, name: &str) -> Self {
        Self::new("Service", namespace, name)
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestDocument {
    pub kind: String,
    pub name: Option<String>,
    pub namespace: String,
    /// The full parsed document, key order preserved.
    pub body: Value,
}

impl ManifestDocument {
    pub fn from_value(body: Value, default_namespace: &str) -> Self {
        let kind = body.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        let metadata = body.get("metadata");
        let name = metadata
            .and_then(|m| m.get("name"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let namespace = metadata
            .and_then(|m| m.get("namespace"))
            .and_then(Value::as_str)
            .unwrap_or(default_namespace)
            .to_string();
        ManifestDocument {
            kind,
            name,
            namespace,
            body,
        }
    }

    pub fn is_indexed(&self) -> bool {
        INDEXED_KINDS.contains(&self.kind.as_str()) && self.name.is_some()
    }

    pub fn id(&self) -> Option<ResourceId> {
        self.name
            .as_ref()
            .map(|n| ResourceId::new(&self.kind, &self.namespace, n))
    }

    pub fn labels(&self) -> BTreeMap<String, String> {
        string_map(self.body.pointer("/metadata/labels"))
    }

    /// Sets `metadata.name`, keeping the key's position.
    pub(crate) fn rename(&mut self, name: &str) {
        if let Some(meta) = self.body.get_mut("metadata").and_then(Value::as_object_mut) {
            meta.insert("name".into(), Value::from(name));
        }
        self.name = Some(name.to_string());
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServicePort {
    pub name: Option<String>,
    pub port: u16,
    pub target_port: Option<Value>,
    pub protocol: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceView {
    pub name: String,
    pub namespace: String,
    pub service_type: Option<String>,
    pub selector: BTreeMap<String, String>,
    pub ports: Vec<ServicePort>,
    pub labels: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContainerView {
    pub name: String,
    pub image: String,
    pub ports: Vec<u16>,
    pub env: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeploymentView {
    pub name: String,
    pub namespace: String,
    pub labels: BTreeMap<String, String>,
    pub pod_labels: BTreeMap<String, String>,
    pub containers: Vec<ContainerView>,
}

/// An uploaded multi-document manifest stream, indexed by identity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkloadManifestSet {
    documents: Vec<ManifestDocument>,
    index: BTreeMap<ResourceId, usize>,
    warnings: Vec<String>,
}

/// Parses with `default` as the namespace of documents that omit one.
pub fn parse_manifests(text: &str) -> Result<WorkloadManifestSet, ManifestError> {
    parse_manifests_in(text, "default")
}

pub fn parse_manifests_in(text: &str, default_namespace: &str) -> Result<WorkloadManifestSet, ManifestError> {
    let mut docs = Vec::new();
    for (i, de) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let value = Value::deserialize(de).map_err(|e| ManifestError::Parse {
            document: i,
            line: e.location().map(|l| l.line()),
            message: e.to_string(),
        })?;
        match value {
            Value::Null => continue,
            Value::Object(_) => docs.push(ManifestDocument::from_value(value, default_namespace)),
            _ => {
                return Err(ManifestError::Parse {
                    document: i,
                    line: None,
                    message: "document is not a mapping".into(),
                })
            }
        }
    }
    WorkloadManifestSet::from_documents(docs)
}

impl WorkloadManifestSet {
    pub fn from_documents(documents: Vec<ManifestDocument>) -> Result<Self, ManifestError> {
        let mut set = WorkloadManifestSet {
            documents,
            ..Default::default()
        };
        set.reindex()?;
        Ok(set)
    }

    fn reindex(&mut self) -> Result<(), ManifestError> {
        self.index.clear();
        self.warnings.clear();
        for (i, doc) in self.documents.iter().enumerate() {
            if !doc.is_indexed() {
                if !doc.kind.is_empty() {
                    self.warnings.push(format!(
                        "{} {} passes through untransformed",
                        doc.kind,
                        doc.name.as_deref().unwrap_or("<unnamed>")
                    ));
                }
                continue;
            }
            let id = doc.id().expect("indexed documents are named");
            if self.index.insert(id.clone(), i).is_some() {
                return Err(ManifestError::Conflict(format!("duplicate resource {id}")));
            }
        }
        let deployments: Vec<DeploymentView> = self.deployments().collect();
        let services: Vec<ServiceView> = self.services().collect();
        for svc in services {
            let external = svc.service_type.as_deref() == Some("ExternalName");
            if external || svc.selector.is_empty() {
                continue;
            }
            let matched = deployments.iter().any(|d| {
                d.namespace == svc.namespace
                    && svc.selector.iter().all(|(k, v)| d.pod_labels.get(k) == Some(v))
            });
            if !matched {
                self.warnings.push(format!(
                    "service {}/{} selects no deployment in this set",
                    svc.namespace, svc.name
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[ManifestDocument] {
        &self.documents
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn ids(&self) -> impl Iterator<Item = &ResourceId> {
        self.index.keys()
    }

    pub fn get(&self, id: &ResourceId) -> Option<&ManifestDocument> {
        self.index.get(id).map(|i| &self.documents[*i])
    }

    pub fn contains(&self, id: &ResourceId) -> bool {
        self.index.contains_key(id)
    }

    pub fn service(&self, namespace: &str, name: &str) -> Option<ServiceView> {
        self.get(&ResourceId::service(namespace, name)).map(service_view)
    }

    pub fn services(&self) -> impl Iterator<Item = ServiceView> + '_ {
        self.documents
            .iter()
            .filter(|d| d.kind == "Service" && d.name.is_some())
            .map(service_view)
    }

    pub fn service_names_in(&self, namespace: &str) -> std::collections::BTreeSet<String> {
        self.services()
            .filter(|s| s.namespace == namespace)
            .map(|s| s.name)
            .collect()
    }

    pub fn deployments(&self) -> impl Iterator<Item = DeploymentView> + '_ {
        self.documents
            .iter()
            .filter(|d| d.kind == "Deployment" && d.name.is_some())
            .map(deployment_view)
    }

    /// Resources whose labels contain `key=value`.
    pub fn labeled(&self, key: &str, value: &str) -> Vec<ResourceId> {
        self.documents
            .iter()
            .filter(|d| d.labels().get(key).map(String::as_str) == Some(value))
            .filter_map(ManifestDocument::id)
            .collect()
    }

    /// Identity → document, ignoring document order. Unnamed documents are
    /// keyed by their kind and position among unnamed documents.
    pub fn semantic_model(&self) -> BTreeMap<ResourceId, Value> {
        let mut unnamed = 0usize;
        self.documents
            .iter()
            .map(|d| {
                let id = d.id().unwrap_or_else(|| {
                    unnamed += 1;
                    ResourceId::new(&d.kind, &d.namespace, &format!("#{unnamed}"))
                });
                (id, d.body.clone())
            })
            .collect()
    }

    pub(crate) fn remove(&mut self, id: &ResourceId) -> Option<ManifestDocument> {
        let pos = *self.index.get(id)?;
        let doc = self.documents.remove(pos);
        self.reindex().expect("removal cannot introduce duplicates");
        Some(doc)
    }

    pub(crate) fn rename(&mut self, id: &ResourceId, to: &str) -> Result<(), ManifestError> {
        let pos = *self
            .index
            .get(id)
            .ok_or_else(|| ManifestError::NotFound(id.to_string()))?;
        self.documents[pos].rename(to);
        self.reindex()
    }

    pub(crate) fn push(&mut self, doc: ManifestDocument) -> Result<(), ManifestError> {
        self.documents.push(doc);
        self.reindex()
    }
}

fn string_map(v: Option<&Value>) -> BTreeMap<String, String> {
    v.and_then(Value::as_object)
        .map(|m| {
            m.iter()
                .map(|(k, v)| {
                    let s = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                    (k.clone(), s)
                })
                .collect()
        })
        .unwrap_or_default()
}

fn service_view(doc: &ManifestDocument) -> ServiceView {
    let spec = doc.body.get("spec");
    let ports = spec
        .and_then(|s| s.get("ports"))
        .and_then(Value::as_array)
        .map(|ports| {
            ports
                .iter()
                .filter_map(|p| {
                    Some(ServicePort {
                        name: p.get("name").and_then(Value::as_str).map(str::to_string),
                        port: u16::try_from(p.get("port")?.as_u64()?).ok()?,
                        target_port: p.get("targetPort").cloned(),
                        protocol: p.get("protocol").and_then(Value::as_str).map(str::to_string),
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    ServiceView {
        name: doc.name.clone().unwrap_or_default(),
        namespace: doc.namespace.clone(),
        service_type: spec
            .and_then(|s| s.get("type"))
            .and_then(Value::as_str)
            .map(str::to_string),
        selector: string_map(spec.and_then(|s| s.get("selector"))),
        ports,
        labels: doc.labels(),
    }
}

fn deployment_view(doc: &ManifestDocument) -> DeploymentView {
    let containers = doc
        .body
        .pointer("/spec/template/spec/containers")
        .and_then(Value::as_array)
        .map(|cs| {
            cs.iter()
                .map(|c| ContainerView {
                    name: c.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
                    image: c.get("image").and_then(Value::as_str).unwrap_or_default().to_string(),
                    ports: c
                        .get("ports")
                        .and_then(Value::as_array)
                        .map(|ps| {
                            ps.iter()
                                .filter_map(|p| p.get("containerPort")?.as_u64())
                                .filter_map(|p| u16::try_from(p).ok())
                                .collect()
                        })
                        .unwrap_or_default(),
                    env: c
                        .get("env")
                        .and_then(Value::as_array)
                        .map(|es| {
                            es.iter()
                                .filter_map(|e| {
                                    Some((
                                        e.get("name")?.as_str()?.to_string(),
                                        e.get("value").and_then(Value::as_str).unwrap_or_default().to_string(),
                                    ))
                                })
                                .collect()
                        })
                        .unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default();
    DeploymentView {
        name: doc.name.clone().unwrap_or_default(),
        namespace: doc.namespace.clone(),
        labels: doc.labels(),
        pod_labels: string_map(doc.body.pointer("/spec/template/metadata/labels")),
        containers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: &str = "apiVersion: apps/v1
kind: Deployment
metadata:
  name: data-product-service
  namespace: pipeline
spec:
  selector:
    matchLabels: {app: data-product}
  template:
    metadata:
      labels: {app: data-product}
    spec:
      containers:
        - name: app
          image: example/data-product:1
          ports: [{containerPort: 8080}]
          env: [{name: MODE, value: static}]
---
apiVersion: v1
kind: Service
metadata:
  name: data-product-service
  namespace: pipeline
spec:
  selector: {app: data-product}
  ports: [{name: http, port: 8080, targetPort: 8080}]
";

    #[test]
    fn indexes_two_document_stream() {
        let set = parse_manifests(PAIR).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains(&ResourceId::new("Deployment", "pipeline", "data-product-service")));
        let svc = set.service("pipeline", "data-product-service").unwrap();
        assert_eq!(svc.ports[0].port, 8080);
        assert!(set.warnings().is_empty());
        let dep = set.deployments().next().unwrap();
        assert_eq!(dep.containers[0].ports, vec![8080]);
        assert_eq!(dep.containers[0].env["MODE"], "static");
    }

    #[test]
    fn duplicate_service_is_a_conflict() {
        let text = format!("{PAIR}---\napiVersion: v1\nkind: Service\nmetadata:\n  name: data-product-service\n  namespace: pipeline\nspec: {{}}\n");
        assert!(matches!(parse_manifests(&text), Err(ManifestError::Conflict(_))));
    }

    #[test]
    fn same_name_in_other_namespace_is_fine() {
        let text = format!("{PAIR}---\napiVersion: v1\nkind: Service\nmetadata:\n  name: data-product-service\n  namespace: other\nspec: {{}}\n");
        assert_eq!(parse_manifests(&text).unwrap().len(), 3);
    }

    #[test]
    fn syntax_error_reports_document_and_line() {
        let text = "kind: Service\nmetadata:\n  name: a\n---\nkind: Service\nmetadata: [unclosed\n";
        match parse_manifests(text) {
            Err(ManifestError::Parse { document, line, .. }) => {
                assert_eq!(document, 1);
                assert!(line.is_some());
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kinds_pass_through_with_warning() {
        let text = format!("{PAIR}---\napiVersion: apps/v1\nkind: StatefulSet\nmetadata:\n  name: db\n");
        let set = parse_manifests(&text).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.ids().count(), 2);
        assert_eq!(set.documents()[2].kind, "StatefulSet");
        assert!(set.warnings()[0].contains("StatefulSet db"));
    }

    #[test]
    fn warns_on_selector_without_deployment() {
        let text = "apiVersion: v1\nkind: Service\nmetadata:\n  name: lonely\nspec:\n  selector: {app: nothing}\n";
        let set = parse_manifests(text).unwrap();
        assert_eq!(set.warnings().len(), 1);
        assert_eq!(set.service("default", "lonely").unwrap().namespace, "default");
    }
}
