use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::json;
use snappattern::manifest::*;
use snappattern::proxy::{PatternKind, PolicyDocument};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn assert_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e} (run with UPDATE_GOLDEN=1 to create)", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn sample() -> WorkloadManifestSet {
    parse_manifests(SAMPLE_PIPELINE).unwrap()
}

/// The pattern-to-service pairing used throughout the examples.
fn conventional_selections() -> Vec<(&'static str, PatternSelection)> {
    vec![
        ("cb-filter.yaml", PatternSelection::new(PatternKind::CircuitBreaker, "filter-service")),
        ("ca-data-product.yaml", PatternSelection::new(PatternKind::CacheAside, "data-product-service")),
        (
            "rc-data-product.yaml",
            PatternSelection::new(PatternKind::RequestCollapsing, "data-product-service"),
        ),
        (
            "go-coordinator-plan.yaml",
            PatternSelection::new(PatternKind::GatewayOffloading, "coordinator-service"),
        ),
        (
            "arr-format.yaml",
            PatternSelection::new(PatternKind::AsyncRequestReply, "format-service")
                .with_parameters(json!({"wrapped_path_prefixes": ["/format"]})),
        ),
    ]
}

#[test]
fn sample_pipeline_has_twelve_documents() {
    let set = sample();
    let kinds: Vec<&str> = set.documents().iter().map(|d| d.kind.as_str()).collect();
    assert_eq!(set.len(), 12);
    assert_eq!(kinds.iter().filter(|k| **k == "Deployment").count(), 6);
    assert_eq!(set.ids().count(), 12);
    assert!(set.warnings().is_empty(), "{:?}", set.warnings());
}

#[test]
fn renders_match_golden_files() {
    let set = sample();
    for (file, sel) in conventional_selections() {
        let plan = plan_injection(&set, &sel).unwrap();
        assert_golden(file, &render_plan_stream(&plan));
    }
}

#[test]
fn rendering_is_deterministic() {
    let set = sample();
    for (_, sel) in conventional_selections() {
        let a = render_plan(&plan_injection(&set, &sel).unwrap());
        let b = render_plan(&plan_injection(&set, &sel).unwrap());
        assert_eq!(a, b);
    }
}

#[test]
fn ingress_golden() {
    let sel = PatternSelection::new(PatternKind::GatewayOffloading, "coordinator-service");
    let ingress = render_ingress_offload(&sel, 8080).unwrap();
    assert_golden("go-coordinator.yaml", &ingress.document());
}

#[test]
fn sql_cache_golden() {
    let params = SqlCacheParams {
        query_rules: vec![
            QueryRule { regex: "^SELECT .*".into(), ttl_ms: 5000 },
            QueryRule { regex: "^SELECT title FROM books WHERE year = \\?".into(), ttl_ms: 60000 },
        ],
        threads: 4,
        cache_size_mb: 256,
        ..Default::default()
    };
    let sel = PatternSelection::sql("data-product-service", &params);
    let set = sample();
    let plan = plan_injection(&set, &sel).unwrap();
    let cm = plan
        .creations
        .iter()
        .find(|c| c.name == "data-product-service-ca-proxysql-config")
        .unwrap();
    let text = cm.body["data"]["proxysql.cnf"].as_str().unwrap();
    assert!(text.contains("data-product-service-original.pipeline.svc.cluster.local"));
    assert_golden("ca-sql.cnf", text);
    assert!(cm.body["metadata"]["labels"][LABEL_VARIANT] == "sql");
}

#[test]
fn cache_aside_upstream_is_the_renamed_service() {
    let set = sample();
    let plan = plan_injection(&set, &PatternSelection::new(PatternKind::CacheAside, "data-product-service")).unwrap();
    let cm = plan.creations.iter().find(|c| c.kind == "ConfigMap").unwrap();
    let doc = PolicyDocument::parse(cm.body["data"]["policy.yaml"].as_str().unwrap()).unwrap();
    let upstream = url::Url::parse(doc.upstream.as_deref().unwrap()).unwrap();
    let host = upstream.host_str().unwrap();
    assert_eq!(host.split('.').next(), Some("data-product-service-original"));
}

#[test]
fn created_resources_are_partitioned_and_labeled() {
    let set = sample();
    for (_, sel) in conventional_selections() {
        let plan = plan_injection(&set, &sel).unwrap();
        for (id, ns) in plan.namespace_assignments() {
            let alias = id.kind == "Service" && id.name == sel.target_service;
            if alias {
                assert_eq!(ns, "pipeline");
            } else {
                assert_eq!(ns, DEFAULT_PATTERN_NAMESPACE, "{id}");
            }
        }
        let injected = apply_plan(&set, &plan).unwrap();
        let labeled: BTreeSet<_> = injected.labeled(LABEL_TARGET, &sel.target_service).into_iter().collect();
        let created: BTreeSet<_> = plan.creations.iter().map(|c| c.id()).collect();
        assert_eq!(labeled, created);
        // baseline resources keep their namespace
        for doc in set.documents() {
            let id = doc.id().unwrap();
            let renamed = id.name == sel.target_service && id.kind == "Service";
            if !renamed {
                assert!(injected.contains(&id));
            }
        }
    }
}

#[test]
fn removal_touches_only_the_target() {
    let set = sample();
    let sel = PatternSelection::new(PatternKind::CircuitBreaker, "filter-service");
    let injected = apply_plan(&set, &plan_injection(&set, &sel).unwrap()).unwrap();
    let removal = plan_removal(&injected, &sel).unwrap();
    for id in &removal.deletions {
        assert!(!set.contains(id) || id.name == "filter-service", "{id}");
    }
    let restored = apply_plan(&injected, &removal).unwrap();
    let before = set.semantic_model();
    let after = restored.semantic_model();
    let changed: Vec<_> = before
        .keys()
        .chain(after.keys())
        .filter(|k| before.get(*k) != after.get(*k))
        .collect();
    assert!(changed.is_empty(), "{changed:?}");
}

#[test]
fn removal_on_clean_set_is_not_injected() {
    let sel = PatternSelection::new(PatternKind::CacheAside, "data-product-service");
    assert!(matches!(plan_removal(&sample(), &sel), Err(ManifestError::NotInjected(_))));
}

#[test]
fn sql_variant_round_trip() {
    let set = sample();
    let sel = PatternSelection::sql("data-product-service", &SqlCacheParams::default());
    let plan = plan_injection(&set, &sel).unwrap();
    let injected = apply_plan(&set, &plan).unwrap();
    let restored = apply_plan(&injected, &plan_removal(&injected, &sel).unwrap()).unwrap();
    assert_eq!(restored.semantic_model(), set.semantic_model());
}
