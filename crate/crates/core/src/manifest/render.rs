use std::fmt::Write as _;

use serde_json::{json, Value};

use super::plan::{pattern_labels, proxy_name, GeneratedResource, InjectionPlan};
use super::selection::{IssueCode, PatternSelection, SelectionIssue, SqlCacheParams};
use super::yaml::to_canonical_yaml;
use super::{ManifestError, PROXYSQL_PORT};
use crate::proxy::{PatternPolicy, PolicyError};

/// Applyable documents in a fixed order: renamed Services first, then
/// creations sorted by kind and name. Deletions are not documents and are
/// carried by the plan only.
pub fn render_plan(plan: &InjectionPlan) -> Vec<String> {
    let mut creations: Vec<&GeneratedResource> = plan.creations.iter().collect();
    creations.sort_by(|a, b| (&a.kind, &a.name, &a.namespace).cmp(&(&b.kind, &b.name, &b.namespace)));
    plan.mutations
        .iter()
        .map(|m| to_canonical_yaml(&m.document))
        .chain(creations.into_iter().map(GeneratedResource::document))
        .collect()
}

/// [`render_plan`] joined into one `---` separated stream.
pub fn render_plan_stream(plan: &InjectionPlan) -> String {
    render_plan(plan)
        .into_iter()
        .map(|doc| format!("---\n{doc}"))
        .collect()
}

/// NGINX ingress body-size notation: the largest exact unit among g, m, k.
fn size_notation(bytes: u64) -> String {
    const K: u64 = 1024;
    match bytes {
        0 => "0".into(),
        b if b % (K * K * K) == 0 => format!("{}g", b / (K * K * K)),
        b if b % (K * K) == 0 => format!("{}m", b / (K * K)),
        b if b % K == 0 => format!("{}k", b / K),
        b => b.to_string(),
    }
}

/// Ingress fronting the gateway proxy, with NGINX-controller rate-limit
/// and body-size annotations.
pub fn render_ingress_offload(
    selection: &PatternSelection,
    service_port: u16,
) -> Result<GeneratedResource, PolicyError> {
    let PatternPolicy::GatewayOffloading(policy) = selection.policy()? else {
        return Err(PolicyError::Parameter {
            param: "pattern".into(),
            message: format!("ingress offload needs gateway_offloading, got {}", selection.pattern),
        });
    };
    let proxy = proxy_name(selection);
    let host = selection
        .ingress_host
        .clone()
        .unwrap_or_else(|| format!("{}.local", selection.target_service));
    let rps = policy.rate_per_second.ceil().max(1.0) as u64;
    let burst_multiplier = ((policy.burst as f64) / policy.rate_per_second).round().max(1.0) as u64;
    let body = json!({
        "apiVersion": "networking.k8s.io/v1",
        "kind": "Ingress",
        "metadata": {
            "name": format!("{}-go-ingress", selection.target_service),
            "namespace": selection.pattern_namespace,
            "labels": pattern_labels(selection),
            "annotations": {
                "nginx.ingress.kubernetes.io/limit-rps": rps.to_string(),
                "nginx.ingress.kubernetes.io/limit-burst-multiplier": burst_multiplier.to_string(),
                "nginx.ingress.kubernetes.io/proxy-body-size": size_notation(policy.max_body_bytes),
            },
        },
        "spec": {
            "ingressClassName": "nginx",
            "rules": [{
                "host": host,
                "http": {
                    "paths": [{
                        "path": "/",
                        "pathType": "Prefix",
                        "backend": {
                            "service": { "name": proxy, "port": { "number": service_port } },
                        },
                    }],
                },
            }],
        },
    });
    Ok(GeneratedResource::new(body))
}

fn cnf_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// proxysql.cnf text for a SQL cache: one query rule per regex with its
/// cache TTL, the backend at the renamed Service, and the performance
/// settings.
pub fn sql_cache_config_text(params: &SqlCacheParams, backend_host: &str, backend_port: u16) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "datadir=\"/var/lib/proxysql\"");
    let _ = writeln!(t);
    let _ = writeln!(t, "admin_variables=\n{{");
    let _ = writeln!(t, "    admin_credentials=\"admin:admin\"");
    let _ = writeln!(t, "    mysql_ifaces=\"0.0.0.0:6032\"");
    let _ = writeln!(t, "}}");
    let _ = writeln!(t);
    let _ = writeln!(t, "mysql_variables=\n{{");
    let _ = writeln!(t, "    threads={}", params.threads);
    let _ = writeln!(t, "    max_connections={}", params.max_connections);
    let _ = writeln!(t, "    query_cache_size_MB={}", params.cache_size_mb);
    let _ = writeln!(t, "    interfaces=\"0.0.0.0:{PROXYSQL_PORT}\"");
    let _ = writeln!(t, "}}");
    let _ = writeln!(t);
    let _ = writeln!(t, "mysql_servers=\n(");
    let _ = writeln!(
        t,
        "    {{ address={}, port={}, hostgroup=0 }}",
        cnf_string(backend_host),
        backend_port
    );
    let _ = writeln!(t, ")");
    let _ = writeln!(t);
    let _ = writeln!(t, "mysql_users=\n(");
    let _ = writeln!(
        t,
        "    {{ username={}, password={}, default_hostgroup=0 }}",
        cnf_string(&params.username),
        cnf_string(&params.password)
    );
    let _ = writeln!(t, ")");
    let _ = writeln!(t);
    let _ = writeln!(t, "mysql_query_rules=\n(");
    for (i, rule) in params.query_rules.iter().enumerate() {
        let _ = writeln!(t, "    {{");
        let _ = writeln!(t, "        rule_id={}", i + 1);
        let _ = writeln!(t, "        active=1");
        let _ = writeln!(t, "        match_digest={}", cnf_string(&rule.regex));
        let _ = writeln!(t, "        cache_ttl={}", rule.ttl_ms);
        let _ = writeln!(t, "        destination_hostgroup=0");
        let _ = writeln!(t, "        apply=1");
        let sep = if i + 1 < params.query_rules.len() { "," } else { "" };
        let _ = writeln!(t, "    }}{sep}");
    }
    let _ = writeln!(t, ")");
    t
}

/// Validates the rules and packages the config text into a ConfigMap.
pub fn render_sql_cache_config(
    selection: &PatternSelection,
    backend_host: &str,
    backend_port: u16,
) -> Result<GeneratedResource, ManifestError> {
    let params = selection.sql_params().map_err(|e| {
        ManifestError::Invalid(vec![SelectionIssue::new(IssueCode::ParamRange, e.to_string())])
    })?;
    let bad: Vec<SelectionIssue> = params
        .query_rules
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            regex::Regex::new(&r.regex)
                .err()
                .map(|e| SelectionIssue::new(IssueCode::RegexInvalid, format!("query_rules[{i}]: {e}")))
        })
        .collect();
    if !bad.is_empty() {
        return Err(ManifestError::Invalid(bad));
    }
    let body = json!({
        "apiVersion": "v1",
        "kind": "ConfigMap",
        "metadata": {
            "name": format!("{}-config", proxy_name(selection)),
            "namespace": selection.pattern_namespace,
            "labels": Value::Object(pattern_labels(selection)),
        },
        "data": { "proxysql.cnf": sql_cache_config_text(&params, backend_host, backend_port) },
    });
    Ok(GeneratedResource::new(body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::QueryRule;
    use crate::proxy::PatternKind;

    #[test]
    fn body_size_units() {
        assert_eq!(size_notation(1024 * 1024), "1m");
        assert_eq!(size_notation(8 * 1024), "8k");
        assert_eq!(size_notation(2 * 1024 * 1024 * 1024), "2g");
        assert_eq!(size_notation(1000), "1000");
    }

    #[test]
    fn ingress_echoes_parameters() {
        let sel = PatternSelection::new(PatternKind::GatewayOffloading, "coordinator-service")
            .with_parameters(json!({"rate_per_second": 50.0, "max_body_bytes": 1048576}));
        let ing = render_ingress_offload(&sel, 8080).unwrap();
        let ann = &ing.body["metadata"]["annotations"];
        assert_eq!(ann["nginx.ingress.kubernetes.io/limit-rps"], "50");
        assert_eq!(ann["nginx.ingress.kubernetes.io/proxy-body-size"], "1m");
        assert_eq!(ing.document(), render_ingress_offload(&sel, 8080).unwrap().document());
    }

    #[test]
    fn sql_rule_echo() {
        let params = SqlCacheParams {
            query_rules: vec![QueryRule { regex: "^SELECT .*".into(), ttl_ms: 5000 }],
            threads: 4,
            cache_size_mb: 256,
            ..Default::default()
        };
        let text = sql_cache_config_text(&params, "db-original.pipeline.svc.cluster.local", 3306);
        assert!(text.contains("cache_ttl=5000"));
        assert!(text.contains("query_cache_size_MB=256"));
        assert!(text.contains("threads=4"));
    }

    #[test]
    fn sql_without_rules() {
        let text = sql_cache_config_text(&SqlCacheParams::default(), "h", 3306);
        assert!(text.ends_with("mysql_query_rules=\n(\n)\n"));
    }

    #[test]
    fn regex_is_escaped() {
        let params = SqlCacheParams {
            query_rules: vec![QueryRule { regex: r#"^SELECT "a"\s"#.into(), ttl_ms: 1 }],
            ..Default::default()
        };
        let text = sql_cache_config_text(&params, "h", 1);
        assert!(text.contains(r#"match_digest="^SELECT \"a\"\\s""#));
    }

    #[test]
    fn invalid_regex_names_rule() {
        let params = SqlCacheParams {
            query_rules: vec![
                QueryRule { regex: "ok".into(), ttl_ms: 1 },
                QueryRule { regex: "[".into(), ttl_ms: 1 },
            ],
            ..Default::default()
        };
        let sel = PatternSelection::sql("db", &params);
        match render_sql_cache_config(&sel, "h", 1) {
            Err(ManifestError::Invalid(issues)) => {
                assert_eq!(issues[0].code, IssueCode::RegexInvalid);
                assert!(issues[0].message.starts_with("query_rules[1]"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_plan_renders_nothing() {
        let plan = InjectionPlan::empty(PatternKind::CircuitBreaker, crate::manifest::ResourceId::service("p", "x"));
        assert!(render_plan(&plan).is_empty());
        assert_eq!(render_plan_stream(&plan), "");
    }
}
