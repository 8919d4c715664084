use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::WorkloadManifestSet;
use super::{DEFAULT_PATTERN_NAMESPACE, DEFAULT_PIPELINE_NAMESPACE};
use crate::proxy::{PatternKind, PatternPolicy, PolicyError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheVariant {
    #[default]
    Http,
    Sql,
}

/// Which pattern goes where, with its raw parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSelection {
    pub pattern: PatternKind,
    #[serde(default)]
    pub variant: CacheVariant,
    pub target_service: String,
    #[serde(default = "default_target_namespace")]
    pub target_namespace: String,
    #[serde(default = "default_pattern_namespace")]
    pub pattern_namespace: String,
    /// Policy block for HTTP patterns, or [`SqlCacheParams`] for the SQL
    /// cache variant. Missing keys take defaults.
    #[serde(default)]
    pub parameters: Value,
    /// Host rule for the gateway Ingress; defaults to `<target>.local`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingress_host: Option<String>,
}

fn default_target_namespace() -> String {
    DEFAULT_PIPELINE_NAMESPACE.to_string()
}

fn default_pattern_namespace() -> String {
    DEFAULT_PATTERN_NAMESPACE.to_string()
}

impl PatternSelection {
    pub fn new(pattern: PatternKind, target_service: &str) -> Self {
        PatternSelection {
            pattern,
            variant: CacheVariant::Http,
            target_service: target_service.to_string(),
            target_namespace: default_target_namespace(),
            pattern_namespace: default_pattern_namespace(),
            parameters: Value::Null,
            ingress_host: None,
        }
    }

    pub fn with_parameters(mut self, parameters: Value) -> Self {
        self.parameters = parameters;
        self
    }

    pub fn sql(target_service: &str, params: &SqlCacheParams) -> Self {
        let mut s = Self::new(PatternKind::CacheAside, target_service);
        s.variant = CacheVariant::Sql;
        s.parameters = serde_json::to_value(params).expect("sql params serialize");
        s
    }

    pub fn is_sql(&self) -> bool {
        self.variant == CacheVariant::Sql
    }

    /// The runtime policy of an HTTP pattern selection.
    pub fn policy(&self) -> Result<PatternPolicy, PolicyError> {
        PatternPolicy::from_block(self.pattern, self.parameters.clone())
    }

    pub fn sql_params(&self) -> Result<SqlCacheParams, PolicyError> {
        let block = match &self.parameters {
            Value::Null => Value::Object(Default::default()),
            other => other.clone(),
        };
        serde_path_to_error::deserialize(block).map_err(|e| PolicyError::Parameter {
            param: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRule {
    /// Regular expression matched against the query digest.
    pub regex: String,
    pub ttl_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqlCacheParams {
    pub query_rules: Vec<QueryRule>,
    pub threads: u32,
    pub max_connections: u32,
    pub cache_size_mb: u32,
    pub username: String,
    pub password: String,
}

impl Default for SqlCacheParams {
    fn default() -> Self {
        SqlCacheParams {
            query_rules: Vec::new(),
            threads: 4,
            max_connections: 2048,
            cache_size_mb: 256,
            username: "app".into(),
            password: "app".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    TargetNotFound,
    PortUnresolvable,
    NamespaceInvalid,
    ParamRange,
    ParamUnknown,
    VariantInvalid,
    RegexInvalid,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::TargetNotFound => "TARGET_NOT_FOUND",
            IssueCode::PortUnresolvable => "PORT_UNRESOLVABLE",
            IssueCode::NamespaceInvalid => "NAMESPACE_INVALID",
            IssueCode::ParamRange => "PARAM_RANGE",
            IssueCode::ParamUnknown => "PARAM_UNKNOWN",
            IssueCode::VariantInvalid => "VARIANT_INVALID",
            IssueCode::RegexInvalid => "REGEX_INVALID",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionIssue {
    pub code: IssueCode,
    pub message: String,
}

impl SelectionIssue {
    pub(crate) fn new(code: IssueCode, message: impl Into<String>) -> Self {
        SelectionIssue {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for SelectionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

fn parameter_issue(err: PolicyError) -> SelectionIssue {
    match err {
        PolicyError::Parameter { param, message } if message.contains("unknown field") => {
            SelectionIssue::new(IssueCode::ParamUnknown, format!("{param}: {message}"))
        }
        other => SelectionIssue::new(IssueCode::ParamRange, other.to_string()),
    }
}

/// Reports every problem with a selection. Any pattern may target any
/// service.
pub fn validate_selection(
    manifests: &WorkloadManifestSet,
    selection: &PatternSelection,
) -> Result<(), Vec<SelectionIssue>> {
    let mut issues = Vec::new();
    for (what, ns) in [
        ("target_namespace", &selection.target_namespace),
        ("pattern_namespace", &selection.pattern_namespace),
    ] {
        if !is_dns_label(ns) {
            issues.push(SelectionIssue::new(
                IssueCode::NamespaceInvalid,
                format!("{what} `{ns}` is not a valid namespace name"),
            ));
        }
    }
    if selection.target_namespace == selection.pattern_namespace {
        issues.push(SelectionIssue::new(
            IssueCode::NamespaceInvalid,
            "pattern_namespace must differ from the target's namespace",
        ));
    }

    match manifests.service(&selection.target_namespace, &selection.target_service) {
        None => issues.push(SelectionIssue::new(
            IssueCode::TargetNotFound,
            format!(
                "no Service `{}` in namespace `{}`",
                selection.target_service, selection.target_namespace
            ),
        )),
        Some(svc) => {
            if svc.ports.is_empty() {
                issues.push(SelectionIssue::new(
                    IssueCode::PortUnresolvable,
                    format!("Service `{}` declares no numeric port", svc.name),
                ));
            }
            if svc.service_type.as_deref() == Some("ExternalName") {
                issues.push(SelectionIssue::new(
                    IssueCode::PortUnresolvable,
                    format!("Service `{}` is an ExternalName alias", svc.name),
                ));
            }
        }
    }

    if selection.is_sql() {
        if selection.pattern != PatternKind::CacheAside {
            issues.push(SelectionIssue::new(
                IssueCode::VariantInvalid,
                format!("variant sql applies only to cache_aside, not {}", selection.pattern),
            ));
        }
        match selection.sql_params() {
            Err(e) => issues.push(parameter_issue(e)),
            Ok(p) => {
                for (i, rule) in p.query_rules.iter().enumerate() {
                    if let Err(e) = regex::Regex::new(&rule.regex) {
                        issues.push(SelectionIssue::new(
                            IssueCode::RegexInvalid,
                            format!("query_rules[{i}]: {e}"),
                        ));
                    }
                }
                for (ok, param) in [
                    (p.threads >= 1, "threads"),
                    (p.max_connections >= 1, "max_connections"),
                    (p.cache_size_mb >= 1, "cache_size_mb"),
                ] {
                    if !ok {
                        issues.push(SelectionIssue::new(IssueCode::ParamRange, format!("{param}: must be positive")));
                    }
                }
            }
        }
    } else {
        match selection.policy() {
            Err(e) => issues.push(parameter_issue(e)),
            Ok(policy) => {
                if let Err(violations) = policy.validate() {
                    issues.extend(
                        violations
                            .into_iter()
                            .map(|v| SelectionIssue::new(IssueCode::ParamRange, v.to_string())),
                    );
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}
