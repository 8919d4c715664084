//! Canonical YAML rendering.
//!
//! Keys are emitted in the map's insertion order, nested blocks are indented
//! by two spaces (sequence items included), multi-line strings become literal
//! blocks and anything YAML could misread is double-quoted. No anchors,
//! tags or flow collections other than `{}` and `[]` for empty values.

use serde_json::{Map, Value};

pub fn to_canonical_yaml(value: &Value) -> String {
    let mut out = String::new();
    match value {
        Value::Object(map) if !map.is_empty() => write_map(&mut out, map, 0),
        Value::Array(items) if !items.is_empty() => write_seq(&mut out, items, 0),
        scalar => {
            write_scalar_inline(&mut out, scalar, 2);
            out.push('\n');
        }
    }
    out
}

/// Renders documents as a `---` separated stream; an empty input yields an
/// empty string.
pub fn to_document_stream<'a>(docs: impl IntoIterator<Item = &'a Value>) -> String {
    docs.into_iter()
        .map(|doc| format!("---\n{}", to_canonical_yaml(doc)))
        .collect()
}

fn pad(out: &mut String, indent: usize) {
    out.extend(std::iter::repeat_n(' ', indent));
}

fn write_map(out: &mut String, map: &Map<String, Value>, indent: usize) {
    for (key, value) in map {
        pad(out, indent);
        write_key(out, key);
        write_value_after_key(out, value, indent);
    }
}

fn write_value_after_key(out: &mut String, value: &Value, indent: usize) {
    match value {
        Value::Object(m) if !m.is_empty() => {
            out.push_str(":\n");
            write_map(out, m, indent + 2);
        }
        Value::Array(items) if !items.is_empty() => {
            out.push_str(":\n");
            write_seq(out, items, indent + 2);
        }
        scalar => {
            out.push_str(": ");
            write_scalar_inline(out, scalar, indent + 2);
            out.push('\n');
        }
    }
}

fn write_seq(out: &mut String, items: &[Value], indent: usize) {
    for item in items {
        pad(out, indent);
        out.push_str("- ");
        match item {
            Value::Object(m) if !m.is_empty() => {
                // First key shares the dash line; the rest align under it.
                let mut first = true;
                for (key, value) in m {
                    if !first {
                        pad(out, indent + 2);
                    }
                    first = false;
                    write_key(out, key);
                    write_value_after_key(out, value, indent + 2);
                }
            }
            Value::Array(inner) if !inner.is_empty() => {
                out.push('\n');
                write_seq(out, inner, indent + 2);
            }
            scalar => {
                write_scalar_inline(out, scalar, indent + 2);
                out.push('\n');
            }
        }
    }
}

fn write_key(out: &mut String, key: &str) {
    if needs_quotes(key) {
        out.push_str(&serde_json::to_string(key).expect("strings serialize"));
    } else {
        out.push_str(key);
    }
}

fn write_scalar_inline(out: &mut String, value: &Value, block_indent: usize) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => write_string(out, s, block_indent),
        Value::Object(_) => out.push_str("{}"),
        Value::Array(_) => out.push_str("[]"),
    }
}

fn write_string(out: &mut String, s: &str, block_indent: usize) {
    let literal_ok = s.contains('\n')
        && !s.starts_with([' ', '\t', '\n'])
        && !s.contains('\r')
        && s.lines().all(|l| !l.ends_with([' ', '\t']))
        && !s.ends_with("\n\n");
    if literal_ok {
        out.push_str(if s.ends_with('\n') { "|" } else { "|-" });
        for line in s.lines() {
            out.push('\n');
            if !line.is_empty() {
                pad(out, block_indent);
                out.push_str(line);
            }
        }
    } else if needs_quotes(s) {
        out.push_str(&serde_json::to_string(s).expect("strings serialize"));
    } else {
        out.push_str(s);
    }
}

fn needs_quotes(s: &str) -> bool {
    if s.is_empty() || s.trim() != s {
        return true;
    }
    const RESERVED: [&str; 14] = [
        "true", "false", "yes", "no", "on", "off", "y", "n", "null", "~", "True", "False", "NULL",
        "Null",
    ];
    if RESERVED.contains(&s) || RESERVED.contains(&s.to_ascii_lowercase().as_str()) {
        return true;
    }
    if looks_numeric(s) {
        return true;
    }
    let first = s.chars().next().expect("non-empty");
    if "-?:,[]{}#&*!|>'\"%@`".contains(first) {
        return true;
    }
    s.contains(": ")
        || s.contains(" #")
        || s.ends_with(':')
        || s.chars().any(|c| c.is_control())
}

fn looks_numeric(s: &str) -> bool {
    let t = s.trim_start_matches(['+', '-']);
    t.parse::<f64>().is_ok()
        || t.starts_with("0x")
        || t.starts_with("0o")
        || matches!(t, ".inf" | ".Inf" | ".INF" | ".nan" | ".NaN" | ".NAN")
}
