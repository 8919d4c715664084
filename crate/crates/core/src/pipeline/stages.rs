use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A record as it travels between stages; book records and aggregate rows
/// share this shape.
pub type Record = Map<String, Value>;

pub const BOOK_FIELDS: [&str; 4] = ["title", "author", "year", "publisher"];

const BANNED_BOOKS: &str = include_str!("../../assets/banned-books.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookRecord {
    pub title: String,
    pub author: String,
    pub year: i64,
    pub publisher: String,
}

pub fn bundled_books() -> Vec<BookRecord> {
    serde_json::from_str(BANNED_BOOKS).expect("bundled sample parses")
}

pub fn bundled_records() -> Vec<Record> {
    serde_json::from_str(BANNED_BOOKS).expect("bundled sample parses")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StageError {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unknown anonymization strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown output format `{0}`")]
    UnknownFormat(String),
    #[error("bad {stage} parameters: {message}")]
    Params { stage: String, message: String },
    #[error("invalid chain: {0}")]
    Chain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Filter,
    Aggregate,
    Anonymize,
    Format,
}

impl StageKind {
    pub const ALL: [StageKind; 4] = [StageKind::Filter, StageKind::Aggregate, StageKind::Anonymize, StageKind::Format];

    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Filter => "filter",
            StageKind::Aggregate => "aggregate",
            StageKind::Anonymize => "anonymize",
            StageKind::Format => "format",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        StageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Mask,
    Hash,
}

impl FromStr for Strategy {
    type Err = StageError;
    fn from_str(s: &str) -> Result<Self, StageError> {
        match s {
            "mask" => Ok(Strategy::Mask),
            "hash" => Ok(Strategy::Hash),
            other => Err(StageError::UnknownStrategy(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = StageError;
    fn from_str(s: &str) -> Result<Self, StageError> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(StageError::UnknownFormat(other.into())),
        }
    }
}

/// Final output of a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Records(Vec<Record>),
    Csv(String),
}

impl Document {
    pub fn content_type(&self) -> &'static str {
        match self {
            Document::Records(_) => "application/json",
            Document::Csv(_) => "text/csv; charset=utf-8",
        }
    }

    pub fn to_body(&self) -> String {
        match self {
            Document::Records(r) => serde_json::to_string(r).expect("records serialize"),
            Document::Csv(text) => text.clone(),
        }
    }
}

fn check_field(records: &[Record], field: &str) -> Result<(), StageError> {
    if BOOK_FIELDS.contains(&field) || records.iter().any(|r| r.contains_key(field)) {
        Ok(())
    } else {
        Err(StageError::UnknownField(field.into()))
    }
}

fn matches(actual: &Value, wanted: &Value) -> bool {
    match (actual, wanted) {
        (Value::Number(a), Value::Number(b)) => a.as_f64() == b.as_f64(),
        (Value::Number(a), Value::String(b)) => b.trim().parse::<f64>().ok() == a.as_f64(),
        (Value::String(a), Value::String(b)) => a == b,
        (Value::String(a), other) => *a == other.to_string(),
        (a, b) => a == b,
    }
}

/// Keeps records whose `field` equals `value`; numbers compare numerically.
pub fn filter(records: &[Record], field: &str, value: &Value) -> Result<Vec<Record>, StageError> {
    check_field(records, field)?;
    Ok(records
        .iter()
        .filter(|r| r.get(field).is_some_and(|v| matches(v, value)))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Missing,
    Number(i64),
    Text(String),
}

impl GroupKey {
    fn of(v: Option<&Value>) -> GroupKey {
        match v {
            None | Some(Value::Null) => GroupKey::Missing,
            Some(Value::Number(n)) if n.as_i64().is_some() => GroupKey::Number(n.as_i64().unwrap_or_default()),
            Some(Value::String(s)) => GroupKey::Text(s.clone()),
            Some(other) => GroupKey::Text(other.to_string()),
        }
    }

    fn to_value(&self) -> Value {
        match self {
            GroupKey::Missing => Value::Null,
            GroupKey::Number(n) => Value::from(*n),
            GroupKey::Text(s) => Value::from(s.clone()),
        }
    }
}

/// Counts per distinct value of `field`, keys ascending.
pub fn aggregate(records: &[Record], field: &str) -> Result<Vec<(Value, u64)>, StageError> {
    check_field(records, field)?;
    let mut counts: BTreeMap<GroupKey, u64> = BTreeMap::new();
    for r in records {
        *counts.entry(GroupKey::of(r.get(field))).or_default() += 1;
    }
    Ok(counts.into_iter().map(|(k, n)| (k.to_value(), n)).collect())
}

/// `aggregate` as records of `{key, count}`.
pub fn aggregate_records(records: &[Record], field: &str) -> Result<Vec<Record>, StageError> {
    Ok(aggregate(records, field)?
        .into_iter()
        .map(|(key, count)| {
            let mut r = Record::new();
            r.insert("key".into(), key);
            r.insert("count".into(), Value::from(count));
            r
        })
        .collect())
}

pub fn mask(value: &str) -> String {
    let mut chars = value.chars();
    match chars.next() {
        None => String::new(),
        Some(first) => std::iter::once(first).chain(chars.map(|_| '*')).collect(),
    }
}

pub fn hash_hex(value: &str) -> String {
    hex::encode(Sha256::digest(value.as_bytes()))
}

/// Rewrites the string values of `fields`; other values pass through.
pub fn anonymize(records: &[Record], strategy: Strategy, fields: &[String]) -> Result<Vec<Record>, StageError> {
    for f in fields {
        check_field(records, f)?;
    }
    Ok(records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            for f in fields {
                if let Some(Value::String(s)) = out.get_mut(f) {
                    *s = match strategy {
                        Strategy::Mask => mask(s),
                        Strategy::Hash => hash_hex(s),
                    };
                }
            }
            out
        })
        .collect())
}

fn csv_cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
    }
}

/// Header of field names in first-seen order, then one row per record.
pub fn format_csv(records: &[Record]) -> String {
    let mut header: Vec<&str> = Vec::new();
    for r in records {
        for k in r.keys() {
            if !header.contains(&k.as_str()) {
                header.push(k);
            }
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    if !header.is_empty() {
        w.write_record(&header).expect("in-memory write");
    }
    for r in records {
        w.write_record(header.iter().map(|h| csv_cell(r.get(*h))))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn format(records: &[Record], output: OutputFormat) -> Document {
    match output {
        OutputFormat::Csv => Document::Csv(format_csv(records)),
        OutputFormat::Json => Document::Records(records.to_vec()),
    }
}

/// One step of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: StageKind,
    #[serde(default)]
    pub params: Value,
}

impl StageSpec {
    pub fn new(stage: StageKind, params: Value) -> Self {
        StageSpec { stage, params }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FilterParams {
    field: String,
    value: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateParams {
    group_by: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnonymizeParams {
    strategy: String,
    fields: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FormatParams {
    output: String,
}

fn params<T: for<'de> Deserialize<'de>>(spec: &StageSpec) -> Result<T, StageError> {
    serde_json::from_value(spec.params.clone()).map_err(|e| StageError::Params {
        stage: spec.stage.to_string(),
        message: e.to_string(),
    })
}

pub fn apply_stage(spec: &StageSpec, records: &[Record]) -> Result<Document, StageError> {
    match spec.stage {
        StageKind::Filter => {
            let p: FilterParams = params(spec)?;
            filter(records, &p.field, &p.value).map(Document::Records)
        }
        StageKind::Aggregate => {
            let p: AggregateParams = params(spec)?;
            aggregate_records(records, &p.group_by).map(Document::Records)
        }
        StageKind::Anonymize => {
            let p: AnonymizeParams = params(spec)?;
            anonymize(records, p.strategy.parse()?, &p.fields).map(Document::Records)
        }
        StageKind::Format => {
            let p: FormatParams = params(spec)?;
            Ok(format(records, p.output.parse()?))
        }
    }
}

/// Only the final stage may format to CSV.
pub fn validate_chain(chain: &[StageSpec]) -> Result<(), StageError> {
    if let Some(i) = chain.iter().position(|s| s.stage == StageKind::Format) {
        if i + 1 != chain.len() {
            return Err(StageError::Chain(format!("format must be the last stage (found at {i})")));
        }
    }
    Ok(())
}

/// In-process chain evaluation over `data`.
pub fn run_chain(chain: &[StageSpec], data: Vec<Record>) -> Result<Document, StageError> {
    validate_chain(chain)?;
    let mut doc = Document::Records(data);
    for spec in chain {
        let Document::Records(records) = &doc else {
            unreachable!("validated: format is last");
        };
        doc = apply_stage(spec, records)?;
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(v: Value) -> Record {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn sample_shape() {
        let books = bundled_books();
        assert_eq!(books.len(), 102);
        assert!(books.iter().all(|b| !b.title.is_empty() && !b.author.is_empty()));
    }

    #[test]
    fn filter_by_year_against_linear_scan() {
        let data = bundled_records();
        let out = filter(&data, "year", &json!(1933)).unwrap();
        let brute = bundled_books().iter().filter(|b| b.year == 1933).count();
        assert_eq!(out.len(), brute);
        assert!(out.iter().all(|r| r["year"] == json!(1933)));
        assert_eq!(filter(&data, "year", &json!("1933")).unwrap(), out);
        assert!(filter(&data, "author", &json!("Nobody")).unwrap().is_empty());
        assert_eq!(filter(&data, "isbn", &json!("x")), Err(StageError::UnknownField("isbn".into())));
    }

    #[test]
    fn aggregate_counts_sorted() {
        let recs: Vec<Record> = ["A", "B", "A"].iter().map(|a| rec(json!({"author": a}))).collect();
        assert_eq!(aggregate(&recs, "author").unwrap(), vec![(json!("A"), 2), (json!("B"), 1)]);
        assert!(aggregate(&[], "author").unwrap().is_empty());
        let data = bundled_records();
        let total: u64 = aggregate(&data, "publisher").unwrap().iter().map(|(_, n)| n).sum();
        assert_eq!(total, data.len() as u64);
        let years = aggregate(&data, "year").unwrap();
        assert!(years.windows(2).all(|w| w[0].0.as_i64() < w[1].0.as_i64()));
    }

    #[test]
    fn mask_and_hash() {
        assert_eq!(mask("Brecht"), "B*****");
        assert_eq!(mask(""), "");
        assert_eq!(mask("Ölprinz"), "Ö******");
        // reference digest from `echo -n Brecht | sha256sum`
        assert_eq!(
            hash_hex("Brecht"),
            "3e6740a808e74a6ae7c199470bdc44ccd4f1856d4e4d30a029d6508f94bb529b"
        );
        let out = anonymize(&[rec(json!({"author": "Brecht", "year": 1928}))], Strategy::Hash, &["author".into(), "year".into()]).unwrap();
        assert_eq!(out[0]["year"], json!(1928));
        assert_eq!("nope".parse::<Strategy>(), Err(StageError::UnknownStrategy("nope".into())));
    }

    #[test]
    fn csv_format_rules() {
        let recs = vec![
            rec(json!({"title": "Kleiner Mann, was nun?", "year": 1932})),
            rec(json!({"title": "Fabian", "year": 1931})),
        ];
        let Document::Csv(text) = format(&recs, OutputFormat::Csv) else { panic!() };
        assert_eq!(text, "title,year\r\n\"Kleiner Mann, was nun?\",1932\r\nFabian,1931\r\n");
        assert_eq!(text.lines().count(), 3);
        let Document::Records(back) = format(&recs, OutputFormat::Json) else { panic!() };
        let json_text = serde_json::to_string(&back).unwrap();
        assert_eq!(serde_json::from_str::<Vec<Record>>(&json_text).unwrap(), recs);
        assert_eq!("xml".parse::<OutputFormat>(), Err(StageError::UnknownFormat("xml".into())));
    }

    #[test]
    fn chain_rules() {
        let data = bundled_records();
        assert_eq!(run_chain(&[], data.clone()).unwrap(), Document::Records(data.clone()));
        let bad = [
            StageSpec::new(StageKind::Format, json!({"output": "csv"})),
            StageSpec::new(StageKind::Filter, json!({"field": "year", "value": 1933})),
        ];
        assert!(matches!(run_chain(&bad, data.clone()), Err(StageError::Chain(_))));
        let unknown = [StageSpec::new(StageKind::Filter, json!({"field": "year"}))];
        assert!(matches!(run_chain(&unknown, data), Err(StageError::Params { .. })));
    }
}
