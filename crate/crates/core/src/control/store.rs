//! On-disk records: append-only JSON-lines indexes where the last line for
//! an id wins, plus one directory per run for its artifacts.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::{PatternSelection, ReadinessReport, ResourceId};
use crate::workload::{WorkloadProfile, WorkloadReport};

pub trait Keyed {
    fn key(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSetRecord {
    pub id: String,
    pub created_at_unix_ms: u64,
    pub document_count: usize,
    pub services: Vec<String>,
    pub warnings: Vec<String>,
    pub deployed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionStatus {
    Active,
    NotReady,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub id: String,
    pub manifest_set_id: String,
    pub selection: PatternSelection,
    pub status: InjectionStatus,
    pub created_at_unix_ms: u64,
    pub created: Vec<ResourceId>,
    pub readiness: Option<ReadinessReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Created,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub outcomes_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub series_json: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// `baseline` or the injected pattern name.
    pub pattern: String,
    pub injection_id: Option<String>,
    pub pattern_selection: Option<PatternSelection>,
    pub workload_profile: WorkloadProfile,
    pub started_at_unix_ms: Option<u64>,
    pub ended_at_unix_ms: Option<u64>,
    pub status: RunStatus,
    pub artifacts: ArtifactPaths,
    pub summary: Option<WorkloadReport>,
    pub error: Option<String>,
}

impl Keyed for ManifestSetRecord {
    fn key(&self) -> &str {
        &self.id
    }
}
impl Keyed for InjectionRecord {
    fn key(&self) -> &str {
        &self.id
    }
}
impl Keyed for RunRecord {
    fn key(&self) -> &str {
        &self.run_id
    }
}

/// Records in first-seen order, each at its latest state.
fn load_jsonl<T: DeserializeOwned + Keyed>(path: &Path) -> std::io::Result<Vec<T>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out: Vec<T> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        match out.iter_mut().find(|r| r.key() == rec.key()) {
            Some(slot) => *slot = rec,
            None => out.push(rec),
        }
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, rec: &T) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()
}

fn next_number(ids: impl Iterator<Item = String>, prefix: &str) -> u64 {
    ids.filter_map(|id| id.strip_prefix(prefix)?.parse::<u64>().ok())
        .max()
        .map_or(1, |n| n + 1)
}

fn upsert<T: Keyed + Clone>(list: &mut Vec<T>, rec: &T) {
    match list.iter_mut().find(|r| r.key() == rec.key()) {
        Some(slot) => *slot = rec.clone(),
        None => list.push(rec.clone()),
    }
}

struct State {
    manifest_sets: Vec<ManifestSetRecord>,
    injections: Vec<InjectionRecord>,
    runs: Vec<RunRecord>,
    next_set: u64,
    next_injection: u64,
    next_run: u64,
}

pub struct Store {
    dir: PathBuf,
    state: Mutex<State>,
}

const SETS_INDEX: &str = "manifest-sets.jsonl";
const INJECTIONS_INDEX: &str = "injections.jsonl";
const RUNS_INDEX: &str = "runs.jsonl";

impl Store {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir.join("manifest-sets"))?;
        fs::create_dir_all(dir.join("runs"))?;
        let manifest_sets: Vec<ManifestSetRecord> = load_jsonl(&dir.join(SETS_INDEX))?;
        let injections: Vec<InjectionRecord> = load_jsonl(&dir.join(INJECTIONS_INDEX))?;
        let runs: Vec<RunRecord> = load_jsonl(&dir.join(RUNS_INDEX))?;
        let state = State {
            next_set: next_number(manifest_sets.iter().map(|r| r.id.clone()), "ms-"),
            next_injection: next_number(injections.iter().map(|r| r.id.clone()), "inj-"),
            next_run: next_number(runs.iter().map(|r| r.run_id.clone()), "run-"),
            manifest_sets,
            injections,
            runs,
        };
        Ok(Store {
            dir: dir.to_path_buf(),
            state: Mutex::new(state),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.dir.join("manifest-sets").join(format!("{id}.yaml"))
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.dir.join("runs").join(run_id)
    }

    pub fn allocate_manifest_set(&self) -> String {
        let mut st = self.state.lock();
        let id = format!("ms-{}", st.next_set);
        st.next_set += 1;
        id
    }

    pub fn allocate_injection(&self) -> String {
        let mut st = self.state.lock();
        let id = format!("inj-{}", st.next_injection);
        st.next_injection += 1;
        id
    }

    pub fn allocate_run(&self) -> std::io::Result<String> {
        let id = {
            let mut st = self.state.lock();
            let id = format!("run-{}", st.next_run);
            st.next_run += 1;
            id
        };
        fs::create_dir_all(self.run_dir(&id))?;
        Ok(id)
    }

    pub fn artifact_paths(&self, run_id: &str) -> ArtifactPaths {
        let d = self.run_dir(run_id);
        ArtifactPaths {
            outcomes_csv: d.join("outcomes.csv"),
            metrics_csv: d.join("metrics.csv"),
            series_json: d.join("series.json"),
        }
    }

    pub fn save_manifest_set(&self, rec: &ManifestSetRecord, text: Option<&str>) -> std::io::Result<()> {
        if let Some(text) = text {
            fs::write(self.manifest_path(&rec.id), text)?;
        }
        let mut st = self.state.lock();
        append_jsonl(&self.dir.join(SETS_INDEX), rec)?;
        upsert(&mut st.manifest_sets, rec);
        Ok(())
    }

    pub fn save_injection(&self, rec: &InjectionRecord) -> std::io::Result<()> {
        let mut st = self.state.lock();
        append_jsonl(&self.dir.join(INJECTIONS_INDEX), rec)?;
        upsert(&mut st.injections, rec);
        Ok(())
    }

    pub fn save_run(&self, rec: &RunRecord) -> std::io::Result<()> {
        let mut st = self.state.lock();
        append_jsonl(&self.dir.join(RUNS_INDEX), rec)?;
        upsert(&mut st.runs, rec);
        Ok(())
    }

    pub fn manifest_set(&self, id: &str) -> Option<ManifestSetRecord> {
        self.state.lock().manifest_sets.iter().find(|r| r.id == id).cloned()
    }

    pub fn manifest_sets(&self) -> Vec<ManifestSetRecord> {
        self.state.lock().manifest_sets.clone()
    }

    pub fn injection(&self, id: &str) -> Option<InjectionRecord> {
        self.state.lock().injections.iter().find(|r| r.id == id).cloned()
    }

    pub fn injections(&self) -> Vec<InjectionRecord> {
        self.state.lock().injections.clone()
    }

    pub fn run(&self, id: &str) -> Option<RunRecord> {
        self.state.lock().runs.iter().find(|r| r.run_id == id).cloned()
    }

    pub fn runs(&self) -> Vec<RunRecord> {
        self.state.lock().runs.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::ProfileName;
    use url::Url;

    fn run(store: &Store, id: &str, status: RunStatus) -> RunRecord {
        RunRecord {
            run_id: id.into(),
            pattern: "baseline".into(),
            injection_id: None,
            pattern_selection: None,
            workload_profile: WorkloadProfile::named(ProfileName::Low, 5, vec![Url::parse("http://x/").unwrap()]).unwrap(),
            started_at_unix_ms: Some(1),
            ended_at_unix_ms: None,
            status,
            artifacts: store.artifact_paths(id),
            summary: None,
            error: None,
        }
    }

    #[test]
    fn reload_yields_latest_records_and_fresh_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let a = store.allocate_run().unwrap();
        let b = store.allocate_run().unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("run-1", "run-2"));
        store.save_run(&run(&store, &a, RunStatus::Created)).unwrap();
        store.save_run(&run(&store, &b, RunStatus::Running)).unwrap();
        store.save_run(&run(&store, &a, RunStatus::Done)).unwrap();
        let before = store.runs();
        drop(store);

        let again = Store::open(dir.path()).unwrap();
        assert_eq!(again.runs(), before);
        assert_eq!(again.run("run-1").unwrap().status, RunStatus::Done);
        assert_eq!(again.allocate_run().unwrap(), "run-3");
        assert_ne!(again.run_dir("run-1"), again.run_dir("run-2"));
    }
}
