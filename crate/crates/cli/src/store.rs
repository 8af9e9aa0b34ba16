//! Reading and writing run-directory artifacts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use cyclebench::canonical::to_canonical_pretty;
use cyclebench::evaluation::{read_records, EvalRecord};
use cyclebench::llm::ledger::CallRecord;
use cyclebench::llm::CostLedger;
use cyclebench::pipeline::CorpusManifest;
use cyclebench::remap::SymbolMap;
use cyclebench::task::{parse_shard, serialize_shard, serialize_task, TaskInstance};

use crate::CliError;

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MAPS_FILE: &str = "symbol_maps.jsonl";

/// Fixed locations inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn seeds(&self) -> PathBuf {
        self.corpus().join("seeds")
    }

    pub fn p0(&self) -> PathBuf {
        self.corpus().join("p0")
    }

    pub fn p1(&self) -> PathBuf {
        self.corpus().join("p1")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn records(&self) -> PathBuf {
        self.root.join("records")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn ledger_file(&self) -> PathBuf {
        self.root.join("ledger").join("calls.jsonl")
    }

    pub fn records_file(&self, solver: &str) -> PathBuf {
        let name: String = solver
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
            .collect();
        self.records().join(format!("{name}.jsonl"))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &(to_canonical_pretty(value) + "\n"))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes a task directory: the ordered shard, one file per task named by
/// its id, and the manifest when given.
pub fn write_tasks(dir: &Path, tasks: &[TaskInstance], manifest: Option<&CorpusManifest>) -> Result<(), CliError> {
    write_text(&dir.join(TASKS_FILE), &serialize_shard(tasks))?;
    for t in tasks {
        write_text(&dir.join("tasks").join(format!("{}.json", t.task_id)), &(serialize_task(t) + "\n"))?;
    }
    if let Some(m) = manifest {
        write_json(&dir.join(MANIFEST_FILE), m)?;
    }
    Ok(())
}

fn read_shard(path: &Path) -> Result<Vec<TaskInstance>, CliError> {
    parse_shard(&read_text(path)?).map_err(|e| CliError::Content(format!("{}: {e}", path.display())))
}

/// Tasks from a shard file, a task directory, or a corpus directory with
/// `p0/` and `p1/` (or only `seeds/`) below it.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskInstance>, CliError> {
    if path.is_file() {
        return read_shard(path);
    }
    if path.join(TASKS_FILE).is_file() {
        return read_shard(&path.join(TASKS_FILE));
    }
    let mut tasks = Vec::new();
    let mut found = false;
    for sub in ["p0", "p1"] {
        let shard = path.join(sub).join(TASKS_FILE);
        if shard.is_file() {
            tasks.extend(read_shard(&shard)?);
            found = true;
        }
    }
    if !found && path.join("seeds").join(TASKS_FILE).is_file() {
        return read_shard(&path.join("seeds").join(TASKS_FILE));
    }
    if !found {
        return Err(CliError::Content(format!("no tasks found at {}", path.display())));
    }
    Ok(tasks)
}

/// Symbol maps stored next to a corpus: in the directory itself, in its
/// `p1/`, or beside a shard file.
pub fn load_maps(path: &Path) -> Result<Vec<SymbolMap>, CliError> {
    let candidates = if path.is_file() {
        vec![path.with_file_name(MAPS_FILE)]
    } else {
        vec![path.join(MAPS_FILE), path.join("p1").join(MAPS_FILE)]
    };
    let mut maps = Vec::new();
    for c in candidates.into_iter().filter(|c| c.is_file()) {
        for (n, line) in read_text(&c)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let map = serde_json::from_str(line)
                .map_err(|e| CliError::Content(format!("{}:{}: {e}", c.display(), n + 1)))?;
            maps.push(map);
        }
    }
    Ok(maps)
}

pub fn write_maps(path: &Path, maps: &[SymbolMap]) -> Result<(), CliError> {
    let text: String = maps
        .iter()
        .map(|m| cyclebench::canonical::to_canonical_string(m) + "\n")
        .collect();
    write_text(path, &text)
}

/// Record shards under `records/`, sorted by file name.
pub fn record_files(run: &RunDir) -> Result<Vec<PathBuf>, CliError> {
    let dir = run.records();
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_records(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_records(path).map_err(|e| CliError::io(path, e))
}

pub fn rewrite_records(path: &Path, records: &[EvalRecord]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Content(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_ledger(path: &Path) -> Result<CostLedger, CliError> {
    if !path.exists() {
        return Ok(CostLedger::new());
    }
    CostLedger::read_jsonl(&read_text(path)?).map_err(|e| CliError::Content(format!("{}: {e}", path.display())))
}

/// Appends the calls made in this process, numbered after those already
/// in the ledger file.
pub fn append_ledger(path: &Path, ledger: &CostLedger) -> Result<(), CliError> {
    let existing = load_ledger(path)?.records();
    let offset = existing.len() as u64;
    let records: Vec<CallRecord> = existing
        .into_iter()
        .chain(ledger.records().into_iter().map(|mut r| {
            r.seq += offset;
            r
        }))
        .collect();
    let mut out = Vec::new();
    CostLedger::from_records(records)
        .write_jsonl(&mut out)
        .map_err(|e| CliError::io(path, e))?;
    write_text(path, &String::from_utf8(out).expect("ledger lines are utf-8"))
}

/// SHA-256 over every file below `root`: relative path, length and bytes,
/// in path order.
pub fn tree_digest(root: &Path) -> io::Result<String> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(io::Error::other)?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("below root");
            let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            files.push((rel.join("/"), entry.path().to_path_buf()));
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path)?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
