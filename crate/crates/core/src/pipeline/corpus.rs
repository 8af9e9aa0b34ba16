use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{derive_seed, expand_seed, generate_seed, parallel_map, ExpansionState, Generator, PipelineError, SeedAttempt, SeedRequest};
use crate::canonical::{to_canonical_pretty, to_canonical_string};
use crate::remap::{alphabet_of, apply_mapping, build_default_mapping, probe_commutation, SymbolMap};
use crate::runtime::RuleExecutor;
use crate::task::{serialize_shard, Domain, Protocol, TaskInstance};
use crate::value::Dimension;
use crate::verification::RunnerCrashed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanCell {
    pub dimension: Dimension,
    pub domain: Domain,
    /// Accepted seeds wanted for this cell.
    pub seeds: usize,
}

fn default_attempts() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPlan {
    pub cells: Vec<PlanCell>,
    /// Seed attempts allowed per wanted seed before a cell gives up.
    #[serde(default = "default_attempts")]
    pub attempts_per_seed: usize,
    /// Add a P1 task for every symbolic P0 task.
    #[serde(default = "yes")]
    pub remap_symbolic: bool,
}

impl CorpusPlan {
    /// `per_cell` seeds for each of the given dimensions and both domains.
    pub fn grid(dimensions: &[Dimension], per_cell: usize) -> Self {
        let cells = [Domain::Symbolic, Domain::Semantic]
            .into_iter()
            .flat_map(|domain| {
                dimensions.iter().map(move |&dimension| PlanCell {
                    dimension,
                    domain,
                    seeds: per_cell,
                })
            })
            .collect();
        CorpusPlan {
            cells,
            attempts_per_seed: default_attempts(),
            remap_symbolic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub task_id: String,
    pub dimension: Dimension,
    pub domain: Domain,
    pub variation_index: u8,
    pub protocol: Protocol,
    pub author_model: String,
    pub lineage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_map_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_commutes: Option<bool>,
}

impl ManifestRow {
    pub fn of_task(t: &TaskInstance) -> Self {
        ManifestRow {
            task_id: t.task_id.clone(),
            dimension: t.dimension,
            domain: t.domain,
            variation_index: t.variation_index,
            protocol: t.protocol,
            author_model: t.author_model.clone(),
            lineage: t.lineage.clone(),
            symbol_map_id: t.symbol_map_id.clone(),
            phi_commutes: t.phi_commutes,
        }
    }
}

/// Task counts per dimension for one domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    #[serde(rename = "1D")]
    pub d1: usize,
    #[serde(rename = "2D")]
    pub d2: usize,
    #[serde(rename = "3D")]
    pub d3: usize,
}

impl CellCounts {
    pub fn total(&self) -> usize {
        self.d1 + self.d2 + self.d3
    }

    pub fn get(&self, dim: Dimension) -> usize {
        match dim {
            Dimension::D1 => self.d1,
            Dimension::D2 => self.d2,
            Dimension::D3 => self.d3,
            Dimension::Scalar => 0,
        }
    }

    fn bump(&mut self, dim: Dimension) {
        match dim {
            Dimension::D1 => self.d1 += 1,
            Dimension::D2 => self.d2 += 1,
            Dimension::D3 => self.d3 += 1,
            Dimension::Scalar => {}
        }
    }
}

impl std::ops::Add for CellCounts {
    type Output = CellCounts;
    fn add(self, o: CellCounts) -> CellCounts {
        CellCounts {
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
            d3: self.d3 + o.d3,
        }
    }
}

/// P0 tasks by domain and dimension, plus protocol totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub symbolic: CellCounts,
    pub semantic: CellCounts,
    pub seeds: usize,
    pub variations: usize,
    pub p0: usize,
    pub p1: usize,
    pub total: usize,
}

impl CorpusCounts {
    pub fn domain(&self, domain: Domain) -> CellCounts {
        match domain {
            Domain::Symbolic => self.symbolic,
            Domain::Semantic => self.semantic,
        }
    }

    pub fn column_totals(&self) -> CellCounts {
        self.symbolic + self.semantic
    }
}

pub fn corpus_counts(rows: &[ManifestRow]) -> CorpusCounts {
    let mut c = CorpusCounts::default();
    for r in rows {
        match r.protocol {
            Protocol::P1 => c.p1 += 1,
            Protocol::P0 => {
                c.p0 += 1;
                match r.domain {
                    Domain::Symbolic => c.symbolic.bump(r.dimension),
                    Domain::Semantic => c.semantic.bump(r.dimension),
                }
                if r.variation_index == 0 {
                    c.seeds += 1;
                } else {
                    c.variations += 1;
                }
            }
        }
    }
    c.total = c.p0 + c.p1;
    c
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    /// Set when the call budget ran out before the plan was met.
    pub incomplete: bool,
    pub plan: CorpusPlan,
    pub counts: CorpusCounts,
    pub rows: Vec<ManifestRow>,
}

impl CorpusManifest {
    pub fn new(plan: CorpusPlan, rows: Vec<ManifestRow>, incomplete: bool) -> Self {
        CorpusManifest {
            incomplete,
            counts: corpus_counts(&rows),
            plan,
            rows,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("stored counts {stored:?} disagree with rows {computed:?}")]
    CountsMismatch { stored: Box<CorpusCounts>, computed: Box<CorpusCounts> },
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("P1 task {task} has lineage {lineage:?} that is not a symbolic P0 task")]
    BadLineage { task: String, lineage: Option<String> },
}

/// Reads a manifest and checks its counts and lineage against its rows.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, ManifestError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: p.clone(), source })?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: p, source })?;
    let computed = corpus_counts(&manifest.rows);
    if computed != manifest.counts {
        return Err(ManifestError::CountsMismatch {
            stored: Box::new(manifest.counts),
            computed: Box::new(computed),
        });
    }
    let mut ids = HashSet::new();
    let mut symbolic_p0 = HashSet::new();
    for r in &manifest.rows {
        if !ids.insert(r.task_id.as_str()) {
            return Err(ManifestError::DuplicateTask(r.task_id.clone()));
        }
        if r.protocol == Protocol::P0 && r.domain == Domain::Symbolic {
            symbolic_p0.insert(r.task_id.as_str());
        }
    }
    for r in manifest.rows.iter().filter(|r| r.protocol == Protocol::P1) {
        if !r.lineage.as_deref().is_some_and(|l| symbolic_p0.contains(l)) {
            return Err(ManifestError::BadLineage {
                task: r.task_id.clone(),
                lineage: r.lineage.clone(),
            });
        }
    }
    Ok(manifest)
}

/// Result of a corpus run.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    /// P0 tasks (each seed followed by its variations), then P1 tasks.
    pub tasks: Vec<TaskInstance>,
    pub symbol_maps: Vec<SymbolMap>,
    pub seed_attempts: Vec<SeedAttempt>,
    pub expansions: Vec<ExpansionState>,
}

fn io_err(path: &Path, source: io::Error) -> ManifestError {
    ManifestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), ManifestError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

impl Corpus {
    /// Writes `manifest.json`, `tasks.jsonl`, `symbol_maps.jsonl` and the
    /// per-seed transcripts under `transcripts/`.
    pub fn write(&self, dir: &Path) -> Result<(), ManifestError> {
        let seeds_dir = dir.join("transcripts").join("seeds");
        let exp_dir = dir.join("transcripts").join("expansions");
        for d in [&seeds_dir, &exp_dir] {
            fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
        }
        write_file(&dir.join("manifest.json"), &(to_canonical_pretty(&self.manifest) + "\n"))?;
        write_file(&dir.join("tasks.jsonl"), &serialize_shard(&self.tasks))?;
        let maps: String = self
            .symbol_maps
            .iter()
            .map(|m| to_canonical_string(m) + "\n")
            .collect();
        write_file(&dir.join("symbol_maps.jsonl"), &maps)?;
        for a in &self.seed_attempts {
            let path = seeds_dir.join(format!("{}.json", a.request.key));
            write_file(&path, &(to_canonical_pretty(&a.record()) + "\n"))?;
        }
        for e in &self.expansions {
            let path = exp_dir.join(format!("{}.json", e.seed.task_id));
            write_file(&path, &(to_canonical_pretty(&e.record()) + "\n"))?;
        }
        Ok(())
    }
}

fn cell_key(cell: &PlanCell, n: usize) -> String {
    let domain = match cell.domain {
        Domain::Symbolic => "sym",
        Domain::Semantic => "sem",
    };
    format!("{}-{domain}-{n:03}", cell.dimension.label().to_lowercase())
}

/// Accepted seeds and every attempt made for them.
#[derive(Debug, Clone)]
pub struct SeedRun {
    /// Accepted seeds in plan-cell order.
    pub seeds: Vec<TaskInstance>,
    pub attempts: Vec<SeedAttempt>,
    pub incomplete: bool,
}

/// Runs seed generation until every cell of the plan has its seeds or its
/// attempts are used up. Budget exhaustion stops the run and sets
/// `incomplete`.
pub fn generate_seeds<E: RuleExecutor>(gen: &Generator<'_, E>, plan: &CorpusPlan) -> Result<SeedRun, PipelineError> {
    let width = gen.width();
    let mut incomplete = false;
    let mut accepted: BTreeMap<usize, Vec<TaskInstance>> = BTreeMap::new();
    let mut attempts_made = vec![0usize; plan.cells.len()];
    let mut seed_attempts = Vec::new();

    loop {
        let mut requests = Vec::new();
        for (ci, cell) in plan.cells.iter().enumerate() {
            let have = accepted.get(&ci).map_or(0, Vec::len);
            let left = (cell.seeds * plan.attempts_per_seed).saturating_sub(attempts_made[ci]);
            let want = cell.seeds.saturating_sub(have).min(left);
            for _ in 0..want {
                let req = SeedRequest {
                    key: cell_key(cell, attempts_made[ci]),
                    dimension: cell.dimension,
                    domain: cell.domain,
                };
                attempts_made[ci] += 1;
                requests.push((ci, req));
            }
        }
        if requests.is_empty() || incomplete {
            break;
        }
        let results = parallel_map(&requests, width, |(_, req)| generate_seed(gen, req.clone()));
        for ((ci, _), result) in requests.iter().zip(results) {
            match result {
                Ok(a) => {
                    if let Some(t) = a.accepted() {
                        accepted.entry(*ci).or_default().push(t.clone());
                    }
                    seed_attempts.push(a);
                }
                Err(e) if e.is_budget() => incomplete = true,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(SeedRun {
        seeds: accepted.into_values().flatten().collect(),
        attempts: seed_attempts,
        incomplete,
    })
}

/// P0 tasks from expanding seeds: each seed followed by its variations.
#[derive(Debug, Clone)]
pub struct ExpansionRun {
    pub tasks: Vec<TaskInstance>,
    pub expansions: Vec<ExpansionState>,
    pub incomplete: bool,
}

pub fn expand_seeds<E: RuleExecutor>(gen: &Generator<'_, E>, seeds: &[TaskInstance]) -> Result<ExpansionRun, PipelineError> {
    let results = parallel_map(seeds, gen.width(), |s| expand_seed(gen, s));
    let mut run = ExpansionRun {
        tasks: Vec::new(),
        expansions: Vec::new(),
        incomplete: false,
    };
    for (seed, result) in seeds.iter().zip(results) {
        run.tasks.push(seed.clone());
        match result {
            Ok(state) => {
                run.tasks.extend(state.produced.iter().cloned());
                run.expansions.push(state);
            }
            Err(e) if e.is_budget() => run.incomplete = true,
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}

/// One P1 task and its symbol map per symbolic task in `p0`. Maps are
/// seeded from `run_seed` and the source task id.
pub fn remap_tasks<E: RuleExecutor>(
    p0: &[TaskInstance],
    run_seed: u64,
    exec: &E,
) -> Result<(Vec<TaskInstance>, Vec<SymbolMap>), RunnerCrashed> {
    let mut p1 = Vec::new();
    let mut symbol_maps = Vec::new();
    for task in p0.iter().filter(|t| t.domain == Domain::Symbolic && t.protocol == Protocol::P0) {
        let map = build_default_mapping(&alphabet_of(task), derive_seed(run_seed, &task.task_id))
            .expect("default targets always cover the alphabet");
        let mut remapped = apply_mapping(task, &map).expect("alphabet taken from the task");
        remapped.phi_commutes = probe_commutation(task, &map, exec)?;
        p1.push(remapped);
        symbol_maps.push(map);
    }
    Ok((p1, symbol_maps))
}

/// Seed generation, expansion and remapping in one go. Expansion is skipped
/// once the budget has run out.
pub fn build_corpus<E: RuleExecutor>(gen: &Generator<'_, E>, plan: &CorpusPlan) -> Result<Corpus, PipelineError> {
    let seeds = generate_seeds(gen, plan)?;
    let mut incomplete = seeds.incomplete;
    let (p0, expansions) = if incomplete {
        (seeds.seeds, Vec::new())
    } else {
        let run = expand_seeds(gen, &seeds.seeds)?;
        incomplete = run.incomplete;
        (run.tasks, run.expansions)
    };
    let (p1, symbol_maps) = if plan.remap_symbolic {
        remap_tasks(&p0, gen.options.seed, gen.exec)?
    } else {
        (Vec::new(), Vec::new())
    };
    let tasks: Vec<TaskInstance> = p0.into_iter().chain(p1).collect();
    let rows = tasks.iter().map(ManifestRow::of_task).collect();
    Ok(Corpus {
        manifest: CorpusManifest::new(plan.clone(), rows, incomplete),
        tasks,
        symbol_maps,
        seed_attempts: seeds.attempts,
        expansions,
    })
}
