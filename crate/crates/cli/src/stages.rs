//! One function per subcommand. Each takes its gateway and runner from the
//! caller so the self-test can drive them with scripted replies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use cyclebench::analysis::{
    analyze_records, complexity_report, spectrum, variation_stats, write_plot_data, ComplexityReport, Spectrum,
    VariationStats,
};
use cyclebench::evaluation::{compute_leaderboard, judge_answer, solve_task, EvalRecord};
use cyclebench::llm::provider::HttpProvider;
use cyclebench::llm::{Gateway, GatewayError, MockScript, Role, Stage};
use cyclebench::llm::ledger::StageSummary;
use cyclebench::pipeline::{
    expand_seeds, generate_seeds, load_manifest, parallel_map, remap_tasks, CorpusManifest, Generator, ManifestRow,
    PipelineError,
};
use cyclebench::runtime::{RuleExecutor, RunnerPool};
use cyclebench::task::{Protocol, TaskInstance};
use cyclebench::verification::{recheck_task, RunnerCrashed, TaskCheck};

use crate::config::{ProviderKind, RunConfig};
use crate::store::{self, RunDir, MANIFEST_FILE, MAPS_FILE};
use crate::CliError;

/// Whether a stage stopped early on the call budget or an interrupt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Outcome {
    pub incomplete: bool,
}

pub fn build_gateway(config: &RunConfig, cancel: Arc<AtomicBool>) -> Result<Gateway, CliError> {
    let p = &config.provider;
    let gateway = match p.kind {
        ProviderKind::Mock => {
            let path = p
                .mock_script
                .as_ref()
                .ok_or_else(|| CliError::Config("provider.kind = \"mock\" needs provider.mock_script".into()))?;
            let script = MockScript::load(path).map_err(CliError::Config)?;
            Gateway::mock(script, config.pricing.clone())
        }
        ProviderKind::Http => {
            let key = std::env::var(&p.api_key_env).ok().filter(|k| !k.is_empty());
            let provider = HttpProvider::new(p.base_url.clone(), key, p.timeout());
            Gateway::new(Box::new(provider), config.pricing.clone())
        }
    };
    let mut gateway = gateway
        .with_backoff_base(Duration::from_millis(p.backoff_ms))
        .with_rate_cap(p.rate_per_second)
        .with_cancel(cancel);
    if let Some(n) = config.budget.max_calls {
        gateway = gateway.with_call_budget(n);
    }
    Ok(gateway)
}

pub fn start_pool(config: &RunConfig) -> Result<RunnerPool, CliError> {
    RunnerPool::start(
        config.runner.pool_size.max(1),
        config.runner.limits,
        config.runner.command(),
    )
    .map_err(|e| CliError::Config(format!("rule runner failed to start: {e}")))
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Gateway(g) => gateway_error(g),
        other => CliError::Content(other.to_string()),
    }
}

fn gateway_error(e: GatewayError) -> CliError {
    match e {
        GatewayError::Config(m) => CliError::Config(m),
        other => CliError::Content(other.to_string()),
    }
}

fn crashed(e: RunnerCrashed) -> CliError {
    CliError::Content(e.to_string())
}

fn generator<'a, E: RuleExecutor>(config: &RunConfig, gateway: &'a Gateway, exec: &'a E) -> Generator<'a, E> {
    Generator::new(gateway, exec, config.models.generation()).with_options(config.generation_options())
}

/// Seed generation into `corpus/seeds/`.
pub fn generate<E: RuleExecutor>(config: &RunConfig, run: &RunDir, gateway: &Gateway, exec: &E) -> Result<Outcome, CliError> {
    let plan = config.plan.plan();
    let result = generate_seeds(&generator(config, gateway, exec), &plan);
    store::append_ledger(&run.ledger_file(), gateway.ledger())?;
    let seeds = result.map_err(pipeline_error)?;
    for a in &seeds.attempts {
        let path = run.transcripts().join("seeds").join(format!("{}.json", a.request.key));
        store::write_json(&path, &a.record())?;
    }
    let rows = seeds.seeds.iter().map(ManifestRow::of_task).collect();
    let manifest = CorpusManifest::new(plan, rows, seeds.incomplete);
    store::write_tasks(&run.seeds(), &seeds.seeds, Some(&manifest))?;
    println!(
        "generate: {} seed(s) accepted from {} attempt(s)",
        seeds.seeds.len(),
        seeds.attempts.len()
    );
    Ok(Outcome {
        incomplete: seeds.incomplete,
    })
}

fn read_manifest(dir: &Path) -> Result<Option<CorpusManifest>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    load_manifest(&path)
        .map(Some)
        .map_err(|e| CliError::Content(e.to_string()))
}

/// Expands every seed in `corpus/seeds/` into `corpus/p0/`.
pub fn expand<E: RuleExecutor>(config: &RunConfig, run: &RunDir, gateway: &Gateway, exec: &E) -> Result<Outcome, CliError> {
    let seeds = store::load_tasks(&run.seeds())?;
    let seed_manifest = read_manifest(&run.seeds())?;
    let result = expand_seeds(&generator(config, gateway, exec), &seeds);
    store::append_ledger(&run.ledger_file(), gateway.ledger())?;
    let expanded = result.map_err(pipeline_error)?;
    for e in &expanded.expansions {
        let path = run.transcripts().join("expansions").join(format!("{}.json", e.seed.task_id));
        store::write_json(&path, &e.record())?;
    }
    let (plan, seeds_incomplete) = match seed_manifest {
        Some(m) => (m.plan, m.incomplete),
        None => (config.plan.plan(), false),
    };
    let incomplete = seeds_incomplete || expanded.incomplete;
    let rows = expanded.tasks.iter().map(ManifestRow::of_task).collect();
    let manifest = CorpusManifest::new(plan, rows, incomplete);
    store::write_tasks(&run.p0(), &expanded.tasks, Some(&manifest))?;
    println!(
        "expand: {} seed(s) -> {} P0 task(s)",
        seeds.len(),
        expanded.tasks.len()
    );
    Ok(Outcome { incomplete })
}

/// Writes one P1 task per symbolic P0 task in `corpus` to `out`, with the
/// symbol maps and a manifest covering P0 and P1 together.
pub fn remap<E: RuleExecutor>(config: &RunConfig, corpus: &Path, out: &Path, exec: &E) -> Result<Outcome, CliError> {
    let p0: Vec<TaskInstance> = store::load_tasks(corpus)?
        .into_iter()
        .filter(|t| t.protocol == Protocol::P0)
        .collect();
    let source = if corpus.is_dir() { read_manifest(corpus)? } else { None };
    let (p1, maps) = remap_tasks(&p0, config.seed, exec).map_err(crashed)?;
    let (plan, incomplete) = match source {
        Some(m) => (m.plan, m.incomplete),
        None => (config.plan.plan(), false),
    };
    let rows = p0.iter().chain(&p1).map(ManifestRow::of_task).collect();
    let manifest = CorpusManifest::new(plan, rows, incomplete);
    store::write_tasks(out, &p1, Some(&manifest))?;
    store::write_maps(&out.join(MAPS_FILE), &maps)?;
    let noncommuting = p1.iter().filter(|t| t.phi_commutes == Some(false)).count();
    println!(
        "remap: {} symbolic P0 task(s) -> {} P1 task(s), {} map(s) not commuting with the rule",
        manifest.counts.symbolic.total(),
        p1.len(),
        noncommuting
    );
    Ok(Outcome { incomplete })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub all_pass: bool,
    pub tasks: usize,
    pub passed: usize,
    pub failures: Vec<TaskCheck>,
}

/// Re-derives every stored output and re-runs the cycle check.
pub fn verify<E: RuleExecutor>(corpus: &Path, exec: &E, width: usize) -> Result<VerifyReport, CliError> {
    let tasks = store::load_tasks(corpus)?;
    let maps: HashMap<String, _> = store::load_maps(corpus)?
        .into_iter()
        .map(|m| (m.map_id.clone(), m))
        .collect();
    let checks = parallel_map(&tasks, width.max(1), |t| {
        let map = t.symbol_map_id.as_ref().and_then(|id| maps.get(id));
        recheck_task(t, map, exec)
    });
    let mut report = VerifyReport {
        all_pass: true,
        tasks: tasks.len(),
        passed: 0,
        failures: Vec::new(),
    };
    for check in checks {
        let check = check.map_err(crashed)?;
        if check.passed {
            report.passed += 1;
        } else {
            report.all_pass = false;
            report.failures.push(check);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct RecordsManifest {
    incomplete: bool,
    tasks: usize,
    records: BTreeMap<String, usize>,
}

/// Solves and judges every (solver, task) pair that has no record yet.
/// Records are appended per solver, so an interrupted run resumes.
pub fn evaluate(config: &RunConfig, run: &RunDir, corpus: &Path, gateway: &Gateway) -> Result<Outcome, CliError> {
    let solvers = config.models.solvers();
    if solvers.is_empty() {
        return Err(CliError::Config("models.solvers lists no models to evaluate".into()));
    }
    let judge = config.models.role(Role::JudgeAnswer);
    let tasks = store::load_tasks(corpus)?;
    let mut jobs = Vec::new();
    let mut counts = BTreeMap::new();
    for (si, solver) in solvers.iter().enumerate() {
        let existing = store::load_records(&run.records_file(&solver.model_name))?;
        let done: HashSet<&str> = existing.iter().map(|r| r.task_id.as_str()).collect();
        jobs.extend(
            tasks
                .iter()
                .filter(|t| !done.contains(t.task_id.as_str()))
                .map(|t| (si, t)),
        );
        counts.insert(solver.model_name.clone(), existing.len());
    }
    let width = if gateway.sequential() { 1 } else { config.evaluation.width.max(1) };
    let results = parallel_map(&jobs, width, |&(si, task)| {
        let mut record = solve_task(gateway, &solvers[si], task)?;
        judge_answer(gateway, &judge, task, &mut record)?;
        Ok(record)
    });
    let mut incomplete = false;
    let mut fresh: Vec<Vec<EvalRecord>> = vec![Vec::new(); solvers.len()];
    let mut config_error = None;
    for (&(si, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(r) => fresh[si].push(r),
            Err(GatewayError::BudgetExhausted) => incomplete = true,
            Err(e) => config_error = Some(e),
        }
    }
    for (solver, records) in solvers.iter().zip(&fresh) {
        let path = run.records_file(&solver.model_name);
        if !records.is_empty() {
            std::fs::create_dir_all(run.records()).map_err(|e| CliError::io(&run.records(), e))?;
            cyclebench::evaluation::append_records(&path, records).map_err(|e| CliError::io(&path, e))?;
        }
        *counts.entry(solver.model_name.clone()).or_default() += records.len();
    }
    store::append_ledger(&run.ledger_file(), gateway.ledger())?;
    if let Some(e) = config_error {
        return Err(gateway_error(e));
    }
    let written: usize = fresh.iter().map(Vec::len).sum();
    store::write_json(
        &run.records().join(MANIFEST_FILE),
        &RecordsManifest {
            incomplete,
            tasks: tasks.len(),
            records: counts,
        },
    )?;
    println!("evaluate: {written} new record(s) over {} solver(s)", solvers.len());
    Ok(Outcome { incomplete })
}

fn all_records(run: &RunDir) -> Result<Vec<EvalRecord>, CliError> {
    let mut out = Vec::new();
    for f in store::record_files(run)? {
        out.extend(store::load_records(&f)?);
    }
    Ok(out)
}

/// Analyst labels, per-variation statistics, the outcome spectrum and the
/// rule complexity table.
pub fn analyze<E: RuleExecutor>(
    config: &RunConfig,
    run: &RunDir,
    corpus: &Path,
    gateway: &Gateway,
    exec: &E,
) -> Result<Outcome, CliError> {
    let tasks = store::load_tasks(corpus)?;
    let analyst = config.models.role(Role::Analyst);
    let width = config.evaluation.width;
    let mut incomplete = false;
    let mut labelled = 0;
    let mut failure = None;
    for file in store::record_files(run)? {
        let mut records = store::load_records(&file)?;
        match analyze_records(gateway, &analyst, &tasks, &mut records, width) {
            Ok(n) => labelled += n,
            Err(GatewayError::BudgetExhausted) => incomplete = true,
            Err(e) => failure = Some(e),
        }
        store::rewrite_records(&file, &records)?;
        if incomplete || failure.is_some() {
            break;
        }
    }
    store::append_ledger(&run.ledger_file(), gateway.ledger())?;
    if let Some(e) = failure {
        return Err(gateway_error(e));
    }

    let records = all_records(run)?;
    let stats: Vec<VariationStats> =
        variation_stats(&records, &tasks, config.analysis).map_err(|e| CliError::Content(e.to_string()))?;
    let reports = run.reports();
    store::write_json(&reports.join("variation.json"), &stats)?;
    let mut plot = Vec::new();
    write_plot_data(&stats, &mut plot).map_err(|e| CliError::Content(e.to_string()))?;
    store::write_text(&reports.join("plot_data.csv"), &String::from_utf8_lossy(&plot))?;
    let spectra: BTreeMap<String, Spectrum> = spectrum(&records);
    store::write_json(&reports.join("spectrum.json"), &spectra)?;
    let complexity: ComplexityReport = complexity_report(&tasks, exec);
    store::write_json(&reports.join("complexity.json"), &complexity)?;
    let mut table = Vec::new();
    complexity
        .write_table(&mut table, b'\t')
        .map_err(|e| CliError::Content(e.to_string()))?;
    store::write_text(&reports.join("complexity.tsv"), &String::from_utf8_lossy(&table))?;
    println!(
        "analyze: {labelled} label(s) added; {} record(s), {} rule(s) in the complexity table",
        records.len(),
        complexity.rows.iter().map(|r| r.rules).sum::<usize>()
    );
    Ok(Outcome { incomplete })
}

#[derive(Debug, Clone, Serialize)]
struct CostSummary {
    total: String,
    per_task: String,
    tasks: usize,
    stages: Vec<StageSummary>,
}

/// Leaderboard and cost tables under `reports/`.
pub fn report(config: &RunConfig, run: &RunDir, corpus: &Path) -> Result<String, CliError> {
    let tasks = store::load_tasks(corpus)?;
    let records = all_records(run)?;
    let board = compute_leaderboard(&records, &tasks, config.leaderboard_options())
        .map_err(|e| CliError::Content(e.to_string()))?;
    let reports = run.reports();
    let mut tsv = Vec::new();
    board
        .write_table(&mut tsv, b'\t')
        .map_err(|e| CliError::Content(e.to_string()))?;
    store::write_text(&reports.join("leaderboard.tsv"), &String::from_utf8_lossy(&tsv))?;
    let text = board.render();
    store::write_text(&reports.join("leaderboard.txt"), &text)?;

    let ledger = store::load_ledger(&run.ledger_file())?;
    let mut costs = Vec::new();
    ledger
        .write_table(&mut costs)
        .map_err(|e| CliError::Content(e.to_string()))?;
    store::write_text(&reports.join("costs.tsv"), &String::from_utf8_lossy(&costs))?;
    let summary = CostSummary {
        total: ledger.total().display(4),
        per_task: ledger.average_over(tasks.len()).display(4),
        tasks: tasks.len(),
        stages: [Stage::Seed, Stage::Expansion, Stage::Evaluation, Stage::Analysis]
            .into_iter()
            .map(|s| ledger.stage_summary(s))
            .collect(),
    };
    store::write_json(&reports.join("costs.json"), &summary)?;
    Ok(format!("{text}\ntotal cost ${} over {} task(s)\n", summary.total, summary.tasks))
}
