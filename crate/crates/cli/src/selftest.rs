//! Offline end-to-end run: scripted models, the real rule runner.

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;

use cyclebench::evaluation::AnswerVerdict;
use cyclebench::llm::ledger::ModelPrice;
use cyclebench::llm::{Gateway, MockScript, Role, ScriptEntry};
use cyclebench::offline::selftest_script;
use cyclebench::runtime::RunnerPool;
use cyclebench::task::{Protocol, TaskInstance};
use cyclebench::value::Value;

use crate::config::{ProviderKind, RunConfig};
use crate::stages;
use crate::store::{self, RunDir};
use crate::CliError;

const SOLVERS: [&str; 2] = ["mock-solver-a", "mock-solver-b"];

#[derive(Debug, Clone, Serialize)]
pub struct SelftestSummary {
    pub seeds: usize,
    pub p0: usize,
    pub p1: usize,
    pub records: usize,
    pub all_pass: bool,
    pub digest: String,
}

fn selftest_config(base: &RunConfig, seed: u64) -> RunConfig {
    let mut c = base.clone();
    c.run_dir = PathBuf::from(".");
    c.seed = seed;
    c.provider.kind = ProviderKind::Mock;
    c.provider.backoff_ms = 0;
    c.provider.rate_per_second = 0.0;
    c.provider.mock_script = None;
    c.models.default = "mock-author".into();
    c.models.judge_answer = Some("mock-judge".into());
    c.models.analyst = Some("mock-analyst".into());
    c.models.solvers = SOLVERS.map(String::from).to_vec();
    c.budget.max_calls = None;
    let price = |i: &str, o: &str| ModelPrice {
        input_per_mtok: i.parse().expect("decimal"),
        output_per_mtok: o.parse().expect("decimal"),
    };
    c.pricing.models.insert("mock-author".into(), price("2.50", "10.00"));
    c.pricing.models.insert("mock-solver-a".into(), price("1.25", "10.00"));
    c.pricing.models.insert("mock-solver-b".into(), price("0.15", "0.60"));
    c
}

fn mock_gateway(config: &RunConfig, script: MockScript, cancel: &Arc<AtomicBool>) -> Gateway {
    Gateway::mock(script, config.pricing.clone())
        .with_backoff_base(Duration::ZERO)
        .with_cancel(cancel.clone())
}

fn fenced(v: &Value) -> String {
    format!("```json\n{}\n```", json!({ "final_answer": v }))
}

/// Solver replies in evaluation order: mostly right, some wrong, some
/// answers written as text (sent to the judge) and some with no answer.
fn solver_script(tasks: &[TaskInstance]) -> MockScript {
    let mut script = MockScript::default();
    for (si, _) in SOLVERS.iter().enumerate() {
        for (i, t) in tasks.iter().enumerate() {
            let reply = match (si, i % 4) {
                (_, 0) | (_, 1) => format!("The rule moves each token by a fixed pattern.\n{}", fenced(&t.answer)),
                (0, 2) => format!("Applying the same steps to the query.\n{}", fenced(&Value::token(t.answer.canonical()))),
                (0, _) => format!("It looks unchanged.\n{}", fenced(&t.query)),
                (_, 2) => "I could not find a consistent pattern in these examples.".to_string(),
                _ => format!("Reversing the order.\n{}", fenced(&Value::token("?"))),
            };
            script.push(Role::Solver, ScriptEntry::text(reply));
        }
    }
    script.fallback.insert(
        Role::JudgeAnswer,
        ScriptEntry::text(r#"{"is_correct": true, "justification": "Same tokens in the same order, written as text."}"#),
    );
    script
}

/// Analyst replies in the order `analyze` visits records.
fn analyst_script(run: &RunDir) -> Result<MockScript, CliError> {
    let mut script = MockScript::default();
    for file in store::record_files(run)? {
        for r in store::load_records(&file)? {
            if r.verdict.is_none() || r.raw_response.trim().is_empty() {
                continue;
            }
            let category = match r.verdict {
                Some(AnswerVerdict::Correct) => "Success-Type_C-Correct_Generalization",
                Some(AnswerVerdict::Incorrect) => "Abstraction_Failure-Operator_Inference",
                _ => "Format_Or_Collapse-Reasoning_Collapse",
            };
            let reply = json!({
                "outcome_category": category,
                "reasoning_style": "Style-Direct_Deduction",
                "justification": "Scripted label.",
            });
            script.push(Role::Analyst, ScriptEntry::text(reply.to_string()));
        }
    }
    Ok(script)
}

fn ensure_empty(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(CliError::Config(format!(
                "self-test directory {} is not empty",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn run(base: &RunConfig, dir: &Path, seed: u64, cancel: &Arc<AtomicBool>) -> Result<SelftestSummary, CliError> {
    ensure_empty(dir)?;
    let mut config = selftest_config(base, seed);
    let (plan, script) = selftest_script(seed);
    config.plan.cells = plan.cells;
    config.plan.attempts_per_seed = plan.attempts_per_seed;
    config.plan.remap_symbolic = plan.remap_symbolic;
    let run = RunDir::new(dir);
    store::write_text(
        &dir.join("config.toml"),
        &toml::to_string(&config).map_err(|e| CliError::Content(e.to_string()))?,
    )?;
    let pool: RunnerPool = stages::start_pool(&config)?;
    store::write_json(&dir.join("scripts").join("generation.json"), &script)?;
    let generation = mock_gateway(&config, script, cancel);
    let mut incomplete = stages::generate(&config, &run, &generation, &pool)?.incomplete;
    incomplete |= stages::expand(&config, &run, &generation, &pool)?.incomplete;
    stages::remap(&config, &run.p0(), &run.p1(), &pool)?;

    let corpus = run.corpus();
    let report = stages::verify(&corpus, &pool, pool.size())?;
    store::write_json(&run.reports().join("verify.json"), &report)?;

    let tasks = store::load_tasks(&corpus)?;
    let script = solver_script(&tasks);
    store::write_json(&dir.join("scripts").join("evaluation.json"), &script)?;
    incomplete |= stages::evaluate(&config, &run, &corpus, &mock_gateway(&config, script, cancel))?.incomplete;

    let script = analyst_script(&run)?;
    store::write_json(&dir.join("scripts").join("analysis.json"), &script)?;
    let analysis = mock_gateway(&config, script, cancel);
    incomplete |= stages::analyze(&config, &run, &corpus, &analysis, &pool)?.incomplete;
    let text = stages::report(&config, &run, &corpus)?;
    print!("{text}");
    if incomplete {
        return Err(CliError::Content("self-test stopped early".into()));
    }

    let seeds = tasks.iter().filter(|t| t.is_seed() && t.protocol == Protocol::P0).count();
    let p0 = tasks.iter().filter(|t| t.protocol == Protocol::P0).count();
    let digest = store::tree_digest(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(SelftestSummary {
        seeds,
        p0,
        p1: tasks.len() - p0,
        records: tasks.len() * SOLVERS.len(),
        all_pass: report.all_pass,
        digest,
    })
}
