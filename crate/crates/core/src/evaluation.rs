//! Solving tasks, judging answers, and the leaderboard.
//!
//! Accuracy strata follow the leaderboard columns: `sym`/`sem` split every
//! task by domain (mapped tasks count as symbolic), `p0`/`p1` compare
//! symbolic originals with their remapped copies, and `seed`/`aug` split by
//! variation index across both protocols. `collapse_rate` is the share of
//! records that are unparseable or that the analyst labelled
//! `Format_Or_Collapse-Reasoning_Collapse`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::analysis::{OutcomeCategory, OutcomeLabel};
use crate::llm::templates::format_examples;
use crate::llm::{
    parse_structured_reply, render_prompt, Bindings, CallContext, Field, FieldKind, Gateway, GatewayError, RoleConfig,
    Stage, TemplateId,
};
use crate::pipeline::parallel_map;
use crate::scalar::round_decimal;
use crate::task::{Domain, Protocol, TaskInstance, VariationPhase};
use crate::value::{value_equal, Dimension, Value};
use crate::Exact;

/// Reply-format retries for the answer judge.
pub const JUDGE_REPLY_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnswerVerdict {
    Correct,
    Incorrect,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgePath {
    /// Canonical forms matched; no model call.
    ExactMatch,
    /// Not even loosely equivalent; no model call.
    Mismatch,
    NoAnswer,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub path: JudgePath,
    pub justification: Option<String>,
    /// The judge model never gave a usable verdict; recorded as incorrect.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub solver_model: String,
    pub raw_response: String,
    pub extracted_answer: Option<Value>,
    /// The rule the solver says it inferred, when it stated one in the
    /// answer object.
    pub stated_rule: Option<String>,
    /// `None` until judged.
    pub verdict: Option<AnswerVerdict>,
    pub judgment: Option<Judgment>,
    pub usage: Usage,
    /// Provider failure text when the solver call itself failed.
    pub error: Option<String>,
    pub analyst: Option<OutcomeLabel>,
}

impl EvalRecord {
    pub fn is_correct(&self) -> bool {
        self.verdict == Some(AnswerVerdict::Correct)
    }

    pub fn collapsed(&self) -> bool {
        self.verdict == Some(AnswerVerdict::Unparseable)
            || self.analyst.as_ref().map(|l| l.outcome_category) == Some(OutcomeCategory::ReasoningCollapse)
    }
}

const ANSWER_FIELDS: [Field; 1] = [Field::required("final_answer", FieldKind::Any)];
const JUDGE_FIELDS: [Field; 2] = [
    Field::required("is_correct", FieldKind::Bool),
    Field::optional("justification", FieldKind::Text),
];

fn first_json_value(text: &str) -> Option<Json> {
    let start = text.find(|c: char| matches!(c, '[' | '"' | '-' | '0'..='9'))?;
    let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Json>();
    stream.next()?.ok()
}

/// Pulls the final answer out of a solver reply: an object with a
/// `final_answer` field first, then a value following the last
/// "final answer" marker, then the last fenced block that is a bare value.
pub fn extract_answer(text: &str) -> Option<(Value, Option<String>)> {
    if let Ok(map) = parse_structured_reply(text, &ANSWER_FIELDS) {
        let rule = map.get("rule").and_then(Json::as_str).map(str::to_string);
        if let Ok(v) = Value::from_json(&map["final_answer"]) {
            if v != Value::Null {
                return Some((v, rule));
            }
        }
    }
    let lower = text.to_lowercase();
    if let Some(pos) = lower.rfind("final answer") {
        // lowercasing can shift byte offsets for non-ASCII text
        if text.is_char_boundary(pos) {
            // the value sits on the marker's line or the next non-empty one
            let candidate = text[pos + "final answer".len()..]
                .lines()
                .map(|l| l.trim_start_matches(|c: char| !matches!(c, '[' | '"' | '-' | '0'..='9')))
                .find(|l| !l.trim().is_empty());
            if let Some(v) = candidate
                .and_then(first_json_value)
                .and_then(|j| Value::from_json(&j).ok())
            {
                if v != Value::Null {
                    return Some((v, None));
                }
            }
        }
    }
    let mut rest = text;
    let mut last = None;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        if let Ok(v) = Value::parse(body[..end].trim()) {
            if v != Value::Null {
                last = Some(v);
            }
        }
        rest = &body[(end + 3).min(body.len())..];
    }
    last.map(|v| (v, None))
}

/// Solves one task. The prompt shows the worked examples and the query only.
/// A provider failure becomes an unparseable record; budget and credential
/// errors are returned.
pub fn solve_task(gateway: &Gateway, solver: &RoleConfig, task: &TaskInstance) -> Result<EvalRecord, GatewayError> {
    let b: Bindings = [
        ("examples", format_examples(&task.examples)),
        ("query", task.query.canonical()),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::Solver, &b).expect("solver template bindings are fixed");
    let ctx = CallContext::new(Stage::Evaluation, task.task_id.clone());
    let mut record = EvalRecord {
        task_id: task.task_id.clone(),
        solver_model: solver.model_name.clone(),
        raw_response: String::new(),
        extracted_answer: None,
        stated_rule: None,
        verdict: None,
        judgment: None,
        usage: Usage::default(),
        error: None,
        analyst: None,
    };
    match gateway.complete(solver, prompt, &ctx) {
        Ok(resp) => {
            record.usage = Usage {
                prompt_tokens: resp.prompt_tokens,
                completion_tokens: resp.completion_tokens,
            };
            if let Some((answer, rule)) = extract_answer(&resp.text) {
                record.extracted_answer = Some(answer);
                record.stated_rule = rule;
            }
            record.raw_response = resp.text;
        }
        Err(GatewayError::Provider { attempts, last }) => {
            record.error = Some(format!("after {attempts} attempt(s): {last}"));
            record.verdict = Some(AnswerVerdict::Unparseable);
            record.judgment = Some(Judgment {
                path: JudgePath::NoAnswer,
                justification: None,
                flagged: false,
            });
        }
        Err(e) => return Err(e),
    }
    Ok(record)
}

fn leaf_strings(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Sequence(items) => items.iter().for_each(|i| leaf_strings(i, out)),
        Value::Token(s) => match Value::parse(s.trim()) {
            Ok(inner @ Value::Sequence(_)) => leaf_strings(&inner, out),
            _ => out.push(s.clone()),
        },
        Value::Number(_) => out.push(v.canonical()),
        Value::Null => out.push("null".into()),
    }
}

/// Same scalars in the same order once structure and quoting are ignored,
/// e.g. the text `"[1, 2]"` against the list `[1, 2]`.
pub fn loosely_equivalent(answer: &Value, truth: &Value) -> bool {
    let (mut a, mut t) = (Vec::new(), Vec::new());
    leaf_strings(answer, &mut a);
    leaf_strings(truth, &mut t);
    a == t
}

fn shown(v: &Value) -> String {
    match v {
        Value::Token(s) => s.clone(),
        other => other.canonical(),
    }
}

/// Judges a solved record in place. Exact matches and clear mismatches are
/// settled locally; only loosely equivalent answers go to the judge model.
pub fn judge_answer(
    gateway: &Gateway,
    judge: &RoleConfig,
    task: &TaskInstance,
    record: &mut EvalRecord,
) -> Result<AnswerVerdict, GatewayError> {
    if let Some(v) = record.verdict {
        return Ok(v);
    }
    let settle = |record: &mut EvalRecord, verdict, path, justification: Option<String>, flagged| {
        record.verdict = Some(verdict);
        record.judgment = Some(Judgment {
            path,
            justification,
            flagged,
        });
        verdict
    };
    let Some(answer) = record.extracted_answer.clone() else {
        return Ok(settle(record, AnswerVerdict::Unparseable, JudgePath::NoAnswer, None, false));
    };
    if value_equal(&answer, &task.answer) {
        return Ok(settle(record, AnswerVerdict::Correct, JudgePath::ExactMatch, None, false));
    }
    if !loosely_equivalent(&answer, &task.answer) {
        return Ok(settle(record, AnswerVerdict::Incorrect, JudgePath::Mismatch, None, false));
    }
    let b: Bindings = [
        (
            "rule_description",
            task.rule.as_ref().map(|r| r.rule_description.clone()).unwrap_or_default(),
        ),
        ("question_text", task.query.canonical()),
        ("ground_truth", task.answer.canonical()),
        ("model_answer", shown(&answer)),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::JudgeAnswer, &b).expect("judge template bindings are fixed");
    let ctx = CallContext::new(Stage::Evaluation, format!("{}/judge", task.task_id));
    let mut last_problem = String::new();
    for _ in 0..=JUDGE_REPLY_RETRIES {
        let resp = match gateway.complete(judge, prompt.clone(), &ctx) {
            Ok(r) => r,
            Err(GatewayError::Provider { last, .. }) => {
                last_problem = last.to_string();
                break;
            }
            Err(e) => return Err(e),
        };
        match parse_structured_reply(&resp.text, &JUDGE_FIELDS) {
            Ok(map) => {
                let verdict = if map["is_correct"] == Json::Bool(true) {
                    AnswerVerdict::Correct
                } else {
                    AnswerVerdict::Incorrect
                };
                let why = map.get("justification").and_then(Json::as_str).map(str::to_string);
                return Ok(settle(record, verdict, JudgePath::Model, why, false));
            }
            Err(e) => last_problem = e.to_string(),
        }
    }
    Ok(settle(
        record,
        AnswerVerdict::Incorrect,
        JudgePath::Model,
        Some(format!("no usable judge verdict: {last_problem}")),
        true,
    ))
}

/// Every solver on every task, then judging. Records come back in
/// (solver, task) order whatever the width.
pub fn evaluate(
    gateway: &Gateway,
    solvers: &[RoleConfig],
    judge: &RoleConfig,
    tasks: &[TaskInstance],
    width: usize,
) -> Result<Vec<EvalRecord>, GatewayError> {
    let width = if gateway.sequential() { 1 } else { width.max(1) };
    let jobs: Vec<(&RoleConfig, &TaskInstance)> = solvers
        .iter()
        .flat_map(|s| tasks.iter().map(move |t| (s, t)))
        .collect();
    parallel_map(&jobs, width, |(solver, task)| {
        let mut record = solve_task(gateway, solver, task)?;
        judge_answer(gateway, judge, task, &mut record)?;
        Ok(record)
    })
    .into_iter()
    .collect()
}

/// Appends records to a JSON-lines shard.
pub fn append_records(path: &Path, records: &[EvalRecord]) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(io::Error::other)?;
        writeln!(file, "{line}")?;
    }
    file.flush()
}

pub fn read_records(path: &Path) -> io::Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Hits over a denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: u64,
    pub total: u64,
}

impl Rate {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += u64::from(hit);
    }

    pub fn value(&self) -> Option<Exact> {
        (self.total > 0).then(|| Exact::new(self.hits as i64, self.total as i64))
    }

    /// Percentage to `digits` decimals, or `-` with no records.
    pub fn percent(&self, digits: u32) -> String {
        self.value().map_or_else(|| "-".into(), |v| percent(&v, digits))
    }
}

pub fn percent(v: &Exact, digits: u32) -> String {
    round_decimal(&(*v * Exact::from_integer(100)), digits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model: String,
    pub total: Rate,
    pub sym: Rate,
    pub sem: Rate,
    pub p0: Rate,
    pub p1: Rate,
    pub seed: Rate,
    pub aug: Rate,
    pub collapse: Rate,
    pub by_dimension: BTreeMap<Dimension, Rate>,
    pub by_phase: BTreeMap<VariationPhase, Rate>,
}

impl LeaderboardRow {
    fn new(model: &str) -> Self {
        LeaderboardRow {
            model: model.to_string(),
            total: Rate::default(),
            sym: Rate::default(),
            sem: Rate::default(),
            p0: Rate::default(),
            p1: Rate::default(),
            seed: Rate::default(),
            aug: Rate::default(),
            collapse: Rate::default(),
            by_dimension: BTreeMap::new(),
            by_phase: BTreeMap::new(),
        }
    }

    /// `p0 - p1`, exact. Zero when either side has no records.
    pub fn delta_s(&self) -> Exact {
        match (self.p0.value(), self.p1.value()) {
            (Some(a), Some(b)) => a - b,
            _ => Exact::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeaderboardOptions {
    /// Leave out remapped tasks whose symbol map did not commute with the
    /// rule, together with their originals, from `p0`/`p1`.
    pub exclude_noncommuting: bool,
}

impl Default for LeaderboardOptions {
    fn default() -> Self {
        LeaderboardOptions {
            exclude_noncommuting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// Best total accuracy first; ties by model name.
    pub rows: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum JoinError {
    #[error("record for unknown task {task_id} (solver {solver})")]
    Orphan { task_id: String, solver: String },
    #[error("record for task {task_id} (solver {solver}) has not been judged")]
    Unjudged { task_id: String, solver: String },
    #[error("solver {solver} has two records for task {task_id}")]
    Duplicate { task_id: String, solver: String },
}

pub fn compute_leaderboard(
    records: &[EvalRecord],
    tasks: &[TaskInstance],
    options: LeaderboardOptions,
) -> Result<Leaderboard, JoinError> {
    let by_id: HashMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut excluded: HashSet<&str> = HashSet::new();
    if options.exclude_noncommuting {
        for t in tasks.iter().filter(|t| t.protocol == Protocol::P1 && t.phi_commutes == Some(false)) {
            excluded.insert(&t.task_id);
            if let Some(parent) = &t.lineage {
                excluded.insert(parent);
            }
        }
    }
    let mut rows: BTreeMap<&str, LeaderboardRow> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for r in records {
        let err = |kind: fn(String, String) -> JoinError| kind(r.task_id.clone(), r.solver_model.clone());
        let Some(task) = by_id.get(r.task_id.as_str()) else {
            return Err(err(|task_id, solver| JoinError::Orphan { task_id, solver }));
        };
        if r.verdict.is_none() {
            return Err(err(|task_id, solver| JoinError::Unjudged { task_id, solver }));
        }
        if !seen.insert((&r.solver_model, &r.task_id)) {
            return Err(err(|task_id, solver| JoinError::Duplicate { task_id, solver }));
        }
        let hit = r.is_correct();
        let row = rows
            .entry(&r.solver_model)
            .or_insert_with(|| LeaderboardRow::new(&r.solver_model));
        row.total.add(hit);
        row.collapse.add(r.collapsed());
        match task.domain {
            Domain::Symbolic => row.sym.add(hit),
            Domain::Semantic => row.sem.add(hit),
        }
        if task.domain == Domain::Symbolic && !excluded.contains(task.task_id.as_str()) {
            match task.protocol {
                Protocol::P0 => row.p0.add(hit),
                Protocol::P1 => row.p1.add(hit),
            }
        }
        if task.is_seed() {
            row.seed.add(hit);
        } else {
            row.aug.add(hit);
        }
        row.by_dimension.entry(task.dimension).or_default().add(hit);
        row.by_phase.entry(task.variation_phase()).or_default().add(hit);
    }
    let mut rows: Vec<LeaderboardRow> = rows.into_values().collect();
    rows.sort_by(|a, b| {
        let acc = |r: &LeaderboardRow| r.total.value().unwrap_or_default();
        acc(b).cmp(&acc(a)).then_with(|| a.model.cmp(&b.model))
    });
    Ok(Leaderboard { rows })
}

const TABLE_HEADER: [&str; 19] = [
    "model",
    "total_acc",
    "sym_acc",
    "sem_acc",
    "p0_acc",
    "p1_acc",
    "delta_s",
    "seed_acc",
    "aug_acc",
    "collapse_rate",
    "n_total",
    "n_sym",
    "n_sem",
    "n_p0",
    "n_p1",
    "n_seed",
    "n_aug",
    "n_collapse",
    "delta_s_exact",
];

impl Leaderboard {
    pub fn row(&self, model: &str) -> Option<&LeaderboardRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Delimited table, percentages to one decimal plus raw denominators.
    pub fn write_table<W: io::Write>(&self, out: W, delimiter: u8) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        w.write_record(TABLE_HEADER)?;
        for r in &self.rows {
            let d = r.delta_s();
            w.write_record([
                r.model.clone(),
                r.total.percent(1),
                r.sym.percent(1),
                r.sem.percent(1),
                r.p0.percent(1),
                r.p1.percent(1),
                percent(&d, 1),
                r.seed.percent(1),
                r.aug.percent(1),
                r.collapse.percent(1),
                r.total.total.to_string(),
                r.sym.total.to_string(),
                r.sem.total.to_string(),
                r.p0.total.to_string(),
                r.p1.total.to_string(),
                r.seed.total.to_string(),
                r.aug.total.to_string(),
                r.collapse.hits.to_string(),
                d.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width text table for terminals.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = format!(
            "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>9}\n",
            "model", "total", "sym", "sem", "P0", "P1", "gap", "seed", "aug", "collapse"
        );
        for r in &self.rows {
            let cells = [
                r.total.percent(1),
                r.sym.percent(1),
                r.sem.percent(1),
                r.p0.percent(1),
                r.p1.percent(1),
                percent(&r.delta_s(), 1),
            ];
            s.push_str(&format!("{:<width$}", r.model));
            for c in cells {
                s.push_str(&format!(" {c:>7}"));
            }
            s.push_str(&format!(
                " {:>7} {:>7} {:>9}\n",
                r.seed.percent(1),
                r.aug.percent(1),
                r.collapse.percent(1)
            ));
        }
        s
    }
}
