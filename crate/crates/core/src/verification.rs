//! The admission gate for generated rules: outputs come only from executing
//! the forward rule, and a rule is admitted only if its inverse restores
//! every input it was tested on.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_pretty;
use crate::runtime::{ExecOutcome, ExecStatus, RuleExecutor};
use crate::remap::{invert_mapping, remap_content, SymbolMap};
use crate::task::{ExamplePair, Protocol, RuleSpec, TaskInstance};
use crate::value::{value_equal, Value};

/// The worker pool itself failed; nothing can be concluded about the rule.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("rule worker crashed: {0}")]
pub struct RunnerCrashed(pub String);

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DerivationError {
    #[error("rule input set needs at least two entries, got {0}")]
    TooFewInputs(usize),
    #[error("f({input}) failed with {status}: {error}")]
    Failed {
        input: Value,
        status: ExecStatus,
        error: String,
    },
}

/// Outputs produced by running the forward rule over its input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub examples: Vec<ExamplePair>,
    pub query: Value,
    pub answer: Value,
}

impl Derived {
    /// Example pairs followed by the query pair.
    pub fn all_pairs(&self) -> Vec<ExamplePair> {
        let mut pairs = self.examples.clone();
        pairs.push(ExamplePair {
            input: self.query.clone(),
            output: self.answer.clone(),
        });
        pairs
    }
}

/// Runs the forward rule on every input. The last input is the query.
pub fn derive_outputs(rule: &RuleSpec, exec: &impl RuleExecutor) -> Result<Derived, DerivationError> {
    if rule.input_set.len() < 2 {
        return Err(DerivationError::TooFewInputs(rule.input_set.len()));
    }
    let mut pairs = Vec::with_capacity(rule.input_set.len());
    for x in &rule.input_set {
        let out = exec.apply_forward(&rule.source, x);
        match out.value {
            Some(y) => pairs.push(ExamplePair {
                input: x.clone(),
                output: y,
            }),
            None => {
                return Err(DerivationError::Failed {
                    input: x.clone(),
                    status: out.status,
                    error: out.error_text.unwrap_or_default(),
                })
            }
        }
    }
    let last = pairs.pop().expect("at least two inputs");
    Ok(Derived {
        examples: pairs,
        query: last.input,
        answer: last.output,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCase {
    pub input: Value,
    pub forward: Option<Value>,
    pub roundtrip: Option<Value>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub per_input: Vec<CycleCase>,
    pub all_pass: bool,
    pub first_counterexample: Option<(Value, Value, Value)>,
    pub nondeterministic: bool,
}

impl CycleReport {
    fn finish(per_input: Vec<CycleCase>, nondeterministic: bool) -> Self {
        let first_counterexample = per_input.iter().find(|c| !c.pass).and_then(|c| {
            Some((c.input.clone(), c.forward.clone()?, c.roundtrip.clone()?))
        });
        let all_pass = !nondeterministic && per_input.iter().all(|c| c.pass);
        CycleReport {
            per_input,
            all_pass,
            first_counterexample,
            nondeterministic,
        }
    }

    /// Marks the report nondeterministic if `derived` disagrees with the
    /// forward values seen here.
    pub fn reconcile(&mut self, derived: &[ExamplePair]) {
        for pair in derived {
            let seen = self
                .per_input
                .iter()
                .find(|c| value_equal(&c.input, &pair.input))
                .and_then(|c| c.forward.as_ref());
            if let Some(fx) = seen {
                if !value_equal(fx, &pair.output) {
                    self.nondeterministic = true;
                    self.all_pass = false;
                }
            }
        }
    }

    /// Number of inputs whose round trip failed.
    pub fn failures(&self) -> usize {
        self.per_input.iter().filter(|c| !c.pass).count()
    }
}

fn crashed<T>(out: &crate::runtime::Outcome<T>) -> Option<RunnerCrashed> {
    (out.status == ExecStatus::RunnerCrashed)
        .then(|| RunnerCrashed(out.error_text.clone().unwrap_or_default()))
}

fn failure_reason(out: &ExecOutcome, stage: &str) -> String {
    format!("{stage} {}: {}", out.status, out.error_text.as_deref().unwrap_or(""))
}

/// Per-input forward and inverse requests, used when a batch fails as a whole.
fn cycle_case(rule: &RuleSpec, exec: &impl RuleExecutor, x: &Value) -> Result<CycleCase, RunnerCrashed> {
    let mut case = CycleCase {
        input: x.clone(),
        forward: None,
        roundtrip: None,
        pass: false,
        reason: None,
    };
    let fx = exec.apply_forward(&rule.source, x);
    if let Some(e) = crashed(&fx) {
        return Err(e);
    }
    let Some(fx_value) = fx.value.clone() else {
        case.reason = Some(failure_reason(&fx, "forward"));
        return Ok(case);
    };
    let gfx = exec.apply_inverse(&rule.source, &fx_value);
    if let Some(e) = crashed(&gfx) {
        return Err(e);
    }
    case.forward = Some(fx_value);
    match gfx.value.clone() {
        Some(v) => {
            case.pass = value_equal(&v, x);
            if !case.pass {
                case.reason = Some("roundtrip differs from input".into());
            }
            case.roundtrip = Some(v);
        }
        None => case.reason = Some(failure_reason(&gfx, "inverse")),
    }
    Ok(case)
}

/// Checks `g(f(x)) == x` for every input in the rule's input set, with a
/// second forward pass per input as a determinism probe.
pub fn check_cycle(rule: &RuleSpec, exec: &impl RuleExecutor) -> Result<CycleReport, RunnerCrashed> {
    let inputs = &rule.input_set;
    let batch = exec.cycle(&rule.source, inputs);
    if let Some(e) = crashed(&batch) {
        return Err(e);
    }
    let per_input: Vec<CycleCase> = match (&batch.value, batch.status) {
        (Some(b), _) => inputs
            .iter()
            .enumerate()
            .map(|(i, x)| CycleCase {
                input: x.clone(),
                forward: Some(b.forward[i].clone()),
                roundtrip: Some(b.roundtrip[i].clone()),
                pass: b.passes[i],
                reason: (!b.passes[i]).then(|| "roundtrip differs from input".to_string()),
            })
            .collect(),
        // A limit hit applies to the whole batch; retrying input by input
        // would only multiply the wait.
        (None, ExecStatus::Timeout | ExecStatus::MemoryExceeded) => inputs
            .iter()
            .map(|x| CycleCase {
                input: x.clone(),
                forward: None,
                roundtrip: None,
                pass: false,
                reason: Some(format!(
                    "cycle batch {}: {}",
                    batch.status,
                    batch.error_text.as_deref().unwrap_or("")
                )),
            })
            .collect(),
        (None, _) => inputs
            .iter()
            .map(|x| cycle_case(rule, exec, x))
            .collect::<Result<_, _>>()?,
    };

    let mut nondeterministic = false;
    for case in &per_input {
        let Some(fx) = &case.forward else { continue };
        let probe = exec.apply_forward(&rule.source, &case.input);
        if let Some(e) = crashed(&probe) {
            return Err(e);
        }
        match &probe.value {
            Some(again) if value_equal(again, fx) => {}
            _ => nondeterministic = true,
        }
    }
    Ok(CycleReport::finish(per_input, nondeterministic))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrivialKind {
    /// Every input is a fixed point.
    Identity,
    /// Every output is empty.
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Triviality {
    Trivial(TrivialKind),
    NonTrivial,
}

fn is_empty_output(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Token(s) => s.is_empty(),
        Value::Number(_) => false,
        Value::Sequence(_) => v.is_empty_structure(),
    }
}

/// Programmatic pre-filter for degenerate rules over the derived pairs.
pub fn check_nontrivial(pairs: &[ExamplePair]) -> Triviality {
    if pairs.iter().all(|p| value_equal(&p.input, &p.output)) {
        Triviality::Trivial(TrivialKind::Identity)
    } else if pairs.iter().all(|p| is_empty_output(&p.output)) {
        Triviality::Trivial(TrivialKind::Erasure)
    } else {
        Triviality::NonTrivial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzWarning {
    pub input: Value,
    pub reason: String,
}

fn mutate(x: &Value, rng: &mut ChaCha8Rng) -> Option<Value> {
    match x {
        Value::Sequence(items) if !items.is_empty() => {
            let mut items = items.clone();
            match rng.random_range(0..4) {
                0 => items.reverse(),
                1 => items.rotate_left(1),
                2 => {
                    items.pop();
                }
                _ => {
                    let i = rng.random_range(0..items.len());
                    let j = rng.random_range(0..items.len());
                    items.swap(i, j);
                    items.push(items[0].clone());
                }
            }
            Some(Value::Sequence(items))
        }
        Value::Token(s) if s.chars().count() > 1 => {
            let mut chars: Vec<char> = s.chars().collect();
            chars.rotate_left(1);
            Some(Value::Token(chars.into_iter().collect()))
        }
        _ => None,
    }
}

/// Round-trips `n` mutated copies of the rule's inputs. Failures are
/// warnings: rules may legitimately reject inputs outside their domain.
pub fn fuzz_cycle(
    rule: &RuleSpec,
    exec: &impl RuleExecutor,
    n: usize,
    seed: u64,
) -> Result<Vec<FuzzWarning>, RunnerCrashed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    if rule.input_set.is_empty() {
        return Ok(warnings);
    }
    let mut tried = 0;
    let mut attempts = 0;
    while tried < n && attempts < n * 4 {
        attempts += 1;
        let base = &rule.input_set[rng.random_range(0..rule.input_set.len())];
        let Some(x) = mutate(base, &mut rng) else { continue };
        tried += 1;
        let case = cycle_case(rule, exec, &x)?;
        if !case.pass {
            warnings.push(FuzzWarning {
                input: x,
                reason: case.reason.unwrap_or_default(),
            });
        }
    }
    Ok(warnings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    MissingEntryPoints { missing: Vec<String> },
    InvalidInputSet { detail: String },
    DerivationFailed { input: Value, status: ExecStatus, error: String },
    NonDeterministic,
    CycleFailed { failures: usize, counterexample: Option<(Value, Value, Value)> },
    Trivial { kind: TrivialKind },
}

impl Rejection {
    /// Short label used in transcripts and counters.
    pub fn label(&self) -> &'static str {
        match self {
            Rejection::MissingEntryPoints { .. } => "missing_entry_points",
            Rejection::InvalidInputSet { .. } => "invalid_input_set",
            Rejection::DerivationFailed { .. } => "derivation_failed",
            Rejection::NonDeterministic => "non_deterministic",
            Rejection::CycleFailed { .. } => "cycle_failed",
            Rejection::Trivial { .. } => "trivial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Admitted,
    Rejected(Rejection),
}

/// Everything the gate learned about one rule; persisted per rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rule_id: String,
    pub verdict: Verdict,
    pub cycle: Option<CycleReport>,
    pub triviality: Option<Triviality>,
    #[serde(default)]
    pub fuzz_warnings: Vec<FuzzWarning>,
}

impl VerificationReport {
    pub fn admitted(&self) -> bool {
        self.verdict == Verdict::Admitted
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateOptions {
    /// Extra mutated inputs to round-trip; failures only warn.
    pub fuzz: usize,
    pub fuzz_seed: u64,
}

/// Runs the whole gate: entry points, derivation, cycle check with the
/// determinism probe, then the triviality filter. `Derived` is returned
/// only for admitted rules.
pub fn verify_rule(
    rule: &RuleSpec,
    exec: &impl RuleExecutor,
    options: GateOptions,
) -> Result<(VerificationReport, Option<Derived>), RunnerCrashed> {
    let mut report = VerificationReport {
        rule_id: rule.rule_id(),
        verdict: Verdict::Admitted,
        cycle: None,
        triviality: None,
        fuzz_warnings: Vec::new(),
    };
    let reject = |mut report: VerificationReport, why: Rejection| {
        report.verdict = Verdict::Rejected(why);
        Ok((report, None))
    };

    let missing = rule.missing_entry_points();
    if !missing.is_empty() {
        let missing = missing.into_iter().map(String::from).collect();
        return reject(report, Rejection::MissingEntryPoints { missing });
    }
    if let Err(e) = rule.validate() {
        return reject(report, Rejection::InvalidInputSet { detail: e.to_string() });
    }
    let derived = match derive_outputs(rule, exec) {
        Ok(d) => d,
        Err(DerivationError::TooFewInputs(n)) => {
            let detail = format!("need at least two inputs, got {n}");
            return reject(report, Rejection::InvalidInputSet { detail });
        }
        Err(DerivationError::Failed { input, status, error }) => {
            if status == ExecStatus::RunnerCrashed {
                return Err(RunnerCrashed(error));
            }
            return reject(report, Rejection::DerivationFailed { input, status, error });
        }
    };

    let mut cycle = check_cycle(rule, exec)?;
    cycle.reconcile(&derived.all_pairs());
    let nondeterministic = cycle.nondeterministic;
    let cycle_ok = cycle.all_pass;
    let failures = cycle.failures();
    let counterexample = cycle.first_counterexample.clone();
    report.cycle = Some(cycle);
    if nondeterministic {
        return reject(report, Rejection::NonDeterministic);
    }
    if !cycle_ok {
        return reject(report, Rejection::CycleFailed { failures, counterexample });
    }

    let triviality = check_nontrivial(&derived.all_pairs());
    report.triviality = Some(triviality);
    if let Triviality::Trivial(kind) = triviality {
        return reject(report, Rejection::Trivial { kind });
    }
    if options.fuzz > 0 {
        report.fuzz_warnings = fuzz_cycle(rule, exec, options.fuzz, options.fuzz_seed)?;
    }
    Ok((report, Some(derived)))
}

/// True when no two distinct inputs in the report share a forward output.
pub fn forward_is_injective(report: &CycleReport) -> bool {
    let mut seen = HashSet::new();
    let mut inputs = HashSet::new();
    report
        .per_input
        .iter()
        .filter(|c| inputs.insert(c.input.canonical()))
        .filter_map(|c| c.forward.as_ref())
        .all(|fx| seen.insert(fx.canonical()))
}

/// Outcome of re-checking a stored task against its rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCheck {
    pub task_id: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<String>,
}

/// Re-derives a stored task's outputs from its rule and re-runs the cycle
/// check on the task's inputs. A P1 task is first mapped back through the
/// inverse of `map`.
pub fn recheck_task(
    task: &TaskInstance,
    map: Option<&SymbolMap>,
    exec: &impl RuleExecutor,
) -> Result<TaskCheck, RunnerCrashed> {
    let mut problems = Vec::new();
    let plain = match (task.protocol, map) {
        (Protocol::P0, _) => Some(task.clone()),
        (Protocol::P1, Some(m)) => match remap_content(task, &invert_mapping(m)) {
            Ok(t) => Some(t),
            Err(e) => {
                problems.push(format!("inverse map: {e}"));
                None
            }
        },
        (Protocol::P1, None) => {
            problems.push(format!("symbol map {:?} not found", task.symbol_map_id));
            None
        }
    };
    match (&task.rule, plain) {
        (None, _) => problems.push("task carries no rule".into()),
        (Some(_), None) => {}
        (Some(rule), Some(plain)) => {
            let rule = RuleSpec {
                input_set: plain.inputs(),
                ..rule.clone()
            };
            match derive_outputs(&rule, exec) {
                Ok(d) => {
                    for (i, (got, want)) in d.examples.iter().zip(&plain.examples).enumerate() {
                        if !value_equal(&got.output, &want.output) {
                            problems.push(format!("example {i}: stored output differs from f(input)"));
                        }
                    }
                    if !value_equal(&d.answer, &plain.answer) {
                        problems.push("stored answer differs from f(query)".into());
                    }
                }
                Err(DerivationError::Failed { status: ExecStatus::RunnerCrashed, error, .. }) => {
                    return Err(RunnerCrashed(error));
                }
                Err(e) => problems.push(e.to_string()),
            }
            let cycle = check_cycle(&rule, exec)?;
            if cycle.nondeterministic {
                problems.push("forward rule is not deterministic".into());
            } else if !cycle.all_pass {
                problems.push(format!("cycle check failed on {} input(s)", cycle.failures()));
            }
        }
    }
    Ok(TaskCheck {
        task_id: task.task_id.clone(),
        passed: problems.is_empty(),
        problems,
    })
}

pub fn report_path(dir: &Path, rule_id: &str) -> PathBuf {
    dir.join(format!("{rule_id}.json"))
}

pub fn write_report(dir: &Path, report: &VerificationReport) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = report_path(dir, &report.rule_id);
    fs::write(&path, to_canonical_pretty(report) + "\n")?;
    Ok(path)
}

pub fn read_report(path: &Path) -> io::Result<VerificationReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
