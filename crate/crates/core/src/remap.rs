//! Token-level symbol maps for the remapped (P1) protocol.
//!
//! A map rewrites every scalar leaf of a symbolic task through a bijection
//! while keeping the nesting structure. Numbers are keyed as numbers so that
//! the inverse map restores them exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::digest_of;
use crate::runtime::{ExecStatus, RuleExecutor};
use crate::task::{Domain, ExamplePair, Protocol, TaskInstance};
use crate::value::{value_equal, Value};
use crate::verification::RunnerCrashed;

const GREEK: [&str; 24] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "mu", "nu", "xi", "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi",
    "psi", "omega",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolMap {
    pub map_id: String,
    /// Ordered (from, to) pairs over scalar values.
    pub pairs: Vec<(Value, Value)>,
    pub seed: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("target alphabet has {available} usable symbols, {needed} needed")]
    TargetTooSmall { needed: usize, available: usize },
    #[error("symbol {0} is not a scalar")]
    NotScalar(Value),
    #[error("map is not a bijection: {0} appears twice")]
    NotBijective(Value),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("symbols missing from map: {}", .missing.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))]
pub struct CoverageError {
    pub missing: Vec<Value>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RemapError {
    #[error("only symbolic tasks can be remapped")]
    NotSymbolic,
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

/// Numbers by value, then tokens by text.
fn symbol_order(a: &Value, b: &Value) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Null => 0,
            Value::Number(_) => 1,
            Value::Token(_) => 2,
            Value::Sequence(_) => 3,
        }
    }
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(0.0), y.as_f64().unwrap_or(0.0));
            x.partial_cmp(&y).unwrap_or(Ordering::Equal)
        }
        (Value::Token(x), Value::Token(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
    .then_with(|| a.canonical().cmp(&b.canonical()))
}

fn sorted_unique(values: impl IntoIterator<Item = Value>) -> Vec<Value> {
    let mut seen = HashSet::new();
    let mut out: Vec<Value> = values
        .into_iter()
        .filter(|v| seen.insert(v.canonical()))
        .collect();
    out.sort_by(symbol_order);
    out
}

/// Every mappable scalar of a task: tokens and numbers in the examples, the
/// query and the answer. Nulls are structural and stay as they are.
pub fn alphabet_of(task: &TaskInstance) -> Vec<Value> {
    let mut symbols = Vec::new();
    let mut collect = |v: &Value| {
        v.for_each_scalar(&mut |s: &Value| {
            if !matches!(s, Value::Null) {
                symbols.push(s.clone());
            }
        })
    };
    for pair in &task.examples {
        collect(&pair.input);
        collect(&pair.output);
    }
    collect(&task.query);
    collect(&task.answer);
    sorted_unique(symbols)
}

/// Lowercase letters, then Greek letter names, then suffixed letters
/// (`a1`..`z1`, `a2`..), as many as requested.
pub fn default_targets(count: usize) -> Vec<Value> {
    let letters = (b'a'..=b'z').map(|c| (c as char).to_string());
    let greek = GREEK.iter().map(|s| s.to_string());
    let suffixed = (1..).flat_map(|n| (b'a'..=b'z').map(move |c| format!("{}{n}", c as char)));
    letters
        .chain(greek)
        .chain(suffixed)
        .take(count)
        .map(Value::Token)
        .collect()
}

fn shuffle(items: &mut [Value], seed: u64) {
    // Written out rather than using `SliceRandom::shuffle` so the order does
    // not depend on the rand crate's sampling internals.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

fn map_id_of(pairs: &[(Value, Value)], seed: u64) -> String {
    digest_of(&serde_json::json!({ "pairs": pairs, "seed": seed }))
}

/// Deterministic bijection from `alphabet` into `targets`.
///
/// Sources are taken in sorted order. Seed 0 keeps the target order as given,
/// so `0..9` onto `a..j` maps `0 -> a`, `1 -> b`; other seeds shuffle the
/// usable targets first. Targets that are also sources are skipped unless the
/// two sets are equal, in which case the map is a permutation.
pub fn build_mapping(alphabet: &[Value], targets: &[Value], seed: u64) -> Result<SymbolMap, MappingError> {
    for v in alphabet.iter().chain(targets) {
        if !v.is_scalar() {
            return Err(MappingError::NotScalar(v.clone()));
        }
    }
    let sources = sorted_unique(alphabet.iter().cloned());
    let source_keys: HashSet<String> = sources.iter().map(Value::canonical).collect();
    let mut seen = HashSet::new();
    let mut usable: Vec<Value> = targets
        .iter()
        .filter(|t| seen.insert(t.canonical()))
        .cloned()
        .collect();
    let permutation = seen == source_keys;
    if !permutation {
        usable.retain(|t| !source_keys.contains(&t.canonical()));
    }
    if usable.len() < sources.len() {
        return Err(MappingError::TargetTooSmall {
            needed: sources.len(),
            available: usable.len(),
        });
    }
    if seed != 0 {
        shuffle(&mut usable, seed);
    }
    let pairs: Vec<(Value, Value)> = sources.into_iter().zip(usable).collect();
    Ok(SymbolMap {
        map_id: map_id_of(&pairs, seed),
        pairs,
        seed,
    })
}

/// [`build_mapping`] onto [`default_targets`], extended until enough targets
/// survive the exclusion of the sources.
pub fn build_default_mapping(alphabet: &[Value], seed: u64) -> Result<SymbolMap, MappingError> {
    let n = alphabet.len();
    build_mapping(alphabet, &default_targets(2 * n + 26), seed)
}

pub fn invert_mapping(map: &SymbolMap) -> SymbolMap {
    let pairs: Vec<(Value, Value)> = map.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
    SymbolMap {
        map_id: map_id_of(&pairs, map.seed),
        pairs,
        seed: map.seed,
    }
}

impl SymbolMap {
    /// Checks that neither side repeats a symbol.
    pub fn validate(&self) -> Result<(), MappingError> {
        let (mut from, mut to) = (HashSet::new(), HashSet::new());
        for (a, b) in &self.pairs {
            if !from.insert(a.canonical()) {
                return Err(MappingError::NotBijective(a.clone()));
            }
            if !to.insert(b.canonical()) {
                return Err(MappingError::NotBijective(b.clone()));
            }
        }
        Ok(())
    }

    fn table(&self) -> BTreeMap<String, &Value> {
        self.pairs.iter().map(|(a, b)| (a.canonical(), b)).collect()
    }

    /// Rewrites every non-null scalar of `value`.
    pub fn apply_to_value(&self, value: &Value) -> Result<Value, CoverageError> {
        let table = self.table();
        let mut missing = Vec::new();
        let mapped = value
            .try_map_scalars(&mut |s: &Value| -> Result<Value, ()> {
                if matches!(s, Value::Null) {
                    return Ok(Value::Null);
                }
                match table.get(&s.canonical()) {
                    Some(t) => Ok((*t).clone()),
                    None => {
                        missing.push(s.clone());
                        Ok(s.clone())
                    }
                }
            })
            .expect("mapping closure never fails");
        if missing.is_empty() {
            Ok(mapped)
        } else {
            Err(CoverageError {
                missing: sorted_unique(missing),
            })
        }
    }
}

/// Maps the data of a task (examples, query, answer) and leaves every
/// metadata field as it was.
pub fn remap_content(task: &TaskInstance, map: &SymbolMap) -> Result<TaskInstance, CoverageError> {
    let mut missing = Vec::new();
    let mut apply = |v: &Value| match map.apply_to_value(v) {
        Ok(m) => m,
        Err(e) => {
            missing.extend(e.missing);
            v.clone()
        }
    };
    let examples = task
        .examples
        .iter()
        .map(|p| ExamplePair {
            input: apply(&p.input),
            output: apply(&p.output),
        })
        .collect();
    let query = apply(&task.query);
    let answer = apply(&task.answer);
    if !missing.is_empty() {
        return Err(CoverageError {
            missing: sorted_unique(missing),
        });
    }
    Ok(TaskInstance {
        examples,
        query,
        answer,
        ..task.clone()
    })
}

/// The P1 counterpart of a symbolic task: data rewritten through `map`, the
/// original rule kept for provenance, lineage pointing at the P0 task.
pub fn apply_mapping(task: &TaskInstance, map: &SymbolMap) -> Result<TaskInstance, RemapError> {
    if task.domain != Domain::Symbolic {
        return Err(RemapError::NotSymbolic);
    }
    let mut p1 = remap_content(task, map)?;
    p1.protocol = Protocol::P1;
    p1.lineage = Some(task.task_id.clone());
    p1.symbol_map_id = Some(map.map_id.clone());
    p1.phi_commutes = None;
    Ok(p1.with_computed_id())
}

/// Whether the task's rule commutes with the map on every task input:
/// `f(phi(x)) == phi(f(x))`. `None` when the task carries no rule.
pub fn probe_commutation(
    p0: &TaskInstance,
    map: &SymbolMap,
    exec: &impl RuleExecutor,
) -> Result<Option<bool>, RunnerCrashed> {
    let Some(rule) = &p0.rule else { return Ok(None) };
    let mut pairs = p0.examples.clone();
    pairs.push(ExamplePair {
        input: p0.query.clone(),
        output: p0.answer.clone(),
    });
    for pair in &pairs {
        let (Ok(x), Ok(fx)) = (map.apply_to_value(&pair.input), map.apply_to_value(&pair.output)) else {
            return Ok(Some(false));
        };
        let out = exec.apply_forward(&rule.source, &x);
        if out.status == ExecStatus::RunnerCrashed {
            return Err(RunnerCrashed(out.error_text.unwrap_or_default()));
        }
        match out.value {
            Some(y) if value_equal(&y, &fx) => {}
            _ => return Ok(Some(false)),
        }
    }
    Ok(Some(true))
}
