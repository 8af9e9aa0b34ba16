//! Task data model and the on-disk task document.
//!
//! A document carries the example pairs, `question_plaintext` and
//! `answer_ciphertext` exactly as in the published listings, plus a `meta`
//! object with identity, stratification and the rule that produced it.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{digest_of, to_canonical_string};
use crate::value::{value_dimension, Dimension, ShapeError, Value};

/// Entry points every rule source must define.
pub const FORWARD_ENTRY: &str = "transform_grid";
pub const INVERSE_ENTRY: &str = "inverse_transform_grid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Symbolic,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    P0,
    P1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariationPhase {
    Seed,
    Standard,
    EdgeCase,
    Adversarial,
}

impl VariationPhase {
    pub fn of_index(index: u8) -> Option<Self> {
        match index {
            0 => Some(VariationPhase::Seed),
            1..=3 => Some(VariationPhase::Standard),
            4..=6 => Some(VariationPhase::EdgeCase),
            7..=9 => Some(VariationPhase::Adversarial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleOrigin {
    Generated,
    Imported,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Symbolic => "Symbolic",
            Domain::Semantic => "Semantic",
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::P0 => "P0",
            Protocol::P1 => "P1",
        })
    }
}

/// Natural-language rule pair plus the executable source implementing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule_description: String,
    pub inverse_rule_description: String,
    pub source: String,
    /// Example inputs followed by the query input.
    pub input_set: Vec<Value>,
    pub origin: RuleOrigin,
}

impl RuleSpec {
    /// Identity of the rule itself, independent of its inputs.
    pub fn rule_id(&self) -> String {
        digest_of(&serde_json::json!({
            "rule_description": self.rule_description,
            "inverse_rule_description": self.inverse_rule_description,
            "source": self.source,
        }))
    }

    /// String-level presence of a `def <name>(` definition.
    pub fn defines(&self, entry: &str) -> bool {
        let needle = format!("def {entry}(");
        self.source.match_indices(&needle).any(|(at, _)| {
            // reject e.g. `def my_transform_grid(`
            at == 0 || !self.source[..at].ends_with(|c: char| c.is_alphanumeric() || c == '_')
        })
    }

    pub fn missing_entry_points(&self) -> Vec<&'static str> {
        [FORWARD_ENTRY, INVERSE_ENTRY]
            .into_iter()
            .filter(|e| !self.defines(e))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let missing = self.missing_entry_points();
        if !missing.is_empty() {
            return Err(TaskError::Invariant(format!(
                "rule source is missing entry point(s): {}",
                missing.join(", ")
            )));
        }
        if self.input_set.is_empty() {
            return Err(TaskError::Invariant("rule input set is empty".into()));
        }
        let mut seen = HashSet::new();
        for x in &self.input_set {
            x.check_shape()?;
            if !seen.insert(x.canonical()) {
                return Err(TaskError::Invariant(format!(
                    "duplicate input in rule input set: {x}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub input: Value,
    pub output: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub task_id: String,
    pub rule: Option<RuleSpec>,
    pub examples: Vec<ExamplePair>,
    pub query: Value,
    pub answer: Value,
    pub dimension: Dimension,
    pub domain: Domain,
    pub variation_index: u8,
    pub protocol: Protocol,
    pub author_model: String,
    /// Parent task: the seed for variations, the P0 task for P1 tasks.
    pub lineage: Option<String>,
    pub symbol_map_id: Option<String>,
    /// Result of the symbol-map commutation probe on P1 tasks.
    pub phi_commutes: Option<bool>,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("shape error at {path}: {source}")]
    Shape { path: String, source: ShapeError },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<ShapeError> for TaskError {
    fn from(source: ShapeError) -> Self {
        TaskError::Shape {
            path: "$".into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    task_id: String,
    dimension: Dimension,
    domain: Domain,
    variation_index: u8,
    protocol: Protocol,
    author_model: String,
    lineage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<RuleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symbol_map_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi_commutes: Option<bool>,
}

#[derive(Serialize)]
struct TaskDoc<'a> {
    examples: &'a [ExamplePair],
    question_plaintext: &'a Value,
    answer_ciphertext: &'a Value,
    meta: MetaDoc,
}

impl TaskInstance {
    pub fn variation_phase(&self) -> VariationPhase {
        VariationPhase::of_index(self.variation_index).expect("validated variation index")
    }

    pub fn is_seed(&self) -> bool {
        self.variation_index == 0
    }

    /// Content identity: digest over the rule texts, inputs, variation index
    /// and protocol. Rule-less imports hash their data instead.
    pub fn compute_id(&self) -> String {
        match &self.rule {
            Some(rule) => digest_of(&serde_json::json!({
                "rule_description": rule.rule_description,
                "source": rule.source,
                "input_set": rule.input_set,
                "variation_index": self.variation_index,
                "protocol": self.protocol,
            })),
            None => digest_of(&serde_json::json!({
                "examples": self.examples,
                "question_plaintext": self.query,
                "answer_ciphertext": self.answer,
                "variation_index": self.variation_index,
                "protocol": self.protocol,
            })),
        }
    }

    /// Recomputes `task_id` from content.
    pub fn with_computed_id(mut self) -> Self {
        self.task_id = self.compute_id();
        self
    }

    /// All inputs in presentation order: examples first, then the query.
    pub fn inputs(&self) -> Vec<Value> {
        self.examples
            .iter()
            .map(|e| e.input.clone())
            .chain(std::iter::once(self.query.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if VariationPhase::of_index(self.variation_index).is_none() {
            return Err(TaskError::Invariant(format!(
                "variation index {} outside 0..=9",
                self.variation_index
            )));
        }
        if self.dimension == Dimension::Scalar {
            return Err(TaskError::Invariant("task dimension must be 1D, 2D or 3D".into()));
        }
        if self.protocol == Protocol::P1 {
            if self.domain == Domain::Semantic {
                return Err(TaskError::Invariant("semantic tasks are never remapped".into()));
            }
            if self.lineage.is_none() || self.symbol_map_id.is_none() {
                return Err(TaskError::Invariant(
                    "P1 tasks need lineage and a symbol map id".into(),
                ));
            }
        }
        for e in &self.examples {
            e.input.check_shape()?;
            e.output.check_shape()?;
        }
        self.query.check_shape()?;
        self.answer.check_shape()?;
        if let Some(rule) = &self.rule {
            rule.validate()?;
        }
        Ok(())
    }
}

fn parse_err(path: impl Into<String>, message: impl Into<String>) -> TaskError {
    TaskError::Parse {
        path: path.into(),
        message: message.into(),
    }
}

fn value_at(json: &serde_json::Value, path: &str) -> Result<Value, TaskError> {
    Value::from_json(json).map_err(|source| TaskError::Shape {
        path: path.to_string(),
        source,
    })
}

/// Dimension implied by the data when no metadata says otherwise. A scalar
/// query (a bare string) counts as a 1D character sequence.
fn inferred_dimension(query: &Value, examples: &[ExamplePair]) -> Result<Dimension, TaskError> {
    let mut best = value_dimension(query).map_err(|source| TaskError::Shape {
        path: "$.question_plaintext".into(),
        source,
    })?;
    for (i, e) in examples.iter().enumerate() {
        let d = value_dimension(&e.input).map_err(|source| TaskError::Shape {
            path: format!("$.examples[{i}].input"),
            source,
        })?;
        best = best.max(d);
    }
    Ok(best.max(Dimension::D1))
}

/// Parses a task document from a JSON tree.
pub fn parse_task_json(doc: &serde_json::Value) -> Result<TaskInstance, TaskError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| parse_err("$", "task document must be an object"))?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "examples" | "question_plaintext" | "answer_ciphertext" | "meta"
        ) {
            return Err(parse_err(format!("$.{key}"), "unknown field"));
        }
    }
    let examples_json = obj
        .get("examples")
        .ok_or_else(|| parse_err("$.examples", "missing field"))?
        .as_array()
        .ok_or_else(|| parse_err("$.examples", "expected a list"))?;
    let mut examples = Vec::with_capacity(examples_json.len());
    for (i, e) in examples_json.iter().enumerate() {
        let path = format!("$.examples[{i}]");
        let pair = e
            .as_object()
            .ok_or_else(|| parse_err(&path, "expected an object with input and output"))?;
        if let Some(extra) = pair.keys().find(|k| *k != "input" && *k != "output") {
            return Err(parse_err(format!("{path}.{extra}"), "unknown field"));
        }
        let input = pair
            .get("input")
            .ok_or_else(|| parse_err(format!("{path}.input"), "missing field"))?;
        let output = pair
            .get("output")
            .ok_or_else(|| parse_err(format!("{path}.output"), "missing field"))?;
        examples.push(ExamplePair {
            input: value_at(input, &format!("{path}.input"))?,
            output: value_at(output, &format!("{path}.output"))?,
        });
    }
    let query = value_at(
        obj.get("question_plaintext")
            .ok_or_else(|| parse_err("$.question_plaintext", "missing field"))?,
        "$.question_plaintext",
    )?;
    let answer = value_at(
        obj.get("answer_ciphertext")
            .ok_or_else(|| parse_err("$.answer_ciphertext", "missing field"))?,
        "$.answer_ciphertext",
    )?;

    let task = match obj.get("meta") {
        Some(meta) => {
            let meta: MetaDoc = serde_json::from_value(meta.clone())
                .map_err(|e| parse_err("$.meta", e.to_string()))?;
            TaskInstance {
                task_id: meta.task_id,
                rule: meta.rule,
                examples,
                query,
                answer,
                dimension: meta.dimension,
                domain: meta.domain,
                variation_index: meta.variation_index,
                protocol: meta.protocol,
                author_model: meta.author_model,
                lineage: meta.lineage,
                symbol_map_id: meta.symbol_map_id,
                phi_commutes: meta.phi_commutes,
            }
        }
        None => {
            let dimension = inferred_dimension(&query, &examples)?;
            TaskInstance {
                task_id: String::new(),
                rule: None,
                examples,
                query,
                answer,
                dimension,
                domain: Domain::Symbolic,
                variation_index: 0,
                protocol: Protocol::P0,
                author_model: "unknown".into(),
                lineage: None,
                symbol_map_id: None,
                phi_commutes: None,
            }
            .with_computed_id()
        }
    };
    task.validate()?;
    Ok(task)
}

/// Parses a task document.
pub fn parse_task(document: &str) -> Result<TaskInstance, TaskError> {
    let json: serde_json::Value =
        serde_json::from_str(document).map_err(|e| parse_err("$", e.to_string()))?;
    parse_task_json(&json)
}

/// Canonical (minified, key-sorted) document text.
pub fn serialize_task(task: &TaskInstance) -> String {
    to_canonical_string(&TaskDoc {
        examples: &task.examples,
        question_plaintext: &task.query,
        answer_ciphertext: &task.answer,
        meta: MetaDoc {
            task_id: task.task_id.clone(),
            dimension: task.dimension,
            domain: task.domain,
            variation_index: task.variation_index,
            protocol: task.protocol,
            author_model: task.author_model.clone(),
            lineage: task.lineage.clone(),
            rule: task.rule.clone(),
            symbol_map_id: task.symbol_map_id.clone(),
            phi_commutes: task.phi_commutes,
        },
    })
}

/// Parses newline-delimited task documents, skipping blank lines.
pub fn parse_shard(text: &str) -> Result<Vec<TaskInstance>, TaskError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            parse_task(line).map_err(|e| match e {
                TaskError::Parse { path, message } => TaskError::Parse {
                    path: format!("line {}: {path}", n + 1),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

pub fn serialize_shard(tasks: &[TaskInstance]) -> String {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serialize_task(t));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTERLEAVE: &str = r#"{
      "examples": [
        {"input": [], "output": []},
        {"input": ["x"], "output": ["x"]},
        {"input": ["a", "b", "c", "d"], "output": ["c", "a", "d", "b"]},
        {"input": ["a", "b", "c", "d", "e"], "output": ["d", "a", "e", "b", "c"]}
      ],
      "question_plaintext": ["p", "y", "t", "h", "o", "n", "3"],
      "answer_ciphertext": ["o", "p", "n", "y", "3", "t", "h"]
    }"#;

    #[test]
    fn parses_interleaving_listing() {
        let t = parse_task(INTERLEAVE).unwrap();
        assert_eq!(t.dimension, Dimension::D1);
        assert_eq!(t.examples.len(), 4);
        assert_eq!(t.examples[2].output, Value::tokens(["c", "a", "d", "b"]));
        assert_eq!(t.answer, Value::tokens(["o", "p", "n", "y", "3", "t", "h"]));
        assert_eq!(t.task_id.len(), 64);
    }

    #[test]
    fn parses_empty_structures() {
        let t = parse_task(
            r#"{"examples":[{"input":[],"output":[]}],"question_plaintext":[],"answer_ciphertext":[]}"#,
        )
        .unwrap();
        assert_eq!(t.examples.len(), 1);
        assert_eq!(t.dimension, Dimension::D1);
    }

    #[test]
    fn parses_voxel_listing() {
        let t = parse_task(
            r#"{"examples":[{"input":[[["M"]]],"output":[[["N"]]]}],
                "question_plaintext":[[["A"]]],"answer_ciphertext":[[["Z"]]]}"#,
        )
        .unwrap();
        assert_eq!(t.dimension, Dimension::D3);
    }

    #[test]
    fn errors_carry_paths() {
        let err = parse_task(r#"{"examples":[{"input":[1]}],"question_plaintext":[],"answer_ciphertext":[]}"#)
            .unwrap_err();
        match err {
            TaskError::Parse { path, .. } => assert_eq!(path, "$.examples[0].output"),
            other => panic!("unexpected {other}"),
        }
        let err = parse_task(
            r#"{"examples":[],"question_plaintext":[1,[2]],"answer_ciphertext":[]}"#,
        )
        .unwrap_err();
        match err {
            TaskError::Shape { path, .. } => assert_eq!(path, "$.question_plaintext"),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(parse_task("[1]"), Err(TaskError::Parse { .. })));
        assert!(matches!(
            parse_task(r#"{"examples":[],"question_plaintext":[],"answer_ciphertext":[],"extra":1}"#),
            Err(TaskError::Parse { .. })
        ));
    }

    #[test]
    fn canonical_round_trip_is_byte_stable() {
        let t = parse_task(INTERLEAVE).unwrap();
        let once = serialize_task(&t);
        let back = parse_task(&once).unwrap();
        assert_eq!(back, t);
        assert_eq!(serialize_task(&back), once);
    }

    #[test]
    fn answer_equal_to_query_round_trips() {
        let mut t = parse_task(INTERLEAVE).unwrap();
        t.answer = t.query.clone();
        let back = parse_task(&serialize_task(&t)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn phase_follows_index() {
        assert_eq!(VariationPhase::of_index(0), Some(VariationPhase::Seed));
        assert_eq!(VariationPhase::of_index(3), Some(VariationPhase::Standard));
        assert_eq!(VariationPhase::of_index(4), Some(VariationPhase::EdgeCase));
        assert_eq!(VariationPhase::of_index(9), Some(VariationPhase::Adversarial));
        assert_eq!(VariationPhase::of_index(10), None);
    }

    #[test]
    fn entry_point_check_is_word_bounded() {
        let mut rule = RuleSpec {
            rule_description: String::new(),
            inverse_rule_description: String::new(),
            source: "def my_transform_grid(g):\n    return g\ndef inverse_transform_grid(g):\n    return g\n".into(),
            input_set: vec![Value::tokens(["a"])],
            origin: RuleOrigin::Imported,
        };
        assert_eq!(rule.missing_entry_points(), vec![FORWARD_ENTRY]);
        rule.source.push_str("def transform_grid(g):\n    return g\n");
        assert!(rule.validate().is_ok());
        rule.input_set.push(Value::tokens(["a"]));
        assert!(matches!(rule.validate(), Err(TaskError::Invariant(_))));
    }

    #[test]
    fn semantic_tasks_cannot_be_p1() {
        let mut t = parse_task(INTERLEAVE).unwrap();
        t.domain = Domain::Semantic;
        t.protocol = Protocol::P1;
        t.lineage = Some("x".into());
        t.symbol_map_id = Some("m".into());
        assert!(t.validate().is_err());
    }
}
