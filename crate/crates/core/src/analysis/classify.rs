use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::labels::{OutcomeCategory, OutcomeLabel, ReasoningStyle};
use crate::evaluation::{AnswerVerdict, EvalRecord};
use crate::llm::{
    parse_structured_reply, render_prompt, Bindings, CallContext, Field, FieldKind, Gateway, GatewayError, RoleConfig,
    Stage, TemplateId,
};
use crate::pipeline::parallel_map;
use crate::task::TaskInstance;
use crate::value::Value;
use crate::Exact;

const CATEGORY_NAMES: [&str; 7] = [
    "Abstraction_Failure-Operator_Inference",
    "Abstraction_Failure-Scope_Condition",
    "Reasoning_Failure-Procedural_Error",
    "Format_Or_Collapse-Reasoning_Collapse",
    "Success-Type_A-Surface_Fitting",
    "Success-Type_B-Inferior_Rule",
    "Success-Type_C-Correct_Generalization",
];
const STYLE_NAMES: [&str; 3] = ["Style-Direct_Deduction", "Style-Hypothesis_Testing", "Style-Chaotic_Guessing"];

const ANALYST_FIELDS: [Field; 3] = [
    Field::required("outcome_category", FieldKind::OneOf(&CATEGORY_NAMES)),
    Field::required("reasoning_style", FieldKind::OneOf(&STYLE_NAMES)),
    Field::optional("justification", FieldKind::Text),
];

fn fallback(correct: bool) -> OutcomeCategory {
    if correct {
        OutcomeCategory::SurfaceFitting
    } else {
        OutcomeCategory::ReasoningCollapse
    }
}

/// Labels a judged record. A reply whose category is on the wrong side of
/// the correct/incorrect split, or that cannot be read, is re-asked once;
/// after that the label falls back to collapse (failures) or surface
/// fitting (successes) and is flagged.
pub fn classify_outcome(
    gateway: &Gateway,
    analyst: &RoleConfig,
    task: &TaskInstance,
    record: &EvalRecord,
) -> Result<OutcomeLabel, GatewayError> {
    let correct = record.is_correct();
    if record.raw_response.trim().is_empty() {
        return Ok(OutcomeLabel {
            outcome_category: OutcomeCategory::ReasoningCollapse,
            reasoning_style: None,
            justification: "empty solver response".into(),
            reasked: false,
            analyst_failed: false,
        });
    }
    let model_answer = match &record.extracted_answer {
        Some(Value::Token(s)) => s.clone(),
        Some(v) => v.canonical(),
        None => "(no final answer found)".into(),
    };
    let b: Bindings = [
        (
            "rule_description",
            task.rule.as_ref().map(|r| r.rule_description.clone()).unwrap_or_default(),
        ),
        ("ground_truth", task.answer.canonical()),
        ("model_answer", model_answer),
        ("model_cot", record.raw_response.clone()),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::Analyst, &b).expect("analyst template bindings are fixed");
    let ctx = CallContext::new(Stage::Analysis, format!("{}/{}", record.task_id, record.solver_model));
    let mut problem = String::new();
    for attempt in 0..2 {
        let resp = match gateway.complete(analyst, prompt.clone(), &ctx) {
            Ok(r) => r,
            Err(GatewayError::Provider { last, .. }) => {
                problem = last.to_string();
                break;
            }
            Err(e) => return Err(e),
        };
        let map = match parse_structured_reply(&resp.text, &ANALYST_FIELDS) {
            Ok(m) => m,
            Err(e) => {
                problem = e.to_string();
                continue;
            }
        };
        let category = map["outcome_category"]
            .as_str()
            .and_then(OutcomeCategory::from_name)
            .expect("field checked against the category list");
        if category.is_success() != correct {
            problem = format!("{category} given for a record judged {}", if correct { "correct" } else { "incorrect" });
            continue;
        }
        return Ok(OutcomeLabel {
            outcome_category: category,
            reasoning_style: map["reasoning_style"].as_str().and_then(ReasoningStyle::from_name),
            justification: map.get("justification").and_then(Json::as_str).unwrap_or_default().to_string(),
            reasked: attempt > 0,
            analyst_failed: false,
        });
    }
    Ok(OutcomeLabel {
        outcome_category: fallback(correct),
        reasoning_style: None,
        justification: format!("analyst gave no usable label: {problem}"),
        reasked: true,
        analyst_failed: true,
    })
}

/// Fills `record.analyst` for every judged record that lacks a label.
pub fn analyze_records(
    gateway: &Gateway,
    analyst: &RoleConfig,
    tasks: &[TaskInstance],
    records: &mut [EvalRecord],
    width: usize,
) -> Result<usize, GatewayError> {
    let by_id: HashMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let todo: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].analyst.is_none() && records[i].verdict.is_some())
        .filter(|&i| by_id.contains_key(records[i].task_id.as_str()))
        .collect();
    let width = if gateway.sequential() { 1 } else { width.max(1) };
    let labels = {
        let records = &*records;
        parallel_map(&todo, width, |&i| {
            classify_outcome(gateway, analyst, by_id[records[i].task_id.as_str()], &records[i])
        })
    };
    let mut done = 0;
    for (i, label) in todo.into_iter().zip(labels) {
        records[i].analyst = Some(label?);
        done += 1;
    }
    Ok(done)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumBucket {
    CognitiveBreakdown,
    AbstractionFailure,
    ReasoningError,
    SurfaceFitting,
    InferiorRule,
    TrueGeneralization,
}

impl SpectrumBucket {
    pub const ALL: [SpectrumBucket; 6] = [
        SpectrumBucket::CognitiveBreakdown,
        SpectrumBucket::AbstractionFailure,
        SpectrumBucket::ReasoningError,
        SpectrumBucket::SurfaceFitting,
        SpectrumBucket::InferiorRule,
        SpectrumBucket::TrueGeneralization,
    ];

    pub fn of(category: OutcomeCategory) -> Self {
        match category {
            OutcomeCategory::ReasoningCollapse => SpectrumBucket::CognitiveBreakdown,
            OutcomeCategory::OperatorInference | OutcomeCategory::ScopeCondition => SpectrumBucket::AbstractionFailure,
            OutcomeCategory::ProceduralError => SpectrumBucket::ReasoningError,
            OutcomeCategory::SurfaceFitting => SpectrumBucket::SurfaceFitting,
            OutcomeCategory::InferiorRule => SpectrumBucket::InferiorRule,
            OutcomeCategory::CorrectGeneralization => SpectrumBucket::TrueGeneralization,
        }
    }
}

/// Per-model bucket counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spectrum {
    pub counts: BTreeMap<SpectrumBucket, u64>,
    /// Judged records with no analyst label and a parseable answer.
    pub unlabelled: u64,
}

impl Spectrum {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Bucket shares; they sum to exactly 1 when any record is labelled.
    pub fn shares(&self) -> BTreeMap<SpectrumBucket, Exact> {
        let total = self.total() as i64;
        SpectrumBucket::ALL
            .into_iter()
            .map(|b| {
                let n = self.counts.get(&b).copied().unwrap_or(0) as i64;
                (b, if total == 0 { Exact::from_integer(0) } else { Exact::new(n, total) })
            })
            .collect()
    }
}

/// Six-bucket outcome spectrum per solver. Unparseable records without a
/// label count as breakdowns.
pub fn spectrum(records: &[EvalRecord]) -> BTreeMap<String, Spectrum> {
    let mut out: BTreeMap<String, Spectrum> = BTreeMap::new();
    for r in records {
        let s = out.entry(r.solver_model.clone()).or_default();
        let bucket = match (&r.analyst, r.verdict) {
            (Some(l), _) => Some(SpectrumBucket::of(l.outcome_category)),
            (None, Some(AnswerVerdict::Unparseable)) => Some(SpectrumBucket::CognitiveBreakdown),
            _ => None,
        };
        match bucket {
            Some(b) => *s.counts.entry(b).or_default() += 1,
            None => s.unlabelled += 1,
        }
    }
    out
}
