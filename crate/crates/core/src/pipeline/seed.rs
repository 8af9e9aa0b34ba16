use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{Generator, PipelineError, Transcript};
use crate::llm::templates::input_set_addendum;
use crate::llm::{render_prompt, Bindings, CallContext, Field, FieldKind, Stage, TemplateId};
use crate::runtime::RuleExecutor;
use crate::task::{Domain, Protocol, RuleOrigin, RuleSpec, TaskInstance};
use crate::value::{Dimension, Value};
use crate::verification::{verify_rule, Derived, Rejection, Verdict, VerificationReport};

/// Stages of a seed attempt, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStage {
    AuthorRule,
    JudgeRule,
    AuthorCode,
    EntryPoints,
    InputSet,
    Determinism,
    Derivation,
    CycleCheck,
    Triviality,
    JudgeCode,
}

impl SeedStage {
    fn of_rejection(r: &Rejection) -> SeedStage {
        match r {
            Rejection::MissingEntryPoints { .. } => SeedStage::EntryPoints,
            Rejection::InvalidInputSet { .. } => SeedStage::InputSet,
            Rejection::DerivationFailed { .. } => SeedStage::Derivation,
            Rejection::NonDeterministic => SeedStage::Determinism,
            Rejection::CycleFailed { .. } => SeedStage::CycleCheck,
            Rejection::Trivial { .. } => SeedStage::Triviality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRequest {
    /// Unique key for this attempt; used for billing and RNG streams.
    pub key: String,
    pub dimension: Dimension,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedOutcome {
    Accepted(Box<TaskInstance>),
    RejectedAt { stage: SeedStage, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedAttempt {
    pub request: SeedRequest,
    pub inspiration: Vec<String>,
    pub transcript: Transcript,
    pub outcome: SeedOutcome,
    pub verification: Option<VerificationReport>,
}

impl SeedAttempt {
    pub fn accepted(&self) -> Option<&TaskInstance> {
        match &self.outcome {
            SeedOutcome::Accepted(t) => Some(t),
            SeedOutcome::RejectedAt { .. } => None,
        }
    }

    pub fn rejected_at(&self) -> Option<SeedStage> {
        match &self.outcome {
            SeedOutcome::RejectedAt { stage, .. } => Some(*stage),
            SeedOutcome::Accepted(_) => None,
        }
    }

    /// JSON form written next to the corpus.
    pub fn record(&self) -> Json {
        let outcome = match &self.outcome {
            SeedOutcome::Accepted(t) => serde_json::json!({"accepted": t.task_id}),
            SeedOutcome::RejectedAt { stage, reason } => {
                serde_json::json!({"rejected_at": stage, "reason": reason})
            }
        };
        serde_json::json!({
            "request": self.request,
            "inspiration": self.inspiration,
            "outcome": outcome,
            "verification": self.verification,
            "transcript": self.transcript,
        })
    }
}

const RULE_FIELDS: [Field; 2] = [
    Field::required("rule_description", FieldKind::Text),
    Field::required("inverse_rule_description", FieldKind::Text),
];
const VERDICT_FIELDS: [Field; 1] = [Field::required("is_valid", FieldKind::Bool)];
const CODE_FIELDS: [Field; 2] = [
    Field::required("python_code", FieldKind::Text),
    Field::required("input_set", FieldKind::Any),
];

fn task_type(domain: Domain) -> &'static str {
    match domain {
        Domain::Symbolic => "Symbolic (a structural transformation that ignores what the symbols mean)",
        Domain::Semantic => {
            "Semantic (a transformation that depends on outside knowledge of the symbols, such as chemistry, the alphabet or calendars)"
        }
    }
}

fn dimension_instructions(dim: Dimension) -> &'static str {
    match dim {
        Dimension::D3 => {
            "Inputs and outputs are 3D voxel arrays: a list of layers, each a list of rows, each a list of tokens, e.g. [[[\"a\",\"b\"],[\"c\",\"d\"]],[[\"e\",\"f\"],[\"g\",\"h\"]]]."
        }
        Dimension::D2 => {
            "Inputs and outputs are 2D grids: a list of rows, each a list of tokens, e.g. [[\"1\",\"2\"],[\"3\",\"4\"]]."
        }
        _ => "Inputs and outputs are 1D sequences: a flat list of tokens, e.g. [\"p\",\"y\",\"t\"].",
    }
}

fn sample_inspiration(gen_rules: &[String], k: usize, rng: &mut impl rand::Rng) -> Vec<String> {
    gen_rules.choose_multiple(rng, k.min(gen_rules.len())).cloned().collect()
}

fn text_field(map: &serde_json::Map<String, Json>, name: &str) -> String {
    map.get(name).and_then(Json::as_str).unwrap_or_default().to_string()
}

fn reasoning_of(map: &serde_json::Map<String, Json>) -> String {
    let r = text_field(map, "reasoning");
    if r.is_empty() {
        "judge declined without reasoning".into()
    } else {
        r
    }
}

/// The task data as shown to the code judge.
pub(crate) fn puzzle_data(derived: &Derived) -> String {
    let doc = serde_json::json!({
        "examples": derived.examples,
        "question_plaintext": derived.query,
        "answer_ciphertext": derived.answer,
    });
    serde_json::to_string_pretty(&doc).expect("json")
}

pub(crate) fn parse_input_set(raw: &Json) -> Result<Vec<Value>, String> {
    let Json::Array(items) = raw else {
        return Err(format!("input_set must be a JSON list, got {raw}"));
    };
    items
        .iter()
        .enumerate()
        .map(|(i, j)| Value::from_json(j).map_err(|e| format!("input_set[{i}]: {e}")))
        .collect()
}

impl<E: RuleExecutor> Generator<'_, E> {
    fn judge_code_prompt(&self, rule: &RuleSpec, derived: &Derived) -> Result<crate::llm::RenderedPrompt, PipelineError> {
        let b: Bindings = [
            ("rule_description", rule.rule_description.clone()),
            ("inverse_rule_description", rule.inverse_rule_description.clone()),
            ("python_code", rule.source.clone()),
            ("code_output_str", puzzle_data(derived)),
        ]
        .into_iter()
        .collect();
        Ok(render_prompt(TemplateId::JudgeCode, &b)?)
    }

    /// Final judge review; `Some(reason)` when the judge rejects or its reply
    /// cannot be read.
    pub(crate) fn judge_code(
        &self,
        rule: &RuleSpec,
        derived: &Derived,
        ctx: &CallContext,
        transcript: &mut Transcript,
    ) -> Result<Option<String>, PipelineError> {
        let prompt = self.judge_code_prompt(rule, derived)?;
        Ok(match self.ask(&self.roles.judge_code, prompt, ctx, &VERDICT_FIELDS, transcript)? {
            Ok(v) if v["is_valid"] == Json::Bool(true) => None,
            Ok(v) => Some(reasoning_of(&v)),
            Err(e) => Some(format!("unreadable judge reply: {e}")),
        })
    }
}

/// One seed attempt through every stage, stopping at the first rejection.
pub fn generate_seed<E: RuleExecutor>(gen: &Generator<'_, E>, request: SeedRequest) -> Result<SeedAttempt, PipelineError> {
    if gen.inspiration.is_empty() {
        return Err(PipelineError::NoInspiration);
    }
    let mut rng = super::rng_for(gen.options.seed, &request.key);
    let inspiration = sample_inspiration(&gen.inspiration, gen.options.inspiration_k, &mut rng);
    let ctx = CallContext::new(Stage::Seed, request.key.clone());
    let mut attempt = SeedAttempt {
        request,
        inspiration,
        transcript: Transcript::default(),
        outcome: SeedOutcome::RejectedAt {
            stage: SeedStage::AuthorRule,
            reason: String::new(),
        },
        verification: None,
    };
    let reject = |mut a: SeedAttempt, stage: SeedStage, reason: String| {
        a.outcome = SeedOutcome::RejectedAt { stage, reason };
        Ok(a)
    };
    let dim = attempt.request.dimension;
    let domain = attempt.request.domain;

    let sampled = attempt
        .inspiration
        .iter()
        .map(|r| format!("- {r}"))
        .collect::<Vec<_>>()
        .join("\n");
    let b: Bindings = [
        ("sampled_rules_str", sampled),
        ("task_type", task_type(domain).to_string()),
        ("dimension_instructions", dimension_instructions(dim).to_string()),
        ("dimensionality", dim.label().to_string()),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::AuthorRule, &b)?;
    let rule_reply = match gen.ask(&gen.roles.author_rule, prompt, &ctx, &RULE_FIELDS, &mut attempt.transcript)? {
        Ok(m) => m,
        Err(e) => return reject(attempt, SeedStage::AuthorRule, e.to_string()),
    };
    let forward = text_field(&rule_reply, "rule_description");
    let inverse = text_field(&rule_reply, "inverse_rule_description");

    let b: Bindings = [
        ("rule_description", forward.clone()),
        ("inverse_rule_description", inverse.clone()),
    ]
    .into_iter()
    .collect();
    let prompt = render_prompt(TemplateId::JudgeRule, &b)?;
    match gen.ask(&gen.roles.judge_rule, prompt, &ctx, &VERDICT_FIELDS, &mut attempt.transcript)? {
        Ok(v) if v["is_valid"] == Json::Bool(true) => {}
        Ok(v) => return reject(attempt, SeedStage::JudgeRule, reasoning_of(&v)),
        Err(e) => return reject(attempt, SeedStage::JudgeRule, format!("unreadable judge reply: {e}")),
    }

    let mut prompt = render_prompt(TemplateId::AuthorCode, &b)?;
    prompt
        .user
        .push_str(&input_set_addendum(gen.options.examples_per_task + 1, dim.label()));
    let code_reply = match gen.ask(&gen.roles.author_code, prompt, &ctx, &CODE_FIELDS, &mut attempt.transcript)? {
        Ok(m) => m,
        Err(e) => return reject(attempt, SeedStage::AuthorCode, e.to_string()),
    };
    let input_set = match parse_input_set(&code_reply["input_set"]) {
        Ok(v) => v,
        Err(e) => return reject(attempt, SeedStage::InputSet, e),
    };
    let rule = RuleSpec {
        rule_description: forward,
        inverse_rule_description: inverse,
        source: text_field(&code_reply, "python_code"),
        input_set,
        origin: RuleOrigin::Generated,
    };

    let (report, derived) = verify_rule(&rule, gen.exec, gen.gate(&attempt.request.key))?;
    let verdict = report.verdict.clone();
    attempt.verification = Some(report);
    let derived = match (verdict, derived) {
        (Verdict::Admitted, Some(d)) => d,
        (Verdict::Rejected(why), _) => {
            let stage = SeedStage::of_rejection(&why);
            let reason = match &why {
                Rejection::CycleFailed {
                    counterexample: Some((x, fx, gfx)),
                    ..
                } => format!("{}: {x} -> {fx} -> {gfx}", why.label()),
                _ => why.label().to_string(),
            };
            return reject(attempt, stage, reason);
        }
        (Verdict::Admitted, None) => unreachable!("admitted rules come with outputs"),
    };

    if let Some(reason) = gen.judge_code(&rule, &derived, &ctx, &mut attempt.transcript)? {
        return reject(attempt, SeedStage::JudgeCode, reason);
    }

    let task = TaskInstance {
        task_id: String::new(),
        rule: Some(rule),
        examples: derived.examples,
        query: derived.query,
        answer: derived.answer,
        dimension: dim,
        domain,
        variation_index: 0,
        protocol: Protocol::P0,
        author_model: gen.roles.author_code.model_name.clone(),
        lineage: None,
        symbol_map_id: None,
        phi_commutes: None,
    }
    .with_computed_id();
    attempt.outcome = SeedOutcome::Accepted(Box::new(task));
    Ok(attempt)
}
