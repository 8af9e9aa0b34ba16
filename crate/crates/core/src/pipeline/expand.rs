use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{Generator, PipelineError, Transcript};
use crate::llm::templates::{format_history, variation_guidance};
use crate::llm::{render_prompt, Bindings, CallContext, Field, FieldKind, Stage, TemplateId};
use crate::runtime::RuleExecutor;
use crate::task::{RuleSpec, TaskInstance};
use crate::value::Value;
use crate::verification::{verify_rule, Verdict};

pub const CONTINUE: &str = "CONTINUE";
pub const SKIPPED_LOW_ENTROPY: &str = "SKIPPED_LOW_ENTROPY";

const EXPANDER_FIELDS: [Field; 2] = [
    Field::required("status", FieldKind::OneOf(&[CONTINUE, SKIPPED_LOW_ENTROPY])),
    Field::optional("new_input", FieldKind::Any),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum IndexOutcome {
    Produced { task_id: String, attempts: u32 },
    /// Every attempt for this index was rejected; the last reason is kept.
    Skipped { attempts: u32, reason: String },
    LowEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionState {
    pub seed: TaskInstance,
    /// Inputs already used by the seed or an accepted variation.
    pub history: Vec<Value>,
    pub produced: Vec<TaskInstance>,
    pub skipped_low_entropy: bool,
    pub per_index: Vec<(u8, IndexOutcome)>,
    pub transcript: Transcript,
}

impl ExpansionState {
    pub fn record(&self) -> Json {
        serde_json::json!({
            "seed": self.seed.task_id,
            "history": self.history,
            "produced": self.produced.iter().map(|t| &t.task_id).collect::<Vec<_>>(),
            "skipped_low_entropy": self.skipped_low_entropy,
            "per_index": self.per_index.iter()
                .map(|(i, o)| serde_json::json!({"variation_index": i, "outcome": o}))
                .collect::<Vec<_>>(),
            "transcript": self.transcript,
        })
    }
}

/// Reads the expander's `new_input`: either one new query (the seed's
/// example inputs are kept) or a whole input set, examples first.
fn variation_inputs(seed: &TaskInstance, raw: &Json) -> Result<Vec<Value>, String> {
    let value = Value::from_json(raw).map_err(|e| format!("new_input: {e}"))?;
    let seed_depth = seed.query.depth().map_err(|e| e.to_string())?;
    if let Value::Sequence(items) = &value {
        let is_set = items.len() >= 2
            && !value.is_empty_structure()
            && value.depth().ok() == Some(seed_depth + 1);
        if is_set {
            return Ok(items.clone());
        }
    }
    let mut inputs: Vec<Value> = seed.examples.iter().map(|e| e.input.clone()).collect();
    inputs.push(value);
    Ok(inputs)
}

/// Generates variations 1..=max_variations for an accepted seed. Each index
/// gets `1 + expander.retries` tries before it is skipped.
pub fn expand_seed<E: RuleExecutor>(gen: &Generator<'_, E>, seed: &TaskInstance) -> Result<ExpansionState, PipelineError> {
    let Some(seed_rule) = seed.rule.clone().filter(|_| seed.is_seed()) else {
        return Err(PipelineError::NotExpandable(seed.task_id.clone()));
    };
    let mut seen: HashSet<String> = HashSet::new();
    let history: Vec<Value> = seed.inputs().into_iter().filter(|v| seen.insert(v.canonical())).collect();
    let mut state = ExpansionState {
        seed: seed.clone(),
        history,
        produced: Vec::new(),
        skipped_low_entropy: false,
        per_index: Vec::new(),
        transcript: Transcript::default(),
    };
    let cfg = &gen.roles.expander;
    let tries = cfg.retries + 1;

    for index in 1..=gen.options.max_variations.min(9) {
        let ctx = CallContext::new(Stage::Expansion, format!("{}/v{index}", seed.task_id));
        let mut last_reason = String::new();
        let mut produced = None;
        for attempt in 1..=tries {
            let b: Bindings = [
                ("rule_description", seed_rule.rule_description.clone()),
                ("python_code", seed_rule.source.clone()),
                ("input_history", format_history(&state.history)),
                ("variation_index", index.to_string()),
                ("variation_guidance", variation_guidance(index).to_string()),
            ]
            .into_iter()
            .collect();
            let prompt = render_prompt(TemplateId::Expander, &b)?;
            let reply = match gen.ask(cfg, prompt, &ctx, &EXPANDER_FIELDS, &mut state.transcript)? {
                Ok(r) => r,
                Err(e) => {
                    last_reason = format!("unreadable expander reply: {e}");
                    continue;
                }
            };
            if reply["status"] == SKIPPED_LOW_ENTROPY {
                state.skipped_low_entropy = true;
                state.per_index.push((index, IndexOutcome::LowEntropy));
                return Ok(state);
            }
            let inputs = match reply.get("new_input").filter(|v| !v.is_null()) {
                None => Err("reply has no new_input".to_string()),
                Some(raw) => variation_inputs(seed, raw),
            };
            let inputs = match inputs {
                Ok(i) => i,
                Err(e) => {
                    last_reason = e;
                    continue;
                }
            };
            let query = inputs.last().expect("at least the new input");
            if seen.contains(&query.canonical()) {
                last_reason = format!("duplicate input {query}");
                continue;
            }
            let rule = RuleSpec {
                input_set: inputs,
                ..seed_rule.clone()
            };
            let key = format!("{}/v{index}/{attempt}", seed.task_id);
            let (report, derived) = verify_rule(&rule, gen.exec, gen.gate(&key))?;
            let derived = match (report.verdict, derived) {
                (Verdict::Admitted, Some(d)) => d,
                (Verdict::Rejected(why), _) => {
                    last_reason = format!("gate: {}", why.label());
                    continue;
                }
                (Verdict::Admitted, None) => unreachable!("admitted rules come with outputs"),
            };
            if let Some(reason) = gen.judge_code(&rule, &derived, &ctx, &mut state.transcript)? {
                last_reason = format!("judge: {reason}");
                continue;
            }
            for x in &rule.input_set {
                if seen.insert(x.canonical()) {
                    state.history.push(x.clone());
                }
            }
            let task = TaskInstance {
                task_id: String::new(),
                rule: Some(rule),
                examples: derived.examples,
                query: derived.query,
                answer: derived.answer,
                variation_index: index,
                author_model: cfg.model_name.clone(),
                lineage: Some(seed.task_id.clone()),
                ..seed.clone()
            }
            .with_computed_id();
            produced = Some((task, attempt));
            break;
        }
        match produced {
            Some((task, attempts)) => {
                state.per_index.push((
                    index,
                    IndexOutcome::Produced {
                        task_id: task.task_id.clone(),
                        attempts,
                    },
                ));
                state.produced.push(task);
            }
            None => state.per_index.push((
                index,
                IndexOutcome::Skipped {
                    attempts: tries,
                    reason: last_reason,
                },
            )),
        }
    }
    Ok(state)
}
