//! Scripted model replies built from the shipped rules, for running the
//! whole pipeline without a provider.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::golden::{
    GoldenRule, ATBASH_DIGIT_ROTATION, FLAWED_BRACKET_ROTATION, INTERLEAVE_HALVES, ROW_COLUMN_SHIFT,
    VOXEL_ROTATION_ATBASH,
};
use crate::llm::{MockScript, Role, ScriptEntry};
use crate::pipeline::{CorpusPlan, PlanCell};
use crate::value::Value;

pub fn author_rule_reply(rule: &GoldenRule) -> String {
    let body = json!({
        "reasoning_of_creation": format!("A reversible {} rule.", rule.dimension.label()),
        "rule_description": rule.rule_description,
        "inverse_rule_description": rule.inverse_rule_description,
    });
    format!("```json\n{}\n```", serde_json::to_string_pretty(&body).expect("json"))
}

pub fn author_code_reply(rule: &GoldenRule, input_set: &[Value]) -> String {
    let body = json!({
        "reasoning": "Both functions implemented; the inverse undoes each step of the forward rule.",
        "python_code": rule.source,
        "input_set": input_set,
    });
    serde_json::to_string_pretty(&body).expect("json")
}

pub fn judge_reply(is_valid: bool, reasoning: &str) -> String {
    json!({"is_valid": is_valid, "reasoning": reasoning}).to_string()
}

/// `None` asks the pipeline to stop expanding.
pub fn expander_reply(new_input: Option<&Value>) -> String {
    let body = match new_input {
        Some(x) => json!({
            "reasoning": "Rearranged the tokens of an earlier input.",
            "variation_type": "Shuffled",
            "new_input": x,
            "status": "CONTINUE",
        }),
        None => json!({
            "reasoning": "No further distinct inputs.",
            "variation_type": "None",
            "new_input": null,
            "status": "SKIPPED_LOW_ENTROPY",
        }),
    };
    serde_json::to_string_pretty(&body).expect("json")
}

fn shuffle_chars(s: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    chars.shuffle(rng);
    chars.into_iter().collect()
}

/// `template` with its scalar leaves permuted (and the characters inside
/// multi-character tokens shuffled), keeping the shape.
pub fn shuffled_like(template: &Value, rng: &mut ChaCha8Rng) -> Value {
    let mut leaves = Vec::new();
    template.for_each_scalar(&mut |v| leaves.push(v.clone()));
    leaves.shuffle(rng);
    let mut leaves = leaves.into_iter().map(|v| match v {
        Value::Token(s) if s.chars().count() > 1 => Value::Token(shuffle_chars(&s, rng)),
        other => other,
    });
    let rebuilt: Result<Value, ()> = template.try_map_scalars(&mut |_| Ok(leaves.next().expect("same leaf count")));
    rebuilt.expect("infallible")
}

/// Up to `count` inputs shaped like `template`, distinct from each other and
/// from `taken`.
pub fn fresh_inputs(template: &Value, taken: &[Value], count: usize, seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<String> = taken.iter().map(Value::canonical).collect();
    let mut out = Vec::new();
    for _ in 0..count * 50 {
        if out.len() == count {
            break;
        }
        let x = shuffled_like(template, &mut rng);
        if seen.insert(x.canonical()) {
            out.push(x);
        }
    }
    out
}

/// One scripted seed attempt in request order.
#[derive(Debug, Clone)]
pub struct ScriptedAttempt {
    pub rule: GoldenRule,
    pub input_set: Vec<Value>,
    pub judge_rule_accepts: bool,
    /// Whether the gate admits the rule; only then is a code-judge reply
    /// and an expansion consumed.
    pub admitted: bool,
}

impl ScriptedAttempt {
    /// The rule with the inputs of its published task.
    pub fn from_listing(rule: GoldenRule) -> Self {
        let task = rule.task().expect("rule has a listing");
        let input_set = task.rule.expect("listing tasks carry rules").input_set;
        ScriptedAttempt {
            rule,
            input_set,
            judge_rule_accepts: true,
            admitted: true,
        }
    }
}

/// Script for a sequence of seed attempts, then one expansion per entry of
/// `expansion_order` (indices into `attempts`), in the order a width-1
/// corpus run consumes them.
pub fn corpus_script(attempts: &[ScriptedAttempt], expansion_order: &[usize], variations: usize, seed: u64) -> MockScript {
    let mut script = MockScript::default();
    for a in attempts {
        script.push(Role::AuthorRule, ScriptEntry::text(author_rule_reply(&a.rule)));
        let verdict = if a.judge_rule_accepts {
            judge_reply(true, "The inverse undoes the forward rule step by step.")
        } else {
            judge_reply(false, "The forward rule discards information.")
        };
        script.push(Role::JudgeRule, ScriptEntry::text(verdict));
        if a.judge_rule_accepts {
            script.push(Role::AuthorCode, ScriptEntry::text(author_code_reply(&a.rule, &a.input_set)));
        }
    }
    for &i in expansion_order {
        let a = &attempts[i];
        let query = a.input_set.last().expect("non-empty input set");
        let fresh = fresh_inputs(query, &a.input_set, variations, seed.wrapping_add(i as u64));
        for x in &fresh {
            script.push(Role::Expander, ScriptEntry::text(expander_reply(Some(x))));
        }
        if fresh.len() < variations {
            script.push(Role::Expander, ScriptEntry::text(expander_reply(None)));
        }
    }
    script.fallback.insert(
        Role::JudgeCode,
        ScriptEntry::text(judge_reply(true, "Code matches both descriptions; examples are sufficient.")),
    );
    script
        .fallback
        .insert(Role::Expander, ScriptEntry::text(expander_reply(None)));
    script
}

/// Indices of admitted attempts, in attempt order.
pub fn admitted_order(attempts: &[ScriptedAttempt]) -> Vec<usize> {
    (0..attempts.len())
        .filter(|&i| attempts[i].judge_rule_accepts && attempts[i].admitted)
        .collect()
}

/// The built-in offline run: four cells, one seed each, with a flawed first
/// attempt in the 1D cell that the cycle check rejects.
pub fn selftest_script(seed: u64) -> (CorpusPlan, MockScript) {
    let flawed = ScriptedAttempt {
        rule: FLAWED_BRACKET_ROTATION,
        input_set: ["<ab>", "<abcd>", "<abc>", "x<hello>y"].map(Value::token).to_vec(),
        judge_rule_accepts: true,
        admitted: false,
    };
    let attempts = [
        flawed,
        ScriptedAttempt::from_listing(ROW_COLUMN_SHIFT),
        ScriptedAttempt::from_listing(ATBASH_DIGIT_ROTATION),
        ScriptedAttempt::from_listing(VOXEL_ROTATION_ATBASH),
        ScriptedAttempt::from_listing(INTERLEAVE_HALVES),
    ];
    let plan = CorpusPlan {
        cells: attempts[..4]
            .iter()
            .map(|a| PlanCell {
                dimension: a.rule.dimension,
                domain: a.rule.domain,
                seeds: 1,
            })
            .collect(),
        attempts_per_seed: 2,
        remap_symbolic: true,
    };
    // seeds are expanded in plan-cell order; the interleave retry fills cell 0
    let script = corpus_script(&attempts, &[4, 1, 2, 3], 9, seed);
    (plan, script)
}
