//! Prompt templates and rendering.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` stand for literal
//! braces. A brace that does not open a `{identifier}` placeholder is kept as
//! written, since several listings embed JSON-like examples with single
//! braces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::ExamplePair;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AuthorRule,
    AuthorCode,
    JudgeRule,
    JudgeCode,
    JudgeAnswer,
    Expander,
    Analyst,
    Solver,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::AuthorRule,
        TemplateId::AuthorCode,
        TemplateId::JudgeRule,
        TemplateId::JudgeCode,
        TemplateId::JudgeAnswer,
        TemplateId::Expander,
        TemplateId::Analyst,
        TemplateId::Solver,
    ];

    fn raw(self) -> &'static str {
        match self {
            TemplateId::AuthorRule => include_str!("../../assets/prompts/author_rule.txt"),
            TemplateId::AuthorCode => include_str!("../../assets/prompts/author_code.txt"),
            TemplateId::JudgeRule => include_str!("../../assets/prompts/judge_rule.txt"),
            TemplateId::JudgeCode => include_str!("../../assets/prompts/judge_code.txt"),
            TemplateId::JudgeAnswer => include_str!("../../assets/prompts/judge_answer.txt"),
            TemplateId::Expander => include_str!("../../assets/prompts/expander.txt"),
            TemplateId::Analyst => include_str!("../../assets/prompts/analyst.txt"),
            TemplateId::Solver => include_str!("../../assets/prompts/solver.txt"),
        }
    }

    pub fn template(self) -> PromptTemplate {
        let raw = self.raw().trim_end_matches('\n');
        let body = raw.strip_prefix("System: ").unwrap_or(raw);
        let (system_text, user_text) = match body.split_once("\n\nUser:\n") {
            Some((s, u)) => (s, u),
            // the expander listing is a single system block
            None => (body, ""),
        };
        PromptTemplate {
            template_id: self,
            system_text,
            user_text,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub system_text: &'static str,
    pub user_text: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template} has no binding for placeholder `{placeholder}`")]
    Unbound { template: TemplateId, placeholder: String },
}

pub type Bindings = BTreeMap<&'static str, String>;

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let Some(at) = rest.find(['{', '}']) else {
            out.push(Piece::Text(rest));
            break;
        };
        if at > 0 {
            out.push(Piece::Text(&rest[..at]));
        }
        let tail = &rest[at..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push(Piece::Text("{"));
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push(Piece::Text("}"));
            rest = after;
        } else if let Some(end) = tail.starts_with('{').then(|| tail.find('}')).flatten() {
            let name = &tail[1..end];
            if is_ident(name) {
                out.push(Piece::Slot(name));
                rest = &tail[end + 1..];
            } else {
                out.push(Piece::Text(&tail[..1]));
                rest = &tail[1..];
            }
        } else {
            out.push(Piece::Text(&tail[..1]));
            rest = &tail[1..];
        }
    }
    out
}

impl PromptTemplate {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        for text in [self.system_text, self.user_text] {
            for piece in pieces(text) {
                if let Piece::Slot(name) = piece {
                    if !names.contains(&name) {
                        names.push(name);
                    }
                }
            }
        }
        names
    }

    fn fill(&self, text: &str, bindings: &Bindings) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(text.len());
        for piece in pieces(text) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match bindings.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::Unbound {
                            template: self.template_id,
                            placeholder: name.to_string(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }

    pub fn render(&self, bindings: &Bindings) -> Result<RenderedPrompt, TemplateError> {
        Ok(RenderedPrompt {
            template_id: self.template_id,
            system: self.fill(self.system_text, bindings)?,
            user: self.fill(self.user_text, bindings)?,
        })
    }
}

pub fn render_prompt(id: TemplateId, bindings: &Bindings) -> Result<RenderedPrompt, TemplateError> {
    id.template().render(bindings)
}

/// Appended to the code-author prompt: the engine needs the inputs that
/// become examples and query, which the rule pair alone does not provide.
pub fn input_set_addendum(count: usize, dimensionality: &str) -> String {
    format!(
        "\n\nAdditional field required in the same JSON object:\n  \"input_set\": a JSON list of exactly {count} distinct {dimensionality} inputs that `transform_grid` accepts. The last entry is used as the test query; the others become the worked examples. Use only strings, numbers and nested lists."
    )
}

/// Guidance injected for variation `index` (1 to 9).
pub fn variation_guidance(index: u8) -> &'static str {
    match index {
        1..=3 => "Standard variation. Produce an ordinary input of typical size that exercises the main logic of the rule.",
        4..=6 => "Edge case. Probe the boundaries of the rule: empty structures, single elements, or inputs made of one repeated element.",
        _ => "Complex or adversarial case. Produce a larger input or a misleading pattern that a shallow reading of the examples would get wrong.",
    }
}

/// One canonical value per line, or `(none)` for an empty history.
pub fn format_history(history: &[Value]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history
        .iter()
        .map(|v| format!("- {}", v.canonical()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Example pairs as the solver sees them.
pub fn format_examples(examples: &[ExamplePair]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "Example {}:\nInput: {}\nOutput: {}",
                i + 1,
                p.input.canonical(),
                p.output.canonical()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}
