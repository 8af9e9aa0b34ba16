//! Extraction of structured objects from free-form model replies.

use serde_json::{Map, Value as Json};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Bool,
    Text,
    /// A string drawn from a fixed set.
    OneOf(&'static [&'static str]),
    /// Any JSON value, including null.
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    pub name: &'static str,
    pub kind: FieldKind,
    pub required: bool,
}

impl Field {
    pub const fn required(name: &'static str, kind: FieldKind) -> Self {
        Field { name, kind, required: true }
    }

    pub const fn optional(name: &'static str, kind: FieldKind) -> Self {
        Field { name, kind, required: false }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ReplyFormatError {
    #[error("reply contains no parseable JSON object")]
    NoObject,
    #[error("reply object lacks required field `{0}`")]
    MissingField(String),
    #[error("field `{field}` has an invalid value: {detail}")]
    InvalidField { field: String, detail: String },
}

/// Contents of ``` fenced blocks, in order.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        // skip the info string (e.g. "json") up to the end of the line
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// Balanced `{...}` spans starting at each top-level opening brace,
/// respecting string literals.
fn object_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut quote: Option<u8> = None;
        let mut escaped = false;
        let mut end = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            if let Some(q) = quote {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == q {
                    quote = None;
                }
                continue;
            }
            match b {
                b'"' | b'\'' => quote = Some(b),
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(j) => {
                spans.push(&text[i..=j]);
                i = j + 1;
            }
            None => i += 1,
        }
    }
    spans
}

/// Parses one candidate, tolerating comments, trailing commas and
/// single-quoted strings.
fn parse_lenient(candidate: &str) -> Option<Map<String, Json>> {
    let parsed: Json = serde_json::from_str(candidate)
        .ok()
        .or_else(|| json5::from_str(candidate).ok())?;
    match parsed {
        Json::Object(map) => Some(map),
        _ => None,
    }
}

/// All objects found in `text`: fenced blocks first, then the remaining
/// prose, each in order of appearance.
pub fn candidate_objects(text: &str) -> Vec<Map<String, Json>> {
    let mut out = Vec::new();
    let mut sources: Vec<&str> = fenced_blocks(text);
    sources.push(text);
    for source in sources {
        if let Some(map) = parse_lenient(source.trim()) {
            out.push(map);
            continue;
        }
        out.extend(object_spans(source).into_iter().filter_map(parse_lenient));
    }
    out
}

fn check_field(map: &Map<String, Json>, field: &Field) -> Result<(), ReplyFormatError> {
    let Some(value) = map.get(field.name) else {
        return if field.required {
            Err(ReplyFormatError::MissingField(field.name.to_string()))
        } else {
            Ok(())
        };
    };
    let invalid = |detail: String| ReplyFormatError::InvalidField {
        field: field.name.to_string(),
        detail,
    };
    match field.kind {
        FieldKind::Bool if !value.is_boolean() => Err(invalid(format!("expected a boolean, got {value}"))),
        FieldKind::Text if !value.is_string() => Err(invalid(format!("expected a string, got {value}"))),
        FieldKind::OneOf(allowed) => match value.as_str() {
            Some(s) if allowed.contains(&s) => Ok(()),
            _ => Err(invalid(format!("expected one of {allowed:?}, got {value}"))),
        },
        _ => Ok(()),
    }
}

/// First object in the reply that satisfies every field constraint. When
/// objects exist but none fits, the error describes the first object.
pub fn parse_structured_reply(text: &str, fields: &[Field]) -> Result<Map<String, Json>, ReplyFormatError> {
    let candidates = candidate_objects(text);
    let mut first_error = None;
    for map in candidates {
        match fields.iter().try_for_each(|f| check_field(&map, f)) {
            Ok(()) => return Ok(map),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or(ReplyFormatError::NoObject))
}
