//! The task datum: scalar tokens and numbers nested into 1D sequences,
//! 2D grids and 3D voxel arrays.
//!
//! Values compare by their canonical serialization, so the number `1` and the
//! token `"1"` are different values.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Number;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Token(String),
    Number(Number),
    Sequence(Vec<Value>),
}

/// Nesting depth of a shape-consistent value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    Scalar,
    D1,
    D2,
    D3,
}

impl Dimension {
    pub fn from_depth(depth: usize) -> Option<Self> {
        match depth {
            0 => Some(Dimension::Scalar),
            1 => Some(Dimension::D1),
            2 => Some(Dimension::D2),
            3 => Some(Dimension::D3),
            _ => None,
        }
    }

    pub fn depth(self) -> usize {
        match self {
            Dimension::Scalar => 0,
            Dimension::D1 => 1,
            Dimension::D2 => 2,
            Dimension::D3 => 3,
        }
    }

    /// Short label used in tables ("1D", "2D", "3D").
    pub fn label(self) -> &'static str {
        match self {
            Dimension::Scalar => "0D",
            Dimension::D1 => "1D",
            Dimension::D2 => "2D",
            Dimension::D3 => "3D",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("mixed nesting depth at {path}: sibling depths {left} and {right}")]
    MixedDepth {
        path: String,
        left: usize,
        right: usize,
    },
    #[error("nesting depth {depth} exceeds the supported 3 dimensions")]
    TooDeep { depth: usize },
    #[error("unsupported JSON {kind} at {path}")]
    Unsupported { path: String, kind: &'static str },
}

/// Depth of a subtree. Empty sequences only bound the depth from below, so
/// `[[], [1]]` is a consistent 2D value.
#[derive(Debug, Clone, Copy)]
struct Shape {
    depth: usize,
    open: bool,
}

fn merge(path: &str, acc: Option<Shape>, next: Shape) -> Result<Shape, ShapeError> {
    let Some(acc) = acc else { return Ok(next) };
    let mixed = |l: usize, r: usize| ShapeError::MixedDepth {
        path: path.to_string(),
        left: l,
        right: r,
    };
    match (acc.open, next.open) {
        (false, false) if acc.depth != next.depth => Err(mixed(acc.depth, next.depth)),
        (false, false) => Ok(acc),
        (false, true) if next.depth > acc.depth => Err(mixed(acc.depth, next.depth)),
        (false, true) => Ok(acc),
        (true, false) if acc.depth > next.depth => Err(mixed(acc.depth, next.depth)),
        (true, false) => Ok(next),
        (true, true) => Ok(Shape {
            depth: acc.depth.max(next.depth),
            open: true,
        }),
    }
}

fn shape_of(v: &Value, path: &mut String) -> Result<Shape, ShapeError> {
    match v {
        Value::Null | Value::Token(_) | Value::Number(_) => Ok(Shape {
            depth: 0,
            open: false,
        }),
        Value::Sequence(items) if items.is_empty() => Ok(Shape {
            depth: 1,
            open: true,
        }),
        Value::Sequence(items) => {
            let mut acc = None;
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                let s = shape_of(item, path)?;
                path.truncate(len);
                acc = Some(merge(path, acc, s)?);
            }
            let inner = acc.expect("non-empty sequence");
            Ok(Shape {
                depth: inner.depth + 1,
                open: inner.open,
            })
        }
    }
}

impl Value {
    pub fn token(s: impl Into<String>) -> Self {
        Value::Token(s.into())
    }

    pub fn int(n: i64) -> Self {
        Value::Number(n.into())
    }

    pub fn seq(items: impl IntoIterator<Item = Value>) -> Self {
        Value::Sequence(items.into_iter().collect())
    }

    /// A 1D sequence of single tokens.
    pub fn tokens<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Value::Sequence(items.into_iter().map(|s| Value::Token(s.into())).collect())
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Value::Sequence(_))
    }

    /// True for an empty sequence or a sequence whose leaves are all empty.
    pub fn is_empty_structure(&self) -> bool {
        match self {
            Value::Sequence(items) => items.iter().all(Value::is_empty_structure),
            _ => false,
        }
    }

    /// Checks that sibling depths agree.
    pub fn check_shape(&self) -> Result<(), ShapeError> {
        shape_of(self, &mut String::from("$")).map(|_| ())
    }

    /// Uniform nesting depth. An empty top-level sequence reports 1.
    pub fn depth(&self) -> Result<usize, ShapeError> {
        shape_of(self, &mut String::from("$")).map(|s| s.depth)
    }

    /// Per-level lengths in depth-first order; two values with equal length
    /// profiles have the same structure.
    pub fn length_profile(&self) -> Vec<(usize, usize)> {
        fn walk(v: &Value, level: usize, out: &mut Vec<(usize, usize)>) {
            if let Value::Sequence(items) = v {
                out.push((level, items.len()));
                for item in items {
                    walk(item, level + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, 0, &mut out);
        out
    }

    /// Visits every scalar leaf.
    pub fn for_each_scalar<'a>(&'a self, f: &mut impl FnMut(&'a Value)) {
        match self {
            Value::Sequence(items) => items.iter().for_each(|i| i.for_each_scalar(f)),
            leaf => f(leaf),
        }
    }

    /// Rebuilds the value with every scalar leaf replaced.
    pub fn try_map_scalars<E>(
        &self,
        f: &mut impl FnMut(&Value) -> Result<Value, E>,
    ) -> Result<Value, E> {
        match self {
            Value::Sequence(items) => items
                .iter()
                .map(|i| i.try_map_scalars(f))
                .collect::<Result<Vec<_>, E>>()
                .map(Value::Sequence),
            leaf => f(leaf),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Token(s) => serde_json::Value::String(s.clone()),
            Value::Number(n) => serde_json::Value::Number(n.clone()),
            Value::Sequence(items) => {
                serde_json::Value::Array(items.iter().map(Value::to_json).collect())
            }
        }
    }

    /// Converts without the shape check.
    fn from_json_at(json: &serde_json::Value, path: &mut String) -> Result<Value, ShapeError> {
        Ok(match json {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::String(s) => Value::Token(s.clone()),
            serde_json::Value::Number(n) => Value::Number(n.clone()),
            serde_json::Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    let len = path.len();
                    path.push_str(&format!("[{i}]"));
                    out.push(Value::from_json_at(item, path)?);
                    path.truncate(len);
                }
                Value::Sequence(out)
            }
            serde_json::Value::Bool(_) => {
                return Err(ShapeError::Unsupported {
                    path: path.clone(),
                    kind: "boolean",
                })
            }
            serde_json::Value::Object(_) => {
                return Err(ShapeError::Unsupported {
                    path: path.clone(),
                    kind: "object",
                })
            }
        })
    }

    /// Parses a JSON tree, rejecting objects, booleans and mixed-depth siblings.
    pub fn from_json(json: &serde_json::Value) -> Result<Value, ShapeError> {
        let v = Value::from_json_at(json, &mut String::from("$"))?;
        v.check_shape()?;
        Ok(v)
    }

    pub fn parse(text: &str) -> Result<Value, ValueParseError> {
        let json: serde_json::Value = serde_json::from_str(text)?;
        Ok(Value::from_json(&json)?)
    }

    /// Minified canonical text; the identity used for equality, hashing and
    /// duplicate detection.
    pub fn canonical(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("values always serialize")
    }
}

#[derive(Debug, Error)]
pub enum ValueParseError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => serializer.serialize_unit(),
            Value::Token(s) => serializer.serialize_str(s),
            Value::Number(n) => n.serialize(serializer),
            Value::Sequence(items) => items.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(deserializer)?;
        Value::from_json(&json).map_err(serde::de::Error::custom)
    }
}

/// Uniform nesting depth as a dimension.
pub fn value_dimension(v: &Value) -> Result<Dimension, ShapeError> {
    let depth = v.depth()?;
    Dimension::from_depth(depth).ok_or(ShapeError::TooDeep { depth })
}

/// Character-for-character equality of canonical serializations.
pub fn value_equal(a: &Value, b: &Value) -> bool {
    a.canonical() == b.canonical()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn v(j: serde_json::Value) -> Value {
        Value::from_json(&j).unwrap()
    }

    #[test]
    fn dimensions_of_listing_shapes() {
        assert_eq!(value_dimension(&v(json!(["x"]))).unwrap(), Dimension::D1);
        assert_eq!(
            value_dimension(&v(json!([[1, 2], [3, 4]]))).unwrap(),
            Dimension::D2
        );
        assert_eq!(value_dimension(&v(json!([[["M"]]]))).unwrap(), Dimension::D3);
        assert_eq!(value_dimension(&v(json!([]))).unwrap(), Dimension::D1);
        assert_eq!(value_dimension(&v(json!("a"))).unwrap(), Dimension::Scalar);
    }

    #[test]
    fn strings_as_rows_stay_one_dimensional() {
        let rows = v(json!(["FooBar", "Baz123!", ""]));
        assert_eq!(value_dimension(&rows).unwrap(), Dimension::D1);
    }

    #[test]
    fn empty_rows_agree_with_any_depth() {
        assert_eq!(value_dimension(&v(json!([[], [1]]))).unwrap(), Dimension::D2);
        assert_eq!(value_dimension(&v(json!([[[]], []]))).unwrap(), Dimension::D3);
        assert_eq!(value_dimension(&v(json!([[], []]))).unwrap(), Dimension::D2);
    }

    #[test]
    fn mixed_depth_is_rejected() {
        let err = Value::from_json(&json!([1, [2]])).unwrap_err();
        assert!(matches!(err, ShapeError::MixedDepth { .. }), "{err}");
        let err = Value::from_json(&json!([[1], [[2]]])).unwrap_err();
        assert!(matches!(err, ShapeError::MixedDepth { .. }));
        // an empty row cannot sit next to scalars
        assert!(Value::from_json(&json!([1, []])).is_err());
    }

    #[test]
    fn four_dimensions_are_too_deep() {
        let err = value_dimension(&v(json!([[[[1]]]]))).unwrap_err();
        assert_eq!(err, ShapeError::TooDeep { depth: 4 });
    }

    #[test]
    fn objects_and_booleans_are_unsupported() {
        assert!(matches!(
            Value::from_json(&json!([{"a": 1}])),
            Err(ShapeError::Unsupported { kind: "object", .. })
        ));
        assert!(Value::from_json(&json!(true)).is_err());
    }

    #[test]
    fn equality_is_character_exact() {
        let a = v(json!(["c", "a", "d", "b"]));
        assert!(value_equal(&a, &a.clone()));
        assert!(value_equal(&v(json!([])), &v(json!([]))));
        assert!(!value_equal(&v(json!([[1, 2]])), &v(json!([[1, 2], [3, 4]]))));
        assert!(!value_equal(&Value::int(1), &Value::token("1")));
        assert!(!value_equal(&v(json!(1)), &v(json!(1.0))));
    }

    #[test]
    fn canonical_form_is_minified() {
        assert_eq!(v(json!([["a", 1], [null, "b"]])).canonical(), r#"[["a",1],[null,"b"]]"#);
    }

    #[test]
    fn serde_round_trip() {
        let x = v(json!([[["A", "b"], ["C", "1"]], [["x", "!"], ["Z", "z"]]]));
        let text = serde_json::to_string(&x).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn empty_structure_detection() {
        assert!(v(json!([])).is_empty_structure());
        assert!(v(json!([[], []])).is_empty_structure());
        assert!(!v(json!([[1]])).is_empty_structure());
    }
}
