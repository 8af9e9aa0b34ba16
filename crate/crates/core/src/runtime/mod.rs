//! Client side of the rule-execution protocol.
//!
//! Rule source never runs in the engine process. Each request goes to a worker
//! subprocess over newline-delimited JSON on its standard streams; the worker
//! applies the forward or inverse entry point, runs cycle batches, and reports
//! syntax-tree metrics.

mod pool;
pub mod protocol;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::Value;

pub use pool::{RunnerCommand, RunnerHandle, RunnerPool, StartupError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub wall_clock_ms: u64,
    pub memory_mb: u64,
    pub output_bytes_max: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            wall_clock_ms: 2000,
            memory_mb: 256,
            output_bytes_max: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Ok,
    RaisedError,
    Timeout,
    MemoryExceeded,
    ProtocolError,
    RunnerCrashed,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Result of one request. `value` is present iff `status` is `Ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome<T> {
    pub status: ExecStatus,
    pub value: Option<T>,
    pub error_text: Option<String>,
    pub duration_ms: u64,
}

pub type ExecOutcome = Outcome<Value>;

impl<T> Outcome<T> {
    pub fn ok(value: T, duration_ms: u64) -> Self {
        Outcome {
            status: ExecStatus::Ok,
            value: Some(value),
            error_text: None,
            duration_ms,
        }
    }

    pub fn failed(status: ExecStatus, error: impl Into<String>, duration_ms: u64) -> Self {
        debug_assert!(status != ExecStatus::Ok);
        Outcome {
            status,
            value: None,
            error_text: Some(error.into()),
            duration_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// Re-types a failed outcome.
    pub fn cast_failure<U>(&self) -> Outcome<U> {
        Outcome {
            status: self.status,
            value: None,
            error_text: self.error_text.clone(),
            duration_ms: self.duration_ms,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Outcome<U> {
        Outcome {
            status: self.status,
            value: self.value.map(f),
            error_text: self.error_text,
            duration_ms: self.duration_ms,
        }
    }
}

/// Worker-side round trip over a batch of inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleBatch {
    pub passes: Vec<bool>,
    pub forward: Vec<Value>,
    pub roundtrip: Vec<Value>,
    pub counterexample: Option<(Value, Value, Value)>,
}

/// Syntax-tree complexity of a rule module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AstMetrics {
    pub max_loop_depth: u32,
    pub total_ifs: u32,
    pub nested_if_depth: u32,
    /// Maximum cyclomatic complexity across functions.
    pub conditional_complexity: u32,
    pub mutability_score: u32,
    pub return_complexity: u32,
}

impl AstMetrics {
    pub const FIELD_NAMES: [&'static str; 6] = [
        "max_loop_depth",
        "total_ifs",
        "nested_if_depth",
        "conditional_complexity",
        "mutability_score",
        "return_complexity",
    ];

    pub fn as_array(&self) -> [u32; 6] {
        [
            self.max_loop_depth,
            self.total_ifs,
            self.nested_if_depth,
            self.conditional_complexity,
            self.mutability_score,
            self.return_complexity,
        ]
    }
}

/// Anything that can run rule source out of process.
pub trait RuleExecutor: Send + Sync {
    fn apply_forward(&self, source: &str, input: &Value) -> ExecOutcome;
    fn apply_inverse(&self, source: &str, output: &Value) -> ExecOutcome;
    fn cycle(&self, source: &str, inputs: &[Value]) -> Outcome<CycleBatch>;
    fn code_metrics(&self, source: &str) -> Outcome<AstMetrics>;
}

impl<E: RuleExecutor + ?Sized> RuleExecutor for &E {
    fn apply_forward(&self, source: &str, input: &Value) -> ExecOutcome {
        (**self).apply_forward(source, input)
    }
    fn apply_inverse(&self, source: &str, output: &Value) -> ExecOutcome {
        (**self).apply_inverse(source, output)
    }
    fn cycle(&self, source: &str, inputs: &[Value]) -> Outcome<CycleBatch> {
        (**self).cycle(source, inputs)
    }
    fn code_metrics(&self, source: &str) -> Outcome<AstMetrics> {
        (**self).code_metrics(source)
    }
}
