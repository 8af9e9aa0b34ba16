//! Wire format shared with the worker process.

use serde::{Deserialize, Serialize};

use super::{AstMetrics, ExecStatus, Limits};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Forward,
    Inverse,
    Cycle,
    Metrics,
    Ping,
}

#[derive(Debug, Clone, Serialize)]
pub struct Request<'a> {
    pub id: u64,
    pub op: Op,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<serde_json::Value>>,
    pub limits: Limits,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Handshake {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    pub status: String,
    #[serde(default)]
    pub value: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub duration_ms: u64,
    #[serde(default)]
    pub metrics: Option<AstMetrics>,
}

/// Maps a wire status string. `RunnerCrashed` never appears on the wire.
pub fn parse_status(status: &str) -> Option<ExecStatus> {
    Some(match status {
        "ok" => ExecStatus::Ok,
        "raised_error" => ExecStatus::RaisedError,
        "timeout" => ExecStatus::Timeout,
        "memory_exceeded" => ExecStatus::MemoryExceeded,
        "protocol_error" => ExecStatus::ProtocolError,
        _ => return None,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub(crate) struct WireCycle {
    pub passes: Vec<bool>,
    pub forward: Vec<serde_json::Value>,
    pub roundtrip: Vec<serde_json::Value>,
    pub counterexample: Option<Vec<serde_json::Value>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_omits_absent_fields() {
        let req = Request {
            id: 7,
            op: Op::Ping,
            source: None,
            input: None,
            inputs: None,
            limits: Limits::default(),
        };
        let text = serde_json::to_string(&req).unwrap();
        assert_eq!(
            text,
            r#"{"id":7,"op":"ping","limits":{"wall_clock_ms":2000,"memory_mb":256,"output_bytes_max":1048576}}"#
        );
    }

    #[test]
    fn response_with_metrics_parses() {
        let r: Response = serde_json::from_str(
            r#"{"id":3,"status":"ok","duration_ms":1,"metrics":{"max_loop_depth":0,"total_ifs":0,"nested_if_depth":0,"conditional_complexity":1,"mutability_score":0,"return_complexity":1}}"#,
        )
        .unwrap();
        assert_eq!(r.id, Some(3));
        assert_eq!(parse_status(&r.status), Some(ExecStatus::Ok));
        assert_eq!(r.metrics.unwrap().as_array(), [0, 0, 0, 1, 0, 1]);
        assert_eq!(parse_status("runner_crashed"), None);
    }
}
