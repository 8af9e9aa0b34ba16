//! Canonical JSON text and content digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<_> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            serde_json::Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, sort_keys(v)))
                    .collect(),
            )
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.into_iter().map(sort_keys).collect())
        }
        other => other,
    }
}

/// Minified, key-sorted JSON text.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("canonical payloads are JSON-representable");
    serde_json::to_string(&sort_keys(json)).expect("JSON values always serialize")
}

/// Key-sorted, two-space indented JSON text for files meant to be read.
pub fn to_canonical_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("canonical payloads are JSON-representable");
    serde_json::to_string_pretty(&sort_keys(json)).expect("JSON values always serialize")
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Hex SHA-256 of the canonical serialization.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(to_canonical_string(value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_recursively() {
        let v = json!({"b": 1, "a": {"d": [ {"z": 0, "y": 1} ], "c": null}});
        assert_eq!(
            to_canonical_string(&v),
            r#"{"a":{"c":null,"d":[{"y":1,"z":0}]},"b":1}"#
        );
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(digest_of(&json!({"a":1,"b":2})), digest_of(&json!({"b":2,"a":1})));
    }
}
