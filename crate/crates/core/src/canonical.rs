//! Deterministic JSON encoding for everything this tool writes.
//!
//! Canonical bytes are what the golden files and the byte-identity checks
//! compare, so the rules are fixed:
//! - object keys sorted lexicographically at every depth
//! - arrays keep their order
//! - minified output, no trailing whitespace
//!
//! Floats rely on serde_json's shortest-round-trip formatting, which is
//! stable for a given value. The explicit re-sort below keeps the output
//! canonical even if some dependency turns on serde_json's order-preserving
//! map feature.

use serde::Serialize;
use serde_json::{Map, Value};

/// Serialize `value` to canonical JSON bytes.
pub fn to_canonical_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let canon = sort_keys(v);
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &canon)?;
    Ok(out)
}

/// Canonical bytes plus a trailing newline: the exact content of every file
/// this tool writes.
pub fn to_canonical_file_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut bytes = to_canonical_json_bytes(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut sorted = Map::with_capacity(entries.len());
            for (k, v) in entries {
                sorted.insert(k, sort_keys(v));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_at_every_depth() {
        let v = json!({"zeta": {"b": 1, "a": 2}, "alpha": [ {"y": 0, "x": 1} ]});
        let bytes = to_canonical_json_bytes(&v).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"alpha":[{"x":1,"y":0}],"zeta":{"a":2,"b":1}}"#
        );
    }

    #[test]
    fn serialization_is_repeatable() {
        let v = json!({"score": -4.655138100294391, "ids": [3, 1, 2]});
        assert_eq!(to_canonical_json_bytes(&v).unwrap(), to_canonical_json_bytes(&v).unwrap());
    }

    #[test]
    fn file_bytes_end_with_newline() {
        let bytes = to_canonical_file_bytes(&json!({"a": 1})).unwrap();
        assert_eq!(bytes.last(), Some(&b'\n'));
    }
}
