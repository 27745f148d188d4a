//! Canonical byte encoding for model values.
//!
//! Signatures and content digests are computed over this encoding, so it has
//! to be fully deterministic: compact JSON, object keys sorted ascending
//! bytewise, byte fields rendered as lowercase hex by their serde impls,
//! integers in plain decimal. Two structurally equal values always encode to
//! identical bytes regardless of map insertion order.

use serde::Serialize;
use serde_json::Value;

/// Encode a model value into its canonical byte form.
///
/// All model types serialize to finite JSON trees, so this cannot fail for
/// values produced by this crate.
pub fn canonical_encode<T: Serialize>(value: &T) -> Vec<u8> {
    let tree = serde_json::to_value(value).expect("model values are JSON-encodable");
    let mut out = Vec::with_capacity(128);
    write_canonical(&tree, &mut out);
    out
}

/// Canonical encoding of an already-parsed JSON tree.
pub fn canonical_encode_value(value: &Value) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        // serde_json renders integers in plain decimal and floats via ryu,
        // both deterministic for a given value.
        Value::Number(n) => serde_json::to_writer(&mut *out, n).expect("number encoding"),
        Value::String(s) => serde_json::to_writer(&mut *out, s).expect("string encoding"),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            // Sort explicitly rather than relying on the map's iteration order.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable();
            out.push(b'{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, key).expect("key encoding");
                out.push(b':');
                write_canonical(&map[key.as_str()], out);
            }
            out.push(b'}');
        }
    }
}
