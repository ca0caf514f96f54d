//! Deterministic JSON rendering shared by all report types.
//!
//! Key order follows struct field order and floats use the shortest
//! representation that round-trips, so identical values always serialize
//! to identical bytes.

use serde::Serialize;

/// Pretty-printed JSON with a trailing newline.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report types serialize infallibly");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        zeta: f64,
        alpha: f64,
        count: u64,
    }

    #[test]
    fn field_order_and_float_format() {
        let s = canonical_json(&Sample { zeta: 0.1 + 0.2, alpha: 2.0, count: 3 });
        assert_eq!(s, "{\n  \"zeta\": 0.30000000000000004,\n  \"alpha\": 2.0,\n  \"count\": 3\n}\n");
    }
}
