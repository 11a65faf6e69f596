//! Byte-stable JSON: floats rounded to 12 significant digits, object keys
//! sorted, two-space indentation.

use serde::Serialize;
use serde_json::{Map, Number, Value};

const DIGITS: i32 = 12;

const POW10: [f64; 23] = [
    1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12, 1e13, 1e14, 1e15, 1e16, 1e17, 1e18, 1e19, 1e20,
    1e21, 1e22,
];

/// Rounds to the nearest value with 12 significant decimal digits.
///
/// The result is the double nearest to `m · 10^-p` for an integer mantissa
/// `m` of at most 12 digits, which is what parsing the decimal text gives,
/// so quantized values survive a text round trip unchanged.
pub fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    let exp2 = ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    if exp2 == -1023 {
        return quantize_slow(x);
    }
    // Decimal exponent estimate, possibly one too low; corrected below.
    let mut p = DIGITS - 1 - (exp2 as f64 * std::f64::consts::LOG10_2).floor() as i32;
    for _ in 0..4 {
        // Scale factors must be exact powers of ten.
        if !(-22..=22).contains(&p) {
            return quantize_slow(x);
        }
        let scale = POW10[p.unsigned_abs() as usize];
        let m = if p >= 0 { (x * scale).round() } else { (x / scale).round() };
        if m.abs() >= POW10[DIGITS as usize] {
            p -= 1;
        } else if m.abs() < POW10[DIGITS as usize - 1] {
            p += 1;
        } else {
            let q = if p >= 0 { m / scale } else { m * scale };
            return if q == 0.0 { 0.0 } else { q };
        }
    }
    quantize_slow(x)
}

fn quantize_slow(x: f64) -> f64 {
    let q: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let q = quantize(n.as_f64().expect("f64 number"));
            Number::from_f64(q).map(Value::Number).unwrap_or(Value::Null)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonicalize(v));
            }
            Value::Object(out)
        }
        other => other,
    }
}

/// Canonical pretty JSON document.
pub fn to_canonical_string<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Canonical single-line JSON (for JSON-lines records and wire messages).
pub fn to_canonical_line<T: Serialize>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string(&canonicalize(serde_json::to_value(value)?))
}
