//! Exact text form of `f64` values as C99-style hexadecimal floats.

/// Formats `x` as `[-]0x1.<13 hex digits>p<exp>`; subnormals use `0x0.` and
/// `p-1022`. Non-finite values become `nan`, `inf` or `-inf`.
pub fn format(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    match (exp, mantissa) {
        (0, 0) => format!("{sign}0x0p+0"),
        (0, m) => format!("{sign}0x0.{m:013x}p-1022"),
        (e, m) => format!("{sign}0x1.{m:013x}p{:+}", e - 1023),
    }
}

/// Inverse of [`format`].
pub fn parse(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => {
            let v = hexf_parse::parse_hexf64(s, false).ok()?;
            // The parser drops the sign of zero.
            Some(if v == 0.0 && s.starts_with('-') { -0.0 } else { v })
        }
    }
}
