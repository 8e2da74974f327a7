//! Hexadecimal floating-point text (`0x1.8p+1`), used where values must round-trip bit-exactly.

/// Formats a finite `f64` in C99 `%a` style with trailing zero nibbles trimmed.
pub fn format(v: f64) -> String {
    assert!(v.is_finite(), "hex float of non-finite value");
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut frac = format!("{mantissa:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let dot = if frac.is_empty() { "" } else { "." };
    let esign = if exp >= 0 { "+" } else { "-" };
    format!("{sign}0x{lead}{dot}{frac}p{esign}{}", exp.abs())
}

pub fn parse(s: &str) -> Option<f64> {
    hexf_parse::parse_hexf64(s.trim(), false).ok()
}
