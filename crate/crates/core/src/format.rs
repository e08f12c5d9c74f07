//! Locale-independent number formatting for CSV output.

/// Formats `x` like C's `%.{sig}g`: `sig` significant digits, trailing zeros
/// removed, scientific notation outside `1e-4 <= |x| < 10^sig`.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    // Round first, then read the exponent off the rounded value so that
    // 9.9999999999996 -> 10 picks the right notation.
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= sig as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

/// Twelve significant digits, the precision used by every CSV writer here.
pub fn fmt12(x: f64) -> String {
    fmt_sig(x, 12)
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases: &[(f64, &str)] = &[
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333"),
            (3411.5, "3411.5"),
            (123456789012.0, "123456789012"),
            (1234567890123.0, "1.23456789012e+12"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999999999996, "10"),
            (std::f64::consts::FRAC_1_SQRT_2, "0.707106781187"),
        ];
        for &(x, want) in cases {
            assert_eq!(fmt12(x), want, "formatting {x:e}");
        }
    }

    #[test]
    fn reparse_is_stable() {
        for &x in &[0.123456789012345, 98765.4321, 1e-9, 7.0e20, -3.0e-7] {
            let s = fmt12(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(fmt12(y), s);
            assert!(((x - y) / x).abs() < 1e-11);
        }
    }
}
