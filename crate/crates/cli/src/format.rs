/// Formats `x` with 12 significant digits, fixed notation for moderate
/// magnitudes and scientific otherwise. Trailing zeros are dropped.
pub fn g12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Round first so that e.g. 9.9999999999999 picks the right exponent.
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::g12;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(g12(1.0 / 0.81), "1.23456790123");
        assert_eq!(g12(0.5), "0.5");
        assert_eq!(g12(-0.0625), "-0.0625");
        assert_eq!(g12(2952.0), "2952");
        assert_eq!(g12(1e-9), "1e-9");
        assert_eq!(g12(1.5e20), "1.5e20");
        assert_eq!(g12(0.0), "0");
        assert_eq!(g12(f64::NAN), "NaN");
        assert_eq!(g12(9.9999999999999), "10");
        assert_eq!(g12(123456789012.4), "123456789012");
    }
}
