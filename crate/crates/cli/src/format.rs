//! Number formatting shared by every command.

/// Formats `v` with 9 significant digits, in positional notation when the
/// decimal exponent lies in `-5..9` and scientific notation otherwise.
/// Zero prints as `0.000000000`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.000000000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    // rounding can carry into the next decade, so read the exponent back
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        sci
    }
}

/// `v` rounded to 9 significant digits.
pub fn round9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.15865525393145705), "0.158655254");
        assert_eq!(sig9(0.0), "0.000000000");
        assert_eq!(sig9(-0.0), "0.000000000");
        assert_eq!(sig9(2.0), "2.00000000");
        assert_eq!(sig9(123.456), "123.456000");
        assert_eq!(sig9(0.00012345678912), "0.000123456789");
        assert_eq!(sig9(0.99999999996), "1.00000000");
        assert_eq!(sig9(1.5e-9), "1.50000000e-9");
        assert_eq!(sig9(-3.25e12), "-3.25000000e12");
    }

    #[test]
    fn rounding_matches_printed_value() {
        for v in [0.15865525393145705, 1.0 / 3.0, 12345.678901234, 7.6e-24] {
            let r = round9(v);
            assert_eq!(sig9(r), sig9(v));
            assert_eq!(round9(r), r);
        }
    }
}
