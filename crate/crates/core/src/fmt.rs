/// Round `x` to `digits` significant decimal digits.
///
/// The result's shortest round-trip representation never carries more than
/// `digits` significant digits, so formatting it with `{}` or serde_json
/// yields a stable canonical string.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = digits.max(1);
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_twelve_digits() {
        assert_eq!(round_sig(1.0, 12), 1.0);
        assert_eq!(round_sig(0.1 + 0.2, 12).to_string(), "0.3");
        assert_eq!(round_sig(123456.7890123456, 12).to_string(), "123456.789012");
        assert_eq!(round_sig(-2.5e-7, 12), -2.5e-7);
        assert_eq!(round_sig(0.0, 12), 0.0);
    }
}
