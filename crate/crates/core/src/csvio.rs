//! Shared number formatting for the CSV artifacts.

use crate::error::{Error, Result};

/// Renders a float with 17 significant digits, which round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0e0" noise for negative zero.
        return "0".to_string();
    }
    format!("{x:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Csv(format!("not a number: {s:?}")))
}

pub fn parse_bool(s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Csv(format!("not a boolean: {other:?}"))),
    }
}

pub fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn seventeen_digits_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            prop_assert_eq!(back.to_bits(), if x == 0.0 { 0.0f64.to_bits() } else { x.to_bits() });
        }
    }

    #[test]
    fn format_shape() {
        assert_eq!(fmt_f64(125.0), "1.2500000000000000e2");
        assert_eq!(fmt_f64(-0.0), "0");
    }
}
