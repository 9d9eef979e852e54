/// Float rendering for text outputs: 17 significant digits, enough for an
/// exact round trip through `str::parse::<f64>`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of -0.0 out of outputs
        return "0".to_string();
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
