//! Number formatting shared by the CSV and report writers.

/// A float with 17 significant digits, which round-trips every `f64`;
/// non-finite values as `inf`, `-inf` and `nan`.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
