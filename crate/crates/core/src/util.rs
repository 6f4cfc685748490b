//! Small shared numeric helpers.

/// 1-based order-statistic index ceil(t) with a tiny slack so binary
/// rounding in t = q * n cannot bump the index past an intended
/// integer (e.g. 0.9 * 100 evaluates slightly above 90 in f64).
pub(crate) fn ceil_index(t: f64) -> usize {
    let k = (t - 1e-9).ceil();
    if k < 1.0 {
        1
    } else {
        k as usize
    }
}
