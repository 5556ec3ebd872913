//! Central finite differences, used to verify analytic gradients.
//!
//! These helpers only evaluate the forward function; they never touch the
//! backward pass they are meant to check.

/// Relative error with a floor on the denominator so that two gradients that
/// are both essentially zero compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    index: usize,
    h: f64,
) -> f64 {
    let mut probe = x.to_vec();
    probe[index] = x[index] + h;
    let plus = f(&probe);
    probe[index] = x[index] - h;
    let minus = f(&probe);
    (plus - minus) / (2.0 * h)
}

/// Largest relative error between `analytic` and central differences of `f`
/// over the given coordinates.
pub fn max_rel_error(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> f64 {
    indices
        .iter()
        .map(|&i| rel_error(analytic[i], central_difference(&mut f, x, i, h)))
        .fold(0.0, f64::max)
}
