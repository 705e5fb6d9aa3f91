//! Central finite-difference oracle used to verify the hand-written backward
//! passes. Independent of every layer implementation: it only evaluates a
//! scalar closure.

pub const STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-5;

pub fn numeric_grad(mut point: Vec<f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..point.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + STEP;
            let plus = f(&point);
            point[i] = orig - STEP;
            let minus = f(&point);
            point[i] = orig;
            (plus - minus) / (2.0 * STEP)
        })
        .collect()
}

/// Central difference for a single coordinate.
pub fn numeric_partial(point: &[f64], index: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = point.to_vec();
    p[index] = point[index] + STEP;
    let plus = f(&p);
    p[index] = point[index] - STEP;
    let minus = f(&p);
    (plus - minus) / (2.0 * STEP)
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}
