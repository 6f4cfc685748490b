//! Gauss-Legendre quadrature on boxes.
//!
//! Nodes and weights come from Newton iteration on the Legendre
//! recurrence; the n-point rule is exact for polynomials of degree
//! 2n - 1. Tensor products over up to four axes are enough for the
//! kernel moment checks and the synthetic density normalizations.

use crate::error::{Result, RidgeError};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..64 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        // Symmetric nodes share a weight.
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(x) and its derivative via the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor-product integral of `f` over the box `lo[i]..hi[i]` with an
/// n-point rule per axis. Cost grows as n^d; intended for d <= 4.
pub fn integrate_box(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    n: usize,
) -> Result<f64> {
    let d = lo.len();
    if d == 0 || d != hi.len() {
        return Err(RidgeError::invalid("integration box dimensions disagree"));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(RidgeError::invalid("integration box has empty extent"));
    }
    let (nodes, weights) = gauss_legendre(n);
    // Affine map of the reference rule onto each axis.
    let mut ax_nodes = vec![vec![0.0; n]; d];
    let mut ax_weights = vec![vec![0.0; n]; d];
    for i in 0..d {
        let c = 0.5 * (hi[i] + lo[i]);
        let hw = 0.5 * (hi[i] - lo[i]);
        for j in 0..n {
            ax_nodes[i][j] = c + hw * nodes[j];
            ax_weights[i][j] = hw * weights[j];
        }
    }
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut total = 0.0;
    let mut comp = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..d {
            x[i] = ax_nodes[i][idx[i]];
            w *= ax_weights[i][idx[i]];
        }
        // Kahan accumulation keeps the tensor sum reproducible.
        let term = w * f(&x) - comp;
        let next = total + term;
        comp = (next - total) - term;
        total = next;
        // Mixed-radix increment, last axis fastest.
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(total);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        // 5-point rule is exact through degree 9.
        let (x, w) = gauss_legendre(5);
        let int_x8: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(8)).sum();
        assert_relative_eq!(int_x8, 2.0 / 9.0, epsilon = 1e-14);
        let int_x9: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(9)).sum();
        assert!(int_x9.abs() < 1e-15);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn box_integral_matches_closed_forms() {
        let f = |x: &[f64]| x[0] * x[0] + x[1];
        // int over [0,1]x[0,2] of x^2 + y = 2/3 + 2.
        let v = integrate_box(&f, &[0.0, 0.0], &[1.0, 2.0], 16).unwrap();
        assert_relative_eq!(v, 2.0 / 3.0 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn box_integral_matches_simpson_oracle() {
        // Independent route: composite Simpson on a smooth bump.
        let f = |x: &[f64]| (-(x[0] * x[0] + 0.5 * x[1] * x[1])).exp();
        let gl = integrate_box(&f, &[-2.0, -2.0], &[2.0, 2.0], 48).unwrap();
        let n = 400;
        let hstep = 4.0 / n as f64;
        let mut simpson = 0.0;
        for i in 0..=n {
            let wy = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            for j in 0..=n {
                let wx = if j == 0 || j == n {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let x = [-2.0 + hstep * j as f64, -2.0 + hstep * i as f64];
                simpson += wx * wy * f(&x);
            }
        }
        simpson *= hstep * hstep / 9.0;
        assert_relative_eq!(gl, simpson, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let f = |_: &[f64]| 1.0;
        assert!(integrate_box(&f, &[0.0], &[0.0], 8).is_err());
    }
}
