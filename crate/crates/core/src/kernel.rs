//! Compactly supported smoothing kernel with analytic derivatives.
//!
//! The profile is the triweight k(t) = (35/32)(1 - t^2)^3 on [-1, 1].
//! It integrates to one, is symmetric, and vanishes together with its
//! first two derivatives at the support edge, so density, gradient, and
//! Hessian estimates built from it are continuous. The d-variate kernel
//! is the product K(u) = k(u_1) ... k(u_d), hence every derivative
//! factors across coordinates:
//!
//!   dK/du_i      = k'(u_i) prod_{j != i} k(u_j)
//!   d2K/du_i^2   = k''(u_i) prod_{j != i} k(u_j)
//!   d2K/du_i du_j = k'(u_i) k'(u_j) prod_{l != i,j} k(u_l)
//!
//! Hessians are reported in vech layout: lower triangle stacked by
//! columns, so for d = 2 the order is (0,0), (1,0), (1,1).

use crate::error::{Result, RidgeError};
use crate::quadrature::integrate_box;
use serde::{Deserialize, Serialize};

/// Scalar profile choice. Only the triweight is implemented; the enum
/// keeps the choice visible in configs and serialized metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Triweight,
}

/// Product kernel in `dim` variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub profile: Profile,
}

impl KernelSpec {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(RidgeError::invalid("kernel dimension must be positive"));
        }
        Ok(KernelSpec {
            dim,
            profile: Profile::Triweight,
        })
    }
}

/// k(t) = (35/32)(1 - t^2)^3 on [-1, 1], zero outside.
#[inline]
pub(crate) fn profile_value(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t * t;
    1.09375 * s * s * s
}

/// k'(t) = -(105/16) t (1 - t^2)^2.
#[inline]
pub(crate) fn profile_deriv(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t * t;
    -6.5625 * t * s * s
}

/// k''(t) = -(105/16)(1 - t^2)(1 - 5 t^2).
#[inline]
pub(crate) fn profile_second(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        return 0.0;
    }
    let s = 1.0 - t * t;
    -6.5625 * s * (1.0 - 5.0 * t * t)
}

fn check_arg(spec: &KernelSpec, u: &[f64]) -> Result<()> {
    if u.len() != spec.dim {
        return Err(RidgeError::invalid(format!(
            "kernel argument has dimension {}, expected {}",
            u.len(),
            spec.dim
        )));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(RidgeError::invalid("kernel argument must be finite"));
    }
    Ok(())
}

/// K(u).
pub fn kernel_value(spec: &KernelSpec, u: &[f64]) -> Result<f64> {
    check_arg(spec, u)?;
    let mut v = 1.0;
    for &t in u {
        v *= profile_value(t);
        if v == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(v)
}

/// Gradient of K at u.
pub fn kernel_gradient(spec: &KernelSpec, u: &[f64]) -> Result<Vec<f64>> {
    check_arg(spec, u)?;
    let d = spec.dim;
    let k: Vec<f64> = u.iter().map(|&t| profile_value(t)).collect();
    let dk: Vec<f64> = u.iter().map(|&t| profile_deriv(t)).collect();
    let mut g = vec![0.0; d];
    for i in 0..d {
        let mut term = dk[i];
        for j in 0..d {
            if j != i {
                term *= k[j];
            }
        }
        g[i] = term;
    }
    Ok(g)
}

/// vech of the Hessian of K at u, lower triangle stacked by columns.
pub fn kernel_hess_vech(spec: &KernelSpec, u: &[f64]) -> Result<Vec<f64>> {
    check_arg(spec, u)?;
    let d = spec.dim;
    let k: Vec<f64> = u.iter().map(|&t| profile_value(t)).collect();
    let dk: Vec<f64> = u.iter().map(|&t| profile_deriv(t)).collect();
    let ddk: Vec<f64> = u.iter().map(|&t| profile_second(t)).collect();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in j..d {
            let mut term = if i == j { ddk[i] } else { dk[i] * dk[j] };
            for l in 0..d {
                if l != i && l != j {
                    term *= k[l];
                }
            }
            out.push(term);
        }
    }
    Ok(out)
}

/// Numerically checked kernel moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    /// Integral of K over its support.
    pub integral: f64,
    /// Largest absolute first moment across coordinates.
    pub max_abs_first_moment: f64,
    /// Integral of |u|^2 K(u).
    pub second_moment: f64,
    /// True when the integral is within tolerance of one, first moments
    /// vanish within tolerance, and the second moment is positive and
    /// finite. These are the conditions under which second-order bias
    /// expansions of the plug-in estimators apply.
    pub order_two_valid: bool,
}

/// Verifies the moment conditions by tensor quadrature. Supported up to
/// four variables; the cost of the tensor rule grows geometrically.
pub fn validate_kernel_moments(spec: &KernelSpec, tol: f64) -> Result<MomentReport> {
    if spec.dim > 4 {
        return Err(RidgeError::invalid(
            "moment validation supports at most four variables",
        ));
    }
    if !(tol > 0.0) {
        return Err(RidgeError::invalid("tolerance must be positive"));
    }
    let d = spec.dim;
    let lo = vec![-1.0; d];
    let hi = vec![1.0; d];
    // 24 points per axis is exact for the polynomial integrands here.
    let n = 24;
    let spec_copy = *spec;
    let integral = integrate_box(&|x| kernel_value(&spec_copy, x).unwrap(), &lo, &hi, n)?;
    let mut max_first: f64 = 0.0;
    for i in 0..d {
        let m = integrate_box(
            &|x: &[f64]| x[i] * kernel_value(&spec_copy, x).unwrap(),
            &lo,
            &hi,
            n,
        )?;
        max_first = max_first.max(m.abs());
    }
    let second = integrate_box(
        &|x: &[f64]| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            r2 * kernel_value(&spec_copy, x).unwrap()
        },
        &lo,
        &hi,
        n,
    )?;
    let ok = (integral - 1.0).abs() <= tol
        && max_first <= tol
        && second.is_finite()
        && second > 0.0;
    if (integral - 1.0).abs() > tol {
        return Err(RidgeError::numerical(format!(
            "kernel integral {integral} deviates from one beyond {tol}"
        )));
    }
    Ok(MomentReport {
        integral,
        max_abs_first_moment: max_first,
        second_moment: second,
        order_two_valid: ok,
    })
}
