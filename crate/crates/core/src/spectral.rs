//! Spectral decomposition of estimated Hessians.
//!
//! A ridge point of dimension `r` is one where the gradient has no
//! component along the `d - r` trailing eigenvectors of the Hessian and
//! the largest trailing eigenvalue is negative. This module builds the
//! eigenframe at a point, groups (numerically) repeated eigenvalues,
//! and exposes the first two derivatives of the trailing-space spectral
//! projector with respect to the Hessian. Those derivatives drive the
//! perturbation diagnostics and the linearized bootstrap checks.
//!
//! Notation used throughout: eigenvalues are sorted in descending
//! order, `P_j` is the orthogonal projector onto eigengroup `j`, and
//! `S_j = (mu_j I - H)^+` is the reduced resolvent at the group mean
//! `mu_j`, equal to `sum_{k != j} P_k / (mu_j - mu_k)`.

use crate::error::{Result, RidgeError};
use nalgebra::{DMatrix, DVector};
use std::ops::Range;

/// Relative scale for symmetry checks on matrices supplied by callers.
pub(crate) const SYMMETRY_TOL_SCALE: f64 = 1e-9;

/// Relative scale for the agreement check between the two equivalent
/// roots of the nonridgeness computation.
const DUAL_ROUTE_TOL: f64 = 1e-10;

/// Largest ambient dimension for which vech bookkeeping is supported.
const MAX_VECH_DIM: usize = 16;

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(RidgeError::invalid(format!(
            "{what} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut max_abs: f64 = 0.0;
    for &v in m.iter() {
        if !v.is_finite() {
            return Err(RidgeError::invalid(format!("{what} must be finite")));
        }
        max_abs = max_abs.max(v.abs());
    }
    let tol = SYMMETRY_TOL_SCALE * max_abs.max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(RidgeError::invalid(format!(
                    "{what} must be symmetric: entry ({i},{j}) differs from its mirror by {}",
                    (m[(i, j)] - m[(j, i)]).abs()
                )));
            }
        }
    }
    Ok(())
}

/// Half-vectorization: the lower triangle stacked by columns, so for
/// d = 2 the order is (0,0), (1,0), (1,1). Fails on asymmetric input.
pub fn vech(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_square_symmetric(m, "vech argument")?;
    let d = m.nrows();
    let mut out = DVector::zeros(d * (d + 1) / 2);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`vech`]: rebuilds the full symmetric matrix.
pub fn unvech(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let len = v.len();
    // Solve d(d+1)/2 = len for integer d.
    let d = ((-1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    if d == 0 || d * (d + 1) / 2 != len {
        return Err(RidgeError::invalid(format!(
            "vech length {len} is not a triangular number"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RidgeError::invalid("vech entries must be finite"));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in j..d {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Duplication matrix: the d^2 x d(d+1)/2 zero-one matrix with
/// vec(M) = dup * vech(M) for symmetric M. vec stacks columns.
pub fn duplication_matrix(d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || d > MAX_VECH_DIM {
        return Err(RidgeError::invalid(format!(
            "duplication matrix supported for 1 <= d <= {MAX_VECH_DIM}, got {d}"
        )));
    }
    let mut dup = DMatrix::zeros(d * d, d * (d + 1) / 2);
    let mut col = 0;
    for j in 0..d {
        for i in j..d {
            dup[(j * d + i, col)] = 1.0;
            dup[(i * d + j, col)] = 1.0;
            col += 1;
        }
    }
    Ok(dup)
}

/// Default spectral-gap tolerance for a given Hessian: proportional to
/// its Frobenius norm so the grouping is invariant to rescaling.
pub fn default_gap_tol(hess: &DMatrix<f64>) -> f64 {
    1e-6 * hess.norm().max(1.0)
}

/// Eigenframe of a symmetric matrix split at ridge dimension `r`.
///
/// The leading `r` eigenvalues span the ridge-parallel directions and
/// the trailing `d - r` span the normal directions. Eigenvalues closer
/// than `gap_tol` are merged into groups; the split at `r` must fall on
/// a group boundary or construction fails with an eigen-gap error.
#[derive(Clone, Debug)]
pub struct SpectralFrame {
    pub dim: usize,
    pub r: usize,
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, column i paired with eigenvalue i.
    pub eigenvectors: DMatrix<f64>,
    /// Contiguous index ranges of the eigengroups, in descending order.
    pub groups: Vec<Range<usize>>,
    /// Mean eigenvalue of each group.
    pub group_means: Vec<f64>,
    /// Index of the first group in the normal (trailing) part.
    pub split_group: usize,
    /// Basis of the normal space: the trailing d - r eigenvectors.
    pub v: DMatrix<f64>,
    /// Projector onto the normal space, l = v v^T.
    pub l: DMatrix<f64>,
    /// Largest eigenvalue of the normal part; ridge points need it < 0.
    pub lambda_normal_max: f64,
    /// Orthogonal projector P_j for each group.
    pub projectors: Vec<DMatrix<f64>>,
    /// Reduced resolvent S_j = (mu_j I - H)^+ for each group.
    pub reduced_resolvents: Vec<DMatrix<f64>>,
    /// Sensitivity of the normal gradient component to Hessian entries:
    /// the d x d(d+1)/2 matrix with Q1(dir) * grad = m_t * vech(dir)
    /// for every symmetric direction, evaluated at the gradient the
    /// frame was built with.
    pub m_t: DMatrix<f64>,
    /// Gap tolerance used when grouping.
    pub gap_tol: f64,
}

/// Decomposes `hess` and splits its spectrum at ridge dimension `r`,
/// recording the gradient-sensitivity matrix for `grad`.
pub fn spectral_frame(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
    r: usize,
    gap_tol: f64,
) -> Result<SpectralFrame> {
    check_square_symmetric(hess, "hessian")?;
    let d = hess.nrows();
    if grad.len() != d {
        return Err(RidgeError::invalid(format!(
            "gradient has dimension {}, expected {d}",
            grad.len()
        )));
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(RidgeError::invalid("gradient must be finite"));
    }
    if r >= d {
        return Err(RidgeError::invalid(format!(
            "ridge dimension {r} must be below the ambient dimension {d}"
        )));
    }
    if !(gap_tol > 0.0 && gap_tol.is_finite()) {
        return Err(RidgeError::invalid("gap tolerance must be positive and finite"));
    }
    // Symmetrize to strip rounding noise before the decomposition.
    let sym = (hess + hess.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }

    // Merge consecutive eigenvalues whose gap is below tolerance.
    let mut groups: Vec<Range<usize>> = Vec::new();
    let mut start = 0;
    for i in 1..d {
        if eigenvalues[i - 1] - eigenvalues[i] >= gap_tol {
            groups.push(start..i);
            start = i;
        }
    }
    groups.push(start..d);

    if r > 0 {
        let gap = eigenvalues[r - 1] - eigenvalues[r];
        if gap < gap_tol {
            return Err(RidgeError::EigenGap { r, gap, tol: gap_tol });
        }
    }
    let split_group = groups.iter().position(|g| g.start == r).expect(
        "split index must start a group once the gap at the split passed",
    );

    let group_means: Vec<f64> = groups
        .iter()
        .map(|g| eigenvalues.rows(g.start, g.len()).sum() / g.len() as f64)
        .collect();

    let projectors: Vec<DMatrix<f64>> = groups
        .iter()
        .map(|g| {
            let cols = eigenvectors.columns(g.start, g.len());
            &cols * cols.transpose()
        })
        .collect();

    let reduced_resolvents: Vec<DMatrix<f64>> = (0..groups.len())
        .map(|j| {
            let mut s = DMatrix::zeros(d, d);
            for k in 0..groups.len() {
                if k != j {
                    s += &projectors[k] / (group_means[j] - group_means[k]);
                }
            }
            s
        })
        .collect();

    let v = eigenvectors.columns(r, d - r).into_owned();
    let l = &v * v.transpose();
    let lambda_normal_max = eigenvalues[r];

    let mut frame = SpectralFrame {
        dim: d,
        r,
        eigenvalues,
        eigenvectors,
        groups,
        group_means,
        split_group,
        v,
        l,
        lambda_normal_max,
        projectors,
        reduced_resolvents,
        m_t: DMatrix::zeros(d, d * (d + 1) / 2),
        gap_tol,
    };
    frame.m_t = sensitivity_matrix(&frame, grad)?;
    Ok(frame)
}

fn check_grad(frame: &SpectralFrame, grad: &DVector<f64>) -> Result<()> {
    if grad.len() != frame.dim {
        return Err(RidgeError::invalid(format!(
            "gradient has dimension {}, expected {}",
            grad.len(),
            frame.dim
        )));
    }
    if grad.iter().any(|x| !x.is_finite()) {
        return Err(RidgeError::invalid("gradient must be finite"));
    }
    Ok(())
}

/// Norm of the normal-space component of the gradient. Zero exactly on
/// the ridge. Computed as |V^T g| and cross-checked against |L g|; the
/// two must agree to rounding since L = V V^T with orthonormal V.
pub fn nonridgeness(frame: &SpectralFrame, grad: &DVector<f64>) -> Result<f64> {
    check_grad(frame, grad)?;
    let via_basis = (frame.v.transpose() * grad).norm();
    let via_projector = (&frame.l * grad).norm();
    let tol = DUAL_ROUTE_TOL * grad.norm().max(1.0);
    if (via_basis - via_projector).abs() > tol {
        return Err(RidgeError::numerical(format!(
            "projection routes disagree: |V^T g| = {via_basis}, |L g| = {via_projector}"
        )));
    }
    Ok(via_basis)
}

impl SpectralFrame {
    fn check_direction(&self, dir: &DMatrix<f64>) -> Result<()> {
        check_square_symmetric(dir, "direction")?;
        if dir.nrows() != self.dim {
            return Err(RidgeError::invalid(format!(
                "direction has dimension {}, expected {}",
                dir.nrows(),
                self.dim
            )));
        }
        Ok(())
    }

    /// First derivative of the normal projector in direction `dir`:
    /// the limit of (L(H + t dir) - L(H)) / t. Equals
    /// sum over normal groups j of P_j dir S_j + S_j dir P_j.
    pub fn projection_derivative(&self, dir: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_direction(dir)?;
        let d = self.dim;
        let mut q1 = DMatrix::zeros(d, d);
        for j in self.split_group..self.groups.len() {
            let p = &self.projectors[j];
            let s = &self.reduced_resolvents[j];
            q1 += p * dir * s + s * dir * p;
        }
        Ok(q1)
    }

    /// Second derivative of the normal projector in direction `dir`.
    /// With Q1 the first derivative, L(H + t dir) = L + t Q1 +
    /// t^2/2 Q2 + O(t^3). Derived from the second-order resolvent
    /// expansion of the projector: for each normal group j, half of
    /// the contribution is
    ///   P D S D S + S D P D S + S D S D P
    ///     - P D S^2 D P - P D P D S^2 - S^2 D P D P
    /// with P = P_j, S = S_j, D = dir.
    pub fn projection_second_derivative(&self, dir: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_direction(dir)?;
        let d = self.dim;
        let mut half_q2 = DMatrix::zeros(d, d);
        for j in self.split_group..self.groups.len() {
            let p = &self.projectors[j];
            let s = &self.reduced_resolvents[j];
            let s2 = s * s;
            let pd = p * dir;
            let sd = s * dir;
            half_q2 += &pd * &sd * s + &sd * &pd * s + &sd * &sd * p
                - &pd * &s2 * dir * p
                - &pd * &pd * &s2
                - &s2 * dir * &pd * p;
        }
        Ok(half_q2 * 2.0)
    }
}

/// First derivative of the normal projector of `hess`, split at ridge
/// dimension `r`, in direction `dir`.
pub fn projection_derivative(
    hess: &DMatrix<f64>,
    dir: &DMatrix<f64>,
    r: usize,
    gap_tol: f64,
) -> Result<DMatrix<f64>> {
    let grad = DVector::zeros(hess.nrows());
    spectral_frame(hess, &grad, r, gap_tol)?.projection_derivative(dir)
}

/// Second derivative of the normal projector of `hess`, split at ridge
/// dimension `r`, in direction `dir`.
pub fn projection_second_derivative(
    hess: &DMatrix<f64>,
    dir: &DMatrix<f64>,
    r: usize,
    gap_tol: f64,
) -> Result<DMatrix<f64>> {
    let grad = DVector::zeros(hess.nrows());
    spectral_frame(hess, &grad, r, gap_tol)?.projection_second_derivative(dir)
}

/// Sensitivity of the normal gradient component to Hessian entries: the
/// d x d(d+1)/2 matrix with projection_derivative(frame, D) * g equal
/// to sensitivity_matrix(frame, g) * vech(D) for every symmetric D.
/// Its norm bounds how strongly Hessian error leaks into nonridgeness.
pub fn sensitivity_matrix(frame: &SpectralFrame, grad: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_grad(frame, grad)?;
    let d = frame.dim;
    let mut flat: DMatrix<f64> = DMatrix::zeros(d, d * d);
    for j in frame.split_group..frame.groups.len() {
        let p = &frame.projectors[j];
        let s = &frame.reduced_resolvents[j];
        let sg = s * grad;
        let pg = p * grad;
        // (P D S g + S D P g)_i = sum_{a,b} [P_ia (Sg)_b + S_ia (Pg)_b] D_ab
        // and vec(D)[b d + a] = D_ab.
        for i in 0..d {
            for b in 0..d {
                for a in 0..d {
                    flat[(i, b * d + a)] += p[(i, a)] * sg[b] + s[(i, a)] * pg[b];
                }
            }
        }
    }
    let dup = duplication_matrix(d)?;
    Ok(flat * dup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let qr = m.qr();
        qr.q()
    }

    fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        (&m + m.transpose()) * 0.5
    }

    fn symmetric_with_spectrum(
        evals: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> DMatrix<f64> {
        let d = evals.len();
        let q = random_orthogonal(d, rng);
        let lam = DMatrix::from_diagonal(&DVector::from_row_slice(evals));
        &q * lam * q.transpose()
    }

    /// Frame with a zero gradient, for tests that only exercise the
    /// eigenstructure.
    fn frame_of(h: &DMatrix<f64>, r: usize) -> SpectralFrame {
        spectral_frame(h, &DVector::zeros(h.nrows()), r, 1e-6).unwrap()
    }

    #[test]
    fn vech_round_trip_and_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=5 {
            let m = random_symmetric(d, &mut rng);
            let v = vech(&m).unwrap();
            assert_eq!(v.len(), d * (d + 1) / 2);
            let back = unvech(&v).unwrap();
            assert_eq!(back, m);
            let dup = duplication_matrix(d).unwrap();
            let vec_m = DVector::from_iterator(d * d, m.iter().cloned());
            assert_eq!(&dup * &v, vec_m);
        }
        // d = 2 layout: (0,0), (1,0), (1,1).
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(vech(&m).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert!(duplication_matrix(17).is_err());
        assert!(unvech(&DVector::from_row_slice(&[1.0, 2.0])).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 3.0]);
        assert!(vech(&asym).is_err());
    }

    #[test]
    fn resolvents_satisfy_penrose_conditions() {
        // The four Moore-Penrose conditions determine the pseudoinverse
        // uniquely, so checking them certifies S_j = (mu_j I - H)^+
        // without a second matrix decomposition.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let h = symmetric_with_spectrum(&[4.0, 2.2, 1.0, -0.5], &mut rng);
            let frame = frame_of(&h, 2);
            for j in 0..frame.groups.len() {
                let a = DMatrix::identity(4, 4) * frame.group_means[j] - &h;
                let s = &frame.reduced_resolvents[j];
                let as_ = &a * s;
                let sa = s * &a;
                assert!((&a * &sa - &a).norm() < 1e-10);
                assert!((s * &as_ - s).norm() < 1e-10);
                assert!((as_.transpose() - &as_).norm() < 1e-10);
                assert!((sa.transpose() - &sa).norm() < 1e-10);
                // Null space matches the group: S A = I - P_j.
                let expect = DMatrix::identity(4, 4) - &frame.projectors[j];
                assert!((sa - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn frame_satisfies_projector_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = symmetric_with_spectrum(&[3.0, 1.5, 0.2, -1.0, -2.5], &mut rng);
        let frame = frame_of(&h, 2);
        let d = 5;
        let mut psum = DMatrix::zeros(d, d);
        for (j, p) in frame.projectors.iter().enumerate() {
            psum += p;
            // Idempotent and orthogonal to the other groups.
            assert_relative_eq!((p * p - p).norm(), 0.0, epsilon = 1e-12);
            for (k, pk) in frame.projectors.iter().enumerate() {
                if k != j {
                    assert_relative_eq!((p * pk).norm(), 0.0, epsilon = 1e-12);
                }
            }
            let s = &frame.reduced_resolvents[j];
            assert_relative_eq!((s * p).norm(), 0.0, epsilon = 1e-12);
            let lhs = (&h - DMatrix::identity(d, d) * frame.group_means[j]) * s;
            let rhs = p - DMatrix::identity(d, d);
            assert_relative_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-10);
        }
        assert_relative_eq!((psum - DMatrix::identity(d, d)).norm(), 0.0, epsilon = 1e-12);
        // Normal projector equals the sum of trailing group projectors.
        let mut lsum = DMatrix::zeros(d, d);
        for j in frame.split_group..frame.groups.len() {
            lsum += &frame.projectors[j];
        }
        assert_relative_eq!((&frame.l - lsum).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            (&frame.l - &frame.v * frame.v.transpose()).norm(),
            0.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn frozen_two_by_two_example() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let frame = frame_of(&h, 1);
        assert_eq!(frame.eigenvalues.as_slice(), &[3.0, 1.0]);
        assert_eq!(frame.lambda_normal_max, 1.0);
        assert_eq!(frame.groups.len(), 2);
        assert_eq!(frame.split_group, 1);
        // Normal space is the second coordinate axis.
        assert_relative_eq!(frame.v[(0, 0)].abs(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(frame.v[(1, 0)].abs(), 1.0, epsilon = 1e-14);
        // Reduced resolvent of the normal group: -e1 e1^T / 2.
        let s = &frame.reduced_resolvents[1];
        assert_relative_eq!(s[(0, 0)], -0.5, epsilon = 1e-14);
        assert_relative_eq!(s[(0, 1)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(s[(1, 1)], 0.0, epsilon = 1e-14);
        let g = DVector::from_row_slice(&[0.0, 1.0]);
        assert_relative_eq!(nonridgeness(&frame, &g).unwrap(), 1.0, epsilon = 1e-14);
        let g2 = DVector::from_row_slice(&[5.0, 0.0]);
        assert_relative_eq!(nonridgeness(&frame, &g2).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn derivative_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let h = symmetric_with_spectrum(&[4.0, 2.0, 0.5, -1.0], &mut rng);
            let dir = random_symmetric(4, &mut rng);
            let frame = frame_of(&h, 2);
            let q1 = frame.projection_derivative(&dir).unwrap();
            let tau = 1e-5;
            let lp = frame_of(&(&h + &dir * tau), 2).l;
            let lm = frame_of(&(&h - &dir * tau), 2).l;
            let fd = (lp - lm) / (2.0 * tau);
            assert!((q1 - fd).norm() < 1e-7);
        }
    }

    #[test]
    fn taylor_remainder_is_third_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let h = symmetric_with_spectrum(&[4.0, 2.5, 1.0, -1.0], &mut rng);
        let mut dir = random_symmetric(4, &mut rng);
        dir /= dir.norm();
        let frame = frame_of(&h, 2);
        let q1 = frame.projection_derivative(&dir).unwrap();
        let q2 = frame.projection_second_derivative(&dir).unwrap();
        let rem = |tau: f64| -> f64 {
            let lt = frame_of(&(&h + &dir * tau), 2).l;
            (lt - &frame.l - &q1 * tau - &q2 * (tau * tau / 2.0)).norm()
        };
        let r1 = rem(3e-2);
        let r2 = rem(3e-3);
        let slope = (r1 / r2).log10();
        assert!(
            (slope - 3.0).abs() < 0.4,
            "remainder decays with slope {slope}, expected about 3"
        );
        // First-order-only remainder decays with slope about 2.
        let rem1 = |tau: f64| -> f64 {
            let lt = frame_of(&(&h + &dir * tau), 2).l;
            (lt - &frame.l - &q1 * tau).norm()
        };
        let slope1 = (rem1(3e-2) / rem1(3e-3)).log10();
        assert!((slope1 - 2.0).abs() < 0.3);
    }

    #[test]
    fn degenerate_parallel_group_is_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // Double eigenvalue in the parallel part; split gap stays open.
        let h = symmetric_with_spectrum(&[3.0, 3.0, -1.0], &mut rng);
        let frame = frame_of(&h, 2);
        assert_eq!(frame.groups.len(), 2);
        assert_eq!(frame.groups[0], 0..2);
        let mut dir = random_symmetric(3, &mut rng);
        dir /= dir.norm();
        let q1 = frame.projection_derivative(&dir).unwrap();
        let q2 = frame.projection_second_derivative(&dir).unwrap();
        let rem = |tau: f64| -> f64 {
            let lt = frame_of(&(&h + &dir * tau), 2).l;
            (lt - &frame.l - &q1 * tau - &q2 * (tau * tau / 2.0)).norm()
        };
        let slope = (rem(3e-2) / rem(3e-3)).log10();
        assert!((slope - 3.0).abs() < 0.4, "slope {slope}");
    }

    #[test]
    fn sensitivity_contracts_like_the_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let h = symmetric_with_spectrum(&[4.0, 1.8, 0.3, -1.2], &mut rng);
            let frame = frame_of(&h, 2);
            let g = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let m = sensitivity_matrix(&frame, &g).unwrap();
            assert_eq!(m.nrows(), 4);
            assert_eq!(m.ncols(), 10);
            let dmat = random_symmetric(4, &mut rng);
            let lhs = frame.projection_derivative(&dmat).unwrap() * &g;
            let rhs = &m * vech(&dmat).unwrap();
            worst = worst.max((lhs - rhs).norm());
        }
        assert!(worst < 1e-11, "largest contraction residual {worst}");
    }

    #[test]
    fn nonridgeness_routes_agree_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let h = symmetric_with_spectrum(&[2.0, 0.7, -0.6], &mut rng);
            let frame = frame_of(&h, 1);
            let g = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let p = nonridgeness(&frame, &g).unwrap();
            assert!(p >= 0.0 && p <= g.norm() + 1e-12);
        }
    }

    #[test]
    fn split_gap_below_tolerance_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 - 1e-9]);
        let zero = DVector::zeros(2);
        let err = spectral_frame(&h, &zero, 1, 1e-6).unwrap_err();
        match err {
            RidgeError::EigenGap { r, gap, tol } => {
                assert_eq!(r, 1);
                assert!(gap < tol);
            }
            other => panic!("expected eigen-gap error, got {other}"),
        }
        // Same matrix is fine when the split is not requested there.
        assert!(spectral_frame(&h, &zero, 0, 1e-6).is_ok());
    }

    #[test]
    fn mode_split_keeps_whole_space_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let h = symmetric_with_spectrum(&[-0.5, -1.0, -2.0], &mut rng);
        let frame = frame_of(&h, 0);
        assert_eq!(frame.split_group, 0);
        assert_relative_eq!(
            (&frame.l - DMatrix::identity(3, 3)).norm(),
            0.0,
            epsilon = 1e-12
        );
        let g = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        assert_relative_eq!(nonridgeness(&frame, &g).unwrap(), g.norm(), epsilon = 1e-12);
    }

    #[test]
    fn argument_validation() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let zero = DVector::zeros(2);
        assert!(spectral_frame(&h, &zero, 2, 1e-6).is_err());
        assert!(spectral_frame(&h, &zero, 1, 0.0).is_err());
        assert!(spectral_frame(&h, &DVector::zeros(3), 1, 1e-6).is_err());
        let frame = frame_of(&h, 1);
        assert!(nonridgeness(&frame, &DVector::from_row_slice(&[1.0])).is_err());
        let bad_dir = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(frame.projection_derivative(&bad_dir).is_err());
        let wrong_dim = DMatrix::identity(3, 3);
        assert!(frame.projection_second_derivative(&wrong_dim).is_err());
        assert!(projection_derivative(&h, &bad_dir, 1, 1e-6).is_err());
        assert!(projection_second_derivative(&h, &wrong_dim, 1, 1e-6).is_err());
    }

    #[test]
    fn free_functions_match_frame_methods() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let h = symmetric_with_spectrum(&[4.0, 2.0, 0.5, -1.0], &mut rng);
        let dir = random_symmetric(4, &mut rng);
        let frame = frame_of(&h, 2);
        let q1_free = projection_derivative(&h, &dir, 2, 1e-6).unwrap();
        let q2_free = projection_second_derivative(&h, &dir, 2, 1e-6).unwrap();
        assert_relative_eq!(
            (q1_free - frame.projection_derivative(&dir).unwrap()).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            (q2_free - frame.projection_second_derivative(&dir).unwrap()).norm(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn frame_sensitivity_matches_free_function_and_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let h = symmetric_with_spectrum(&[3.0, 1.2, -0.8, -2.0], &mut rng);
        let g = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let frame = spectral_frame(&h, &g, 2, 1e-6).unwrap();
        let standalone = sensitivity_matrix(&frame, &g).unwrap();
        assert_eq!(frame.m_t, standalone);
        // A zero gradient zeroes every term of the sensitivity exactly.
        let zero_frame = frame_of(&h, 2);
        assert!(zero_frame.m_t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sensitivity_drops_projector_terms_on_the_ridge() {
        // On the ridge the gradient has no normal component, so the
        // terms carrying P_j grad vanish and the sensitivity reduces
        // to the resolvent part alone.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let h = symmetric_with_spectrum(&[3.0, 1.5, -0.7, -1.9], &mut rng);
            let frame_probe = frame_of(&h, 2);
            // Gradient in the span of the leading (ridge) eigenvectors.
            let tangent = frame_probe.eigenvectors.columns(0, 2).into_owned();
            let coef = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let g = &tangent * coef;
            let frame = spectral_frame(&h, &g, 2, 1e-6).unwrap();
            let d = 4;
            let mut flat: DMatrix<f64> = DMatrix::zeros(d, d * d);
            for j in frame.split_group..frame.groups.len() {
                let p = &frame.projectors[j];
                let s = &frame.reduced_resolvents[j];
                let sg = s * &g;
                for i in 0..d {
                    for b in 0..d {
                        for a in 0..d {
                            flat[(i, b * d + a)] += p[(i, a)] * sg[b];
                        }
                    }
                }
            }
            let reduced = flat * duplication_matrix(d).unwrap();
            assert!(
                (&frame.m_t - reduced).norm() <= 1e-9,
                "full and on-ridge sensitivity forms must agree"
            );
        }
    }

    #[test]
    fn normal_projector_ignores_basis_choice_in_degenerate_groups() {
        // The normal space here has a repeated eigenvalue, so the
        // eigenvectors are only defined up to rotation; the projector
        // must still match the analytic one built from the known basis.
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..10 {
            let q = random_orthogonal(4, &mut rng);
            let lam = DMatrix::from_diagonal(&DVector::from_row_slice(&[
                2.0, 1.0, -1.0, -1.0,
            ]));
            let h = &q * lam * q.transpose();
            let frame = frame_of(&h, 2);
            let normal = q.columns(2, 2);
            let expected = &normal * normal.transpose();
            assert!((&frame.l - &expected).norm() < 1e-10);
            let g = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let p = nonridgeness(&frame, &g).unwrap();
            assert_relative_eq!(p, (expected * &g).norm(), epsilon = 1e-10);
        }
    }
}
