//! Grid evaluation of the nonridgeness field and sublevel-set regions.
//!
//! The ridge estimate and its confidence regions are unions of grid
//! nodes: at every node the density jet is turned into the
//! nonridgeness p(x) (the norm of the gradient component in the
//! trailing eigenspace of the Hessian) and the curvature check
//! lambda_{r+1}(x) < 0. A region is then a sublevel set
//! { p <= eps, lambda_{r+1} < 0 } over the valid nodes. Nodes where
//! the eigen-gap at the split fails, or where the estimated density is
//! too low to trust derivatives, are marked invalid and excluded from
//! every supremum or infimum rather than treated as 0 or infinity.

use crate::error::{Result, RidgeError};
use crate::kde::{log_transform_jet, EstimatorHandle, SampleMatrix};
use crate::spectral::{default_gap_tol, nonridgeness, spectral_frame};
use crate::util::ceil_index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default cap on the total number of grid nodes.
pub const DEFAULT_NODE_CAP: usize = 4_000_000;

/// Relative slack on the squared radius when testing ball membership,
/// so a node sitting exactly on the boundary survives representation
/// noise in the step size.
const BALL_SLACK: f64 = 1e-12;

/// Rectangular evaluation grid: per-axis closed ranges with a fixed
/// node count per axis. Nodes are indexed row-major with the last
/// axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        Self::with_cap(lower, upper, resolution, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: Vec<usize>,
        cap: usize,
    ) -> Result<Self> {
        let grid = GridSpec {
            lower,
            upper,
            resolution,
        };
        grid.validate(cap)?;
        Ok(grid)
    }

    /// Grid over the sample bounding box inflated by h on every side,
    /// with node spacing at most h/3.
    pub fn auto(samples: &SampleMatrix, h: f64) -> Result<Self> {
        Self::auto_with_cap(samples, h, DEFAULT_NODE_CAP)
    }

    pub fn auto_with_cap(samples: &SampleMatrix, h: f64, cap: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(RidgeError::invalid("bandwidth must be positive and finite"));
        }
        let (mut lower, mut upper) = samples.bounding_box();
        let mut resolution = Vec::with_capacity(lower.len());
        for k in 0..lower.len() {
            lower[k] -= h;
            upper[k] += h;
            let span = upper[k] - lower[k];
            let cells = (span / (h / 3.0)).ceil() as usize;
            resolution.push(cells.max(1) + 1);
        }
        Self::with_cap(lower, upper, resolution, cap)
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        let d = self.lower.len();
        if d == 0 || self.upper.len() != d || self.resolution.len() != d {
            return Err(RidgeError::invalid(
                "grid corners and resolution must be nonempty and congruent",
            ));
        }
        let mut total: usize = 1;
        for k in 0..d {
            if !(self.lower[k].is_finite() && self.upper[k].is_finite()) {
                return Err(RidgeError::invalid("grid corners must be finite"));
            }
            if !(self.lower[k] < self.upper[k]) {
                return Err(RidgeError::invalid(format!(
                    "grid axis {k} must have lower < upper, got [{}, {}]",
                    self.lower[k], self.upper[k]
                )));
            }
            if self.resolution[k] < 2 {
                return Err(RidgeError::invalid(format!(
                    "grid axis {k} needs at least 2 nodes"
                )));
            }
            total = total
                .checked_mul(self.resolution[k])
                .ok_or_else(|| RidgeError::invalid("grid node count overflows"))?;
        }
        if total > cap {
            return Err(RidgeError::invalid(format!(
                "grid has {total} nodes, exceeding the cap of {cap}; \
                 coarsen the resolution or shrink the box"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn step(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / ((self.resolution[k] - 1) as f64)
    }

    /// Per-axis node spacing.
    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.step(k)).collect()
    }

    /// Euclidean length of one cell diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Coordinates of the node with the given flat index.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        let mut rem = flat;
        for k in (0..d).rev() {
            let i = rem % self.resolution[k];
            rem /= self.resolution[k];
            out[k] = self.lower[k] + i as f64 * self.step(k);
        }
        debug_assert_eq!(rem, 0, "flat index out of range");
        out
    }

    /// Per-axis indices of the node with the given flat index.
    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        let d = self.dim();
        debug_assert_eq!(out.len(), d);
        let mut rem = flat;
        for k in (0..d).rev() {
            out[k] = rem % self.resolution[k];
            rem /= self.resolution[k];
        }
        debug_assert_eq!(rem, 0, "flat index out of range");
    }

    /// Flat index of the node with the given per-axis indices.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dim());
        let mut idx = 0;
        for k in 0..self.dim() {
            debug_assert!(multi[k] < self.resolution[k]);
            idx = idx * self.resolution[k] + multi[k];
        }
        idx
    }

    /// Flat indices of every node within Euclidean distance `radius`
    /// of the node `center`, in ascending index order. Membership is
    /// inclusive with a 1e-12 relative slack on the squared radius,
    /// and distances are formed from index offsets times the axis
    /// step so boundary nodes cannot drop out to coordinate rounding.
    pub fn ball_indices(&self, center: usize, radius: f64) -> Vec<usize> {
        debug_assert!(center < self.len());
        debug_assert!(radius >= 0.0 && radius.is_finite());
        let d = self.dim();
        let steps = self.spacing();
        let mut ci = vec![0usize; d];
        self.multi_index(center, &mut ci);
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for k in 0..d {
            let w = (radius / steps[k]).floor() as usize + 1;
            lo[k] = ci[k].saturating_sub(w);
            hi[k] = (ci[k] + w).min(self.resolution[k] - 1);
        }
        let r2 = radius * radius * (1.0 + BALL_SLACK);
        let mut out = Vec::new();
        let mut idx = lo.clone();
        'walk: loop {
            let mut d2 = 0.0;
            for k in 0..d {
                let off = (idx[k] as f64 - ci[k] as f64) * steps[k];
                d2 += off * off;
            }
            if d2 <= r2 {
                out.push(self.flat_index(&idx));
            }
            let mut k = d;
            loop {
                if k == 0 {
                    break 'walk;
                }
                k -= 1;
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    for j in k + 1..d {
                        idx[j] = lo[j];
                    }
                    break;
                }
            }
        }
        out
    }
}

/// Nonridgeness and curvature fields evaluated over a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeField {
    pub grid: GridSpec,
    /// Nonridgeness per node; NaN at invalid nodes.
    pub p_hat: Vec<f64>,
    /// Largest normal-space eigenvalue per node; NaN at invalid nodes.
    pub lambda_r1: Vec<f64>,
    /// Eigen-gap held and (after masking) the density floor passed.
    pub valid: Vec<bool>,
    /// Plain estimated density per node, regardless of `use_log`.
    pub density: Vec<f64>,
    /// Ridge dimension the spectrum was split at.
    pub r: usize,
    /// Bandwidth of the estimator that produced the field.
    pub h: f64,
    /// Whether p_hat and lambda_r1 came from log-density jets.
    pub use_log: bool,
    /// Floor used in the log transform; 0 when use_log is false.
    /// Bootstrap replicates must reuse it so their jets are
    /// transformed exactly like the field's.
    pub log_floor: f64,
    /// Eigen-gap tolerance; None means the per-node default.
    pub gap_tol: Option<f64>,
}

struct NodeEval {
    p: f64,
    lambda: f64,
    valid: bool,
    density: f64,
}

/// Evaluates the nonridgeness field of `est` on `grid` with the
/// spectrum split at ridge dimension `r`. With `use_log` the jets are
/// log-transformed (floored at the estimator's default log floor)
/// before the spectral step. Nodes whose Hessian has no eigen-gap at
/// the split are marked invalid; apply [`density_floor_mask`]
/// afterwards to also invalidate low-density nodes.
pub fn evaluate_field(
    est: &EstimatorHandle,
    grid: &GridSpec,
    r: usize,
    use_log: bool,
    gap_tol: Option<f64>,
) -> Result<RidgeField> {
    grid.validate(DEFAULT_NODE_CAP)?;
    if grid.dim() != est.dim() {
        return Err(RidgeError::invalid(format!(
            "grid dimension {} does not match sample dimension {}",
            grid.dim(),
            est.dim()
        )));
    }
    if r >= est.dim() {
        return Err(RidgeError::invalid(format!(
            "ridge dimension {r} must be below the ambient dimension {}",
            est.dim()
        )));
    }
    if let Some(tol) = gap_tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(RidgeError::invalid("gap tolerance must be positive and finite"));
        }
    }
    let floor = if use_log { est.default_log_floor() } else { 0.0 };
    let evals: Vec<NodeEval> = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<NodeEval> {
            let x = grid.node(i);
            let jet = est.jet_at(&x)?;
            let density = jet.value;
            let jet = if use_log {
                log_transform_jet(&jet, floor)?
            } else {
                jet
            };
            let hess = jet.hessian()?;
            let tol = gap_tol.unwrap_or_else(|| default_gap_tol(&hess));
            match spectral_frame(&hess, &jet.gradient, r, tol) {
                Ok(frame) => {
                    let p = nonridgeness(&frame, &jet.gradient)?;
                    Ok(NodeEval {
                        p,
                        lambda: frame.lambda_normal_max,
                        valid: true,
                        density,
                    })
                }
                Err(RidgeError::EigenGap { .. }) => Ok(NodeEval {
                    p: f64::NAN,
                    lambda: f64::NAN,
                    valid: false,
                    density,
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut field = RidgeField {
        grid: grid.clone(),
        p_hat: Vec::with_capacity(evals.len()),
        lambda_r1: Vec::with_capacity(evals.len()),
        valid: Vec::with_capacity(evals.len()),
        density: Vec::with_capacity(evals.len()),
        r,
        h: est.bandwidth(),
        use_log,
        log_floor: floor,
        gap_tol,
    };
    for e in evals {
        field.p_hat.push(e.p);
        field.lambda_r1.push(e.lambda);
        field.valid.push(e.valid);
        field.density.push(e.density);
    }
    Ok(field)
}

/// Invalidates nodes whose plain density does not exceed the
/// empirical q-quantile (order statistic at 1-based index ceil(q n))
/// of the estimated densities at the sample points. Returns the
/// threshold.
pub fn density_floor_mask(
    est: &EstimatorHandle,
    field: &mut RidgeField,
    q: f64,
) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(RidgeError::invalid(format!(
            "density floor quantile must lie in (0, 1), got {q}"
        )));
    }
    let mut dens: Vec<f64> = est.sample_densities().to_vec();
    dens.sort_by(f64::total_cmp);
    let k = ceil_index(q * dens.len() as f64).min(dens.len());
    let threshold = dens[k - 1];
    for i in 0..field.valid.len() {
        if !(field.density[i] > threshold) {
            field.valid[i] = false;
        }
    }
    Ok(threshold)
}

/// Node mask of the sublevel region: valid, p_hat <= eps, and strictly
/// negative normal curvature.
pub fn sublevel_region(field: &RidgeField, eps: f64) -> Result<Vec<bool>> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(RidgeError::invalid(format!(
            "sublevel threshold must be a nonnegative finite number, got {eps}"
        )));
    }
    Ok((0..field.p_hat.len())
        .map(|i| field.valid[i] && field.p_hat[i] <= eps && field.lambda_r1[i] < 0.0)
        .collect())
}

/// Directed Hausdorff distances between a node mask and a point set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectedHausdorff {
    /// sup over masked nodes of the distance to the nearest target.
    pub mask_to_target: f64,
    /// sup over targets of the distance to the nearest masked node.
    pub target_to_mask: f64,
}

fn directed_sup_min(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mut sup = 0.0f64;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let mut d2 = 0.0;
            for k in 0..a.len() {
                let t = a[k] - b[k];
                d2 += t * t;
            }
            if d2 < best {
                best = d2;
            }
        }
        let dist = best.sqrt();
        if dist > sup {
            sup = dist;
        }
    }
    sup
}

/// Both directed Hausdorff distances between the coordinates of the
/// masked nodes and `target`.
pub fn hausdorff_to_set(
    grid: &GridSpec,
    mask: &[bool],
    target: &[Vec<f64>],
) -> Result<DirectedHausdorff> {
    if mask.len() != grid.len() {
        return Err(RidgeError::invalid(format!(
            "mask has {} entries for a grid of {} nodes",
            mask.len(),
            grid.len()
        )));
    }
    let masked: Vec<Vec<f64>> = (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| grid.node(i))
        .collect();
    if masked.is_empty() {
        return Err(RidgeError::invalid("mask selects no nodes"));
    }
    if target.is_empty() {
        return Err(RidgeError::invalid("target point set is empty"));
    }
    for p in target {
        if p.len() != grid.dim() || p.iter().any(|v| !v.is_finite()) {
            return Err(RidgeError::invalid(
                "target points must be finite and match the grid dimension",
            ));
        }
    }
    Ok(DirectedHausdorff {
        mask_to_target: directed_sup_min(&masked, target),
        target_to_mask: directed_sup_min(target, &masked),
    })
}

/// Labels masked nodes by connected component, where two nodes are
/// adjacent when every per-axis index differs by at most one (all
/// 3^d - 1 neighbors, diagonals included). Returns the component
/// count and a per-node label, with unmasked nodes labeled u32::MAX.
pub fn connected_components(grid: &GridSpec, mask: &[bool]) -> Result<(usize, Vec<u32>)> {
    if mask.len() != grid.len() {
        return Err(RidgeError::invalid(format!(
            "mask has {} entries for a grid of {} nodes",
            mask.len(),
            grid.len()
        )));
    }
    const NONE: u32 = u32::MAX;
    let d = grid.dim();
    let mut labels = vec![NONE; mask.len()];
    let mut count: usize = 0;
    let mut stack: Vec<usize> = Vec::new();
    let mut multi = vec![0usize; d];
    let mut neighbor = vec![0usize; d];
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != NONE {
            continue;
        }
        if count as u32 == NONE {
            return Err(RidgeError::invalid("too many components to label"));
        }
        let label = count as u32;
        count += 1;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            grid.multi_index(i, &mut multi);
            // Odometer over the 3^d offset combinations around i.
            let mut offs = vec![-1i64; d];
            'offsets: loop {
                let mut in_bounds = true;
                for k in 0..d {
                    let v = multi[k] as i64 + offs[k];
                    if v < 0 || v >= grid.resolution[k] as i64 {
                        in_bounds = false;
                        break;
                    }
                    neighbor[k] = v as usize;
                }
                if in_bounds {
                    let j = grid.flat_index(&neighbor);
                    if mask[j] && labels[j] == NONE {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
                let mut k = d;
                loop {
                    if k == 0 {
                        break 'offsets;
                    }
                    k -= 1;
                    if offs[k] < 1 {
                        offs[k] += 1;
                        for o in offs[k + 1..].iter_mut() {
                            *o = -1;
                        }
                        break;
                    }
                }
            }
        }
    }
    Ok((count, labels))
}
