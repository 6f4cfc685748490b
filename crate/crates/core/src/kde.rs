//! Kernel plug-in estimation of a density and its first two derivatives.
//!
//! The estimator at a query point x is the usual kernel average
//!
//!   f(x)   = 1/(n h^d)     sum_i K((x - X_i) / h)
//!   grad f = 1/(n h^{d+1}) sum_i (grad K)((x - X_i) / h)
//!   hess f = 1/(n h^{d+2}) sum_i (hess K)((x - X_i) / h)
//!
//! with the compactly supported product kernel from [`crate::kernel`].
//! Samples are bucketed into cells of side h so a query touches only
//! the 3^d surrounding cells. All sums are compensated and every walk
//! visits cells in a fixed lexicographic order, so results do not
//! depend on hash-map iteration order or thread scheduling.
//!
//! Two bootstrap entry points mirror the plain estimator. Multiplier
//! resampling perturbs each kernel term with a centered weight:
//!
//!   jet^e = jet + 1/(n h^{d+k}) sum_i (e_i - mean(e)) * term_i
//!
//! which is the termwise form of f^e = f + 1/n sum_i e_i (K_h,i - f).
//! Constant weights (including e = 0) make every deviation vanish and
//! reproduce the original jet bit for bit. Empirical resampling refits
//! the estimator on a resampled index set with the bandwidth held
//! fixed.

use crate::error::{Result, RidgeError};
use crate::kernel::{profile_deriv, profile_second, profile_value, KernelSpec};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::OnceLock;

/// Neumaier compensated accumulator; robust to terms larger than the
/// running sum, which plain Kahan mishandles.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    pub(crate) fn new() -> Self {
        Kahan { s: 0.0, c: 0.0 }
    }

    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.s + self.c
    }
}

/// Dense row-major sample storage.
#[derive(Clone, Debug)]
pub struct SampleMatrix {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl SampleMatrix {
    pub fn from_flat(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(RidgeError::invalid("sample dimension must be positive"));
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(RidgeError::invalid(format!(
                "sample buffer of length {} does not hold whole rows of dimension {d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(RidgeError::invalid(format!(
                "sample row {} has a non-finite coordinate",
                pos / d
            )));
        }
        let n = data.len() / d;
        Ok(SampleMatrix { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(RidgeError::invalid("sample set must be nonempty"));
        }
        let d = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(RidgeError::invalid(format!(
                    "sample row {i} has {} coordinates, expected {d}",
                    r.len()
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend_from_slice(r);
        }
        SampleMatrix::from_flat(data, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Per-coordinate min and max.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.d];
        let mut hi = vec![f64::NEG_INFINITY; self.d];
        for i in 0..self.n {
            for (k, &v) in self.row(i).iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        (lo, hi)
    }

    /// Per-coordinate sample standard deviations (n - 1 denominator).
    pub fn column_std_devs(&self) -> Result<Vec<f64>> {
        if self.n < 2 {
            return Err(RidgeError::invalid(
                "standard deviations need at least two samples",
            ));
        }
        let mut out = Vec::with_capacity(self.d);
        for k in 0..self.d {
            let mut mean = Kahan::new();
            for i in 0..self.n {
                mean.add(self.row(i)[k]);
            }
            let mu = mean.total() / self.n as f64;
            let mut var = Kahan::new();
            for i in 0..self.n {
                let dev = self.row(i)[k] - mu;
                var.add(dev * dev);
            }
            out.push((var.total() / (self.n - 1) as f64).sqrt());
        }
        Ok(out)
    }
}

/// Value, gradient, and half-vectorized Hessian at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityJet {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hess_vech: DVector<f64>,
}

impl DensityJet {
    pub fn hessian(&self) -> Result<nalgebra::DMatrix<f64>> {
        crate::spectral::unvech(&self.hess_vech)
    }
}

/// Centered multiplier weights for one bootstrap draw.
#[derive(Clone, Debug)]
pub struct MultiplierWeights {
    e: Vec<f64>,
    mean: f64,
}

impl MultiplierWeights {
    pub fn from_vec(e: Vec<f64>) -> Result<Self> {
        if e.is_empty() {
            return Err(RidgeError::invalid("multiplier weights must be nonempty"));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(RidgeError::invalid("multiplier weights must be finite"));
        }
        // A constant vector gets its exact mean so every deviation
        // e_i - mean is exactly zero and folding is an exact no-op.
        let mean = if e.iter().all(|&v| v == e[0]) {
            e[0]
        } else {
            let mut s = Kahan::new();
            for &v in &e {
                s.add(v);
            }
            s.total() / e.len() as f64
        };
        Ok(MultiplierWeights { e, mean })
    }

    /// Standard normal weights, one per sample.
    pub fn draw<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        MultiplierWeights::from_vec(e)
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.e
    }
}

/// Spatial index with cells of side h: every point within kernel range
/// of a query lives in one of the 3^d cells around the query's cell.
#[derive(Clone, Debug)]
struct BucketGrid {
    origin: Vec<f64>,
    h: f64,
    cells: HashMap<Vec<i64>, Vec<u32>>,
}

impl BucketGrid {
    fn build(samples: &SampleMatrix, h: f64) -> Self {
        let d = samples.dim();
        let mut origin = vec![f64::INFINITY; d];
        for i in 0..samples.n() {
            for (k, &v) in samples.row(i).iter().enumerate() {
                origin[k] = origin[k].min(v);
            }
        }
        let mut cells: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        let mut key = vec![0i64; d];
        for i in 0..samples.n() {
            for (k, &v) in samples.row(i).iter().enumerate() {
                key[k] = ((v - origin[k]) / h).floor() as i64;
            }
            cells.entry(key.clone()).or_default().push(i as u32);
        }
        BucketGrid { origin, h, cells }
    }

    /// Visits candidate neighbors of x in a fixed order: surrounding
    /// cells lexicographically, indices within a cell ascending.
    fn for_each_neighbor(&self, x: &[f64], mut f: impl FnMut(u32)) {
        let d = x.len();
        let mut base = vec![0i64; d];
        for k in 0..d {
            base[k] = ((x[k] - self.origin[k]) / self.h).floor() as i64;
        }
        let mut offs = vec![-1i64; d];
        let mut key = vec![0i64; d];
        loop {
            for k in 0..d {
                key[k] = base[k] + offs[k];
            }
            if let Some(cell) = self.cells.get(key.as_slice()) {
                for &i in cell {
                    f(i);
                }
            }
            let mut k = d;
            loop {
                if k == 0 {
                    return;
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

/// Fitted kernel estimator: samples, bandwidth, and spatial index.
#[derive(Debug)]
pub struct EstimatorHandle {
    samples: SampleMatrix,
    kernel: KernelSpec,
    h: f64,
    buckets: BucketGrid,
    sample_densities: OnceLock<Vec<f64>>,
}

impl EstimatorHandle {
    pub fn fit(samples: SampleMatrix, h: f64) -> Result<Self> {
        if samples.n() < 2 {
            return Err(RidgeError::invalid("estimator needs at least two samples"));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(RidgeError::invalid("bandwidth must be positive and finite"));
        }
        let kernel = KernelSpec::new(samples.dim())?;
        let buckets = BucketGrid::build(&samples, h);
        Ok(EstimatorHandle {
            samples,
            kernel,
            h,
            buckets,
            sample_densities: OnceLock::new(),
        })
    }

    pub fn samples(&self) -> &SampleMatrix {
        &self.samples
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn n(&self) -> usize {
        self.samples.n()
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(RidgeError::invalid(format!(
                "query has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RidgeError::invalid("query point must be finite"));
        }
        Ok(())
    }

    /// Runs `sink(i, K, gradK, vech hessK)` for every sample whose
    /// kernel terms at x are nonzero, in the fixed neighbor order.
    /// Terms are raw kernel derivatives, not yet divided by n h^{d+k}.
    fn walk_terms(&self, x: &[f64], mut sink: impl FnMut(u32, f64, &[f64], &[f64])) {
        let d = self.dim();
        let m = d * (d + 1) / 2;
        let inv_h = 1.0 / self.h;
        let mut kv = vec![0.0; d];
        let mut kd = vec![0.0; d];
        let mut kdd = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut hh = vec![0.0; m];
        self.buckets.for_each_neighbor(x, |i| {
            let row = self.samples.row(i as usize);
            let mut inside = true;
            for k in 0..d {
                let u = (x[k] - row[k]) * inv_h;
                if u.abs() >= 1.0 {
                    inside = false;
                    break;
                }
                kv[k] = profile_value(u);
                kd[k] = profile_deriv(u);
                kdd[k] = profile_second(u);
            }
            if !inside {
                return;
            }
            let mut kprod = 1.0;
            for k in 0..d {
                kprod *= kv[k];
            }
            for a in 0..d {
                let mut t = kd[a];
                for k in 0..d {
                    if k != a {
                        t *= kv[k];
                    }
                }
                g[a] = t;
            }
            let mut idx = 0;
            for b in 0..d {
                for a in b..d {
                    let mut t = if a == b { kdd[a] } else { kd[a] * kd[b] };
                    for k in 0..d {
                        if k != a && k != b {
                            t *= kv[k];
                        }
                    }
                    hh[idx] = t;
                    idx += 1;
                }
            }
            sink(i, kprod, &g, &hh);
        });
    }

    /// Density value only; cheaper than the full jet.
    pub fn density_at(&self, x: &[f64]) -> Result<f64> {
        self.check_query(x)?;
        let d = self.dim();
        let inv_h = 1.0 / self.h;
        let mut s = Kahan::new();
        self.buckets.for_each_neighbor(x, |i| {
            let row = self.samples.row(i as usize);
            let mut kprod = 1.0;
            for k in 0..d {
                let u = (x[k] - row[k]) * inv_h;
                kprod *= profile_value(u);
                if kprod == 0.0 {
                    return;
                }
            }
            s.add(kprod);
        });
        Ok(s.total() * self.jet_scales().0)
    }

    /// Number of samples strictly inside the kernel support box of x,
    /// i.e. with |x_k - X_ik| < h in every coordinate.
    pub fn support_count(&self, x: &[f64]) -> Result<usize> {
        self.check_query(x)?;
        let d = self.dim();
        let inv_h = 1.0 / self.h;
        let mut count = 0usize;
        self.buckets.for_each_neighbor(x, |i| {
            let row = self.samples.row(i as usize);
            if (0..d).all(|k| ((x[k] - row[k]) * inv_h).abs() < 1.0) {
                count += 1;
            }
        });
        Ok(count)
    }

    /// Value, gradient, and Hessian of the estimate at x.
    pub fn jet_at(&self, x: &[f64]) -> Result<DensityJet> {
        self.check_query(x)?;
        let d = self.dim();
        let m = d * (d + 1) / 2;
        let mut sv = Kahan::new();
        let mut sg = vec![Kahan::new(); d];
        let mut sh = vec![Kahan::new(); m];
        self.walk_terms(x, |_, kprod, g, hh| {
            sv.add(kprod);
            for a in 0..d {
                sg[a].add(g[a]);
            }
            for b in 0..m {
                sh[b].add(hh[b]);
            }
        });
        let (s0, s1, s2) = self.jet_scales();
        Ok(DensityJet {
            value: sv.total() * s0,
            gradient: DVector::from_iterator(d, sg.iter().map(|k| k.total() * s1)),
            hess_vech: DVector::from_iterator(m, sh.iter().map(|k| k.total() * s2)),
        })
    }

    fn jet_scales(&self) -> (f64, f64, f64) {
        let s0 = 1.0 / (self.n() as f64 * self.h.powi(self.dim() as i32));
        (s0, s0 / self.h, s0 / (self.h * self.h))
    }

    /// Captures the per-sample kernel terms at x so repeated multiplier
    /// draws at the same point avoid re-walking the sample set. The
    /// embedded base jet reproduces [`jet_at`] bit for bit.
    pub fn jet_terms(&self, x: &[f64]) -> Result<JetTerms> {
        self.check_query(x)?;
        let d = self.dim();
        let m = d * (d + 1) / 2;
        let stride = 1 + d + m;
        let mut indices = Vec::new();
        let mut raw = Vec::new();
        let mut sv = Kahan::new();
        let mut sg = vec![Kahan::new(); d];
        let mut sh = vec![Kahan::new(); m];
        self.walk_terms(x, |i, kprod, g, hh| {
            indices.push(i);
            raw.push(kprod);
            raw.extend_from_slice(g);
            raw.extend_from_slice(hh);
            sv.add(kprod);
            for a in 0..d {
                sg[a].add(g[a]);
            }
            for b in 0..m {
                sh[b].add(hh[b]);
            }
        });
        let (s0, s1, s2) = self.jet_scales();
        let base = DensityJet {
            value: sv.total() * s0,
            gradient: DVector::from_iterator(d, sg.iter().map(|k| k.total() * s1)),
            hess_vech: DVector::from_iterator(m, sh.iter().map(|k| k.total() * s2)),
        };
        debug_assert_eq!(raw.len(), indices.len() * stride);
        Ok(JetTerms {
            dim: d,
            n: self.n(),
            scales: (s0, s1, s2),
            indices,
            raw,
            base,
        })
    }

    /// One multiplier-bootstrap jet at x with the given weights.
    pub fn multiplier_jet_at(&self, x: &[f64], w: &MultiplierWeights) -> Result<DensityJet> {
        self.jet_terms(x)?.fold_multiplier(w)
    }

    /// Refits on the rows selected by `indices` (with repetition),
    /// keeping the bandwidth fixed.
    pub fn empirical_refit(&self, indices: &[usize]) -> Result<EstimatorHandle> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.n() {
                return Err(RidgeError::invalid(format!(
                    "resample index {i} out of range for {} samples",
                    self.n()
                )));
            }
            data.extend_from_slice(self.samples.row(i));
        }
        EstimatorHandle::fit(SampleMatrix::from_flat(data, d)?, self.h)
    }

    /// Estimated density at every sample point, computed once.
    pub fn sample_densities(&self) -> &[f64] {
        self.sample_densities.get_or_init(|| {
            (0..self.n())
                .into_par_iter()
                .map(|i| {
                    self.density_at(self.samples.row(i))
                        .expect("sample rows were validated at construction")
                })
                .collect()
        })
    }

    /// Default floor for the log transform: a small fraction of the
    /// largest estimated density over the sample points.
    pub fn default_log_floor(&self) -> f64 {
        let max = self
            .sample_densities()
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        1e-12 * max
    }

    /// Jet of log(max(f, floor)) at x.
    pub fn log_jet_at(&self, x: &[f64], floor: f64) -> Result<DensityJet> {
        let jet = self.jet_at(x)?;
        log_transform_jet(&jet, floor)
    }
}

/// Recorded kernel terms at one query point (see
/// [`EstimatorHandle::jet_terms`]).
#[derive(Clone, Debug)]
pub struct JetTerms {
    dim: usize,
    n: usize,
    scales: (f64, f64, f64),
    indices: Vec<u32>,
    raw: Vec<f64>,
    base: DensityJet,
}

impl JetTerms {
    /// The unweighted jet, identical to [`EstimatorHandle::jet_at`].
    pub fn base(&self) -> &DensityJet {
        &self.base
    }

    /// Number of samples contributing at this point.
    pub fn contributors(&self) -> usize {
        self.indices.len()
    }

    /// Multiplier-bootstrap jet: base plus the mean-centered weighted
    /// kernel sums. Constant weights (any value, including zero)
    /// return the base jet bit for bit.
    pub fn fold_multiplier(&self, w: &MultiplierWeights) -> Result<DensityJet> {
        if w.len() != self.n {
            return Err(RidgeError::invalid(format!(
                "got {} multiplier weights for {} samples",
                w.len(),
                self.n
            )));
        }
        let d = self.dim;
        let m = d * (d + 1) / 2;
        let stride = 1 + d + m;
        let e = w.as_slice();
        let mean = w.mean();
        let mut sv = Kahan::new();
        let mut sg = vec![Kahan::new(); d];
        let mut sh = vec![Kahan::new(); m];
        for (j, &i) in self.indices.iter().enumerate() {
            let dev = e[i as usize] - mean;
            let t = &self.raw[j * stride..(j + 1) * stride];
            sv.add(dev * t[0]);
            for a in 0..d {
                sg[a].add(dev * t[1 + a]);
            }
            for b in 0..m {
                sh[b].add(dev * t[1 + d + b]);
            }
        }
        let (s0, s1, s2) = self.scales;
        Ok(DensityJet {
            value: self.base.value + sv.total() * s0,
            gradient: DVector::from_iterator(
                d,
                (0..d).map(|a| self.base.gradient[a] + sg[a].total() * s1),
            ),
            hess_vech: DVector::from_iterator(
                m,
                (0..m).map(|b| self.base.hess_vech[b] + sh[b].total() * s2),
            ),
        })
    }
}

/// Jet of log(max(v, floor)) given the jet of v. Below the floor the
/// value is clamped and the derivative scales still use the floor, so
/// the transform stays finite everywhere.
pub fn log_transform_jet(jet: &DensityJet, floor: f64) -> Result<DensityJet> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(RidgeError::invalid("log floor must be positive and finite"));
    }
    let v = jet.value.max(floor);
    let d = jet.gradient.len();
    let m = d * (d + 1) / 2;
    if jet.hess_vech.len() != m {
        return Err(RidgeError::invalid("jet has inconsistent dimensions"));
    }
    let gradient = &jet.gradient / v;
    let mut hess_vech = DVector::zeros(m);
    let mut idx = 0;
    for b in 0..d {
        for a in b..d {
            hess_vech[idx] = jet.hess_vech[idx] / v - jet.gradient[a] * jet.gradient[b] / (v * v);
            idx += 1;
        }
    }
    Ok(DensityJet {
        value: v.ln(),
        gradient,
        hess_vech,
    })
}

/// Which estimation error the downstream analysis treats as dominant.
/// Curved ridges stress the Hessian, nearly flat ones the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ErrorRegime {
    HessianLimited,
    GradientLimited,
    Auto,
}

impl ErrorRegime {
    /// Auto resolves to the conservative Hessian-limited choice.
    pub fn resolved(self) -> ErrorRegime {
        match self {
            ErrorRegime::Auto => ErrorRegime::HessianLimited,
            other => other,
        }
    }
}

/// Rule-of-thumb bandwidth: 1.2 times the geometric mean of the
/// per-coordinate standard deviations, shrunk at a rate matching the
/// dominant error term (n^{-1/(d+6)} Hessian-limited, n^{-1/(d+4.5)}
/// gradient-limited).
pub fn default_bandwidth(samples: &SampleMatrix, regime: ErrorRegime) -> Result<f64> {
    let sds = samples.column_std_devs()?;
    let d = samples.dim() as f64;
    let mut ln_sum = Kahan::new();
    for (k, &s) in sds.iter().enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(RidgeError::invalid(format!(
                "coordinate {k} is degenerate (standard deviation {s}); cannot scale a bandwidth"
            )));
        }
        ln_sum.add(s.ln());
    }
    let sbar = (ln_sum.total() / d).exp();
    let expo = match regime.resolved() {
        ErrorRegime::HessianLimited => 1.0 / (d + 6.0),
        ErrorRegime::GradientLimited => 1.0 / (d + 4.5),
        ErrorRegime::Auto => unreachable!("resolved above"),
    };
    Ok(1.2 * sbar * (samples.n() as f64).powf(-expo))
}
