//! Bootstrap confidence regions for ridge sublevel sets.
//!
//! The region is the sublevel set of the nonridgeness field at a
//! data-driven threshold. Each bootstrap replicate perturbs the
//! estimated jets, recomputes nonridgeness at every candidate node,
//! and records the supremum of the absolute deviation from the base
//! field; the threshold is an upper order statistic of those suprema.
//!
//! Two replicate schemes are supported. The multiplier scheme folds
//! centered standard normal weights into the cached kernel terms of
//! each candidate, which never moves the sample points. The empirical
//! scheme refits the estimator on an n-out-of-n resample. Replicate
//! `b` owns RNG stream `b` of the configured seed, so draws are
//! reproducible and independent of evaluation order; replicates run
//! in parallel and are assembled in replicate order.

use crate::error::{Result, RidgeError};
use crate::field::{sublevel_region, RidgeField};
use crate::kde::{
    log_transform_jet, DensityJet, ErrorRegime, EstimatorHandle, JetTerms, MultiplierWeights,
};
use crate::rng::stream_rng;
use crate::spectral::{default_gap_tol, nonridgeness, spectral_frame};
use crate::util::ceil_index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Supremum-norm rate of the order-`k` derivative of the estimator:
/// `sqrt(log n / (n h^(d + 2k)))`.
pub fn jet_sup_rate(est: &EstimatorHandle, order: usize) -> f64 {
    let n = est.n() as f64;
    let h = est.bandwidth();
    n.ln().sqrt() / (n * h.powi((est.dim() + 2 * order) as i32)).sqrt()
}

/// Default sublevel threshold `log n` times the dominant jet rate:
/// the Hessian rate when the ridge carries noncritical points, the
/// gradient rate when the density is critical along it.
pub fn default_rho_n(est: &EstimatorHandle, regime: ErrorRegime) -> f64 {
    let order = match regime.resolved() {
        ErrorRegime::HessianLimited => 2,
        ErrorRegime::GradientLimited => 1,
        ErrorRegime::Auto => unreachable!("resolved() returns a concrete regime"),
    };
    (est.n() as f64).ln() * jet_sup_rate(est, order)
}

/// Sublevel threshold selector for the candidate set.
///
/// Serializes as a plain number or the string `"zero"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoN {
    /// Fixed threshold.
    Value(f64),
    /// Surrogate for a vanishing threshold: the first percentile of
    /// nonridgeness over eligible nodes.
    Zero,
}

impl Serialize for RhoN {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RhoN::Value(v) => s.serialize_f64(*v),
            RhoN::Zero => s.serialize_str("zero"),
        }
    }
}

impl<'de> Deserialize<'de> for RhoN {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(RhoN::Value(v)),
            Repr::Tag(t) if t == "zero" => Ok(RhoN::Zero),
            Repr::Tag(t) => Err(D::Error::custom(format!(
                "rho must be a number or \"zero\", got \"{t}\""
            ))),
        }
    }
}

/// Which replicate scheme perturbs the jets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    Multiplier,
    Empirical,
}

/// Parameters of a bootstrap confidence region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of replicates B.
    pub replicates: usize,
    /// Miscoverage level in (0, 1).
    pub alpha: f64,
    pub mode: BootstrapMode,
    /// Candidate sublevel threshold.
    pub rho: RhoN,
    /// Base seed; replicate b draws from stream b.
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(RidgeError::invalid("replicate count must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RidgeError::invalid(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Result of `confidence_region`: the threshold, the region mask, and
/// the replicate diagnostics behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub alpha: f64,
    pub mode: BootstrapMode,
    /// Candidate sublevel threshold after resolving the rho rule.
    pub rho: f64,
    /// Flat node indices of the candidate set.
    pub candidates: Vec<usize>,
    /// Supremum deviations in replicate order.
    pub draws: Vec<f64>,
    /// Candidates skipped per replicate because the replicate Hessian
    /// lost its eigen gap.
    pub skipped: Vec<usize>,
    /// Bootstrap quantile: the ceil(B (1 - alpha))-th smallest draw.
    pub threshold: f64,
    /// Sublevel region of the field at the threshold.
    pub mask: Vec<bool>,
}

/// Resolves the rho rule and returns the flat indices of the sublevel
/// candidate set together with the threshold used.
pub fn candidate_set(field: &RidgeField, rho: RhoN) -> Result<(Vec<usize>, f64)> {
    let threshold = match rho {
        RhoN::Value(v) => {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RidgeError::invalid(format!(
                    "rho must be nonnegative and finite, got {v}"
                )));
            }
            v
        }
        RhoN::Zero => zero_rho_surrogate(field)?,
    };
    let mask = sublevel_region(field, threshold)?;
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if idx.is_empty() {
        return Err(RidgeError::EmptyCandidates);
    }
    Ok((idx, threshold))
}

/// First percentile of nonridgeness over eligible nodes (valid with
/// negative normal curvature), used when the requested threshold is
/// an asymptotically vanishing sequence rather than a number.
fn zero_rho_surrogate(field: &RidgeField) -> Result<f64> {
    let mut values: Vec<f64> = (0..field.grid.len())
        .filter(|&i| field.valid[i] && field.lambda_r1[i] < 0.0)
        .map(|i| field.p_hat[i])
        .collect();
    if values.is_empty() {
        return Err(RidgeError::EmptyCandidates);
    }
    values.sort_by(f64::total_cmp);
    let k = ceil_index(0.01 * values.len() as f64).min(values.len());
    Ok(values[k - 1])
}

pub(crate) fn check_pairing(est: &EstimatorHandle, field: &RidgeField) -> Result<()> {
    if field.grid.dim() != est.dim() {
        return Err(RidgeError::invalid(format!(
            "field dimension {} does not match estimator dimension {}",
            field.grid.dim(),
            est.dim()
        )));
    }
    if field.h != est.bandwidth() {
        return Err(RidgeError::invalid(format!(
            "field bandwidth {} does not match estimator bandwidth {}; \
             the field must come from this estimator",
            field.h,
            est.bandwidth()
        )));
    }
    Ok(())
}

pub(crate) fn check_candidates(field: &RidgeField, candidates: &[usize]) -> Result<()> {
    if candidates.is_empty() {
        return Err(RidgeError::EmptyCandidates);
    }
    for &i in candidates {
        if i >= field.grid.len() {
            return Err(RidgeError::invalid(format!(
                "candidate index {i} exceeds the grid size {}",
                field.grid.len()
            )));
        }
        if !field.valid[i] {
            return Err(RidgeError::invalid(format!(
                "candidate node {i} is not a valid field node"
            )));
        }
    }
    Ok(())
}

/// Nonridgeness of a replicate jet under the field's conventions, or
/// None when the replicate Hessian violates the eigen gap.
fn replicate_nonridgeness(field: &RidgeField, jet: &DensityJet) -> Result<Option<f64>> {
    let jet = if field.use_log {
        log_transform_jet(jet, field.log_floor)?
    } else {
        jet.clone()
    };
    let hess = jet.hessian()?;
    let tol = field.gap_tol.unwrap_or_else(|| default_gap_tol(&hess));
    match spectral_frame(&hess, &jet.gradient, field.r, tol) {
        Ok(frame) => Ok(Some(nonridgeness(&frame, &jet.gradient)?)),
        Err(RidgeError::EigenGap { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn sup_over_candidates<F>(field: &RidgeField, candidates: &[usize], jet_of: F) -> Result<(f64, usize)>
where
    F: Fn(usize) -> Result<DensityJet>,
{
    let mut sup = 0.0_f64;
    let mut skipped = 0_usize;
    for (k, &i) in candidates.iter().enumerate() {
        let jet = jet_of(k)?;
        match replicate_nonridgeness(field, &jet)? {
            Some(p) => sup = sup.max((p - field.p_hat[i]).abs()),
            None => skipped += 1,
        }
    }
    if skipped == candidates.len() {
        return Err(RidgeError::numerical(
            "every candidate was skipped: the replicate Hessian lost its eigen gap at all of them",
        ));
    }
    Ok((sup, skipped))
}

/// Supremum multiplier deviation of nonridgeness over the candidates
/// for one explicit weight vector.
pub fn multiplier_sup_draw_with_weights(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    weights: &MultiplierWeights,
) -> Result<(f64, usize)> {
    check_pairing(est, field)?;
    check_candidates(field, candidates)?;
    if weights.len() != est.n() {
        return Err(RidgeError::invalid(format!(
            "got {} weights for {} samples",
            weights.len(),
            est.n()
        )));
    }
    sup_over_candidates(field, candidates, |k| {
        est.multiplier_jet_at(&field.grid.node(candidates[k]), weights)
    })
}

/// Multiplier replicate with standard normal weights drawn from the
/// stream. Returns the supremum deviation and the skipped-candidate
/// count.
pub fn multiplier_sup_draw(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let w = MultiplierWeights::draw(est.n(), rng)?;
    multiplier_sup_draw_with_weights(est, field, candidates, &w)
}

/// Supremum empirical-bootstrap deviation for one explicit resample.
pub fn empirical_sup_draw_with_indices(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    indices: &[usize],
) -> Result<(f64, usize)> {
    check_pairing(est, field)?;
    check_candidates(field, candidates)?;
    if indices.len() != est.n() {
        return Err(RidgeError::invalid(format!(
            "got {} resample indices for {} samples",
            indices.len(),
            est.n()
        )));
    }
    let refit = est.empirical_refit(indices)?;
    sup_over_candidates(field, candidates, |k| {
        refit.jet_at(&field.grid.node(candidates[k]))
    })
}

/// Empirical replicate: an n-out-of-n resample drawn from the stream.
pub fn empirical_sup_draw(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let n = est.n();
    let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    empirical_sup_draw_with_indices(est, field, candidates, &indices)
}

/// Supremum multiplier deviation of the plain density gradient over
/// the candidates for one explicit weight vector. Gradients stay on
/// the plain scale regardless of the field's log setting: the ridge
/// flatness statistic is defined through raw gradient norms.
pub fn grad_sup_draw_with_weights(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    weights: &MultiplierWeights,
) -> Result<f64> {
    check_pairing(est, field)?;
    check_candidates(field, candidates)?;
    if weights.len() != est.n() {
        return Err(RidgeError::invalid(format!(
            "got {} weights for {} samples",
            weights.len(),
            est.n()
        )));
    }
    let mut sup = 0.0_f64;
    for &i in candidates {
        let terms = est.jet_terms(&field.grid.node(i))?;
        let jet = terms.fold_multiplier(weights)?;
        sup = sup.max((&jet.gradient - &terms.base().gradient).norm());
    }
    Ok(sup)
}

/// Gradient-deviation replicate with stream-drawn weights.
pub fn grad_sup_draw(
    est: &EstimatorHandle,
    field: &RidgeField,
    candidates: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let w = MultiplierWeights::draw(est.n(), rng)?;
    grad_sup_draw_with_weights(est, field, candidates, &w)
}

/// The ceil(B (1 - alpha))-th smallest draw, 1-based.
pub fn bootstrap_quantile(draws: &[f64], alpha: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(RidgeError::invalid("no bootstrap draws to take a quantile of"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RidgeError::invalid(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(RidgeError::numerical("bootstrap draws must be finite"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ceil_index(draws.len() as f64 * (1.0 - alpha)).min(draws.len());
    Ok(sorted[k - 1])
}

/// Runs the configured bootstrap and thresholds the field.
///
/// Replicate `b` uses RNG stream `b` of `config.seed`. In multiplier
/// mode the kernel terms of every candidate are cached once and every
/// replicate folds its weights into the same cache, which reproduces
/// `multiplier_sup_draw` bit for bit.
pub fn confidence_region(
    est: &EstimatorHandle,
    field: &RidgeField,
    config: &BootstrapConfig,
) -> Result<ConfidenceRegion> {
    config.validate()?;
    check_pairing(est, field)?;
    let (candidates, rho) = candidate_set(field, config.rho)?;
    let replicates: Vec<(f64, usize)> = match config.mode {
        BootstrapMode::Multiplier => {
            let terms: Vec<JetTerms> = candidates
                .par_iter()
                .map(|&i| est.jet_terms(&field.grid.node(i)))
                .collect::<Result<_>>()?;
            (0..config.replicates)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream_rng(config.seed, b as u64);
                    let w = MultiplierWeights::draw(est.n(), &mut rng)?;
                    sup_over_candidates(field, &candidates, |k| terms[k].fold_multiplier(&w))
                })
                .collect::<Result<_>>()?
        }
        BootstrapMode::Empirical => (0..config.replicates)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(config.seed, b as u64);
                empirical_sup_draw(est, field, &candidates, &mut rng)
            })
            .collect::<Result<_>>()?,
    };
    let draws: Vec<f64> = replicates.iter().map(|r| r.0).collect();
    let skipped: Vec<usize> = replicates.iter().map(|r| r.1).collect();
    let threshold = bootstrap_quantile(&draws, config.alpha)?;
    let mask = sublevel_region(field, threshold)?;
    Ok(ConfidenceRegion {
        alpha: config.alpha,
        mode: config.mode,
        rho,
        candidates,
        draws,
        skipped,
        threshold,
        mask,
    })
}
