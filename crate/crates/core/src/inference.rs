//! Growth-exponent estimation for the nonridgeness field, the ridge
//! flatness test, and the leading-term diagnostic that compares the
//! plug-in field against its linearization at true ridge points.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bootstrap_quantile, candidate_set, check_candidates, check_pairing, grad_sup_draw, RhoN,
};
use crate::error::{Result, RidgeError};
use crate::field::RidgeField;
use crate::kde::{DensityJet, ErrorRegime, EstimatorHandle};
use crate::rng::stream_rng;
use crate::spectral::{default_gap_tol, nonridgeness, spectral_frame};
use crate::synthetic::SyntheticModel;

/// Additive inflation applied to the estimated growth exponent before
/// it enters the flatness ball radius, so a slight underestimate
/// cannot starve the ball.
pub const BETA_PRIME_INFLATION: f64 = 0.1;

/// Number of true ridge points the leading-term diagnostic samples.
pub const LEADING_TERM_POINTS: usize = 256;

/// Caveat attached to the default vernier radius: the rate condition
/// that justifies it involves the unknown growth exponent itself, so
/// it cannot be checked from data. Surfaced by the CLI.
pub const VERNIER_RADIUS_CAVEAT: &str =
    "the default vernier radius 1/ln(n) is a heuristic: the rate condition \
     relating it to the growth exponent cannot be verified from data";

/// Default vernier radius 1/ln(n).
pub fn default_vernier_radius(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(RidgeError::invalid(format!(
            "the default vernier radius needs at least 3 samples, got {n}"
        )));
    }
    Ok(1.0 / (n as f64).ln())
}

/// Vernier estimate of the growth exponent of the nonridgeness field
/// near its zero set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaPrimeEstimate {
    /// Ball radius used for the scan.
    pub r_n: f64,
    /// Smallest over anchor nodes of the largest nonridgeness value
    /// in the radius-r_n ball around the anchor.
    pub big_r: f64,
    /// ln(big_r) / ln(r_n).
    pub beta_hat: f64,
}

/// Scans every valid node with negative normal curvature as an anchor,
/// takes the maximum of p_hat over the valid nodes within distance
/// `r_n` of the anchor, and minimizes that maximum over anchors. The
/// estimate is the log-log ratio of the minimax value to the radius.
///
/// Anchors are restricted to nodes with negative normal curvature so
/// the minimum is taken near the estimated ridge rather than at
/// arbitrary density modes; ball members are only required to be
/// valid.
pub fn estimate_beta_prime(field: &RidgeField, r_n: f64) -> Result<BetaPrimeEstimate> {
    if !(r_n > 0.0 && r_n < 1.0) {
        return Err(RidgeError::invalid(format!(
            "vernier radius must lie strictly inside (0, 1), got {r_n}"
        )));
    }
    let spacing = field
        .grid
        .spacing()
        .into_iter()
        .fold(0.0f64, f64::max);
    if spacing > r_n / 4.0 {
        return Err(RidgeError::invalid(format!(
            "grid spacing {spacing:.6e} exceeds a quarter of the vernier radius \
             {r_n:.6e}; refine the grid"
        )));
    }
    let anchors: Vec<usize> = (0..field.grid.len())
        .filter(|&i| field.valid[i] && field.lambda_r1[i] < 0.0)
        .collect();
    if anchors.is_empty() {
        return Err(RidgeError::invalid(
            "no valid node with negative normal curvature to anchor the vernier ball",
        ));
    }
    let big_r = anchors
        .par_iter()
        .map(|&i| {
            let mut ball_max = f64::NEG_INFINITY;
            for y in field.grid.ball_indices(i, r_n) {
                if field.valid[y] && field.p_hat[y] > ball_max {
                    ball_max = field.p_hat[y];
                }
            }
            ball_max
        })
        .reduce(|| f64::INFINITY, f64::min);
    if !big_r.is_finite() {
        return Err(RidgeError::numerical(
            "vernier ball maximum is not finite; the field carries non-finite values",
        ));
    }
    if !(big_r > 0.0) {
        return Err(RidgeError::numerical(
            "the nonridgeness field vanishes on an entire vernier ball; \
             the growth exponent is undefined",
        ));
    }
    Ok(BetaPrimeEstimate {
        r_n,
        big_r,
        beta_hat: big_r.ln() / r_n.ln(),
    })
}

/// Outcome of the ridge flatness test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessTestResult {
    /// Test level.
    pub alpha: f64,
    /// Bootstrap replicates behind the critical value.
    pub replicates: usize,
    /// Candidate-set threshold the ball radius was derived from.
    pub rho_n: f64,
    /// Number of candidate nodes.
    pub candidates: usize,
    /// Vernier estimate behind the ball-radius exponent.
    pub beta: BetaPrimeEstimate,
    /// Inflated exponent beta_hat + 0.1 + 1.
    pub t_n: f64,
    /// Ball radius rho_n^(1/t_n).
    pub ball_radius: f64,
    /// Flatness statistic: max over candidates of the smallest plain
    /// gradient norm within the ball.
    pub statistic: f64,
    /// Bootstrap critical value for the statistic.
    pub critical_value: f64,
    /// The gradient-deviation replicates themselves.
    pub draws: Vec<f64>,
    /// Whether statistic >= critical_value.
    pub reject: bool,
}

/// Flatness statistic from precomputed per-node gradient norms: the
/// maximum over candidates of the minimum norm over valid nodes within
/// `ball_radius`. `grad_norms` must hold a finite value at every valid
/// node the balls touch.
pub fn flatness_statistic_from_norms(
    field: &RidgeField,
    candidates: &[usize],
    grad_norms: &[f64],
    ball_radius: f64,
) -> Result<f64> {
    check_candidates(field, candidates)?;
    if grad_norms.len() != field.grid.len() {
        return Err(RidgeError::invalid(format!(
            "got {} gradient norms for a grid of {} nodes",
            grad_norms.len(),
            field.grid.len()
        )));
    }
    if !(ball_radius > 0.0 && ball_radius.is_finite()) {
        return Err(RidgeError::invalid(format!(
            "ball radius must be positive and finite, got {ball_radius}"
        )));
    }
    let mut statistic = 0.0f64;
    for &x in candidates {
        let mut ball_min = f64::INFINITY;
        for y in field.grid.ball_indices(x, ball_radius) {
            if !field.valid[y] {
                continue;
            }
            let norm = grad_norms[y];
            if !norm.is_finite() {
                return Err(RidgeError::invalid(format!(
                    "gradient norm at node {y} is not finite"
                )));
            }
            if norm < ball_min {
                ball_min = norm;
            }
        }
        if !ball_min.is_finite() {
            return Err(RidgeError::numerical(
                "a flatness ball contains no valid node",
            ));
        }
        if ball_min > statistic {
            statistic = ball_min;
        }
    }
    Ok(statistic)
}

/// Tests whether the density gradient vanishes along the estimated
/// ridge. The statistic takes, for each candidate node, the smallest
/// plain gradient norm within a ball of radius rho_n^(1/t_n), and
/// maximizes over candidates; t_n comes from the vernier exponent at
/// its default radius, inflated additively by 0.1, plus one. The
/// critical value is the bootstrap quantile of supremum gradient
/// deviations over the same candidates. Rejects when the statistic
/// reaches the critical value; rejection means the ridge is not flat.
///
/// The decision is invariant to a common positive rescaling of the
/// gradient field, since both the statistic and the critical value
/// scale linearly.
pub fn flatness_test(
    est: &EstimatorHandle,
    field: &RidgeField,
    rho_n: f64,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<FlatnessTestResult> {
    check_pairing(est, field)?;
    if replicates == 0 {
        return Err(RidgeError::invalid("need at least one bootstrap replicate"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RidgeError::invalid(format!(
            "test level must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let (candidates, rho_n) = candidate_set(field, RhoN::Value(rho_n))?;
    let beta = estimate_beta_prime(field, default_vernier_radius(est.n())?)?;
    let t_n = beta.beta_hat + BETA_PRIME_INFLATION + 1.0;
    if !(t_n > 0.0 && t_n.is_finite()) {
        return Err(RidgeError::numerical(format!(
            "growth exponent estimate {} gives an unusable ball exponent",
            beta.beta_hat
        )));
    }
    let ball_radius = rho_n.powf(1.0 / t_n);
    let spacing = field
        .grid
        .spacing()
        .into_iter()
        .fold(0.0f64, f64::max);
    if !(ball_radius >= spacing) || !ball_radius.is_finite() {
        return Err(RidgeError::invalid(format!(
            "flatness ball radius {ball_radius:.6e} falls below the grid spacing \
             {spacing:.6e}; refine the grid or raise the candidate threshold"
        )));
    }

    // Plain gradient norms at every valid node any ball touches.
    let mut needed = vec![false; field.grid.len()];
    for &x in &candidates {
        for y in field.grid.ball_indices(x, ball_radius) {
            if field.valid[y] {
                needed[y] = true;
            }
        }
    }
    let needed_nodes: Vec<usize> = (0..needed.len()).filter(|&i| needed[i]).collect();
    let norms_at: Vec<(usize, f64)> = needed_nodes
        .par_iter()
        .map(|&i| -> Result<(usize, f64)> {
            let jet = est.jet_at(&field.grid.node(i))?;
            Ok((i, jet.gradient.norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad_norms = vec![f64::NAN; field.grid.len()];
    for (i, norm) in norms_at {
        grad_norms[i] = norm;
    }
    let statistic = flatness_statistic_from_norms(field, &candidates, &grad_norms, ball_radius)?;

    let draws: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| grad_sup_draw(est, field, &candidates, &mut stream_rng(seed, b as u64)))
        .collect::<Result<Vec<_>>>()?;
    let critical_value = bootstrap_quantile(&draws, alpha)?;
    Ok(FlatnessTestResult {
        alpha,
        replicates,
        rho_n,
        candidates: candidates.len(),
        beta,
        t_n,
        ball_radius,
        statistic,
        critical_value,
        draws,
        reject: statistic >= critical_value,
    })
}

/// Supremum comparison between the plug-in nonridgeness field and its
/// linearization at true ridge points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingTermReport {
    /// Largest plug-in nonridgeness over the evaluation points.
    pub sup_p_hat: f64,
    /// Largest linearized deviation over the same points.
    pub sup_linear: f64,
    /// sup_p_hat / sup_linear, defined as 1 when both vanish.
    pub ratio: f64,
}

/// Core of the diagnostic, from (exact, estimated) jet pairs at ridge
/// points. The linearization contracts the jet error with frames built
/// from the exact jets: the Hessian sensitivity matrix under a
/// Hessian-limited regime, the normal projector under a
/// gradient-limited one. The plug-in value is the nonridgeness of the
/// estimated jet alone.
pub fn leading_term_from_jets(
    pairs: &[(DensityJet, DensityJet)],
    r: usize,
    regime: ErrorRegime,
) -> Result<LeadingTermReport> {
    if pairs.is_empty() {
        return Err(RidgeError::invalid(
            "leading-term diagnostic needs at least one evaluation point",
        ));
    }
    let regime = regime.resolved();
    let mut sup_p_hat = 0.0f64;
    let mut sup_linear = 0.0f64;
    for (exact, hat) in pairs {
        let hat_hess = hat.hessian()?;
        let hat_frame = spectral_frame(
            &hat_hess,
            &hat.gradient,
            r,
            default_gap_tol(&hat_hess),
        )?;
        sup_p_hat = sup_p_hat.max(nonridgeness(&hat_frame, &hat.gradient)?);

        let exact_hess = exact.hessian()?;
        let frame = spectral_frame(
            &exact_hess,
            &exact.gradient,
            r,
            default_gap_tol(&exact_hess),
        )?;
        let dev: DVector<f64> = match regime {
            ErrorRegime::GradientLimited => &frame.l * (&hat.gradient - &exact.gradient),
            _ => &frame.m_t * (&hat.hess_vech - &exact.hess_vech),
        };
        sup_linear = sup_linear.max(dev.norm());
    }
    let ratio = if sup_p_hat == 0.0 && sup_linear == 0.0 {
        1.0
    } else {
        sup_p_hat / sup_linear
    };
    Ok(LeadingTermReport {
        sup_p_hat,
        sup_linear,
        ratio,
    })
}

/// Evaluates the estimator and the model's exact jets at 256 true
/// ridge points and reports the supremum comparison.
pub fn leading_term_diagnostic(
    est: &EstimatorHandle,
    model: &SyntheticModel,
    regime: ErrorRegime,
) -> Result<LeadingTermReport> {
    if est.dim() != model.dim() {
        return Err(RidgeError::invalid(format!(
            "estimator dimension {} does not match the model dimension {}",
            est.dim(),
            model.dim()
        )));
    }
    let points = model.true_ridge_points(LEADING_TERM_POINTS)?;
    let pairs: Vec<(DensityJet, DensityJet)> = points
        .par_iter()
        .map(|x| -> Result<(DensityJet, DensityJet)> {
            Ok((model.exact_jet(x)?, est.jet_at(x)?))
        })
        .collect::<Result<Vec<_>>>()?;
    leading_term_from_jets(&pairs, crate::synthetic::MODEL_RIDGE_DIM, regime)
}
