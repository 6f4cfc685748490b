// Scratch probe for protocol tuning. Not part of the library surface.
use ridgeband::bootstrap::{
    bootstrap_quantile, empirical_sup_draw, multiplier_sup_draw, BootstrapMode,
};
use ridgeband::field::{
    connected_components, density_floor_mask, evaluate_field, hausdorff_to_set,
    sublevel_region, GridSpec,
};
use ridgeband::kde::{default_bandwidth, EstimatorHandle};
use ridgeband::rng::{child_seed, stream_rng, DOMAIN_BOOTSTRAP, DOMAIN_RUN};
use ridgeband::synthetic::{build_model, ModelSpec};

fn ceil_index(t: f64) -> usize {
    ((t - 1e-9).ceil() as usize).max(1)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let model_name = args.get(1).map(String::as_str).unwrap_or("circle_flat");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let b: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let m: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20);
    let alpha: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(42);
    let floor_q: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    // Candidate rule: fraction of eligible nodes (by smallest p_hat).
    let cand_q: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let mode = match args.get(9).map(String::as_str) {
        Some("empirical") => BootstrapMode::Empirical,
        _ => BootstrapMode::Multiplier,
    };
    let use_log = args.get(10).map(String::as_str) != Some("plain");
    // Grid spacing divisor: spacing = h / div over the inflated box.
    let div: f64 = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    // Candidate pool density filter: quantile of sample densities (0 = off).
    let cand_dq: f64 = args.get(12).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    // Extra candidates: bottom fraction of the pool by eigengap (0 = off).
    let gap_q: f64 = args.get(13).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let spec = ModelSpec::from_name(model_name).unwrap();
    let model = build_model(spec).unwrap();
    let truth = model.true_ridge_points(256).unwrap();
    let t0 = std::time::Instant::now();
    let mut covered_ct = 0usize;
    let mut single_ct = 0usize;
    let mut r2t_sum = 0.0f64;
    let mut r2t_ct = 0usize;
    for run in 0..m {
        let run_seed = child_seed(seed, DOMAIN_RUN, run as u64);
        let samples = model.sample(n, run_seed).unwrap();
        let h = default_bandwidth(&samples, model.error_regime()).unwrap();
        let est = EstimatorHandle::fit(samples, h).unwrap();
        let grid = if (div - 3.0).abs() < 1e-12 {
            GridSpec::auto(est.samples(), h).unwrap()
        } else {
            let (mut lo, mut hi) = est.samples().bounding_box();
            let mut res = Vec::new();
            for k in 0..2 {
                lo[k] -= h;
                hi[k] += h;
                let cells = ((hi[k] - lo[k]) / (h / div)).ceil() as usize;
                res.push(cells.max(1) + 1);
            }
            GridSpec::new(lo, hi, res).unwrap()
        };
        let mut field = evaluate_field(&est, &grid, 1, use_log, None).unwrap();
        density_floor_mask(&est, &mut field, floor_q).unwrap();
        // Percentile candidate threshold over eligible nodes, optionally
        // restricted to nodes whose density clears a sample-density quantile.
        let dens_floor = if cand_dq > 0.0 {
            let mut sd = est.sample_densities().to_vec();
            sd.sort_by(f64::total_cmp);
            sd[ceil_index(cand_dq * sd.len() as f64).min(sd.len()) - 1]
        } else {
            f64::NEG_INFINITY
        };
        let mut elig: Vec<f64> = (0..grid.len())
            .filter(|&i| {
                field.valid[i] && field.lambda_r1[i] < 0.0 && field.density[i] >= dens_floor
            })
            .map(|i| field.p_hat[i])
            .collect();
        elig.sort_by(f64::total_cmp);
        let rho = elig[ceil_index(cand_q * elig.len() as f64).min(elig.len()) - 1];
        let mut candidates: Vec<usize> = (0..grid.len())
            .filter(|&i| {
                field.valid[i]
                    && field.lambda_r1[i] < 0.0
                    && field.density[i] >= dens_floor
                    && field.p_hat[i] <= rho
            })
            .collect();
        if gap_q > 0.0 {
            // Pool nodes ranked by eigengap at the split, ascending.
            // Restricted to the upper-density half so noisy low-density
            // Hessians do not masquerade as frame degeneracy.
            let gap_dens = {
                let mut sd = est.sample_densities().to_vec();
                sd.sort_by(f64::total_cmp);
                sd[ceil_index(0.5 * sd.len() as f64).min(sd.len()) - 1]
            };
            let pool: Vec<usize> = (0..grid.len())
                .filter(|&i| {
                    field.valid[i] && field.lambda_r1[i] < 0.0 && field.density[i] >= gap_dens
                })
                .collect();
            let mut gaps: Vec<(f64, usize)> = pool
                .iter()
                .map(|&i| {
                    let jet = if use_log {
                        est.log_jet_at(&grid.node(i), field.log_floor).unwrap()
                    } else {
                        est.jet_at(&grid.node(i)).unwrap()
                    };
                    let hess = jet.hessian().unwrap();
                    let ev = hess.symmetric_eigen().eigenvalues;
                    let mut v: Vec<f64> = ev.iter().copied().collect();
                    v.sort_by(|a, b| b.total_cmp(a));
                    (v[0] - v[1], i)
                })
                .collect();
            gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
            if run < 3 {
                let q = |t: f64| gaps[((gaps.len() - 1) as f64 * t) as usize].0;
                println!(
                    "    gaps: min={:.2} q01={:.2} q05={:.2} q25={:.2} med={:.2}",
                    gaps[0].0,
                    q(0.01),
                    q(0.05),
                    q(0.25),
                    q(0.5)
                );
            }
            let keep = ceil_index(gap_q * gaps.len() as f64).min(gaps.len());
            candidates.extend(gaps[..keep].iter().map(|&(_, i)| i));
            candidates.sort_unstable();
            candidates.dedup();
        }
        let bseed = child_seed(run_seed, DOMAIN_BOOTSTRAP, 0);
        let draws: Vec<f64> = (0..b)
            .map(|rep| {
                let mut rng = stream_rng(bseed, rep as u64);
                match mode {
                    BootstrapMode::Multiplier => {
                        multiplier_sup_draw(&est, &field, &candidates, &mut rng)
                            .unwrap()
                            .0
                    }
                    BootstrapMode::Empirical => {
                        empirical_sup_draw(&est, &field, &candidates, &mut rng)
                            .unwrap()
                            .0
                    }
                }
            })
            .collect();
        let threshold = bootstrap_quantile(&draws, alpha).unwrap();
        let mask = sublevel_region(&field, threshold).unwrap();
        let region_nodes = mask.iter().filter(|&&x| x).count();
        let diag = grid.cell_diagonal();
        let (t2r, r2t) = if region_nodes > 0 {
            let dh = hausdorff_to_set(&grid, &mask, &truth).unwrap();
            (dh.target_to_mask, dh.mask_to_target)
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let covered = t2r <= diag;
        covered_ct += covered as usize;
        if !covered && region_nodes > 0 {
            // List truth points without a region node within one diagonal.
            for pt in &truth {
                let mut best = f64::INFINITY;
                for i in 0..grid.len() {
                    if !mask[i] {
                        continue;
                    }
                    let y = grid.node(i);
                    let d2: f64 = (0..2).map(|k| (y[k] - pt[k]).powi(2)).sum();
                    best = best.min(d2);
                }
                if best.sqrt() > diag {
                    println!(
                        "    miss truth=({:+.4},{:+.4}) |pt|={:.3} nearest_region={:.4}",
                        pt[0],
                        pt[1],
                        (pt[0] * pt[0] + pt[1] * pt[1]).sqrt(),
                        best.sqrt()
                    );
                    let mut best_node = 0usize;
                    let mut best_d = f64::INFINITY;
                    for i in 0..grid.len() {
                        let y = grid.node(i);
                        let d2: f64 = (0..2).map(|k| (y[k] - pt[k]).powi(2)).sum();
                        if d2 < best_d {
                            best_d = d2;
                            best_node = i;
                        }
                    }
                    for y in grid.ball_indices(best_node, diag) {
                        let c = grid.node(y);
                        println!(
                            "      node ({:+.4},{:+.4}) valid={} lam={:+.2} p={:.3} dens={:.4}",
                            c[0], c[1], field.valid[y], field.lambda_r1[y],
                            field.p_hat[y], field.density[y]
                        );
                    }
                }
            }
        }
        if r2t.is_finite() {
            r2t_sum += r2t;
            r2t_ct += 1;
        }
        // Single-component check: every region node within one cell
        // diagonal of a truth point must share one component label.
        let single = if region_nodes > 0 {
            let (_, labels) = connected_components(&grid, &mask).unwrap();
            let mut ids: Vec<u32> = Vec::new();
            for pt in &truth {
                let mut best_node = 0usize;
                let mut best_d = f64::INFINITY;
                for i in 0..grid.len() {
                    let y = grid.node(i);
                    let d2: f64 = (0..2).map(|k| (y[k] - pt[k]).powi(2)).sum();
                    if d2 < best_d {
                        best_d = d2;
                        best_node = i;
                    }
                }
                for y in grid.ball_indices(best_node, diag) {
                    if mask[y] {
                        ids.push(labels[y]);
                    }
                }
            }
            ids.sort_unstable();
            ids.dedup();
            ids.len() == 1
        } else {
            false
        };
        single_ct += single as usize;
        // Margin diagnostic: worst truth point's best achievable p_hat
        // within one cell diagonal, versus the threshold.
        let mut worst_best = 0.0f64;
        for pt in &truth {
            // nearest node to pt
            let mut best_node = 0usize;
            let mut best_d = f64::INFINITY;
            for i in 0..grid.len() {
                let y = grid.node(i);
                let d2: f64 = (0..2).map(|k| (y[k] - pt[k]).powi(2)).sum();
                if d2 < best_d {
                    best_d = d2;
                    best_node = i;
                }
            }
            let mut best_p = f64::INFINITY;
            for y in grid.ball_indices(best_node, diag) {
                if field.valid[y] && field.lambda_r1[y] < 0.0 && field.p_hat[y] < best_p {
                    best_p = field.p_hat[y];
                }
            }
            if best_p > worst_best {
                worst_best = best_p;
            }
            if best_p.is_infinite() {
                println!(
                    "  truth point ({:+.4},{:+.4}) has no eligible ball node:",
                    pt[0], pt[1]
                );
                for y in grid.ball_indices(best_node, diag) {
                    let c = grid.node(y);
                    println!(
                        "    node ({:+.4},{:+.4}) valid={} lam={:+.3} p={:.3} dens={:.5}",
                        c[0], c[1], field.valid[y], field.lambda_r1[y], field.p_hat[y],
                        field.density[y]
                    );
                }
            }
        }
        // Locate the region node farthest from the truth set.
        let mut far = (0.0f64, vec![0.0, 0.0]);
        for i in 0..grid.len() {
            if !mask[i] {
                continue;
            }
            let y = grid.node(i);
            let mut best = f64::INFINITY;
            for pt in &truth {
                let d2: f64 = (0..2).map(|k| (y[k] - pt[k]).powi(2)).sum();
                best = best.min(d2);
            }
            if best.sqrt() > far.0 {
                far = (best.sqrt(), y);
            }
        }
        println!(
            "run={:2} cov={} t2r={:7.4} r2t={:7.4} diag={:.4} thr={:8.4} rho={:8.4} worst_best={:8.4} cand={:4} region={:5} far=({:+.2},{:+.2}) |far|={:.3}",
            run, covered as u8, t2r, r2t, diag, threshold, rho, worst_best,
            candidates.len(), region_nodes, far.1[0], far.1[1],
            (far.1[0] * far.1[0] + far.1[1] * far.1[1]).sqrt()
        );
    }
    println!(
        "==> model={} n={} B={} M={} alpha={} floorq={} candq={} mode={:?} log={} coverage={:.3} single={:.3} mean_r2t={:.4} elapsed={:.1}s",
        model_name, n, b, m, alpha, floor_q, cand_q, mode, use_log,
        covered_ct as f64 / m as f64,
        single_ct as f64 / m as f64,
        r2t_sum / r2t_ct.max(1) as f64,
        t0.elapsed().as_secs_f64()
    );
}
