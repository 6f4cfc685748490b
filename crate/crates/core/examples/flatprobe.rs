// Scratch probe for flatness-test power tuning. Not part of the
// library surface.

use ridgeband::field::{density_floor_mask, evaluate_field, GridSpec};
use ridgeband::inference::flatness_test;
use ridgeband::kde::{default_bandwidth, EstimatorHandle};
use ridgeband::rng::{child_seed, stream_rng, DOMAIN_BOOTSTRAP, DOMAIN_RUN};
use ridgeband::synthetic::{build_model, ModelSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let model_name = args.get(1).map(String::as_str).unwrap_or("circle_flat");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let b: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let m: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20);
    let alpha: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(42);
    let rho: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let div: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(7.0);
    let h_override: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let spec = match model_name {
        "circle_flat" => ModelSpec::circle_flat(),
        "circle_modulated" => ModelSpec::circle_modulated(),
        "sun_cross" => ModelSpec::sun_cross(),
        other => panic!("unknown model {other}"),
    };
    let model = build_model(spec).unwrap();

    let mut rejects = 0usize;
    let started = std::time::Instant::now();
    for run in 0..m {
        let run_seed = child_seed(seed, DOMAIN_RUN, run as u64);
        let sample = model.sample(n, run_seed).unwrap();
        let h = if h_override > 0.0 {
            h_override
        } else {
            default_bandwidth(&sample, model.error_regime()).unwrap()
        };
        let est = EstimatorHandle::fit(sample, h).unwrap();
        let (mut lo, mut hi) = est.samples().bounding_box();
        let mut res = Vec::new();
        for k in 0..2 {
            lo[k] -= h;
            hi[k] += h;
            let cells = ((hi[k] - lo[k]) / (h / div)).ceil() as usize;
            res.push(cells.max(1) + 1);
        }
        let grid = GridSpec::new(lo, hi, res).unwrap();
        let mut field = evaluate_field(&est, &grid, 1, true, None).unwrap();
        density_floor_mask(&est, &mut field, 0.05).unwrap();
        let bseed = child_seed(run_seed, DOMAIN_BOOTSTRAP, 0);
        // Keep the probe aligned with stream_rng(bseed, rep) drawing.
        let _ = stream_rng(bseed, 0);
        match flatness_test(&est, &field, rho, alpha, b, bseed) {
            Ok(res) => {
                if res.reject {
                    rejects += 1;
                }
                if run < 6 {
                    println!(
                        "run={run} reject={} T={:.4} crit={:.4} beta={:.3} t_n={:.3} ball={:.4} cand={}",
                        res.reject,
                        res.statistic,
                        res.critical_value,
                        res.beta.beta_hat,
                        res.t_n,
                        res.ball_radius,
                        res.candidates
                    );
                }
            }
            Err(e) => println!("run={run} error: {e}"),
        }
    }
    println!(
        "==> model={model_name} n={n} B={b} M={m} alpha={alpha} rho={rho} div={div} rejection={:.3} elapsed={:.1}s",
        rejects as f64 / m as f64,
        started.elapsed().as_secs_f64()
    );
}
