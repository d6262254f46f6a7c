//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fpf_core::analysis::{covariance_drift, mse_vs_n, mse_vs_time, poc_sweep, TestFunction};
use fpf_core::fpf::omega::omega_residual;
use fpf_core::fpf::{explicit_deterministic_scalar, omega_solve, run_fpf, FpfOptions, OmegaMode, Variant};
use fpf_core::kalman::{run_kalman, FilterState};
use fpf_core::model::{simulate_truth, validate_model, LinearGaussianModel};
use fpf_core::riccati::{
    explicit_on_grid, integrate_riccati, scalar_explicit, scalar_steady_state, solve_are, ARE_TOLERANCE,
};

fn baseline() -> LinearGaussianModel {
    LinearGaussianModel::scalar(0.1, 1.0, 1.0, 3.0, 5.0)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let b = random_matrix(rng, d, d, 1.0);
    &b * b.transpose() + DMatrix::identity(d, d) * 0.5
}

/// Random model that passes validation, with a full-rank observation.
fn random_model(rng: &mut ChaCha8Rng, d: usize) -> LinearGaussianModel {
    loop {
        let m = LinearGaussianModel::new(
            random_matrix(rng, d, d, 1.0),
            random_matrix(rng, d, d, 1.0) + DMatrix::identity(d, d),
            random_matrix(rng, d, d, 0.5) + DMatrix::identity(d, d),
            DVector::from_fn(d, |_, _| 2.0 * rng.random::<f64>() - 1.0),
            random_spd(rng, d),
        )
        .unwrap();
        if validate_model(&m, false).passed() {
            return m;
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn criterion_1() -> Outcome {
    let m = baseline();
    let seed = 101;
    let n = 100;
    let obs = simulate_truth(&m, 1e-3, 2.0, seed).unwrap();
    let opts = FpfOptions::default();

    let run = run_fpf(&m, &obs, n, Variant::Deterministic, &opts, seed, false).unwrap();
    let init = FilterState::new(run.moments[0].mean.clone(), run.moments[0].cov.clone());
    let kf = run_kalman(&m, &obs, init).unwrap();
    let mean_err = run
        .moments
        .iter()
        .zip(&kf)
        .map(|(e, k)| rel(e.mean[0], k.m[0]))
        .fold(0.0, f64::max);

    // covariance against the continuous Riccati solution from the same start
    let cov_dev = |path: &fpf_core::ObservationPath| {
        let r = run_fpf(&m, path, n, Variant::Deterministic, &opts, seed, false).unwrap();
        let s0 = r.moments[0].cov[(0, 0)];
        r.moments
            .iter()
            .enumerate()
            .map(|(k, mom)| (mom.cov[(0, 0)] - scalar_explicit(s0, k as f64 * path.dt, &m).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    let coarse = cov_dev(&obs.coarsen(2).unwrap());
    let fine = cov_dev(&obs);
    let ratio = coarse / fine;
    outcome(
        mean_err < 1e-9 && (1.7..=2.3).contains(&ratio),
        format!("max rel mean error {mean_err:.2e}; cov deviation {coarse:.3e} -> {fine:.3e} (ratio {ratio:.3})"),
    )
}

fn criterion_2() -> Outcome {
    let m = baseline();
    let ss = solve_are(&m).unwrap();
    let (s_closed, l_closed) = scalar_steady_state(&m).unwrap();
    let s = ss.sigma_inf[(0, 0)];
    let pass = (s - 1.104988).abs() < 1e-6
        && (ss.lambda0 - 1.004988).abs() < 1e-6
        && (s - s_closed).abs() < 1e-6
        && (ss.lambda0 - l_closed).abs() < 1e-6
        && ss.residual < ARE_TOLERANCE
        && ss.is_hurwitz();
    outcome(
        pass,
        format!(
            "Sigma_inf {s:.7} lambda0 {:.7} residual {:.1e} Hurwitz {}",
            ss.lambda0,
            ss.residual,
            ss.is_hurwitz()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dt = 1e-3;
    let steps = 5000;
    let mut worst = 0.0f64;
    for d in [1, 2, 3] {
        for _ in 0..4 {
            let m = random_model(&mut rng, d);
            let ss = solve_are(&m).unwrap();
            let rk4 = integrate_riccati(&m.sigma0, &m, dt, 5.0).unwrap();
            let explicit = explicit_on_grid(&m.sigma0, dt, steps, &m, &ss).unwrap();
            for (a, b) in rk4.sigmas.iter().zip(&explicit.sigmas) {
                worst = worst.max((a - b).amax());
            }
            if d == 1 {
                let s0 = m.sigma0[(0, 0)];
                for (k, a) in rk4.sigmas.iter().enumerate().step_by(50) {
                    worst = worst.max((a[(0, 0)] - scalar_explicit(s0, k as f64 * dt, &m).unwrap()).abs());
                }
            }
        }
    }
    outcome(worst < 1e-6, format!("max |explicit - RK4| {worst:.2e} over 12 models"))
}

fn criterion_4() -> Outcome {
    let m = baseline();
    let lambda0 = solve_are(&m).unwrap().lambda0;
    let opts = FpfOptions::default();
    let (dt, horizon) = (1e-3, 2.0);
    let det = mse_vs_time(&m, 100, 1000, dt, horizon, Variant::Deterministic, &opts, 40).unwrap();
    let sto = mse_vs_time(&m, 100, 1000, dt, horizon, Variant::Stochastic, &opts, 41).unwrap();
    let fit = det.fit.clone().unwrap();
    let rate = -fit.slope;
    let target = 2.0 * lambda0;
    let bm = det.bound_mean.as_ref().unwrap();
    let bc = det.bound_cov.as_ref().unwrap();
    let violations = (0..det.mse_mean.len())
        .filter(|&k| {
            det.mse_mean[k] > bm[k] + 2.0 * det.se_mean[k] || det.mse_cov[k] > bc[k] + 2.0 * det.se_cov[k]
        })
        .count();
    let last = det.mse_mean.len() - 1;
    let separation = sto.mse_mean[last] / det.mse_mean[last];
    outcome(
        (rate - target).abs() <= 0.25 * target && violations == 0 && separation >= 10.0,
        format!(
            "rate {rate:.3} +- {:.3} (2 lambda0 = {target:.3}); bound violations {violations}; \
             MSE(t=2) stochastic/deterministic = {:.3e}/{:.3e} = {separation:.1}",
            fit.half_width, sto.mse_mean[last], det.mse_mean[last]
        ),
    )
}

fn criterion_5() -> Outcome {
    let m = baseline();
    let ns = [10, 32, 100, 316, 1000];
    let opts = FpfOptions::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for (variant, seed) in [(Variant::Deterministic, 50), (Variant::Stochastic, 51)] {
        let r = mse_vs_n(&m, &ns, 2.0, 1000, 1e-3, variant, &opts, seed).unwrap();
        let fit = r.fit.clone().unwrap();
        pass &= (fit.slope + 1.0).abs() <= 0.15;
        let cov = r.fit_cov.clone().map(|f| f.slope).unwrap_or(f64::NAN);
        detail.push(format!("{variant:?} slope {:.3} +- {:.3} (cov slope {cov:.3})", fit.slope, fit.half_width));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let m = baseline();
    let opts = FpfOptions::default();
    let r = poc_sweep(&m, &[10, 100, 1000], 2.0, 1000, 1e-3, TestFunction::Tanh, &opts, 60).unwrap();
    let cs = r.coupling_fit.clone().unwrap();
    let ws = r.weak_fit.clone().unwrap();
    let slopes_ok = (cs.slope + 1.0).abs() <= 0.2 && (ws.slope + 1.0).abs() <= 0.2;

    let seed = 61;
    let fine = simulate_truth(&m, 5e-4, 1.0, seed).unwrap();
    let err = |obs: &fpf_core::ObservationPath| {
        let run = run_fpf(&m, obs, 100, Variant::Deterministic, &opts, seed, true).unwrap();
        let ens = run.ensembles.unwrap();
        let x0: Vec<f64> = ens[0].particles.iter().copied().collect();
        let k = obs.steps();
        let closed = explicit_deterministic_scalar(&x0, obs, k, &m).unwrap();
        closed
            .iter()
            .zip(ens[k].particles.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (e_coarse, e_fine) = (err(&fine.coarsen(2).unwrap()), err(&fine));
    let ratio = e_coarse / e_fine;
    outcome(
        slopes_ok && (1.6..=2.4).contains(&ratio),
        format!(
            "coupling slope {:.3} +- {:.3}; weak slope {:.3} +- {:.3}; explicit error {e_coarse:.3e} -> {e_fine:.3e} (ratio {ratio:.3})",
            cs.slope, cs.half_width, ws.slope, ws.half_width
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_res = 0.0f64;
    let mut skew_exact = true;
    let mut max_moment_dev = 0.0f64;
    let mut min_particle_dev = f64::INFINITY;
    for d in [2, 3] {
        for trial in 0..3 {
            let m = random_model(&mut rng, d);
            for _ in 0..5 {
                let sigma = random_spd(&mut rng, d);
                let omega = omega_solve(&sigma, &m).unwrap();
                max_res = max_res.max(omega_residual(&omega, &sigma, &m).unwrap());
                skew_exact &= omega == -omega.transpose();
            }
            let seed = 700 + 10 * d as u64 + trial;
            let obs = simulate_truth(&m, 1e-3, 1.0, seed).unwrap();
            let run = |omega| {
                let opts = FpfOptions { omega, ..Default::default() };
                run_fpf(&m, &obs, 50, Variant::Deterministic, &opts, seed, true).unwrap()
            };
            let (zero, opt) = (run(OmegaMode::Zero), run(OmegaMode::Optimal));
            for (a, b) in zero.moments.iter().zip(&opt.moments) {
                let scale = a.mean.norm().max(a.cov.norm()).max(1.0);
                max_moment_dev = max_moment_dev.max(((&a.mean - &b.mean).norm() + (&a.cov - &b.cov).norm()) / scale);
            }
            let particle_dev = zero
                .ensembles
                .unwrap()
                .iter()
                .zip(opt.ensembles.unwrap().iter())
                .map(|(a, b)| (&a.particles - &b.particles).amax())
                .fold(0.0, f64::max);
            min_particle_dev = min_particle_dev.min(particle_dev);
        }
    }
    outcome(
        max_res < 1e-10 && skew_exact && max_moment_dev < 1e-9 && min_particle_dev > 1e-6,
        format!(
            "residual {max_res:.1e}; skew exact {skew_exact}; moment deviation {max_moment_dev:.1e}; \
             smallest particle deviation {min_particle_dev:.2e}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let r = covariance_drift(&baseline(), 100, 1000, 1e-3, 2.0, 80).unwrap();
    let z = r.max_abs_z();
    outcome(z < 5.0, format!("mean drift {:.3e} +- {:.3e}, |z| = {z:.2}", r.mean[0], r.stderr[0]))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<f64>); 8] = [
        ("deterministic moment exactness", criterion_1, Some(5.0)),
        ("algebraic Riccati equation and stability", criterion_2, Some(1.0)),
        ("explicit Riccati solution", criterion_3, Some(10.0)),
        ("MSE versus time", criterion_4, None),
        ("MSE versus N", criterion_5, None),
        ("propagation of chaos", criterion_6, None),
        ("Omega machinery", criterion_7, None),
        ("covariance martingale drift", criterion_8, None),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let (out, elapsed) = timed(check);
        let secs = elapsed.as_secs_f64();
        let in_time = budget.is_none_or(|b| secs < b);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = budget.map(|b| format!(" (budget {b} s)")).unwrap_or_default();
        println!(
            "criterion {} {}: {name}: {} [{secs:.2} s{budget_note}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
