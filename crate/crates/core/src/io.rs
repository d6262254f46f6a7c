//! CSV outputs. Every file starts with `# seed=<master seed>`; further
//! `#` lines carry metadata. Numbers use the shortest round-trip decimal
//! form, so reruns with the same seed produce identical bytes.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::analysis::{Axis, ErrorReport, PocReport};
use crate::analysis::fit::RateFit;
use crate::error::{FilterError, Result};
use crate::fpf::{run_fpf_with, FpfOptions, Variant};
use crate::kalman::{run_kalman, FilterState};
use crate::linalg::vech;
use crate::model::{LinearGaussianModel, ObservationPath};

fn opt(v: Option<&f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fit_comment(name: &str, fit: &Option<RateFit>) -> String {
    match fit {
        Some(f) => format!("# {name}={} half_width={} intercept={}\n", f.slope, f.half_width, f.intercept),
        None => format!("# {name}=nan\n"),
    }
}

pub fn mse_time_csv(report: &ErrorReport, seed: u64) -> Result<String> {
    let Axis::Time(ts) = &report.axis else {
        return Err(FilterError::InvalidArgument("mse_time.csv needs a time axis".into()));
    };
    let mut out = format!("# seed={seed}\n# replicas={} failed={}\n", report.replicas, report.failed);
    out += &fit_comment("rate", &report.fit);
    out += "t,mse_mean,se_mean,mse_cov,se_cov,bound_mean,bound_cov\n";
    for (k, t) in ts.iter().enumerate() {
        let bm = report.bound_mean.as_ref().map(|b| &b[k]);
        let bc = report.bound_cov.as_ref().map(|b| &b[k]);
        writeln!(
            out,
            "{t},{},{},{},{},{},{}",
            report.mse_mean[k],
            report.se_mean[k],
            report.mse_cov[k],
            report.se_cov[k],
            opt(bm),
            opt(bc)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn mse_n_csv(report: &ErrorReport, seed: u64) -> Result<String> {
    let Axis::Particles(ns) = &report.axis else {
        return Err(FilterError::InvalidArgument("mse_n.csv needs an N axis".into()));
    };
    let mut out = format!("# seed={seed}\n# replicas={} failed={}\n", report.replicas, report.failed);
    out += &fit_comment("slope_mean", &report.fit);
    out += &fit_comment("slope_cov", &report.fit_cov);
    out += "N,mse_mean,se_mean,mse_cov,se_cov\n";
    for (k, n) in ns.iter().enumerate() {
        writeln!(
            out,
            "{n},{},{},{},{}",
            report.mse_mean[k], report.se_mean[k], report.mse_cov[k], report.se_cov[k]
        )
        .unwrap();
    }
    Ok(out)
}

/// Columns `N,coupling_mse,se,weak_stat,se`: each `se` is the standard
/// error of the column before it.
pub fn poc_csv(report: &PocReport, seed: u64) -> String {
    let mut out = format!("# seed={seed}\n# replicas={} failed={}\n", report.replicas, report.failed);
    out += &fit_comment("slope_coupling", &report.coupling_fit);
    out += &fit_comment("slope_weak", &report.weak_fit);
    out += "N,coupling_mse,se,weak_stat,se\n";
    for (k, n) in report.n_list.iter().enumerate() {
        writeln!(
            out,
            "{n},{},{},{},{}",
            report.coupling_mse[k], report.se_coupling[k], report.weak_stat[k], report.se_weak[k]
        )
        .unwrap();
    }
    out
}

fn vech_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        return vec![prefix.to_string()];
    }
    let mut names = Vec::new();
    for i in 0..d {
        for j in i..d {
            names.push(format!("{prefix}_{i}{j}"));
        }
    }
    names
}

fn vector_names(prefix: &str, d: usize) -> Vec<String> {
    if d == 1 {
        vec![prefix.to_string()]
    } else {
        (0..d).map(|i| format!("{prefix}_{i}")).collect()
    }
}

/// Particle trajectories with empirical and Kalman moments, one row per
/// particle and grid point `t_0 .. t_{K-1}`. The Kalman reference starts from
/// the empirical moments at `t = 0`, so for the deterministic filter the mean
/// columns agree up to round-off.
pub fn trajectory_csv(
    model: &LinearGaussianModel,
    obs: &ObservationPath,
    n: usize,
    variant: Variant,
    opts: &FpfOptions,
    seed: u64,
) -> Result<String> {
    let d = model.d();
    let mut header = vec!["t".to_string(), "i".to_string()];
    header.extend(vector_names("x", d));
    header.extend(vector_names("m_N", d));
    header.extend(vech_names("Sigma_N", d));
    header.extend(vector_names("m_kf", d));
    header.extend(vech_names("Sigma_kf", d));
    let mut out = format!("# seed={seed}\n# N={n} dt={} steps={} variant={variant:?}\n", obs.dt, obs.steps());
    out += &header.join(",");
    out.push('\n');

    let mut kalman: Option<Vec<FilterState>> = None;
    let mut failure = None;
    run_fpf_with(model, obs, n, variant, opts, seed, |k, ens, mom| {
        if failure.is_some() || k == obs.steps() {
            return;
        }
        if kalman.is_none() {
            match run_kalman(model, obs, FilterState::new(mom.mean.clone(), mom.cov.clone())) {
                Ok(run) => kalman = Some(run),
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            }
        }
        let kf = &kalman.as_ref().unwrap()[k];
        let mut tail = String::new();
        for v in mom.mean.iter().chain(vech(&mom.cov).iter()).chain(kf.m.iter()).chain(vech(&kf.sigma).iter()) {
            write!(tail, ",{v}").unwrap();
        }
        let t = k as f64 * obs.dt;
        for (i, x) in ens.particles.column_iter().enumerate() {
            write!(out, "{t},{i}").unwrap();
            for v in x.iter() {
                write!(out, ",{v}").unwrap();
            }
            out += &tail;
            out.push('\n');
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(out)
}

/// Kalman trajectory rows `t, m, vech(Sigma)`.
pub fn kalman_csv(states: &[FilterState], seed: u64) -> String {
    let d = states.first().map(|s| s.m.len()).unwrap_or(1);
    let mut header = vec!["t".to_string()];
    header.extend(vector_names("m", d));
    header.extend(vech_names("Sigma", d));
    let mut out = format!("# seed={seed}\n{}\n", header.join(","));
    for s in states {
        write!(out, "{}", s.t).unwrap();
        for v in s.m.iter().chain(vech(&s.sigma).iter()) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io_err = |e: std::io::Error| FilterError::InvalidArgument(format!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(contents.as_bytes()).map_err(io_err)
}
