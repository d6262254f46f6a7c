//! Least-squares rate and power-law fits on log scale.

use crate::error::{FilterError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// `log y` against `x`: slope is the exponential rate.
    Exponential,
    /// `log y` against `log x`: slope is the power-law exponent.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// `1.96` times the standard error of the slope.
    pub half_width: f64,
}

impl RateFit {
    pub fn contains(&self, value: f64) -> bool {
        (self.slope - value).abs() <= self.half_width
    }
}

fn transform(xs: &[f64], ys: &[f64], mode: FitMode) -> Result<(Vec<f64>, Vec<f64>)> {
    if xs.len() != ys.len() {
        return Err(FilterError::InvalidArgument("xs and ys differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(FilterError::InvalidArgument(format!("need at least 3 points, got {}", xs.len())));
    }
    if let Some(y) = ys.iter().find(|y| !(**y > 0.0)) {
        return Err(FilterError::InvalidArgument(format!("fit needs positive ys, got {y}")));
    }
    let u = match mode {
        FitMode::Exponential => xs.to_vec(),
        FitMode::Power => {
            if xs.iter().any(|x| !(*x > 0.0)) {
                return Err(FilterError::InvalidArgument("power fit needs positive xs".into()));
            }
            xs.iter().map(|x| x.ln()).collect()
        }
    };
    Ok((u, ys.iter().map(|y| y.ln()).collect()))
}

/// Ordinary least squares on the transformed points.
pub fn fit_rate(xs: &[f64], ys: &[f64], mode: FitMode) -> Result<RateFit> {
    let w = vec![1.0; xs.len()];
    let (u, v) = transform(xs, ys, mode)?;
    weighted_line(&u, &v, &w)
}

/// Weighted least squares with weights `(y / se)^2`, i.e. inverse variance
/// of `log y` to first order.
pub fn fit_rate_weighted(xs: &[f64], ys: &[f64], se: &[f64], mode: FitMode) -> Result<RateFit> {
    let (u, v) = transform(xs, ys, mode)?;
    if se.len() != ys.len() {
        return Err(FilterError::InvalidArgument("se and ys differ in length".into()));
    }
    let w: Vec<f64> = ys
        .iter()
        .zip(se)
        .map(|(y, s)| if *s > 0.0 { (y / s).powi(2) } else { 1.0 })
        .collect();
    weighted_line(&u, &v, &w)
}

fn weighted_line(u: &[f64], v: &[f64], w: &[f64]) -> Result<RateFit> {
    let sw: f64 = w.iter().sum();
    let ubar = u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let vbar = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let suu: f64 = u.iter().zip(w).map(|(a, b)| b * (a - ubar).powi(2)).sum();
    if suu == 0.0 {
        return Err(FilterError::InvalidArgument("fit abscissae are all equal".into()));
    }
    let suv: f64 = u.iter().zip(v).zip(w).map(|((a, c), b)| b * (a - ubar) * (c - vbar)).sum();
    let slope = suv / suu;
    let intercept = vbar - slope * ubar;
    let n = u.len() as f64;
    let rss: f64 = u
        .iter()
        .zip(v)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    // weights rescaled to sum n so the residual variance has the usual scale
    let s2 = rss / (n - 2.0) * n / sw;
    let se = (s2 / (suu * n / sw)).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        half_width: 1.96 * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_exponential() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = ts.iter().map(|t: &f64| (-2.0 * t).exp()).collect();
        let fit = fit_rate(&ts, &ys, FitMode::Exponential).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!(fit.half_width < 1e-6);
    }

    #[test]
    fn exact_power_law() {
        let ns = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = ns.iter().map(|n| 7.0 / n).collect();
        let fit = fit_rate(&ns, &ys, FitMode::Power).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 2.0], FitMode::Power).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0], FitMode::Power).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, -1.0, 2.0], FitMode::Exponential).is_err());
    }

    #[test]
    fn half_width_covers_truth_in_most_trials() {
        let ns: Vec<f64> = (0..25).map(|k| 10f64 * 10f64.powf(k as f64 / 12.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 1000;
        let mut covered = 0;
        for _ in 0..trials {
            let ys: Vec<f64> = ns
                .iter()
                .map(|n| {
                    let e: f64 = rng.sample(StandardNormal);
                    5.0 / n * (1.0 + 0.05 * e)
                })
                .collect();
            if fit_rate(&ns, &ys, FitMode::Power).unwrap().contains(-1.0) {
                covered += 1;
            }
        }
        assert!(covered as f64 >= 0.9 * trials as f64, "covered {covered}");
    }

    #[test]
    fn weighted_fit_downweights_noisy_point() {
        let ns = [10.0, 100.0, 1000.0, 10000.0];
        let ys = [0.1, 0.01, 0.001, 0.01];
        let se = [1e-4, 1e-5, 1e-6, 1.0];
        let fit = fit_rate_weighted(&ns, &ys, &se, FitMode::Power).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-3);
    }
}
