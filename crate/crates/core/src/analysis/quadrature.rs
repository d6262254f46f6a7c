//! Gauss-Hermite quadrature for Gaussian expectations.

use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes and weights for `int f(x) e^{-x^2} dx`, via Newton iteration on
    /// the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let half = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..half {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]` for `X ~ N(mean, var)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, mean: f64, var: f64, f: F) -> f64 {
        let s = (2.0 * var.max(0.0)).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mean + s * x))
            .sum::<f64>()
            / PI.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        let gh = GaussHermite::new(64);
        let s: f64 = gh.weights().iter().sum();
        assert!((s - PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let gh = GaussHermite::new(64);
        assert!((gh.expect(0.0, 1.0, |x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.expect(0.0, 1.0, |x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((gh.expect(1.5, 2.0, |x| x) - 1.5).abs() < 1e-12);
        assert!(gh.expect(0.0, 1.0, |x| x.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn low_order_rule_matches_tables() {
        // 3-point rule: nodes 0, +-sqrt(3/2), weights 2 sqrt(pi)/3 and sqrt(pi)/6
        let gh = GaussHermite::new(3);
        let mut nodes = gh.nodes().to_vec();
        nodes.sort_by(f64::total_cmp);
        assert!((nodes[2] - 1.5f64.sqrt()).abs() < 1e-14);
        assert!(nodes[1].abs() < 1e-14);
        let w: Vec<f64> = gh.weights().to_vec();
        assert!(w.iter().any(|x| (x - 2.0 * PI.sqrt() / 3.0).abs() < 1e-14));
    }

    #[test]
    fn smooth_bounded_function() {
        // E[cos X] = exp(-var / 2) for X ~ N(0, var)
        let gh = GaussHermite::new(64);
        for var in [0.1, 1.0, 5.0] {
            assert!((gh.expect(0.0, var, f64::cos) - (-var / 2.0f64).exp()).abs() < 1e-12);
        }
    }
}
