//! Gauss–Hermite quadrature for expectations under a normal law.

use std::f64::consts::PI;

use crate::model::default_prob;

/// Nodes and weights for `∫ exp(-x²) f(x) dx`, rescaled so that
/// [`GaussHermite::expect`] computes `E[f(m + s Z)]` for standard normal `Z`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Rule with `n` nodes. Roots of the physicists' Hermite polynomial are
    /// located by Newton iteration from the usual asymptotic starting guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                // orthonormal Hermite recurrence
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // convert to standard-normal nodes and probability weights
        let s = std::f64::consts::SQRT_2;
        let norm = PI.sqrt();
        Self {
            nodes: nodes.iter().map(|x| x * s).collect(),
            weights: weights.iter().map(|w| w / norm).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(mean + sd * Z)]`, `Z ~ N(0, 1)`.
    pub fn expect(&self, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mean + sd * z))
            .sum()
    }
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        Self { nodes, weights }
    }

    /// Composite rule: `panels` equal sub-intervals of `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + h * p as f64;
            let mid = lo + h / 2.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                total += w * f(mid + h / 2.0 * x);
            }
        }
        total * h / 2.0
    }
}

/// Default rule used for marginal default rates.
pub const MARGINAL_NODES: usize = 48;

/// `E[delta(theta)]` for `theta ~ N(mean, var)`.
pub fn expected_default(mean: f64, var: f64, rule: &GaussHermite) -> f64 {
    rule.expect(mean, var.max(0.0).sqrt(), default_prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_one_and_moments_match() {
        for n in [1, 2, 5, 32, 64, 100] {
            let gh = GaussHermite::new(n);
            assert_abs_diff_eq!(gh.expect(0.0, 1.0, |_| 1.0), 1.0, epsilon = 1e-12);
            if n >= 3 {
                assert_abs_diff_eq!(gh.expect(0.0, 1.0, |x| x * x), 1.0, epsilon = 1e-11);
                assert_abs_diff_eq!(gh.expect(1.0, 2.0, |x| x), 1.0, epsilon = 1e-11);
                assert_abs_diff_eq!(gh.expect(0.0, 1.0, |x| x.powi(4)), 3.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn legendre_polynomials_exact() {
        let gl = GaussLegendre::new(8);
        assert_abs_diff_eq!(gl.integrate(0.0, 2.0, 1, |x| x.powi(15)), 2f64.powi(16) / 16.0, epsilon = 1e-9);
        assert_abs_diff_eq!(gl.integrate(0.0, PI, 10, f64::sin), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn lognormal_mean() {
        let gh = GaussHermite::new(40);
        let v: f64 = 0.7;
        assert_abs_diff_eq!(gh.expect(0.2, v.sqrt(), f64::exp), (0.2 + v / 2.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn expected_default_degenerate() {
        let gh = GaussHermite::new(32);
        assert_abs_diff_eq!(expected_default(1.2, 0.0, &gh), default_prob(1.2), epsilon = 1e-15);
        // symmetric about zero
        assert_abs_diff_eq!(expected_default(0.0, 4.0, &gh), 0.5, epsilon = 1e-14);
    }
}
