//! Gauss-Hermite quadrature for one- and two-dimensional Gaussian
//! expectations.
//!
//! Nodes and weights come from the Golub-Welsch construction: eigenvalues of
//! the symmetric tridiagonal Jacobi matrix with off-diagonals sqrt(k/2) are
//! the quadrature nodes, and sqrt(pi) times the squared first eigenvector
//! components are the weights. Integrals are against exp(-x^2), and the
//! wrappers below fold in the change of variables for arbitrary Gaussian
//! means and covariances.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Node count giving comfortable overkill for the smooth integrands here.
pub const DEFAULT_NODES: usize = 100;

#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: DVector<f64>,
    weights: DVector<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("quadrature needs at least 2 nodes"));
        }
        let mut jacobi = DMatrix::zeros(n, n);
        for k in 1..n {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let first = eig.eigenvectors[(0, i)];
                (node, std::f64::consts::PI.sqrt() * first * first)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(GaussHermite {
            nodes: DVector::from_iterator(n, pairs.iter().map(|p| p.0)),
            weights: DVector::from_iterator(n, pairs.iter().map(|p| p.1)),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &DVector<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// E[h(G)] for G ~ N(mean, var).
    pub fn expect1(&self, mean: f64, var: f64, h: impl Fn(f64) -> f64) -> Result<f64> {
        if var < 0.0 {
            return Err(Error::invalid(format!("negative variance {var}")));
        }
        let scale = (2.0 * var).sqrt();
        let norm = std::f64::consts::PI.sqrt();
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * h(mean + scale * self.nodes[i]);
        }
        Ok(acc / norm)
    }

    /// E[h(G, G')] for a zero-mean Gaussian pair with Var(G) = var1,
    /// Var(G') = var2, Cov(G, G') = cov.
    pub fn expect2(
        &self,
        var1: f64,
        var2: f64,
        cov: f64,
        h: impl Fn(f64, f64) -> f64,
    ) -> Result<f64> {
        if var1 < 0.0 || var2 < 0.0 {
            return Err(Error::invalid(format!(
                "negative variance ({var1}, {var2})"
            )));
        }
        let denom = (var1 * var2).sqrt();
        let rho = if denom == 0.0 { 0.0 } else { cov / denom };
        if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho) || !rho.is_finite() {
            return Err(Error::BadCovariance { rho });
        }
        let rho = rho.clamp(-1.0, 1.0);
        let s1 = (2.0 * var1).sqrt();
        let s2 = (2.0 * var2).sqrt();
        let tail = (1.0 - rho * rho).max(0.0).sqrt();
        let norm = std::f64::consts::PI;
        let mut acc = 0.0;
        for i in 0..self.len() {
            let g1 = s1 * self.nodes[i];
            let partial = s2 * rho * self.nodes[i];
            let mut inner = 0.0;
            for j in 0..self.len() {
                let g2 = partial + s2 * tail * self.nodes[j];
                inner += self.weights[j] * h(g1, g2);
            }
            acc += self.weights[i] * inner;
        }
        Ok(acc / norm)
    }
}

/// Quadrature error estimate by node doubling: |I_n - I_2n|.
pub fn doubling_error1(
    n: usize,
    mean: f64,
    var: f64,
    h: impl Fn(f64) -> f64 + Copy,
) -> Result<f64> {
    let coarse = GaussHermite::new(n)?.expect1(mean, var, h)?;
    let fine = GaussHermite::new(2 * n)?.expect1(mean, var, h)?;
    Ok((coarse - fine).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [2, 5, 20, 100] {
            let gh = GaussHermite::new(n).unwrap();
            assert_relative_eq!(
                gh.weights().sum(),
                std::f64::consts::PI.sqrt(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted() {
        let gh = GaussHermite::new(31).unwrap();
        for i in 1..gh.len() {
            assert!(gh.nodes()[i] > gh.nodes()[i - 1]);
        }
        for i in 0..gh.len() {
            assert_abs_diff_eq!(
                gh.nodes()[i],
                -gh.nodes()[gh.len() - 1 - i],
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn physicists_second_moment() {
        // integral of x^2 e^{-x^2} = sqrt(pi)/2.
        let gh = GaussHermite::new(10).unwrap();
        let direct: f64 = (0..gh.len())
            .map(|i| gh.weights()[i] * gh.nodes()[i] * gh.nodes()[i])
            .sum();
        assert_relative_eq!(direct, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_moments_match_closed_forms() {
        let gh = GaussHermite::new(40).unwrap();
        assert_relative_eq!(gh.expect1(0.0, 1.0, |x| x * x).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            gh.expect1(3.0, 4.0, |x| x * x).unwrap(),
            13.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            gh.expect1(0.0, 1.0, |x| x.powi(4)).unwrap(),
            3.0,
            max_relative = 1e-12
        );
        // E|G| = sqrt(2 var / pi): the kink at zero slows convergence to
        // roughly first order in the node count.
        let e_abs = gh.expect1(0.0, 2.0, |x| x.abs()).unwrap();
        assert_relative_eq!(
            e_abs,
            (2.0f64 * 2.0 / std::f64::consts::PI).sqrt(),
            max_relative = 2e-2
        );
    }

    #[test]
    fn pair_moments_match_covariance() {
        let gh = GaussHermite::new(40).unwrap();
        let (v1, v2, c) = (1.3, 0.7, -0.4);
        assert_relative_eq!(gh.expect2(v1, v2, c, |x, _| x * x).unwrap(), v1, max_relative = 1e-11);
        assert_relative_eq!(gh.expect2(v1, v2, c, |_, y| y * y).unwrap(), v2, max_relative = 1e-11);
        assert_relative_eq!(gh.expect2(v1, v2, c, |x, y| x * y).unwrap(), c, max_relative = 1e-11);
        // E[(X - Y)^2] = v1 + v2 - 2c.
        assert_relative_eq!(
            gh.expect2(v1, v2, c, |x, y| (x - y) * (x - y)).unwrap(),
            v1 + v2 - 2.0 * c,
            max_relative = 1e-11
        );
    }

    #[test]
    fn perfectly_correlated_pair_collapses() {
        let gh = GaussHermite::new(30).unwrap();
        let v = 0.9;
        let e = gh.expect2(v, v, v, |x, y| (x - y) * (x - y)).unwrap();
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn invalid_covariance_is_rejected() {
        let gh = GaussHermite::new(10).unwrap();
        match gh.expect2(1.0, 1.0, 1.5, |x, _| x) {
            Err(Error::BadCovariance { rho }) => assert!((rho - 1.5).abs() < 1e-12),
            other => panic!("expected covariance error, got {other:?}"),
        }
    }

    #[test]
    fn softplus_square_approaches_relu_square() {
        // For sharp alpha, E[softplus(G)^2] is close to E[relu(G)^2] = v/2.
        let gh = GaussHermite::new(DEFAULT_NODES).unwrap();
        let v = 1.0;
        let alpha = 80.0;
        let e = gh
            .expect1(0.0, v, |g| {
                let s = crate::net::softplus(g, alpha);
                s * s
            })
            .unwrap();
        assert_abs_diff_eq!(e, v / 2.0, epsilon = 0.02);
    }

    #[test]
    fn doubling_error_reflects_integrand_sharpness() {
        // softplus at alpha = 10 has complex poles pi/10 off the real axis,
        // which caps the Gauss-Hermite rate: around 5e-5 at 100 nodes.
        let sharp = doubling_error1(DEFAULT_NODES, 0.0, 2.0, |g| {
            let s = crate::net::softplus(g, 10.0);
            s * s
        })
        .unwrap();
        assert!(sharp > 0.0 && sharp < 1e-3, "doubling error {sharp}");
        // A polynomial is integrated exactly; doubling detects nothing.
        let smooth = doubling_error1(DEFAULT_NODES, 0.0, 2.0, |g| g * g).unwrap();
        assert!(smooth < 1e-12, "doubling error {smooth}");
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(GaussHermite::new(1).is_err());
        assert!(GaussHermite::new(0).is_err());
    }
}
