//! Gauss-Hermite rules for expectations under the standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `sum_i w_i f(x_i) ~ E[f(Z)]`, Z ~ N(0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Values of the orthonormal (probabilists') Hermite polynomials p_0..p_n at x.
fn orthonormal_hermite(n: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for m in 1..n {
        let next = (x * p[m] - (m as f64).sqrt() * p[m - 1]) / ((m + 1) as f64).sqrt();
        p.push(next);
    }
    p
}

impl GaussHermite {
    /// Golub-Welsch eigenvalues, polished by Newton steps on p_n, with
    /// Christoffel weights `1 / sum_{j<n} p_j(x)^2`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let b = (i as f64).sqrt();
            jacobi[(i, i - 1)] = b;
            jacobi[(i - 1, i)] = b;
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));

        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let p = orthonormal_hermite(n, *x);
                let deriv = (n as f64).sqrt() * p[n - 1];
                if deriv == 0.0 {
                    break;
                }
                *x -= p[n] / deriv;
            }
        }
        // symmetrize so odd moments vanish to rounding
        for i in 0..n / 2 {
            let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -m;
            nodes[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }

        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let p = orthonormal_hermite(n - 1, x);
                1.0 / p.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        for i in 0..n / 2 {
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        GaussHermite { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of points of the `dims`-fold tensor product rule.
    pub fn tensor_len(&self, dims: usize) -> usize {
        self.len().pow(dims as u32)
    }

    /// Writes tensor-grid point `index` into `point` and returns its weight.
    pub fn tensor_point(&self, index: usize, point: &mut [f64]) -> f64 {
        let n = self.len();
        let mut rest = index;
        let mut w = 1.0;
        for p in point.iter_mut() {
            let i = rest % n;
            rest /= n;
            *p = self.nodes[i];
            w *= self.weights[i];
        }
        w
    }
}
