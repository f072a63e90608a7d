//! Gauss-Hermite rules for integrals against `exp(-x^2)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a `k`-point rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Approximates `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect_normal<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let scale = std::f64::consts::SQRT_2;
        let total: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(scale * x))
            .sum();
        total / std::f64::consts::PI.sqrt()
    }

    fn compute(k: usize) -> GaussHermite {
        assert!(k >= 1, "Gauss-Hermite rule needs at least one node");
        // Jacobi matrix of the physicists' Hermite recurrence
        let mut jacobi = DMatrix::<f64>::zeros(k, k);
        for i in 1..k {
            let off = (i as f64 / 2.0).sqrt();
            jacobi[(i, i - 1)] = off;
            jacobi[(i - 1, i)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        // symmetrise and polish each node, then take Christoffel weights
        let half = k / 2;
        for i in 0..half {
            let x = 0.5 * (nodes[k - 1 - i] - nodes[i]);
            nodes[i] = -x;
            nodes[k - 1 - i] = x;
        }
        if k % 2 == 1 {
            nodes[half] = 0.0;
        }
        let weights = nodes
            .iter_mut()
            .map(|x| {
                for _ in 0..3 {
                    let (pk, pkm1, _) = orthonormal_hermite(k, *x);
                    let deriv = (2.0 * k as f64).sqrt() * pkm1;
                    if deriv == 0.0 {
                        break;
                    }
                    *x -= pk / deriv;
                }
                let (_, _, sumsq) = orthonormal_hermite(k, *x);
                1.0 / sumsq
            })
            .collect();
        GaussHermite { nodes, weights }
    }
}

/// Returns `(p_k(x), p_{k-1}(x), sum_{j<k} p_j(x)^2)` for the Hermite
/// polynomials orthonormal under `exp(-x^2)`.
fn orthonormal_hermite(k: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sumsq = 0.0;
    for j in 0..k {
        sumsq += cur * cur;
        let jf = j as f64;
        let next = x * (2.0 / (jf + 1.0)).sqrt() * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

/// Cached `k`-point Gauss-Hermite rule.
pub fn gauss_hermite(k: usize) -> Arc<GaussHermite> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(k)
        .or_insert_with(|| Arc::new(GaussHermite::compute(k)))
        .clone()
}
