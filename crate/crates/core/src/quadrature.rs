//! Product quadrature on the unit sphere: Gauss–Legendre nodes in `μ = cos θ`
//! times equispaced nodes in `φ`.
//!
//! `Σ w f(θ,φ)` approximates `∫∫ f sin θ dθ dφ`. Integrands written against
//! `dθ dφ` are divided by `sin θ` before they reach the grid.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("grid needs n_t >= 2 and n_p >= 4 (got n_t = {n_t}, n_p = {n_p})")]
    TooFewNodes { n_t: usize, n_p: usize },
    #[error("expected {expected} nodal values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess for the i-th root counted from x = 1
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Neumaier-compensated running sum. Energy differences across tiny
/// coefficient bumps stay above the summation noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Quadrature nodes `(θ_k, φ_l)` with solid-angle weights.
///
/// Nodes are stored θ-major: node `k * n_p + l` sits at `(θ_k, φ_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    thetas: Vec<f64>,
    cos_thetas: Vec<f64>,
    sin_thetas: Vec<f64>,
    theta_weights: Vec<f64>,
    phis: Vec<f64>,
    phi_weight: f64,
}

impl SphereGrid {
    /// `n_t` Gauss nodes in `cos θ` (θ ascending from the north pole) and `n_p`
    /// equispaced azimuths starting at `φ = 0`.
    pub fn new(n_t: usize, n_p: usize) -> Result<Self, QuadratureError> {
        if n_t < 2 || n_p < 4 {
            return Err(QuadratureError::TooFewNodes { n_t, n_p });
        }
        let (mu, w) = gauss_legendre(n_t);
        // μ ascending -> reverse so θ ascends
        let cos_thetas: Vec<f64> = mu.iter().rev().copied().collect();
        let theta_weights: Vec<f64> = w.iter().rev().copied().collect();
        let thetas: Vec<f64> = cos_thetas.iter().map(|c| c.acos()).collect();
        let sin_thetas: Vec<f64> = cos_thetas.iter().map(|c| (1.0 - c * c).sqrt()).collect();
        let dphi = 2.0 * PI / n_p as f64;
        let phis = (0..n_p).map(|l| l as f64 * dphi).collect();
        Ok(Self {
            thetas,
            cos_thetas,
            sin_thetas,
            theta_weights,
            phis,
            phi_weight: dphi,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phis.len()
    }

    pub fn len(&self) -> usize {
        self.thetas.len() * self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn cos_theta(&self, k: usize) -> f64 {
        self.cos_thetas[k]
    }

    pub fn sin_theta(&self, k: usize) -> f64 {
        self.sin_thetas[k]
    }

    /// `(θ-row, φ-column)` of a flat node index.
    pub fn split(&self, node: usize) -> (usize, usize) {
        (node / self.phis.len(), node % self.phis.len())
    }

    pub fn weight(&self, k: usize, _l: usize) -> f64 {
        self.theta_weights[k] * self.phi_weight
    }

    pub fn node_weight(&self, node: usize) -> f64 {
        self.theta_weights[node / self.phis.len()] * self.phi_weight
    }

    /// Solid-angle weights in node order.
    pub fn weights(&self) -> Vec<f64> {
        let n_p = self.phis.len();
        (0..self.len())
            .map(|node| self.theta_weights[node / n_p] * self.phi_weight)
            .collect()
    }

    /// `Σ w_i values_i`, summed in node order.
    pub fn integrate(&self, values: &[f64]) -> Result<f64, QuadratureError> {
        if values.len() != self.len() {
            return Err(QuadratureError::DimensionMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        let n_p = self.phis.len();
        let mut total = CompensatedSum::default();
        for (row, w) in values.chunks_exact(n_p).zip(&self.theta_weights) {
            for v in row {
                total.add(w * self.phi_weight * v);
            }
        }
        Ok(total.value())
    }

    /// Integrates a function of `(θ, φ)` over the sphere.
    pub fn integrate_fn(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for (k, &t) in self.thetas.iter().enumerate() {
            let row: f64 = self.phis.iter().map(|&p| f(t, p)).sum();
            total += self.theta_weights[k] * row;
        }
        total * self.phi_weight
    }
}

/// Builds the product grid; see [`SphereGrid::new`].
pub fn build_grid(n_t: usize, n_p: usize) -> Result<SphereGrid, QuadratureError> {
    SphereGrid::new(n_t, n_p)
}
