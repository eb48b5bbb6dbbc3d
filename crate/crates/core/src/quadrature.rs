//! Angular and spatial quadrature rules.
//!
//! Angular: Gauss-Legendre sets on mu in [-1, 1] with weights summing to 2,
//! the slab reduction of the unit sphere. Spatial: the two-point
//! Gauss-Lobatto rule used for lumping and a three-point Gauss rule used for
//! error norms, both on the reference element [0, 1].

use crate::error::{Error, Result};

/// Discrete-ordinates set on mu in [-1, 1].
#[derive(Debug, Clone)]
pub struct AngularQuadrature {
    /// Ordinates, ascending.
    pub mu: Vec<f64>,
    /// Positive weights, sum = 2.
    pub weight: Vec<f64>,
}

impl AngularQuadrature {
    pub fn n_dirs(&self) -> usize {
        self.mu.len()
    }

    /// Mean absolute ordinate, alpha = sum w |mu| / sum w. Approaches 1/2 as
    /// the set refines; exactly 1/sqrt(3) for S2.
    pub fn alpha(&self) -> f64 {
        let num: f64 = self.mu.iter().zip(&self.weight).map(|(m, w)| w * m.abs()).sum();
        let den: f64 = self.weight.iter().sum();
        num / den
    }
}

/// Legendre polynomial P_n and its derivative at x, by forward recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre S_N set: roots of P_N by Newton iteration from the
/// Chebyshev-like initial guess, converged to 1e-15.
pub fn gauss_legendre_sn(n: usize) -> Result<AngularQuadrature> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!("S_N order must be even and >= 2, got {n}")));
    }
    let mut mu = vec![0.0; n];
    let mut weight = vec![0.0; n];
    for i in 0..n / 2 {
        // i-th root counted from the positive end.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..100 {
            let (p, d) = legendre_with_deriv(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::solver(format!("Legendre root iteration stalled for N = {n}")));
        }
        let (_, d) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * d * d);
        // i counts roots from the positive end; fill the symmetric pair so
        // the ordinates come out ascending with exact antisymmetry.
        mu[n - 1 - i] = x;
        mu[i] = -x;
        weight[n - 1 - i] = w;
        weight[i] = w;
    }
    Ok(AngularQuadrature { mu, weight })
}

/// Two-point Gauss-Lobatto rule on [0, 1]: nodes at the endpoints, equal
/// weights 1/2. Exact for linears; used to lump element integrals.
pub fn lobatto2() -> ([f64; 2], [f64; 2]) {
    ([0.0, 1.0], [0.5, 0.5])
}

/// Three-point Gauss rule on [0, 1], exact through degree five; used for
/// cross-mesh error norms.
pub fn gauss3() -> ([f64; 3], [f64; 3]) {
    let d = 0.5 * (0.6f64).sqrt();
    ([0.5 - d, 0.5, 0.5 + d], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
}
