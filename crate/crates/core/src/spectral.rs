//! Planck spectrum machinery: normalized band integrals of the Planck and
//! Rosseland-type weight functions, and the total emission function.
//!
//! Photon frequencies and temperatures are measured in eV. The normalized
//! Planck cumulative distribution is
//!
//!   P(x) = (15/pi^4) * int_0^x t^3 / (e^t - 1) dt,   x = nu / T,
//!
//! so that P(0) = 0 and P(inf) = 1. Band fractions of the emission spectrum
//! are differences of P at the scaled band edges, and the total emission is
//! B(T) = a c T^4.

use crate::error::{Error, Result};

/// Radiation constant, erg cm^-3 eV^-4.
pub const RADIATION_CONSTANT: f64 = 137.0;
/// Speed of light, cm ns^-1.
pub const LIGHT_SPEED: f64 = 29.9792458;

/// 15 / pi^4, the normalization of the Planck integrand.
const PLANCK_NORM: f64 = 0.153_989_733_820_265_07;
/// 15 / (4 pi^4), the normalization of the Rosseland-type integrand.
const ROSSELAND_NORM: f64 = 0.038_497_433_455_066_27;

/// Physical constants entering the emission function.
#[derive(Debug, Clone, Copy)]
pub struct SpectralConstants {
    /// Radiation constant `a`, erg cm^-3 eV^-4.
    pub a: f64,
    /// Speed of light `c`, cm ns^-1.
    pub c: f64,
}

impl Default for SpectralConstants {
    fn default() -> Self {
        SpectralConstants { a: RADIATION_CONSTANT, c: LIGHT_SPEED }
    }
}

impl SpectralConstants {
    /// Total emission B(T) = a c T^4, erg cm^-2 ns^-1 (slab-integrated units).
    pub fn planck_total(&self, temperature: f64) -> f64 {
        self.a * self.c * temperature * temperature * temperature * temperature
    }

    /// d/dT of the total emission: 4 a c T^3.
    pub fn planck_total_deriv(&self, temperature: f64) -> f64 {
        4.0 * self.a * self.c * temperature * temperature * temperature
    }
}

/// Coefficients of x^(2k+3), k = 1.., in the small-argument expansion of
/// int_0^x t^3/(e^t - 1) dt = x^3/3 - x^4/8 + sum_k B_2k x^(2k+3) / ((2k)! (2k+3)).
const SMALL_X_COEFFS: [f64; 18] = [
    1.66666666666666664e-02,
    -1.98412698412698413e-04,
    3.67430922986478553e-06,
    -7.51563251563251607e-08,
    1.60590438368216149e-09,
    -3.52279342579166215e-11,
    7.87208031216745774e-13,
    -1.78404226122241216e-14,
    4.08860097917992578e-16,
    -9.45595086329592140e-18,
    2.20360113134409181e-19,
    -5.16832025400463853e-21,
    1.21886449642395423e-22,
    -2.88823142807662809e-24,
    6.87258318890207039e-26,
    -1.64136876253491499e-27,
    3.93289858274287837e-29,
    -9.45126907862900100e-31,
];

/// Switch point between the Bernoulli expansion and the exponential series.
const SERIES_SPLIT: f64 = 2.0;
/// Relative truncation threshold for both series.
const SERIES_TOL: f64 = 1e-15;

fn planck_cdf_small(x: f64) -> f64 {
    // Bernoulli expansion, converges inside |x| < 2 pi.
    let x2 = x * x;
    let mut sum = x * x2 / 3.0 - x2 * x2 / 8.0;
    let mut pow = x2 * x2 * x; // x^5
    for c in SMALL_X_COEFFS {
        let term = c * pow;
        sum += term;
        if term.abs() < SERIES_TOL * sum.abs() {
            break;
        }
        pow *= x2;
    }
    PLANCK_NORM * sum
}

fn planck_cdf_large(x: f64) -> f64 {
    // 1 - (15/pi^4) sum_n e^{-nx} (x^3/n + 3x^2/n^2 + 6x/n^3 + 6/n^4).
    let mut tail = 0.0;
    for n in 1..=200 {
        let nf = n as f64;
        let e = (-nf * x).exp();
        if e == 0.0 {
            break;
        }
        let term = e * (x * x * x / nf + 3.0 * x * x / (nf * nf) + 6.0 * x / (nf * nf * nf) + 6.0 / (nf * nf * nf * nf));
        tail += term;
        if term < SERIES_TOL * tail {
            break;
        }
    }
    1.0 - PLANCK_NORM * tail
}

/// Normalized Planck cumulative distribution P(x) on x >= 0.
///
/// Panics on negative or non-finite input; scaled frequencies are
/// nonnegative by construction.
pub fn planck_cdf(x: f64) -> f64 {
    assert!(x >= 0.0 && !x.is_nan(), "planck_cdf requires x >= 0, got {x}");
    if x < SERIES_SPLIT {
        planck_cdf_small(x)
    } else {
        planck_cdf_large(x)
    }
}

/// Normalized cumulative distribution of the temperature-derivative weight,
///
///   R(x) = (15/(4 pi^4)) int_0^x t^4 e^t / (e^t - 1)^2 dt
///        = P(x) - (15/(4 pi^4)) x^4 / (e^x - 1),
///
/// using the closed-form reduction to P. R(inf) = 1, so full-range band
/// fractions of this weight sum to one.
pub fn rosseland_cdf(x: f64) -> f64 {
    assert!(x >= 0.0 && !x.is_nan(), "rosseland_cdf requires x >= 0, got {x}");
    if x == 0.0 {
        return 0.0;
    }
    let ratio = x * x * x * x / x.exp_m1(); // -> 0 as x -> inf, x^3 as x -> 0
    planck_cdf(x) - ROSSELAND_NORM * ratio
}

/// Photon frequency band edges, eV, strictly increasing and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    bounds: Vec<f64>,
}

impl GroupStructure {
    pub fn new(bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() < 2 {
            return Err(Error::invalid("group structure needs at least two band edges"));
        }
        if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::invalid("group band edges must be finite and nonnegative"));
        }
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("group band edges must be strictly increasing"));
        }
        Ok(GroupStructure { bounds })
    }

    /// Logarithmically spaced edges from `lo` to `hi` (both > 0).
    pub fn log_spaced(lo: f64, hi: f64, n_groups: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n_groups >= 1) {
            return Err(Error::invalid("log-spaced groups need 0 < lo < hi and n >= 1"));
        }
        let (ll, lh) = (lo.ln(), hi.ln());
        let bounds: Vec<f64> = (0..=n_groups)
            .map(|i| (ll + (lh - ll) * i as f64 / n_groups as f64).exp())
            .collect();
        GroupStructure::new(bounds)
    }

    /// Single gray band [0, top]. `top` should sit far above any temperature
    /// of interest so the band captures the full spectrum.
    pub fn gray(top: f64) -> Result<Self> {
        GroupStructure::new(vec![0.0, top])
    }

    pub fn n_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }
}

/// Band fractions of a normalized spectral weight at one temperature. The
/// spectrum outside the group range is folded into the edge bands so the
/// fractions always sum to one; `below` and `tail` report how much was
/// folded at each end.
#[derive(Debug, Clone)]
pub struct BandFractions {
    pub bands: Vec<f64>,
    pub below: f64,
    pub tail: f64,
}

fn band_split(groups: &GroupStructure, temperature: f64, cdf: impl Fn(f64) -> f64) -> BandFractions {
    assert!(
        temperature > 0.0 && temperature.is_finite(),
        "band fractions require T > 0, got {temperature}"
    );
    let cum: Vec<f64> = groups.bounds().iter().map(|nu| cdf(nu / temperature)).collect();
    let mut bands: Vec<f64> = cum.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let below = cum[0];
    let tail = 1.0 - cum[cum.len() - 1];
    let last = bands.len() - 1;
    bands[0] += below;
    bands[last] += tail;
    BandFractions { bands, below, tail }
}

/// Planck band fractions b_g(T); B_g(T) = b_g(T) * a c T^4.
pub fn planck_fractions(groups: &GroupStructure, temperature: f64) -> BandFractions {
    band_split(groups, temperature, planck_cdf)
}

/// Band fractions r_g(T) of the emission-derivative weight;
/// dB_g/dT = 4 a c T^3 * r_g(T).
pub fn rosseland_fractions(groups: &GroupStructure, temperature: f64) -> BandFractions {
    band_split(groups, temperature, rosseland_cdf)
}

/// Band emission B_g(T) for every band, erg cm^-2 ns^-1.
pub fn band_emission(consts: &SpectralConstants, groups: &GroupStructure, temperature: f64) -> Vec<f64> {
    let total = consts.planck_total(temperature);
    planck_fractions(groups, temperature).bands.iter().map(|b| b * total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Scaled frequency at which P = 1/2, from a high-precision quadrature.
    pub const X_HALF: f64 = 3.503018825884851;

    #[test]
    fn cdf_matches_quadrature_anchors() {
        // Frozen from 30-digit adaptive quadrature of the defining integral.
        assert_relative_eq!(planck_cdf(0.5), 0.005293159500176074, max_relative = 1e-12);
        assert_relative_eq!(planck_cdf(3.0), 0.393015440273419136, max_relative = 1e-12);
        assert_relative_eq!(planck_cdf(10.0), 0.990449940838168132, max_relative = 1e-12);
        assert_relative_eq!(planck_cdf(X_HALF), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cdf_limits_and_monotonicity() {
        assert_eq!(planck_cdf(0.0), 0.0);
        assert!((planck_cdf(200.0) - 1.0).abs() < 1e-15);
        assert!((planck_cdf(1e6) - 1.0).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 1..=2000 {
            let x = 0.025 * i as f64;
            let p = planck_cdf(x);
            assert!(p >= prev, "P not monotone at x = {x}");
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn series_branches_agree_at_the_split() {
        let below = planck_cdf_small(SERIES_SPLIT);
        let above = planck_cdf_large(SERIES_SPLIT);
        assert_relative_eq!(below, above, max_relative = 1e-13);
    }

    #[test]
    fn rosseland_cdf_saturates_to_one() {
        assert_eq!(rosseland_cdf(0.0), 0.0);
        assert!((rosseland_cdf(400.0) - 1.0).abs() < 1e-14);
        // Frozen from quadrature of the defining integrand at x = 2.7.
        assert_relative_eq!(rosseland_cdf(2.7), 0.180029781913756777, max_relative = 1e-12);
    }

    #[test]
    fn half_split_group_structure() {
        let t = 7.0;
        let groups = GroupStructure::new(vec![0.0, X_HALF * t, 300.0 * t]).unwrap();
        let b = planck_fractions(&groups, t);
        assert_relative_eq!(b.bands[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(b.bands[1], 0.5, max_relative = 1e-12);
        assert!(b.below == 0.0 && b.tail.abs() < 1e-14);
    }

    #[test]
    fn band_fractions_partition_unity() {
        // The edge folding makes the bands alone resolve the whole spectrum.
        let groups = GroupStructure::log_spaced(1e-2, 3e5, 33).unwrap();
        for t in [1.0, 100.0, 1000.0] {
            for fr in [planck_fractions(&groups, t), rosseland_fractions(&groups, t)] {
                let sum: f64 = fr.bands.iter().sum();
                assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
                assert!(fr.bands.iter().all(|b| *b >= 0.0));
            }
        }
    }

    #[test]
    fn band_emission_derivative_identity() {
        // dB_g/dT = 4 a c T^3 r_g(T), checked against central differences.
        let consts = SpectralConstants::default();
        let groups = GroupStructure::log_spaced(0.1, 1e4, 7).unwrap();
        for t in [0.9, 17.0, 450.0] {
            let dt = t * 1e-5;
            let hi = band_emission(&consts, &groups, t + dt);
            let lo = band_emission(&consts, &groups, t - dt);
            let r = rosseland_fractions(&groups, t);
            let scale = consts.planck_total_deriv(t);
            for g in 0..groups.n_groups() {
                let fd = (hi[g] - lo[g]) / (2.0 * dt);
                let analytic = scale * r.bands[g];
                if analytic.abs() > 1e-12 * scale {
                    assert_relative_eq!(fd, analytic, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn total_emission_value() {
        let consts = SpectralConstants::default();
        assert_relative_eq!(consts.planck_total(1.0), 137.0 * 29.9792458, max_relative = 1e-15);
        assert_relative_eq!(consts.planck_total(2.0), 16.0 * 137.0 * 29.9792458, max_relative = 1e-15);
    }

    #[test]
    fn group_structure_validation() {
        assert!(GroupStructure::new(vec![1.0]).is_err());
        assert!(GroupStructure::new(vec![1.0, 1.0]).is_err());
        assert!(GroupStructure::new(vec![-1.0, 1.0]).is_err());
        assert!(GroupStructure::new(vec![0.0, f64::INFINITY]).is_err());
        let g = GroupStructure::log_spaced(1e-2, 3e5, 33).unwrap();
        assert_eq!(g.n_groups(), 33);
        assert_relative_eq!(g.bounds()[0], 1e-2, max_relative = 1e-14);
        assert_relative_eq!(g.bounds()[33], 3e5, max_relative = 1e-14);
        let ratio = g.bounds()[2] / g.bounds()[1];
        assert_relative_eq!(g.bounds()[20] / g.bounds()[19], ratio, max_relative = 1e-12);
    }
}
