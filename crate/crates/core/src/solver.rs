//! Inner nonlinear solve of the low-order system.
//!
//! Each iteration linearizes the emission terms about the current
//! temperature, condenses flux and temperature out of the 3x3 block system,
//! solves the resulting symmetric positive definite system for E with
//! conjugate gradients (or a banded direct factorization), back-substitutes
//! the flux, and recovers the temperature from the pointwise scalar
//! equation p T + q T^4 = r with a safeguarded Newton iteration.

use crate::error::{Error, Result};
use crate::fem1d::Mesh1D;
use crate::low_order::LowOrderOps;
use crate::opacity::{GrayOpacities, Material};
use crate::spectral::SpectralConstants;

/// Temperatures are floored here when the pointwise equation has no
/// positive right side (a node absorbing nothing and starting cold).
pub const TEMPERATURE_FLOOR: f64 = 1e-8;

/// Pointwise coefficients of the material energy balance at one time step.
pub struct EmissionOperators {
    /// Lumped mass weights (h/2).
    pub lump: Vec<f64>,
    /// C_v / dt per node (zero for a steady solve).
    pub p: Vec<f64>,
    /// Effective emission coefficient times a c, so emission = ea T^4.
    pub ea: Vec<f64>,
    /// c sigma_E per node: absorption rate per unit energy density.
    pub absorb: Vec<f64>,
}

impl EmissionOperators {
    pub fn new(
        mesh: &Mesh1D,
        materials: &[Material],
        gray: &GrayOpacities,
        dt: f64,
        consts: &SpectralConstants,
    ) -> Result<Self> {
        let n = mesh.n_dofs();
        let mut lump = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ea = vec![0.0; n];
        let mut absorb = vec![0.0; n];
        let inv_dt = if dt.is_finite() { 1.0 / dt } else { 0.0 };
        let es = gray.emission_sigma.as_slice();
        let se = gray.sigma_e.as_slice();
        for e in 0..mesh.n_elems() {
            let mat = materials
                .get(mesh.material_of(e))
                .ok_or_else(|| Error::invalid("element references a missing material"))?;
            for side in 0..2 {
                let dof = 2 * e + side;
                lump[dof] = 0.5 * mesh.h(e);
                p[dof] = mat.cv * inv_dt;
                ea[dof] = es[dof] * consts.a * consts.c;
                absorb[dof] = consts.c * se[dof];
            }
        }
        Ok(EmissionOperators { lump, p, ea, absorb })
    }

    /// Emission-linearization coefficient 4 ea T^3 / (p + 4 ea T^3), in
    /// [0, 1) at every node whenever p > 0.
    pub fn ratio(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.p.iter().zip(&self.ea))
            .map(|(&t, (&p, &ea))| {
                let d = 4.0 * ea * t * t * t;
                if d + p > 0.0 {
                    d / (p + d)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Solve p T + ea T^4 = absorption + p T* at every node.
    pub fn eliminate(
        &self,
        absorption: &[f64],
        t_star: &[f64],
        tol: f64,
    ) -> Elimination {
        let n = self.lump.len();
        let mut t = vec![0.0; n];
        let mut floors = 0u64;
        let mut defect_rate = 0.0;
        for i in 0..n {
            let r = absorption[i] + self.p[i] * t_star[i];
            let (ti, floored) = solve_emission(self.p[i], self.ea[i], r, tol);
            t[i] = ti;
            if floored {
                floors += 1;
            }
            // Lumped residual of the pointwise equation; nonzero only at
            // floored nodes (up to the Newton tolerance elsewhere).
            defect_rate += self.lump[i] * (self.p[i] * ti + self.ea[i] * ti.powi(4) - r);
        }
        Elimination { t, floors, defect_rate }
    }
}

pub struct Elimination {
    pub t: Vec<f64>,
    pub floors: u64,
    /// sum over nodes of lump (p T + ea T^4 - r), the energy-rate defect
    /// introduced by flooring.
    pub defect_rate: f64,
}

/// Root of p T + q T^4 = r for T > 0, safeguarded Newton from the upper
/// bound min(r/p, (r/q)^{1/4}). Returns the floor when r is not positive.
pub fn solve_emission(p: f64, q: f64, r: f64, tol: f64) -> (f64, bool) {
    if !(r > 0.0) || (p <= 0.0 && q <= 0.0) {
        return (TEMPERATURE_FLOOR, true);
    }
    if q <= 0.0 {
        return (r / p, false);
    }
    let mut hi = (r / q).powf(0.25);
    if p > 0.0 {
        hi = hi.min(r / p);
    }
    let mut lo = 0.0f64;
    let mut t = hi;
    for _ in 0..200 {
        let f = p * t + q * t.powi(4) - r;
        if f.abs() <= tol * r {
            return (t, false);
        }
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let df = p + 4.0 * q * t.powi(3);
        let newton = t - f / df;
        t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    (t, false)
}

/// Which linear solver handles the condensed energy system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolverKind {
    #[default]
    Pcg,
    Banded,
}

/// Jacobi-preconditioned conjugate gradients. Solves in place starting from
/// the warm-start content of `x`; returns the iteration count.
pub fn pcg_jacobi(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: u64,
) -> Result<u64> {
    let n = rhs.len();
    let nrm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let target = tol * nrm(rhs);
    if nrm(rhs) == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = rhs[i] - r[i];
    }
    if nrm(&r) <= target {
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iters {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::solver("conjugate gradient breakdown: operator not positive definite"));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if nrm(&r) <= target {
            return Ok(it);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::solver("conjugate gradient failed to converge"))
}

/// LDL^T factorization of a symmetric positive definite band matrix stored
/// as lower rows: band[i * (bw+1) + (bw - (i-j))] = A[i][j] for i-bw <= j <= i.
pub struct BandedLdl {
    n: usize,
    bw: usize,
    /// Unit lower-triangular factors in the same band layout.
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandedLdl {
    pub fn factor(n: usize, bw: usize, band: &[f64]) -> Result<Self> {
        assert_eq!(band.len(), n * (bw + 1));
        let w = bw + 1;
        let mut l = band.to_vec();
        let mut d = vec![0.0; n];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..i {
                let mut v = l[i * w + (bw - (i - j))];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    v -= l[i * w + (bw - (i - k))] * l[j * w + (bw - (j - k))] * d[k];
                }
                l[i * w + (bw - (i - j))] = v / d[j];
            }
            let mut v = l[i * w + bw];
            for k in j0..i {
                let lik = l[i * w + (bw - (i - k))];
                v -= lik * lik * d[k];
            }
            if !(v > 0.0) {
                return Err(Error::solver("banded factorization: matrix not positive definite"));
            }
            d[i] = v;
        }
        Ok(BandedLdl { n, bw, l, d })
    }

    pub fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let w = self.bw + 1;
        x.copy_from_slice(rhs);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut v = x[i];
            for j in j0..i {
                v -= self.l[i * w + (self.bw - (i - j))] * x[j];
            }
            x[i] = v;
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let jmax = (i + self.bw).min(self.n - 1);
            let mut v = x[i];
            for j in i + 1..=jmax {
                v -= self.l[j * w + (self.bw - (j - i))] * x[j];
            }
            x[i] = v;
        }
    }
}

/// Tolerances and bounds for one inner solve.
#[derive(Debug, Clone)]
pub struct InnerConfig {
    /// Stop when the combined step norm has dropped by this factor
    /// relative to the largest step norm seen in the solve.
    pub tol: f64,
    /// Relative residual target of the linear solver.
    pub linear_tol: f64,
    /// Relative residual target of the pointwise temperature solve.
    pub elimination_tol: f64,
    pub max_inner: u64,
    pub linear: LinearSolverKind,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            tol: 1e-3,
            linear_tol: 1e-10,
            elimination_tol: 1e-10,
            max_inner: 200,
            linear: LinearSolverKind::Pcg,
        }
    }
}

pub struct InnerResult {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub t: Vec<f64>,
    pub inner_iters: u64,
    pub linear_iters: u64,
    /// Temperature-floor interventions summed over all inner iterations.
    pub floor_count: u64,
    /// Flooring defect rate of the final elimination.
    pub floor_defect_rate: f64,
    /// Linearized minus actual emission rate at the final iterate,
    /// integrated over the mesh: sum lump (B_lin - ea T^4). This is the
    /// energy-rate slack of stopping the Newton iteration early.
    pub emission_mismatch_rate: f64,
}

/// Solve the coupled low-order system for (E, F, T) given assembled
/// right-hand sides, by Newton iteration on the condensed E system.
pub fn newton_solve(
    ops: &LowOrderOps,
    emis: &EmissionOperators,
    q_f: &[f64],
    q_e: &[f64],
    q_t: &[f64],
    e0: &[f64],
    t0: &[f64],
    cfg: &InnerConfig,
) -> Result<InnerResult> {
    let n = ops.n_dofs();
    let mut e = e0.to_vec();
    let mut t = t0.to_vec();
    let mut rhs = vec![0.0; n];
    let mut dmq = vec![0.0; n];
    // - D M_F^{-1} q_F is constant across iterations.
    let mq: Vec<f64> = q_f.iter().zip(&ops.m_f).map(|(q, m)| q / m).collect();
    ops.apply_div(&mq, &mut dmq);

    let mut inner_iters = 0u64;
    let mut linear_iters = 0u64;
    let mut floor_count = 0u64;
    let mut floor_defect_rate = 0.0;
    let mut emission_mismatch_rate = 0.0;
    let mut delta_max = 0.0f64;
    let mut delta_prev = f64::INFINITY;
    let mut damp_next = false;
    let mut converged = false;

    // Explicit time-edge temperature of the pointwise solve, constant
    // across iterations.
    let t_star: Vec<f64> = q_t
        .iter()
        .zip(emis.lump.iter().zip(&emis.p))
        .map(|(q, (l, p))| if *p > 0.0 { q / (l * p) } else { 0.0 })
        .collect();
    // True when the pointwise temperature equation has a positive right
    // side everywhere for this energy iterate, so no node gets floored.
    let admissible = |ev: &[f64]| {
        ev.iter()
            .zip(emis.absorb.iter().zip(&emis.p).zip(&t_star))
            .all(|(e, ((a, p), ts))| a * e + p * ts > 0.0)
    };

    for _ in 0..cfg.max_inner {
        inner_iters += 1;
        let ratio = emis.ratio(&t);
        let pf: Vec<f64> = ratio.iter().zip(&ops.m_a).map(|(r, m)| r * m).collect();
        for i in 0..n {
            let b0 = emis.lump[i] * emis.ea[i] * t[i].powi(4);
            let btilde0 = emis.lump[i] * emis.p[i] * t[i] + b0;
            rhs[i] = q_e[i] + b0 + ratio[i] * (q_t[i] - btilde0) - dmq[i];
        }
        let t_prev = t.clone();
        let e_prev = e.clone();
        match cfg.linear {
            LinearSolverKind::Pcg => {
                let diag = ops.schur_diag(&pf);
                let mut scratch = vec![0.0; n];
                let iters = pcg_jacobi(
                    |x, out| ops.schur_apply(x, &pf, &mut scratch, out),
                    &diag,
                    &rhs,
                    &mut e,
                    cfg.linear_tol,
                    10 * n as u64,
                )?;
                linear_iters += iters;
            }
            LinearSolverKind::Banded => {
                let band = ops.schur_band(&pf, 3);
                let ldl = BandedLdl::factor(n, 3, &band)?;
                let mut x = vec![0.0; n];
                ldl.solve(&rhs, &mut x);
                e.copy_from_slice(&x);
                linear_iters += 1;
            }
        }
        // Positivity safeguard: a jolted right-hand side can dip a transient
        // energy iterate barely negative at a cold node, where the huge
        // absorption rate would trip the temperature floor even though the
        // converged state is clean. Backtrack such an update toward the
        // previous iterate instead of flooring mid-iteration; a floor that
        // backtracking cannot cure is genuine and still gets counted.
        if !admissible(&e) && admissible(&e_prev) {
            for _ in 0..8 {
                for i in 0..n {
                    e[i] = 0.5 * (e[i] + e_prev[i]);
                }
                if admissible(&e) {
                    break;
                }
            }
        }
        // When the change has stopped shrinking the iteration is riding an
        // alternating mode of the lagged-coefficient map; averaging with the
        // previous iterate cancels it without touching normal convergence.
        if damp_next {
            for i in 0..n {
                e[i] = 0.5 * (e[i] + e_prev[i]);
            }
            damp_next = false;
        }
        // Pointwise temperature recovery from the fresh energy density.
        let absorption: Vec<f64> = emis.absorb.iter().zip(&e).map(|(a, e)| a * e).collect();
        let elim = emis.eliminate(&absorption, &t_star, cfg.elimination_tol);
        floor_count += elim.floors;
        floor_defect_rate = elim.defect_rate;
        t = elim.t;

        // Emission-linearization slack at this iterate, for the energy
        // ledger: B_lin - B(t_new) integrated over the mesh.
        emission_mismatch_rate = 0.0;
        for i in 0..n {
            let b0 = emis.lump[i] * emis.ea[i] * t_prev[i].powi(4);
            let btilde0 = emis.lump[i] * emis.p[i] * t_prev[i] + b0;
            let b_lin = b0 + ratio[i] * (q_t[i] + ops.m_a[i] * e[i] - btilde0);
            emission_mismatch_rate += b_lin - emis.lump[i] * emis.ea[i] * t[i].powi(4);
        }

        // Combined change ||(dT, dE)||_2, compared against the first
        // iterate's change.
        let dt2: f64 = t.iter().zip(&t_prev).map(|(a, b)| (a - b) * (a - b)).sum();
        let de2: f64 = e.iter().zip(&e_prev).map(|(a, b)| (a - b) * (a - b)).sum();
        let delta = (dt2 + de2).sqrt();
        // Converged when the change is small against the largest change of
        // this solve; the first iterate's change can be far below the peak
        // on a cold start and would make a misleading yardstick.
        delta_max = delta_max.max(delta);
        if delta == 0.0 || delta < cfg.tol * delta_max {
            converged = true;
            break;
        }
        damp_next = delta > 0.9 * delta_prev && delta < 1.1 * delta_prev;
        delta_prev = delta;
    }
    if !converged {
        return Err(Error::solver(format!(
            "inner iteration did not converge within {} iterations",
            cfg.max_inner
        )));
    }
    let f = ops.recover_flux(&e, q_f);
    Ok(InnerResult {
        e,
        f,
        t,
        inner_iters,
        linear_iters,
        floor_count,
        floor_defect_rate,
        emission_mismatch_rate,
    })
}

/// Symmetry and definiteness report of the condensed operator, computed
/// densely (diagnostic and test use only).
pub struct SpdReport {
    pub symmetry_defect_rel: f64,
    pub lambda_min: f64,
}

pub fn spd_report(ops: &LowOrderOps, pf: &[f64]) -> SpdReport {
    let m = ops.dense_schur(pf);
    let sym = 0.5 * (&m + m.transpose());
    let defect = (&m - m.transpose()).norm() / m.norm();
    let eig = nalgebra::SymmetricEigen::new(sym);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    SpdReport { symmetry_defect_rel: defect, lambda_min }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::DGField;
    use crate::opacity::MaterialKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn linear_case_without_emission() {
        // q = 0 reduces the pointwise equation to p T = r.
        let (t, floored) = solve_emission(4.0, 0.0, 10.0, 1e-12);
        assert!(!floored);
        assert_relative_eq!(t, 2.5, max_relative = 1e-15);
    }

    #[test]
    fn constructed_root_is_recovered() {
        let (p, q) = (3.7e9, 5.2e-3);
        let root: f64 = 250.0;
        let r = p * root + q * root.powi(4);
        let (t, floored) = solve_emission(p, q, r, 1e-12);
        assert!(!floored);
        assert_relative_eq!(t, root, max_relative = 1e-10);
    }

    #[test]
    fn nonpositive_right_side_floors() {
        let (t, floored) = solve_emission(1.0, 1.0, 0.0, 1e-10);
        assert!(floored);
        assert_eq!(t, TEMPERATURE_FLOOR);
        let (t, floored) = solve_emission(1.0, 1.0, -5.0, 1e-10);
        assert!(floored);
        assert_eq!(t, TEMPERATURE_FLOOR);
    }

    #[test]
    fn emission_root_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let p = 10f64.powf(rng.gen_range(-3.0..12.0));
            let q = 10f64.powf(rng.gen_range(-8.0..3.0));
            let r = 10f64.powf(rng.gen_range(-6.0..16.0));
            let (t, floored) = solve_emission(p, q, r, 1e-12);
            assert!(!floored);
            // Plain bisection to near machine precision.
            let (mut lo, mut hi) = (0.0, (r / q).powf(0.25).min(r / p) * (1.0 + 1e-14));
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if p * mid + q * mid.powi(4) - r > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let oracle = 0.5 * (lo + hi);
            assert_relative_eq!(t, oracle, max_relative = 1e-9);
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> nalgebra::DMatrix<f64> {
        let a = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + nalgebra::DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn pcg_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20;
        let a = random_spd(&mut rng, n);
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (0..n).map(|j| a[(i, j)] * x[j]).sum();
            }
        };
        let mut x = vec![0.0; n];
        let iters = pcg_jacobi(apply, &diag, &rhs, &mut x, 1e-12, 10 * n as u64).unwrap();
        assert!(iters > 0);
        let dense = a
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&rhs))
            .unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], dense[i], max_relative = 1e-9, epsilon = 1e-9);
        }
        // The Jacobi-preconditioned count must not exceed the count with a
        // trivial (identity) preconditioner on an ill-scaled system.
        let mut b = a.clone();
        for i in 0..n {
            let s = 10f64.powi(i as i32 % 5 - 2);
            for j in 0..n {
                b[(i, j)] *= s;
                b[(j, i)] *= s;
            }
        }
        let diag_b: Vec<f64> = (0..n).map(|i| b[(i, i)]).collect();
        let apply_b = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (0..n).map(|j| b[(i, j)] * x[j]).sum();
            }
        };
        let mut xj = vec![0.0; n];
        let with_jacobi =
            pcg_jacobi(&apply_b, &diag_b, &rhs, &mut xj, 1e-10, 10 * n as u64).unwrap();
        let ones = vec![1.0; n];
        let mut xi = vec![0.0; n];
        let without =
            pcg_jacobi(&apply_b, &ones, &rhs, &mut xi, 1e-10, 10 * n as u64).unwrap();
        assert!(with_jacobi <= without, "jacobi {with_jacobi} vs identity {without}");
    }

    #[test]
    fn pcg_rejects_indefinite_operators() {
        let n = 4;
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = -x[i];
            }
        };
        let mut x = vec![0.0; n];
        let err = pcg_jacobi(apply, &[1.0; 4], &[1.0, 2.0, 3.0, 4.0], &mut x, 1e-10, 40);
        assert!(err.is_err());
    }

    #[test]
    fn banded_factorization_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 12;
        let bw = 3;
        // Random SPD band matrix: diagonally dominant within the band.
        let mut a = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                if i == j {
                    a[(i, i)] = rng.gen_range(4.0..8.0);
                } else {
                    let v = rng.gen_range(-0.5..0.5);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
        }
        let mut band = vec![0.0; n * (bw + 1)];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band[i * (bw + 1) + (bw - (i - j))] = a[(i, j)];
            }
        }
        let ldl = BandedLdl::factor(n, bw, &band).unwrap();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n];
        ldl.solve(&rhs, &mut x);
        let dense = a.lu().solve(&nalgebra::DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], dense[i], max_relative = 1e-11, epsilon = 1e-12);
        }
    }

    fn fabricated_problem(
        rng: &mut ChaCha8Rng,
        ne: usize,
    ) -> (LowOrderOps, EmissionOperators, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let consts = SpectralConstants::default();
        let mesh = Arc::new(Mesh1D::uniform(0.0, 1.0, ne).unwrap());
        let n = mesh.n_dofs();
        let mut gray = GrayOpacities {
            sigma_e: DGField::constant(mesh.clone(), 0.0),
            sigma_f: DGField::constant(mesh.clone(), 0.0),
            sigma_p: DGField::constant(mesh.clone(), 0.0),
            emission_sigma: DGField::constant(mesh.clone(), 0.0),
        };
        for i in 0..n {
            gray.sigma_e.as_mut_slice()[i] = rng.gen_range(0.5..3.0);
            gray.sigma_f.as_mut_slice()[i] = rng.gen_range(0.5..3.0);
            let s = rng.gen_range(0.5..3.0);
            gray.sigma_p.as_mut_slice()[i] = s;
            gray.emission_sigma.as_mut_slice()[i] = s;
        }
        let dt = 0.05;
        let mat = Material { kind: MaterialKind::Constant { sigma: 1.0 }, cv: 2e10 };
        let ops = LowOrderOps::new(mesh.clone(), &gray, dt, 0.5, 1.0, &consts).unwrap();
        let emis = EmissionOperators::new(&mesh, &[mat], &gray, dt, &consts).unwrap();
        let t_star: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let e_star: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        let q_f: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let q_e: Vec<f64> = emis.lump.iter().zip(&e_star).map(|(l, e)| l * e / dt).collect();
        let q_t: Vec<f64> = emis
            .lump
            .iter()
            .zip(emis.p.iter().zip(&t_star))
            .map(|(l, (p, t))| l * p * t)
            .collect();
        (ops, emis, q_f, q_e, q_t, e_star, t_star)
    }

    #[test]
    fn converged_solution_satisfies_all_three_block_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for kind in [LinearSolverKind::Pcg, LinearSolverKind::Banded] {
            let (ops, emis, q_f, q_e, q_t, e_star, t_star) = fabricated_problem(&mut rng, 5);
            let n = ops.n_dofs();
            let cfg = InnerConfig { tol: 1e-12, max_inner: 400, linear: kind, ..Default::default() };
            let out = newton_solve(&ops, &emis, &q_f, &q_e, &q_t, &e_star, &t_star, &cfg).unwrap();
            assert!(out.inner_iters > 1);
            assert_eq!(out.floor_count, 0);

            // Flux equation: M_F F - (c/3) D^T E = q_F.
            let mut dte = vec![0.0; n];
            ops.apply_div_t(&out.e, &mut dte);
            for i in 0..n {
                let res = ops.m_f[i] * out.f[i] - ops.c / 3.0 * dte[i] - q_f[i];
                assert!(res.abs() <= 1e-10 * q_e[i].abs().max(1.0), "flux eq residual {res}");
            }
            // Energy equation: D F + (M_E + P) E - B(T) = q_E.
            let mut df = vec![0.0; n];
            ops.apply_div(&out.f, &mut df);
            let mut pe = vec![0.0; n];
            ops.add_penalty(&out.e, &mut pe);
            let scale = q_e.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for i in 0..n {
                let res = df[i] + ops.m_e[i] * out.e[i] + pe[i]
                    - emis.lump[i] * emis.ea[i] * out.t[i].powi(4)
                    - q_e[i];
                assert!(res.abs() <= 1e-8 * scale, "energy eq residual {res} at {i}");
            }
            // Material equation: -M_a E + Btilde(T) = q_T.
            let scale_t = q_t.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for i in 0..n {
                let res = -ops.m_a[i] * out.e[i]
                    + emis.lump[i] * (emis.p[i] * out.t[i] + emis.ea[i] * out.t[i].powi(4))
                    - q_t[i];
                assert!(res.abs() <= 1e-8 * scale_t, "material eq residual {res} at {i}");
            }
        }
    }

    #[test]
    fn spd_report_on_fabricated_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let (ops, emis, _, _, _, _, t_star) = fabricated_problem(&mut rng, 4);
        let ratio = emis.ratio(&t_star);
        for r in &ratio {
            assert!(*r >= 0.0 && *r < 1.0);
        }
        let pf: Vec<f64> = ratio.iter().zip(&ops.m_a).map(|(r, m)| r * m).collect();
        let rep = spd_report(&ops, &pf);
        assert!(rep.symmetry_defect_rel <= 1e-13);
        assert!(rep.lambda_min > 0.0);
    }
}
