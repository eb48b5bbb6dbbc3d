//! Discrete-ordinates transport: the per-direction, per-group upwind DG
//! sweep, the negativity fixup, and the angular moments consumed by the
//! low-order system.
//!
//! Within a backward Euler step the sweep inverts, for every direction mu
//! and group g, the lumped upwind DG discretization of
//!
//!   mu dI/dx + (sigma_g + 1/(c dt)) I = (1/2) sigma_g B_g(T) + I_old/(c dt),
//!
//! marching element by element in the wind direction. Incoming intensity at
//! the domain boundary is the isotropic Planck source B_g(T_bdr)/2.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem1d::{DGField, Mesh1D};
use crate::opacity::{time_absorption, MultigroupOpacity};
use crate::quadrature::AngularQuadrature;
use crate::spectral::{band_emission, GroupStructure, SpectralConstants};

/// Angular flux storage: one DG field per (direction, group) pair, flattened
/// as [d][g][dof] with directions ascending in mu and groups ascending in
/// frequency.
#[derive(Debug, Clone)]
pub struct AngularIntensity {
    mesh: Arc<Mesh1D>,
    n_dirs: usize,
    n_groups: usize,
    data: Vec<f64>,
}

impl AngularIntensity {
    pub fn zeros(mesh: Arc<Mesh1D>, n_dirs: usize, n_groups: usize) -> Self {
        let n = mesh.n_dofs() * n_dirs * n_groups;
        AngularIntensity { mesh, n_dirs, n_groups, data: vec![0.0; n] }
    }

    /// Isotropic equilibrium intensity B_g(T)/2 at a uniform temperature.
    pub fn equilibrium(
        mesh: Arc<Mesh1D>,
        quad: &AngularQuadrature,
        groups: &GroupStructure,
        consts: &SpectralConstants,
        temperature: f64,
    ) -> Self {
        let mut out = AngularIntensity::zeros(mesh, quad.n_dirs(), groups.n_groups());
        let bands = band_emission(consts, groups, temperature);
        for d in 0..out.n_dirs {
            for g in 0..out.n_groups {
                out.slice_mut(d, g).fill(0.5 * bands[g]);
            }
        }
        out
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn n_dirs(&self) -> usize {
        self.n_dirs
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    fn offset(&self, d: usize, g: usize) -> usize {
        (d * self.n_groups + g) * self.mesh.n_dofs()
    }

    pub fn slice(&self, d: usize, g: usize) -> &[f64] {
        let o = self.offset(d, g);
        &self.data[o..o + self.mesh.n_dofs()]
    }

    pub fn slice_mut(&mut self, d: usize, g: usize) -> &mut [f64] {
        let o = self.offset(d, g);
        let n = self.mesh.n_dofs();
        &mut self.data[o..o + n]
    }
}

/// Precomputed boundary data: band emission of each wall and the inflow
/// moments entering the low-order boundary conditions. Signs follow the
/// outward normal of each wall, so `f_in` is nonpositive (energy flowing in).
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub t_left: f64,
    pub t_right: f64,
    /// B_g at each wall temperature.
    pub bands_left: Vec<f64>,
    pub bands_right: Vec<f64>,
    /// F_in = sum_g sum_{mu.n<0} w (mu.n) B_g/2 at each wall, <= 0.
    pub f_in_left: f64,
    pub f_in_right: f64,
    /// P_in = (1/c) sum_g sum_{mu.n<0} w mu^2 B_g/2 at each wall, >= 0.
    pub p_in_left: f64,
    pub p_in_right: f64,
}

/// Assemble boundary inflow moments for isotropic wall sources.
pub fn inflow_moments(
    quad: &AngularQuadrature,
    groups: &GroupStructure,
    consts: &SpectralConstants,
    t_left: f64,
    t_right: f64,
) -> BoundaryData {
    let bands_left = band_emission(consts, groups, t_left);
    let bands_right = band_emission(consts, groups, t_right);
    let b_left: f64 = bands_left.iter().sum();
    let b_right: f64 = bands_right.iter().sum();

    // Half-range ordinate sums; the quadrature is symmetric, so the two
    // halves have identical |mu| content.
    let mut sum_wmu_pos = 0.0;
    let mut sum_wmu2_pos = 0.0;
    let mut sum_wmu_neg = 0.0;
    let mut sum_wmu2_neg = 0.0;
    for (m, w) in quad.mu.iter().zip(&quad.weight) {
        if *m > 0.0 {
            sum_wmu_pos += w * m;
            sum_wmu2_pos += w * m * m;
        } else {
            sum_wmu_neg += w * m;
            sum_wmu2_neg += w * m * m;
        }
    }
    // Left wall: outward normal -1, inflow directions mu > 0.
    let f_in_left = -sum_wmu_pos * 0.5 * b_left;
    let p_in_left = sum_wmu2_pos * 0.5 * b_left / consts.c;
    // Right wall: outward normal +1, inflow directions mu < 0.
    let f_in_right = sum_wmu_neg * 0.5 * b_right;
    let p_in_right = sum_wmu2_neg * 0.5 * b_right / consts.c;
    BoundaryData {
        t_left,
        t_right,
        bands_left,
        bands_right,
        f_in_left,
        f_in_right,
        p_in_left,
        p_in_right,
    }
}

/// Per-(direction, group) fixed sources for the sweep kernel: nodal volume
/// source q (everything except streaming and removal) and the incoming
/// intensities at the two walls.
pub struct SweepSources {
    /// Nodal source per group, [g][dof]: (1/2) sigma_g B_g(T) + I_old/(c dt).
    pub volume: Vec<Vec<f64>>,
    /// Incoming intensity per group at the left wall (for mu > 0).
    pub inflow_left: Vec<f64>,
    /// Incoming intensity per group at the right wall (for mu < 0).
    pub inflow_right: Vec<f64>,
}

/// Build the standard step sources: implicit emission at the given
/// temperature iterate plus the time-edge term from the previous intensity.
pub fn assemble_sweep_sources(
    emission_t: &DGField,
    i_old: &AngularIntensity,
    sigma: &MultigroupOpacity,
    dt: f64,
    bdry: &BoundaryData,
    groups: &GroupStructure,
    consts: &SpectralConstants,
) -> Vec<SweepSources> {
    let mesh = emission_t.mesh();
    let ng = groups.n_groups();
    let nd = i_old.n_dirs();
    let inv_cdt = if dt.is_finite() { 1.0 / (consts.c * dt) } else { 0.0 };

    // Band emission at every node, [dof][g].
    let mut bands_at = Vec::with_capacity(mesh.n_dofs());
    for dof in 0..mesh.n_dofs() {
        bands_at.push(band_emission(consts, groups, emission_t.as_slice()[dof].max(1e-12)));
    }

    (0..nd)
        .map(|d| {
            let mut volume = Vec::with_capacity(ng);
            for g in 0..ng {
                let old = i_old.slice(d, g);
                let mut q = vec![0.0; mesh.n_dofs()];
                for e in 0..mesh.n_elems() {
                    let s = sigma.value(e, g);
                    for side in 0..2 {
                        let dof = 2 * e + side;
                        q[dof] = 0.5 * s * bands_at[dof][g] + inv_cdt * old[dof];
                    }
                }
                volume.push(q);
            }
            SweepSources {
                volume,
                inflow_left: bdry.bands_left.iter().map(|b| 0.5 * b).collect(),
                inflow_right: bdry.bands_right.iter().map(|b| 0.5 * b).collect(),
            }
        })
        .collect()
}

/// Invert the upwind DG transport operator for every (direction, group)
/// against the given sources. Linear in the sources. Directions run in
/// parallel; each (d, g) writes only its own block, so results do not depend
/// on the thread count.
pub fn sweep(
    sources: &[SweepSources],
    sigma: &MultigroupOpacity,
    dt: f64,
    quad: &AngularQuadrature,
    consts: &SpectralConstants,
) -> Result<AngularIntensity> {
    let mesh = sigma.mesh().clone();
    let nd = quad.n_dirs();
    let ng = sigma.n_groups();
    assert_eq!(sources.len(), nd, "one source bundle per direction");
    let mut out = AngularIntensity::zeros(mesh.clone(), nd, ng);
    let dofs = mesh.n_dofs();

    let results: Vec<Result<()>> = out
        .data
        .par_chunks_mut(dofs)
        .enumerate()
        .map(|(idx, block)| {
            let d = idx / ng;
            let g = idx % ng;
            sweep_one(
                block,
                quad.mu[d],
                &sources[d].volume[g],
                sources[d].inflow_left[g],
                sources[d].inflow_right[g],
                g,
                sigma,
                dt,
                &mesh,
                consts,
            )
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sweep_one(
    block: &mut [f64],
    mu: f64,
    q: &[f64],
    inflow_left: f64,
    inflow_right: f64,
    g: usize,
    sigma: &MultigroupOpacity,
    dt: f64,
    mesh: &Mesh1D,
    consts: &SpectralConstants,
) -> Result<()> {
    let n = mesh.n_elems();
    let am = mu.abs();
    if am == 0.0 {
        return Err(Error::invalid("zero ordinate in quadrature set"));
    }
    if mu > 0.0 {
        let mut upwind = inflow_left;
        for e in 0..n {
            let hw = 0.5 * mesh.h(e);
            let st = time_absorption(sigma.value(e, g), consts.c, dt);
            if !(st >= 0.0) {
                return Err(Error::solver("negative removal coefficient in sweep"));
            }
            // Rows: [mu/2 + hw*st, mu/2; -mu/2, mu/2 + hw*st] [I0, I1]
            //     = [hw q0 + mu*upwind, hw q1]
            let a = 0.5 * mu + hw * st;
            let b0 = hw * q[2 * e] + mu * upwind;
            let b1 = hw * q[2 * e + 1];
            let det = a * a + 0.25 * mu * mu;
            let i0 = (b0 * a - 0.5 * mu * b1) / det;
            let i1 = (a * b1 + 0.5 * mu * b0) / det;
            block[2 * e] = i0;
            block[2 * e + 1] = i1;
            upwind = i1;
        }
    } else {
        let mut upwind = inflow_right;
        for e in (0..n).rev() {
            let hw = 0.5 * mesh.h(e);
            let st = time_absorption(sigma.value(e, g), consts.c, dt);
            if !(st >= 0.0) {
                return Err(Error::solver("negative removal coefficient in sweep"));
            }
            // Rows: [am/2 + hw*st, -am/2; am/2, am/2 + hw*st] [I0, I1]
            //     = [hw q0, hw q1 + am*upwind]
            let a = 0.5 * am + hw * st;
            let b0 = hw * q[2 * e];
            let b1 = hw * q[2 * e + 1] + am * upwind;
            let det = a * a + 0.25 * am * am;
            let i0 = (a * b0 + 0.5 * am * b1) / det;
            let i1 = (b1 * a - 0.5 * am * b0) / det;
            block[2 * e] = i0;
            block[2 * e + 1] = i1;
            upwind = i0;
        }
    }
    Ok(())
}

/// Outcome of the negativity fixup: how many (d, g, element) triples were
/// touched and how much radiation energy the floor-to-zero branch created.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixupReport {
    pub interventions: u64,
    /// Radiation energy added by zeroing elements with nonpositive average,
    /// in the units of the energy density integral (erg/cm^2).
    pub energy_defect: f64,
}

/// Zero-and-scale fixup: negative nodal values are zeroed and the remaining
/// node is scaled to preserve the element average; if the average itself is
/// nonpositive the element is zeroed and the energy defect recorded.
pub fn fixup_zero_and_scale(i: &mut AngularIntensity, quad: &AngularQuadrature, consts: &SpectralConstants) -> FixupReport {
    let mesh = i.mesh().clone();
    let mut report = FixupReport::default();
    for d in 0..i.n_dirs() {
        let w = quad.weight[d];
        for g in 0..i.n_groups() {
            let block = i.slice_mut(d, g);
            for e in 0..mesh.n_elems() {
                let (v0, v1) = (block[2 * e], block[2 * e + 1]);
                if v0 >= 0.0 && v1 >= 0.0 {
                    continue;
                }
                report.interventions += 1;
                let avg = 0.5 * (v0 + v1);
                if avg <= 0.0 {
                    block[2 * e] = 0.0;
                    block[2 * e + 1] = 0.0;
                    report.energy_defect += w * 0.5 * mesh.h(e) * (0.0 - (v0 + v1)) / consts.c;
                } else if v0 < 0.0 {
                    block[2 * e] = 0.0;
                    block[2 * e + 1] = 2.0 * avg;
                } else {
                    block[2 * e] = 2.0 * avg;
                    block[2 * e + 1] = 0.0;
                }
            }
        }
    }
    report
}

/// Zeroth and first angular moments of the upwind transport residual of a
/// given intensity field against the sources it was swept from. For the raw
/// sweep output both vectors are roundoff; after the negativity fixup they
/// carry the artificial absorption/emission the fixup injected, and feeding
/// them back into the low-order sources keeps that system consistent with the
/// field the closures were actually taken from. Accumulation order is fixed
/// (directions, then groups) so results do not depend on the thread count.
pub fn moment_residuals(
    i: &AngularIntensity,
    sources: &[SweepSources],
    sigma: &MultigroupOpacity,
    dt: f64,
    quad: &AngularQuadrature,
    consts: &SpectralConstants,
) -> (Vec<f64>, Vec<f64>) {
    let mesh = i.mesh().clone();
    let n = mesh.n_elems();
    let nd = i.n_dirs();
    let ng = i.n_groups();
    assert_eq!(sources.len(), nd, "one source bundle per direction");
    let mut rho0 = vec![0.0; mesh.n_dofs()];
    let mut rho1 = vec![0.0; mesh.n_dofs()];
    for d in 0..nd {
        let mu = quad.mu[d];
        let w = quad.weight[d];
        let am = mu.abs();
        for g in 0..ng {
            let block = i.slice(d, g);
            let q = &sources[d].volume[g];
            if mu > 0.0 {
                let mut upwind = sources[d].inflow_left[g];
                for e in 0..n {
                    let hw = 0.5 * mesh.h(e);
                    let st = time_absorption(sigma.value(e, g), consts.c, dt);
                    let a = 0.5 * mu + hw * st;
                    let i0 = block[2 * e];
                    let i1 = block[2 * e + 1];
                    let r0 = a * i0 + 0.5 * mu * i1 - hw * q[2 * e] - mu * upwind;
                    let r1 = -0.5 * mu * i0 + a * i1 - hw * q[2 * e + 1];
                    rho0[2 * e] += w * r0;
                    rho0[2 * e + 1] += w * r1;
                    rho1[2 * e] += w * mu * r0;
                    rho1[2 * e + 1] += w * mu * r1;
                    upwind = i1;
                }
            } else {
                let mut upwind = sources[d].inflow_right[g];
                for e in (0..n).rev() {
                    let hw = 0.5 * mesh.h(e);
                    let st = time_absorption(sigma.value(e, g), consts.c, dt);
                    let a = 0.5 * am + hw * st;
                    let i0 = block[2 * e];
                    let i1 = block[2 * e + 1];
                    let r0 = a * i0 - 0.5 * am * i1 - hw * q[2 * e];
                    let r1 = 0.5 * am * i0 + a * i1 - hw * q[2 * e + 1] - am * upwind;
                    rho0[2 * e] += w * r0;
                    rho0[2 * e + 1] += w * r1;
                    rho1[2 * e] += w * mu * r0;
                    rho1[2 * e + 1] += w * mu * r1;
                    upwind = i0;
                }
            }
        }
    }
    (rho0, rho1)
}

/// Closure traces at one wall, taken with respect to the outward normal.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundaryMoments {
    /// Outgoing partial current sum_g sum_{mu.n>0} w (mu.n) I.
    pub j_plus: f64,
    /// Outgoing half-range pressure (1/c) sum_g sum_{mu.n>0} w mu^2 I.
    pub p_plus: f64,
    /// Radiation energy density trace at the wall.
    pub e_trace: f64,
}

/// Angular moments of an intensity iterate: group and total energy
/// densities and fluxes, the closure fields of the low-order system, and
/// the interface traces of the half-range closures.
#[derive(Debug, Clone)]
pub struct HOMoments {
    pub e_g: Vec<DGField>,
    pub f_g: Vec<DGField>,
    /// Total radiation energy density, sum of e_g.
    pub e: DGField,
    /// Total radiation flux, sum of f_g.
    pub f: DGField,
    /// Eddington correction sum_g sum_d w (mu^2 - 1/3) I.
    pub t_xx: DGField,
    /// Interface traces (left element, right element) of the boundary-layer
    /// closure sum w (|mu| - alpha) I, one pair per interior face.
    pub beta: Vec<(f64, f64)>,
    /// Interface traces of the half-range pressures (1/c) sum_{mu>0} w mu^2 I
    /// and (1/c) sum_{mu<0} w mu^2 I with the face normal fixed to +x.
    pub p_plus: Vec<(f64, f64)>,
    pub p_minus: Vec<(f64, f64)>,
    /// Wall closures, [left, right].
    pub bdry: [BoundaryMoments; 2],
}

/// Accumulate moments in a fixed order (groups ascending, then directions
/// ascending) so results are independent of any sweep parallelism.
pub fn moments(i: &AngularIntensity, quad: &AngularQuadrature, consts: &SpectralConstants) -> HOMoments {
    let mesh = i.mesh().clone();
    let nd = i.n_dirs();
    let ng = i.n_groups();
    let dofs = mesh.n_dofs();
    let ne = mesh.n_elems();
    let alpha = quad.alpha();
    let inv_c = 1.0 / consts.c;

    let mut e_g = vec![DGField::zeros(mesh.clone()); ng];
    let mut f_g = vec![DGField::zeros(mesh.clone()); ng];
    let mut t_xx = DGField::zeros(mesh.clone());
    let mut beta = vec![(0.0, 0.0); ne.saturating_sub(1)];
    let mut p_plus = vec![(0.0, 0.0); ne.saturating_sub(1)];
    let mut p_minus = vec![(0.0, 0.0); ne.saturating_sub(1)];
    let mut bdry = [BoundaryMoments::default(), BoundaryMoments::default()];

    for g in 0..ng {
        for d in 0..nd {
            let w = quad.weight[d];
            let mu = quad.mu[d];
            let block = i.slice(d, g);
            {
                let eg = e_g[g].as_mut_slice();
                let fg = f_g[g].as_mut_slice();
                let tx = t_xx.as_mut_slice();
                for k in 0..dofs {
                    let v = block[k];
                    eg[k] += inv_c * w * v;
                    fg[k] += w * mu * v;
                    tx[k] += w * (mu * mu - 1.0 / 3.0) * v;
                }
            }
            for f in 0..ne.saturating_sub(1) {
                let v1 = block[2 * f + 1]; // right node of left element
                let v2 = block[2 * f + 2]; // left node of right element
                beta[f].0 += w * (mu.abs() - alpha) * v1;
                beta[f].1 += w * (mu.abs() - alpha) * v2;
                if mu > 0.0 {
                    p_plus[f].0 += inv_c * w * mu * mu * v1;
                    p_plus[f].1 += inv_c * w * mu * mu * v2;
                } else {
                    p_minus[f].0 += inv_c * w * mu * mu * v1;
                    p_minus[f].1 += inv_c * w * mu * mu * v2;
                }
            }
            // Left wall: outward normal -1, outgoing directions mu < 0.
            let vl = block[0];
            let vr = block[dofs - 1];
            if mu < 0.0 {
                bdry[0].j_plus += w * (-mu) * vl;
                bdry[0].p_plus += inv_c * w * mu * mu * vl;
            } else {
                bdry[1].j_plus += w * mu * vr;
                bdry[1].p_plus += inv_c * w * mu * mu * vr;
            }
        }
    }

    let mut e = DGField::zeros(mesh.clone());
    let mut f = DGField::zeros(mesh.clone());
    for g in 0..ng {
        e.axpy(1.0, &e_g[g]);
        f.axpy(1.0, &f_g[g]);
    }
    bdry[0].e_trace = e.left(0);
    bdry[1].e_trace = e.right(ne - 1);

    HOMoments { e_g, f_g, e, f, t_xx, beta, p_plus, p_minus, bdry }
}
