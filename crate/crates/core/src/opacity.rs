//! Material opacity models, multigroup evaluation, and gray collapse.
//!
//! Multigroup opacities are piecewise constant per element, evaluated at the
//! element-average temperature of the previous time level and frozen for the
//! step. Gray (one-group) opacities are piecewise linear: they are collapsed
//! nodally from multigroup data with spectral weight functions, so they live
//! in the same DG space as the solution fields.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem1d::{DGField, Mesh1D};
use crate::quadrature::gauss_legendre_sn;
use crate::spectral::{planck_fractions, rosseland_fractions, GroupStructure};

/// Frequency- and temperature-dependent absorption models, cm^-1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialKind {
    /// Frequency-independent sigma(T) = coefficient * T^exponent.
    PowerLaw { coefficient: f64, exponent: f64 },
    /// sigma(nu, T) = strength / nu^3 * (1 - exp(-nu/T)), strength in eV^3/cm.
    FreqCubed { strength: f64 },
    /// Frequency- and temperature-independent opacity.
    Constant { sigma: f64 },
}

/// A material: an absorption model plus volumetric heat capacity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Material {
    pub kind: MaterialKind,
    /// Heat capacity C_v, erg cm^-3 eV^-1. Must be positive.
    pub cv: f64,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.cv > 0.0 && self.cv.is_finite()) {
            return Err(Error::invalid("material heat capacity must be positive"));
        }
        let ok = match self.kind {
            MaterialKind::PowerLaw { coefficient, .. } => coefficient >= 0.0,
            MaterialKind::FreqCubed { strength } => strength >= 0.0,
            MaterialKind::Constant { sigma } => sigma >= 0.0,
        };
        if !ok {
            return Err(Error::invalid("opacity magnitude must be nonnegative"));
        }
        Ok(())
    }

    /// Pointwise opacity at frequency nu (eV) and temperature T (eV).
    pub fn sigma_at(&self, nu: f64, temperature: f64) -> f64 {
        match self.kind {
            MaterialKind::PowerLaw { coefficient, exponent } => coefficient * temperature.powf(exponent),
            MaterialKind::FreqCubed { strength } => {
                strength / (nu * nu * nu) * (-(-nu / temperature).exp_m1())
            }
            MaterialKind::Constant { sigma } => sigma,
        }
    }
}

/// Per-element, per-group opacities frozen over a time step.
#[derive(Debug, Clone)]
pub struct MultigroupOpacity {
    mesh: Arc<Mesh1D>,
    n_groups: usize,
    vals: Vec<f64>,
}

impl MultigroupOpacity {
    pub fn value(&self, elem: usize, group: usize) -> f64 {
        self.vals[elem * self.n_groups + group]
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }
}

/// Planck-weighted group average of a frequency-dependent opacity over
/// [lo, hi] at temperature T, with a 16-point Gauss rule. The weight is the
/// Planck intensity shape nu^3/(e^(nu/T) - 1); the common scale e^(-lo/T) is
/// factored out so deep Wien-tail groups stay representable. When the
/// weighted mass of the group underflows entirely, the left-edge value is
/// used, which is the Wien-tail limit of the average.
fn group_average(material: &Material, lo: f64, hi: f64, temperature: f64, gl: &(Vec<f64>, Vec<f64>)) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let xref = lo / temperature;
    for (x, w) in gl.0.iter().zip(gl.1.iter()) {
        // Map [-1, 1] to [lo, hi].
        let nu = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
        let xg = nu / temperature;
        // nu^3 e^{-(xg - xref)} / (1 - e^{-xg}), i.e. the Planck shape with
        // the group-wide factor e^{-xref} removed.
        let weight = nu * nu * nu * (-(xg - xref)).exp() / (-(-xg).exp_m1());
        num += w * weight * material.sigma_at(nu, temperature);
        den += w * weight;
    }
    if den > 0.0 && num.is_finite() {
        num / den
    } else {
        material.sigma_at(lo.max(f64::MIN_POSITIVE), temperature)
    }
}

/// Evaluate per-element multigroup opacities at the element averages of the
/// given temperature field. Deterministic: depends only on the inputs.
pub fn eval_multigroup(
    materials: &[Material],
    temperature: &DGField,
    groups: &GroupStructure,
) -> Result<MultigroupOpacity> {
    let mesh = temperature.mesh().clone();
    let ng = groups.n_groups();
    let rule = gauss_legendre_sn(16)?;
    let gl = (rule.mu, rule.weight);
    let mut vals = Vec::with_capacity(mesh.n_elems() * ng);
    for e in 0..mesh.n_elems() {
        let mat = materials
            .get(mesh.material_of(e))
            .ok_or_else(|| Error::invalid("element references a missing material"))?;
        let t = temperature.element_average(e).max(1e-12);
        match mat.kind {
            // Frequency-independent models need no spectral average.
            MaterialKind::PowerLaw { .. } | MaterialKind::Constant { .. } => {
                let s = mat.sigma_at(1.0, t);
                vals.extend(std::iter::repeat(s).take(ng));
            }
            MaterialKind::FreqCubed { .. } => {
                for g in 0..ng {
                    let (lo, hi) = (groups.bounds()[g], groups.bounds()[g + 1]);
                    vals.push(group_average(mat, lo.max(f64::MIN_POSITIVE), hi, t, &gl));
                }
            }
        }
    }
    Ok(MultigroupOpacity { mesh, n_groups: ng, vals })
}

/// Nodal gray opacities collapsed from multigroup data, plus the effective
/// emission coefficient. All fields are piecewise linear.
#[derive(Debug, Clone)]
pub struct GrayOpacities {
    /// Absorption collapse weighted by the group radiation energies.
    pub sigma_e: DGField,
    /// Flux collapse weighted by the emission-derivative spectrum.
    pub sigma_f: DGField,
    /// Emission collapse weighted by the Planck spectrum.
    pub sigma_p: DGField,
    /// sum_g sigma_g b_g(T), the coefficient of a c T^4 in the emission;
    /// equals sigma_p times the in-band spectral mass.
    pub emission_sigma: DGField,
}

/// Relative threshold below which the radiation-energy weights at a node are
/// considered degenerate and the Planck weights are substituted.
const ENERGY_WEIGHT_FLOOR: f64 = 1e-30;

/// Collapse multigroup opacities to gray nodal fields.
///
/// `group_energy` supplies the radiation-energy weights (one field per
/// group, typically the freshest transport moments); `temperature` supplies
/// the spectral weights b_g and r_g. The absorption collapse uses the energy
/// weights, the emission and flux collapses use the spectral weights.
pub fn collapse_gray(
    sigma: &MultigroupOpacity,
    group_energy: &[DGField],
    temperature: &DGField,
    groups: &GroupStructure,
) -> GrayOpacities {
    let mesh = temperature.mesh().clone();
    let ng = sigma.n_groups();
    assert_eq!(group_energy.len(), ng, "one energy field per group");
    let n = mesh.n_dofs();

    // Largest nodal energy sum, for the degenerate-weight test.
    let mut e_max = 0.0f64;
    let mut e_sum = vec![0.0; n];
    for g in 0..ng {
        for (s, v) in e_sum.iter_mut().zip(group_energy[g].as_slice()) {
            *s += v;
        }
    }
    for s in &e_sum {
        e_max = e_max.max(s.abs());
    }

    let mut sigma_e = DGField::zeros(mesh.clone());
    let mut sigma_f = DGField::zeros(mesh.clone());
    let mut sigma_p = DGField::zeros(mesh.clone());
    let mut emission_sigma = DGField::zeros(mesh.clone());

    for e in 0..mesh.n_elems() {
        for side in 0..2 {
            let dof = 2 * e + side;
            let t = if side == 0 { temperature.left(e) } else { temperature.right(e) };
            let b = planck_fractions(groups, t);
            let r = rosseland_fractions(groups, t);

            let mut num_e = 0.0;
            let mut den_e = 0.0;
            let mut num_f = 0.0;
            let mut den_f = 0.0;
            let mut num_p = 0.0;
            let mut den_p = 0.0;
            for g in 0..ng {
                let s = sigma.value(e, g);
                let we = group_energy[g].as_slice()[dof];
                num_e += s * we;
                den_e += we;
                num_f += s * r.bands[g];
                den_f += r.bands[g];
                num_p += s * b.bands[g];
                den_p += b.bands[g];
            }
            let sp = if den_p > 0.0 { num_p / den_p } else { arithmetic_mean(sigma, e) };
            let sf = if den_f > 0.0 { num_f / den_f } else { sp };
            let se = if den_e > ENERGY_WEIGHT_FLOOR * e_max && den_e > 0.0 {
                num_e / den_e
            } else if den_p > 0.0 {
                sp
            } else {
                arithmetic_mean(sigma, e)
            };
            set_dof(&mut sigma_e, dof, se);
            set_dof(&mut sigma_f, dof, sf);
            set_dof(&mut sigma_p, dof, sp);
            set_dof(&mut emission_sigma, dof, num_p);
        }
    }
    GrayOpacities { sigma_e, sigma_f, sigma_p, emission_sigma }
}

fn arithmetic_mean(sigma: &MultigroupOpacity, e: usize) -> f64 {
    let ng = sigma.n_groups();
    (0..ng).map(|g| sigma.value(e, g)).sum::<f64>() / ng as f64
}

fn set_dof(field: &mut DGField, dof: usize, value: f64) {
    field.as_mut_slice()[dof] = value;
}

/// sigma + 1/(c dt), the removal coefficient of the backward Euler step.
/// An infinite dt leaves sigma unchanged (steady-state transport).
pub fn time_absorption(sigma: f64, c: f64, dt: f64) -> f64 {
    if dt.is_finite() {
        sigma + 1.0 / (c * dt)
    } else {
        sigma
    }
}
