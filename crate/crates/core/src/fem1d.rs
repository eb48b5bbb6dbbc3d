//! Piecewise-linear discontinuous finite elements on a 1D mesh.
//!
//! Every element carries two nodal degrees of freedom located at its
//! endpoints, so fields may jump across element interfaces. Element
//! integrals are lumped with the two-point Gauss-Lobatto rule, which makes
//! every mass-type operator diagonal. Interface orientation is fixed once
//! and for all: the face normal points from the left element to the right
//! element, jumps are (left trace) - (right trace), and averages are the
//! arithmetic mean of the two traces.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::gauss3;

/// 1D mesh with a material id per element.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    material: Vec<usize>,
}

impl Mesh1D {
    pub fn new(nodes: Vec<f64>, material: Vec<usize>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("mesh needs at least one element"));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("mesh nodes must be finite"));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mesh nodes must be strictly increasing"));
        }
        if material.len() != nodes.len() - 1 {
            return Err(Error::invalid("one material id required per element"));
        }
        Ok(Mesh1D { nodes, material })
    }

    /// Uniform mesh over [x0, x1], single material.
    pub fn uniform(x0: f64, x1: f64, n_elems: usize) -> Result<Self> {
        if n_elems == 0 || !(x1 > x0) {
            return Err(Error::invalid("uniform mesh needs n >= 1 and x1 > x0"));
        }
        let nodes = (0..=n_elems)
            .map(|i| x0 + (x1 - x0) * i as f64 / n_elems as f64)
            .collect();
        Mesh1D::new(nodes, vec![0; n_elems])
    }

    /// Replace per-element material ids, e.g. from region definitions.
    pub fn with_materials(mut self, material: Vec<usize>) -> Result<Self> {
        if material.len() != self.n_elems() {
            return Err(Error::invalid("one material id required per element"));
        }
        self.material = material;
        Ok(self)
    }

    pub fn n_elems(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_elems()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn material_of(&self, e: usize) -> usize {
        self.material[e]
    }

    pub fn x_left(&self, e: usize) -> f64 {
        self.nodes[e]
    }

    pub fn x_right(&self, e: usize) -> f64 {
        self.nodes[e + 1]
    }

    pub fn h(&self, e: usize) -> f64 {
        self.nodes[e + 1] - self.nodes[e]
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    /// Element containing x; a point on a shared node belongs to the left
    /// element. x must lie inside the domain up to roundoff slack.
    pub fn element_of(&self, x: f64) -> Result<usize> {
        let (x0, x1) = self.domain();
        let slack = 1e-12 * (x1 - x0);
        if x < x0 - slack || x > x1 + slack {
            return Err(Error::invalid(format!("point {x} outside mesh domain [{x0}, {x1}]")));
        }
        let pp = self.nodes.partition_point(|&n| n < x);
        Ok(pp.saturating_sub(1).min(self.n_elems() - 1))
    }
}

/// Piecewise-linear discontinuous field: two endpoint values per element,
/// stored left-then-right in element order.
#[derive(Debug, Clone)]
pub struct DGField {
    mesh: Arc<Mesh1D>,
    vals: Vec<f64>,
}

impl DGField {
    pub fn zeros(mesh: Arc<Mesh1D>) -> Self {
        let n = mesh.n_dofs();
        DGField { mesh, vals: vec![0.0; n] }
    }

    pub fn constant(mesh: Arc<Mesh1D>, value: f64) -> Self {
        let n = mesh.n_dofs();
        DGField { mesh, vals: vec![value; n] }
    }

    /// Nodal interpolant: sample f at the element endpoints. This is the
    /// projection induced by the lumped (Gauss-Lobatto) inner product.
    pub fn project(mesh: Arc<Mesh1D>, f: impl Fn(f64) -> f64) -> Self {
        let mut vals = Vec::with_capacity(mesh.n_dofs());
        for e in 0..mesh.n_elems() {
            vals.push(f(mesh.x_left(e)));
            vals.push(f(mesh.x_right(e)));
        }
        DGField { mesh, vals }
    }

    pub fn from_vals(mesh: Arc<Mesh1D>, vals: Vec<f64>) -> Result<Self> {
        if vals.len() != mesh.n_dofs() {
            return Err(Error::invalid("value vector length does not match mesh"));
        }
        Ok(DGField { mesh, vals })
    }

    pub fn mesh(&self) -> &Arc<Mesh1D> {
        &self.mesh
    }

    pub fn left(&self, e: usize) -> f64 {
        self.vals[2 * e]
    }

    pub fn right(&self, e: usize) -> f64 {
        self.vals[2 * e + 1]
    }

    pub fn set(&mut self, e: usize, left: f64, right: f64) {
        self.vals[2 * e] = left;
        self.vals[2 * e + 1] = right;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vals
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn element_average(&self, e: usize) -> f64 {
        0.5 * (self.left(e) + self.right(e))
    }

    /// Jump across interior face f (between elements f and f+1):
    /// left trace minus right trace.
    pub fn jump(&self, f: usize) -> f64 {
        self.right(f) - self.left(f + 1)
    }

    /// Average across interior face f.
    pub fn avg(&self, f: usize) -> f64 {
        0.5 * (self.right(f) + self.left(f + 1))
    }

    /// Linear evaluation at x inside its containing element.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let e = self.mesh.element_of(x)?;
        let xi = ((x - self.mesh.x_left(e)) / self.mesh.h(e)).clamp(0.0, 1.0);
        Ok(self.left(e) * (1.0 - xi) + self.right(e) * xi)
    }

    /// Lumped integral over the domain: sum_e (h/2)(v_left + v_right).
    pub fn lumped_integral(&self) -> f64 {
        (0..self.mesh.n_elems())
            .map(|e| 0.5 * self.mesh.h(e) * (self.left(e) + self.right(e)))
            .sum()
    }

    pub fn axpy(&mut self, alpha: f64, other: &DGField) {
        debug_assert!(Arc::ptr_eq(&self.mesh, &other.mesh));
        for (a, b) in self.vals.iter_mut().zip(&other.vals) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.vals {
            *a *= alpha;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.vals.fill(value);
    }
}

/// Diagonal of the lumped mass operator with nodal coefficient field c:
/// entry (h_e/2) * c at every endpoint dof.
pub fn lumped_mass_diag(coeff: &DGField) -> Vec<f64> {
    let mesh = coeff.mesh();
    let mut diag = Vec::with_capacity(mesh.n_dofs());
    for e in 0..mesh.n_elems() {
        let hw = 0.5 * mesh.h(e);
        diag.push(hw * coeff.left(e));
        diag.push(hw * coeff.right(e));
    }
    diag
}

/// Relative and absolute L2 distance between two fields on meshes covering
/// the same interval. Quadrature runs over the coarser mesh with the
/// three-point Gauss rule; the denominator is the norm of `reference` on the
/// same points.
pub fn l2_error(u: &DGField, reference: &DGField) -> Result<(f64, f64)> {
    let (a0, a1) = u.mesh().domain();
    let (b0, b1) = reference.mesh().domain();
    let span = (a1 - a0).max(b1 - b0);
    if (a0 - b0).abs() > 1e-10 * span || (a1 - b1).abs() > 1e-10 * span {
        return Err(Error::invalid(format!(
            "meshes cover different intervals: [{a0}, {a1}] vs [{b0}, {b1}]"
        )));
    }
    let coarse = if u.mesh().n_elems() <= reference.mesh().n_elems() {
        u.mesh().clone()
    } else {
        reference.mesh().clone()
    };
    let (xi, w) = gauss3();
    let mut num = 0.0;
    let mut den = 0.0;
    for e in 0..coarse.n_elems() {
        let (xl, h) = (coarse.x_left(e), coarse.h(e));
        for (q, wq) in xi.iter().zip(&w) {
            let x = xl + h * q;
            let uv = u.eval(x)?;
            let rv = reference.eval(x)?;
            num += wq * h * (uv - rv) * (uv - rv);
            den += wq * h * rv * rv;
        }
    }
    let abs = num.sqrt();
    let rel = if den > 0.0 { abs / den.sqrt() } else { abs };
    Ok((abs, rel))
}
