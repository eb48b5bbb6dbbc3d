//! Benchmark problem definitions, discrete-reference convergence studies,
//! and the method comparison harness.

use std::sync::Arc;
use std::time::Instant;

use crate::driver::{run, Method, ProblemContext, SolverConfig, StepSchedule};
use crate::error::{Error, Result};
use crate::fem1d::{l2_error, DGField, Mesh1D};
use crate::opacity::{Material, MaterialKind};
use crate::quadrature::gauss_legendre_sn;
use crate::spectral::{GroupStructure, SpectralConstants};

/// One contiguous material region of a layered slab.
#[derive(Debug, Clone)]
pub struct Region {
    pub x_left: f64,
    pub x_right: f64,
    pub material: Material,
}

/// A complete physical problem description, independent of resolution.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: (f64, f64),
    pub regions: Vec<Region>,
    pub groups: GroupStructure,
    pub sn_order: usize,
    pub t_left: f64,
    pub t_right: f64,
    pub t_init: f64,
    pub t_final: f64,
}

impl ProblemSpec {
    /// Instantiate on a uniform mesh. Region membership is decided by
    /// element midpoint, so interfaces should line up with mesh nodes for
    /// clean comparisons.
    pub fn context(&self, n_elems: usize) -> Result<ProblemContext> {
        if self.regions.is_empty() {
            return Err(Error::invalid("problem needs at least one region"));
        }
        let mesh0 = Mesh1D::uniform(self.domain.0, self.domain.1, n_elems)?;
        let mut ids = Vec::with_capacity(n_elems);
        for e in 0..n_elems {
            let mid = mesh0.x_left(e) + 0.5 * mesh0.h(e);
            let r = self
                .regions
                .iter()
                .position(|r| mid >= r.x_left && mid <= r.x_right)
                .ok_or_else(|| {
                    Error::invalid(format!("no region covers element midpoint x = {mid}"))
                })?;
            ids.push(r);
        }
        let mesh = Arc::new(mesh0.with_materials(ids)?);
        Ok(ProblemContext {
            mesh,
            materials: self.regions.iter().map(|r| r.material.clone()).collect(),
            groups: self.groups.clone(),
            quad: gauss_legendre_sn(self.sn_order)?,
            consts: SpectralConstants::default(),
            t_left: self.t_left,
            t_right: self.t_right,
            t_init: self.t_init,
        })
    }
}

/// Gray Marshak wave: a cold slab driven by a hot wall on the left,
/// temperature-falling opacity, strongly nonlinear front propagation.
pub fn marshak_spec() -> ProblemSpec {
    ProblemSpec {
        name: "marshak".into(),
        domain: (0.0, 0.05),
        regions: vec![Region {
            x_left: 0.0,
            x_right: 0.05,
            material: Material {
                kind: MaterialKind::PowerLaw { coefficient: 1e12, exponent: -3.0 },
                cv: 3e12,
            },
        }],
        groups: GroupStructure::gray(1e8).expect("static bounds"),
        sn_order: 6,
        t_left: 1000.0,
        t_right: 1.0,
        t_init: 1.0,
        t_final: 2.5,
    }
}

/// Frequency-dependent three-region slab: an optically thick layer
/// sandwiched between two thin ones, driven by a hot wall on the right.
/// The thin material is transparent to the hard part of the drive
/// spectrum, so the inner thick layer heats faster than the thin layer
/// in front of it.
pub fn three_region_spec() -> ProblemSpec {
    let thin = Material { kind: MaterialKind::FreqCubed { strength: 1e9 }, cv: 3e12 };
    let thick = Material { kind: MaterialKind::FreqCubed { strength: 1e12 }, cv: 3e12 };
    ProblemSpec {
        name: "three_region".into(),
        domain: (0.0, 4.0),
        regions: vec![
            Region { x_left: 0.0, x_right: 1.0, material: thin.clone() },
            Region { x_left: 1.0, x_right: 3.0, material: thick },
            Region { x_left: 3.0, x_right: 4.0, material: thin },
        ],
        groups: GroupStructure::log_spaced(1e-2, 3e5, 33).expect("static bounds"),
        sn_order: 6,
        t_left: 1.0,
        t_right: 1000.0,
        t_init: 1.0,
        t_final: 10.0,
    }
}

/// Homogeneous gray slab with both walls pinned at the initial
/// temperature: the exact solution is constant in time.
pub fn equilibrium_spec() -> ProblemSpec {
    ProblemSpec {
        name: "equilibrium".into(),
        domain: (0.0, 1.0),
        regions: vec![Region {
            x_left: 0.0,
            x_right: 1.0,
            material: Material { kind: MaterialKind::Constant { sigma: 50.0 }, cv: 1e12 },
        }],
        groups: GroupStructure::gray(1e8).expect("static bounds"),
        sn_order: 6,
        t_left: 5.0,
        t_right: 5.0,
        t_init: 5.0,
        t_final: 1.0,
    }
}

/// Final-time temperature of a fine run, used as the truth for error norms.
#[derive(Debug, Clone)]
pub struct Reference {
    pub elements: usize,
    pub dt: f64,
    pub t: DGField,
}

pub fn make_reference(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    elements: usize,
    dt: f64,
) -> Result<Reference> {
    let ctx = spec.context(elements)?;
    let sched = StepSchedule { dt, t_final: spec.t_final, ramp: None };
    let out = run(&ctx, cfg, &sched, &[], &[])?;
    if let Some(f) = out.failure {
        return Err(Error::solver(format!("reference run failed: {f}")));
    }
    Ok(Reference { elements, dt, t: out.final_state.t })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StudyPoint {
    pub elements: usize,
    pub dt: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub converged: bool,
}

/// Least-squares slope estimate on a log-log error curve. `Exact` is
/// reported when every error sits at machine level and a slope would be
/// meaningless.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum OrderEstimate {
    Slope(f64),
    Exact,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceStudy {
    pub points: Vec<StudyPoint>,
    pub reference_elements: usize,
    pub reference_dt: f64,
    /// Slope of log error vs log h along the finest-dt row.
    pub spatial_order: OrderEstimate,
    /// Slope of log error vs log dt along the finest-mesh column.
    pub temporal_order: OrderEstimate,
    pub failures: Vec<String>,
}

const EXACT_FLOOR: f64 = 1e-12;

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn order_from(pairs: &[(f64, f64)]) -> OrderEstimate {
    if pairs.iter().all(|(_, e)| *e < EXACT_FLOOR) {
        return OrderEstimate::Exact;
    }
    let xs: Vec<f64> = pairs.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, e)| e.max(1e-300).ln()).collect();
    OrderEstimate::Slope(least_squares_slope(&xs, &ys))
}

/// Run the full (mesh, dt) ladder against a reference and estimate
/// convergence orders. Non-converged members are excluded from the slope
/// fits and reported in `failures`.
pub fn convergence_study(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    mesh_ladder: &[usize],
    dt_ladder: &[f64],
    reference: &Reference,
) -> Result<ConvergenceStudy> {
    if mesh_ladder.is_empty() || dt_ladder.is_empty() {
        return Err(Error::invalid("ladders must be nonempty"));
    }
    let max_m = *mesh_ladder.iter().max().unwrap();
    let min_dt = dt_ladder.iter().cloned().fold(f64::INFINITY, f64::min);
    if reference.elements <= max_m || reference.dt >= min_dt {
        return Err(Error::invalid(
            "reference must be strictly finer than every study point",
        ));
    }

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for &m in mesh_ladder {
        for &dt in dt_ladder {
            let ctx = spec.context(m)?;
            let sched = StepSchedule { dt, t_final: spec.t_final, ramp: None };
            let out = run(&ctx, cfg, &sched, &[], &[])?;
            match out.failure {
                None => {
                    let (abs, rel) = l2_error(&out.final_state.t, &reference.t)?;
                    points.push(StudyPoint { elements: m, dt, abs_error: abs, rel_error: rel, converged: true });
                }
                Some(f) => {
                    failures.push(format!("{m} elements, dt {dt}: {f}"));
                    points.push(StudyPoint {
                        elements: m,
                        dt,
                        abs_error: f64::NAN,
                        rel_error: f64::NAN,
                        converged: false,
                    });
                }
            }
        }
    }

    let spatial: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.converged && p.dt == min_dt)
        .map(|p| ((spec.domain.1 - spec.domain.0) / p.elements as f64, p.abs_error))
        .collect();
    let temporal: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.converged && p.elements == max_m)
        .map(|p| (p.dt, p.abs_error))
        .collect();
    if spatial.len() < 2 || temporal.len() < 2 {
        return Err(Error::solver("too few converged runs to estimate orders"));
    }
    Ok(ConvergenceStudy {
        reference_elements: reference.elements,
        reference_dt: reference.dt,
        spatial_order: order_from(&spatial),
        temporal_order: order_from(&temporal),
        points,
        failures,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodRun {
    pub method: &'static str,
    pub dt: f64,
    pub total_sweeps: u64,
    pub total_steps: u64,
    pub wall_seconds: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MethodComparison {
    pub elements: usize,
    pub runs: Vec<MethodRun>,
}

impl MethodComparison {
    fn lookup(&self, method: Method, dt: f64) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method.name() && r.dt == dt)
    }

    /// Sweeps of the unaccelerated run divided by sweeps of `method`.
    pub fn sweep_ratio(&self, method: Method, dt: f64) -> Option<f64> {
        let base = self.lookup(Method::Unaccelerated, dt)?;
        let run = self.lookup(method, dt)?;
        if base.failure.is_some() || run.failure.is_some() || run.total_sweeps == 0 {
            return None;
        }
        Some(base.total_sweeps as f64 / run.total_sweeps as f64)
    }

    pub fn time_ratio(&self, method: Method, dt: f64) -> Option<f64> {
        let base = self.lookup(Method::Unaccelerated, dt)?;
        let run = self.lookup(method, dt)?;
        if base.failure.is_some() || run.failure.is_some() {
            return None;
        }
        Some(base.wall_seconds / run.wall_seconds)
    }
}

/// Run all three methods over a dt ladder on one mesh and tabulate sweep
/// counts and wall time.
pub fn compare_methods(
    spec: &ProblemSpec,
    base_cfg: &SolverConfig,
    elements: usize,
    dt_ladder: &[f64],
) -> Result<MethodComparison> {
    let mut runs = Vec::new();
    for &dt in dt_ladder {
        for method in [Method::Unaccelerated, Method::Consistent, Method::Independent] {
            let cfg = SolverConfig { method, ..base_cfg.clone() };
            let ctx = spec.context(elements)?;
            let sched = StepSchedule { dt, t_final: spec.t_final, ramp: None };
            let tick = Instant::now();
            let out = run(&ctx, &cfg, &sched, &[], &[])?;
            let wall = tick.elapsed().as_secs_f64();
            runs.push(MethodRun {
                method: method.name(),
                dt,
                total_sweeps: out.reports.iter().map(|r| r.sweeps).sum(),
                total_steps: out.reports.len() as u64,
                wall_seconds: wall,
                failure: out.failure,
            });
        }
    }
    Ok(MethodComparison { elements, runs })
}

/// Midpoint of the leftmost element whose average temperature is below
/// `threshold`, if any. On a left-driven monotone wave this locates the
/// front.
pub fn front_position(t: &DGField, threshold: f64) -> Option<f64> {
    let mesh = t.mesh();
    (0..mesh.n_elems())
        .find(|&e| t.element_average(e) < threshold)
        .map(|e| mesh.x_left(e) + 0.5 * mesh.h(e))
}

pub fn element_averages(t: &DGField) -> Vec<f64> {
    (0..t.mesh().n_elems()).map(|e| t.element_average(e)).collect()
}

/// True when the sequence never rises by more than `tol` relative to the
/// local scale.
pub fn monotone_nonincreasing(vals: &[f64], tol: f64) -> bool {
    vals.windows(2).all(|w| w[1] <= w[0] + tol * w[0].abs().max(1.0))
}

/// Number of elements whose endpoint values rise left to right by more
/// than `tol` relative to the element scale. A left-driven wave computed
/// without oscillation has none.
pub fn rising_slope_count(t: &DGField, tol: f64) -> usize {
    (0..t.mesh().n_elems())
        .filter(|&e| {
            let (l, r) = (t.left(e), t.right(e));
            r > l + tol * l.abs().max(1.0)
        })
        .count()
}
