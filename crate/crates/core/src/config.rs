//! Run configuration: a JSON schema with strict validation, resolved into
//! the solver-facing problem, schedule, and tolerance types.
//!
//! Unknown keys are rejected everywhere so a typo cannot silently fall back
//! to a default; parse errors carry the line and column of the offender.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserialize, Deserializer, MapAccess, Visitor};

use crate::bench::{equilibrium_spec, marshak_spec, three_region_spec, ProblemSpec, Region};
use crate::driver::{DtRamp, Method, SolverConfig, StepSchedule, TimeEdgeSource};
use crate::error::{Error, Result};
use crate::opacity::Material;
use crate::solver::LinearSolverKind;
use crate::spectral::GroupStructure;

pub const VALID_METHODS: &[&str] = &["consistent", "independent", "unaccelerated"];
pub const BUILTIN_PROBLEMS: &[&str] = &["marshak", "three_region", "equilibrium"];

/// Top-level run description. `problem` is either the name of a built-in
/// benchmark or an inline [`ProblemConfig`]; everything else tunes how that
/// problem is discretized and solved.
#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemRef,
    /// Iteration scheme; may be overridden from the command line.
    #[serde(default)]
    pub method: Option<String>,
    pub elements: usize,
    /// Nominal time step size, ns.
    pub dt: f64,
    /// Overrides the problem's own final time when set.
    #[serde(default)]
    pub t_final: Option<f64>,
    /// Optional linear ramp from a smaller starting dt over the first steps.
    #[serde(default)]
    pub dt_ramp: Option<RampConfig>,
    /// Times at which the full spatial state is written out.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Positions sampled every step into the probe table.
    #[serde(default)]
    pub probes: Vec<f64>,
    /// Overrides the problem's angular quadrature order when set.
    #[serde(default)]
    pub sn_order: Option<usize>,
    /// "high_order" (default) or "low_order" previous-step source.
    #[serde(default)]
    pub time_edge: Option<String>,
    #[serde(default)]
    pub solver: Option<SolverOverrides>,
    /// Refinement ladders for the `converge` subcommand.
    #[serde(default)]
    pub study: Option<StudyConfig>,
    /// Step sizes swept by the `compare` subcommand.
    #[serde(default)]
    pub compare_dts: Option<Vec<f64>>,
    /// Suppress the wall-clock timing artifact so that repeated runs
    /// produce byte-identical output directories.
    #[serde(default)]
    pub deterministic: bool,
}

/// Either a built-in problem name or a full inline description.
#[derive(Debug, Clone, serde::Serialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Name(String),
    Inline(ProblemConfig),
}

// Hand-rolled so that a malformed inline object reports the actual offending
// field instead of serde's opaque "did not match any variant" message.
impl<'de> Deserialize<'de> for ProblemRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RefVisitor;
        impl<'de> Visitor<'de> for RefVisitor {
            type Value = ProblemRef;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a built-in problem name or an inline problem object")
            }

            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<ProblemRef, E> {
                Ok(ProblemRef::Name(s.to_owned()))
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                map: A,
            ) -> std::result::Result<ProblemRef, A::Error> {
                ProblemConfig::deserialize(de::value::MapAccessDeserializer::new(map))
                    .map(ProblemRef::Inline)
            }
        }
        d.deserialize_any(RefVisitor)
    }
}

/// Inline problem description mirroring the built-in benchmark layout.
#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_problem_name")]
    pub name: String,
    /// Slab extent [x0, x1], cm.
    pub domain: (f64, f64),
    pub regions: Vec<RegionConfig>,
    pub groups: GroupsConfig,
    #[serde(default = "default_sn_order")]
    pub sn_order: usize,
    /// Wall temperatures, eV.
    pub t_left: f64,
    pub t_right: f64,
    pub t_init: f64,
    /// Final time, ns.
    pub t_final: f64,
}

fn default_problem_name() -> String {
    "custom".to_owned()
}

fn default_sn_order() -> usize {
    6
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub x_left: f64,
    pub x_right: f64,
    pub material: Material,
}

/// Frequency group layout: single gray group, logarithmically spaced bands,
/// or explicit bounds in eV.
#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupsConfig {
    Gray { top: f64 },
    LogSpaced { lo: f64, hi: f64, n_groups: usize },
    Bounds(Vec<f64>),
}

impl GroupsConfig {
    pub fn build(&self) -> Result<GroupStructure> {
        match self {
            GroupsConfig::Gray { top } => GroupStructure::gray(*top),
            GroupsConfig::LogSpaced { lo, hi, n_groups } => {
                GroupStructure::log_spaced(*lo, *hi, *n_groups)
            }
            GroupsConfig::Bounds(b) => GroupStructure::new(b.clone()),
        }
    }
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub start_dt: f64,
    pub steps: u64,
}

/// Optional tolerance and iteration-bound overrides; unset fields keep the
/// solver defaults.
#[derive(Debug, Clone, Default, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default)]
    pub outer_tol: Option<f64>,
    #[serde(default)]
    pub unaccelerated_tol: Option<f64>,
    #[serde(default)]
    pub inner_tol: Option<f64>,
    #[serde(default)]
    pub linear_tol: Option<f64>,
    #[serde(default)]
    pub elimination_tol: Option<f64>,
    #[serde(default)]
    pub max_outer: Option<u64>,
    #[serde(default)]
    pub max_inner: Option<u64>,
    /// "pcg" (default) or "banded".
    #[serde(default)]
    pub linear_solver: Option<String>,
}

#[derive(Debug, Clone, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub mesh_ladder: Vec<usize>,
    pub dt_ladder: Vec<f64>,
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, Copy, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub elements: usize,
    pub dt: f64,
}

/// Parse and validate a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a configuration file, prefixing errors with the file name.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_method(name: &str) -> Result<Method> {
    match name {
        "consistent" => Ok(Method::Consistent),
        "independent" => Ok(Method::Independent),
        "unaccelerated" => Ok(Method::Unaccelerated),
        _ => Err(Error::config(format!(
            "unknown method '{name}'; valid methods are {}",
            VALID_METHODS.join(", ")
        ))),
    }
}

fn parse_time_edge(name: &str) -> Result<TimeEdgeSource> {
    match name {
        "high_order" => Ok(TimeEdgeSource::HighOrder),
        "low_order" => Ok(TimeEdgeSource::LowOrder),
        _ => Err(Error::config(format!(
            "unknown time_edge '{name}'; valid choices are high_order, low_order"
        ))),
    }
}

fn parse_linear(name: &str) -> Result<LinearSolverKind> {
    match name {
        "pcg" => Ok(LinearSolverKind::Pcg),
        "banded" => Ok(LinearSolverKind::Banded),
        _ => Err(Error::config(format!(
            "unknown linear_solver '{name}'; valid choices are pcg, banded"
        ))),
    }
}

fn require_positive(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::config(format!("{what} must be positive")));
    }
    Ok(())
}

impl RunConfig {
    /// Structural validation beyond what the schema can express. Resolution
    /// errors (unknown problem name, uncovered mesh elements) surface later
    /// from the builders.
    pub fn validate(&self) -> Result<()> {
        require_positive(self.dt, "dt")?;
        if self.elements == 0 {
            return Err(Error::config("elements must be at least 1"));
        }
        if let Some(m) = &self.method {
            parse_method(m)?;
        }
        if let Some(t) = self.t_final {
            require_positive(t, "t_final")?;
        }
        if let Some(r) = &self.dt_ramp {
            require_positive(r.start_dt, "dt_ramp.start_dt")?;
            if r.start_dt > self.dt {
                return Err(Error::config("dt_ramp.start_dt must not exceed dt"));
            }
        }
        for s in &self.snapshots {
            if !s.is_finite() || *s < 0.0 {
                return Err(Error::config(format!("snapshot time {s} must be nonnegative")));
            }
        }
        for p in &self.probes {
            if !p.is_finite() {
                return Err(Error::config("probe positions must be finite"));
            }
        }
        if let Some(n) = self.sn_order {
            if n == 0 || n % 2 != 0 {
                return Err(Error::config("sn_order must be a positive even number"));
            }
        }
        if let Some(te) = &self.time_edge {
            parse_time_edge(te)?;
        }
        if let Some(s) = &self.solver {
            for (v, name) in [
                (s.outer_tol, "solver.outer_tol"),
                (s.unaccelerated_tol, "solver.unaccelerated_tol"),
                (s.inner_tol, "solver.inner_tol"),
                (s.linear_tol, "solver.linear_tol"),
                (s.elimination_tol, "solver.elimination_tol"),
            ] {
                if let Some(v) = v {
                    require_positive(v, name)?;
                }
            }
            if let Some(l) = &s.linear_solver {
                parse_linear(l)?;
            }
        }
        if let Some(study) = &self.study {
            if study.mesh_ladder.is_empty() || study.dt_ladder.is_empty() {
                return Err(Error::config("study ladders must be nonempty"));
            }
            if study.mesh_ladder.contains(&0) {
                return Err(Error::config("study.mesh_ladder entries must be at least 1"));
            }
            for dt in &study.dt_ladder {
                require_positive(*dt, "study.dt_ladder entries")?;
            }
            require_positive(study.reference.dt, "study.reference.dt")?;
            if study.reference.elements == 0 {
                return Err(Error::config("study.reference.elements must be at least 1"));
            }
        }
        if let Some(dts) = &self.compare_dts {
            if dts.is_empty() {
                return Err(Error::config("compare_dts must be nonempty"));
            }
            for dt in dts {
                require_positive(*dt, "compare_dts entries")?;
            }
        }
        if let ProblemRef::Inline(p) = &self.problem {
            if !(p.domain.0 < p.domain.1) {
                return Err(Error::config("problem domain must satisfy x0 < x1"));
            }
            if p.regions.is_empty() {
                return Err(Error::config("problem needs at least one region"));
            }
            require_positive(p.t_final, "problem t_final")?;
            require_positive(p.t_left, "problem t_left")?;
            require_positive(p.t_right, "problem t_right")?;
            require_positive(p.t_init, "problem t_init")?;
            if p.sn_order == 0 || p.sn_order % 2 != 0 {
                return Err(Error::config("problem sn_order must be a positive even number"));
            }
            for r in &p.regions {
                if !(r.x_left < r.x_right) {
                    return Err(Error::config("region bounds must satisfy x_left < x_right"));
                }
                require_positive(r.material.cv, "region material cv")?;
            }
            p.groups.build()?;
        }
        Ok(())
    }

    /// Resolve the problem reference, applying the `t_final` and `sn_order`
    /// overrides.
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut spec = match &self.problem {
            ProblemRef::Name(name) => match name.as_str() {
                "marshak" => marshak_spec(),
                "three_region" => three_region_spec(),
                "equilibrium" => equilibrium_spec(),
                _ => {
                    return Err(Error::config(format!(
                        "unknown problem '{name}'; built-in problems are {}",
                        BUILTIN_PROBLEMS.join(", ")
                    )))
                }
            },
            ProblemRef::Inline(p) => ProblemSpec {
                name: p.name.clone(),
                domain: p.domain,
                regions: p
                    .regions
                    .iter()
                    .map(|r| Region {
                        x_left: r.x_left,
                        x_right: r.x_right,
                        material: r.material.clone(),
                    })
                    .collect(),
                groups: p.groups.build()?,
                sn_order: p.sn_order,
                t_left: p.t_left,
                t_right: p.t_right,
                t_init: p.t_init,
                t_final: p.t_final,
            },
        };
        if let Some(t) = self.t_final {
            spec.t_final = t;
        }
        if let Some(n) = self.sn_order {
            spec.sn_order = n;
        }
        Ok(spec)
    }

    /// Assemble the solver configuration. Fails when no method was chosen
    /// either here or on the command line.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let method = match &self.method {
            Some(m) => parse_method(m)?,
            None => {
                return Err(Error::config(format!(
                    "no method selected; set \"method\" in the config or pass --method \
                     (valid methods are {})",
                    VALID_METHODS.join(", ")
                )))
            }
        };
        let mut cfg = SolverConfig { method, ..SolverConfig::default() };
        if let Some(te) = &self.time_edge {
            cfg.time_edge = parse_time_edge(te)?;
        }
        if let Some(s) = &self.solver {
            if let Some(v) = s.outer_tol {
                cfg.outer_tol = v;
            }
            if let Some(v) = s.unaccelerated_tol {
                cfg.unaccelerated_tol = v;
            }
            if let Some(v) = s.inner_tol {
                cfg.inner.tol = v;
            }
            if let Some(v) = s.linear_tol {
                cfg.inner.linear_tol = v;
            }
            if let Some(v) = s.elimination_tol {
                cfg.inner.elimination_tol = v;
            }
            if let Some(v) = s.max_outer {
                cfg.max_outer = v;
            }
            if let Some(v) = s.max_inner {
                cfg.inner.max_inner = v;
            }
            if let Some(l) = &s.linear_solver {
                cfg.inner.linear = parse_linear(l)?;
            }
        }
        Ok(cfg)
    }

    /// Time stepping schedule for the resolved problem.
    pub fn schedule(&self, spec: &ProblemSpec) -> StepSchedule {
        StepSchedule {
            dt: self.dt,
            t_final: self.t_final.unwrap_or(spec.t_final),
            ramp: self.dt_ramp.as_ref().map(|r| DtRamp { start_dt: r.start_dt, steps: r.steps }),
        }
    }
}
