//! Command-line driver: argument parsing, subcommand dispatch, artifact
//! emission, and exit codes.
//!
//! Exit code 0 means success, 1 a solver failure (a dump of the last good
//! state is still written), and 2 a usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{compare_methods, convergence_study, make_reference};
use crate::config::{load_config, parse_method, RunConfig};
use crate::driver::{run, Method};
use crate::error::{Error, Result};
use crate::output::{
    emit_outputs, read_reference, write_reference, RunSummary, Timings,
};

#[derive(Debug, Parser)]
#[command(
    name = "trt1d",
    about = "Slab-geometry multigroup thermal radiative transfer solver",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write CSV/JSON artifacts.
    Run(CommonArgs),
    /// Mesh and time-step refinement study against a stored reference.
    Converge {
        #[command(flatten)]
        args: CommonArgs,
        /// Reference-solution file (default: <out>/reference.txt).
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compute the fine reference solution used by `converge`.
    Reference {
        #[command(flatten)]
        args: CommonArgs,
        /// Where to store the reference (default: <out>/reference.txt).
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Sweep-count comparison of all three iteration schemes.
    Compare(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (results are independent of this).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    /// Override the iteration scheme from the config.
    #[arg(long)]
    pub method: Option<String>,
    /// Override snapshot times, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<f64>>,
}

/// Parse `argv` and dispatch. Returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Solver(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Run(a) | Command::Compare(a) => a,
        Command::Converge { args, .. } | Command::Reference { args, .. } => args,
    };
    init_threads(common.threads);
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Converge { args, reference } => cmd_converge(args, reference.as_deref()),
        Command::Reference { args, out_file } => cmd_reference(args, out_file.as_deref()),
        Command::Compare(args) => cmd_compare(args),
    }
}

/// Size the global worker pool once, before any parallel region runs. The
/// numerics accumulate in a fixed order, so the result does not depend on
/// the pool size; a pool that already exists is simply kept.
fn init_threads(threads: Option<u32>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global();
    }
}

fn load_with_overrides(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = &args.method {
        parse_method(m)?;
        cfg.method = Some(m.clone());
    }
    if let Some(s) = &args.snapshots {
        cfg.snapshots = s.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let cfg = load_with_overrides(args)?;
    let spec = cfg.problem_spec()?;
    let solver = cfg.solver_config()?;
    let sched = cfg.schedule(&spec);
    let ctx = spec.context(cfg.elements)?;
    let tick = Instant::now();
    let result = run(&ctx, &solver, &sched, &cfg.snapshots, &cfg.probes)?;
    let wall = tick.elapsed().as_secs_f64();
    let summary = RunSummary::new(
        &spec.name,
        solver.method.name(),
        spec.groups.n_groups(),
        spec.sn_order,
        &result,
    );
    let timings = (!cfg.deterministic).then(|| Timings::new(wall, &result.reports));
    emit_outputs(&args.out, &summary, &result, &cfg.probes, timings.as_ref())?;
    match &result.failure {
        Some(f) => Err(Error::solver(format!(
            "{f}; last completed state dumped to {}",
            args.out.display()
        ))),
        None => {
            println!(
                "{}: {} elements, {} steps, {} sweeps -> {}",
                spec.name,
                summary.elements,
                summary.steps,
                summary.total_sweeps,
                args.out.display()
            );
            Ok(())
        }
    }
}

fn cmd_reference(args: &CommonArgs, out_file: Option<&std::path::Path>) -> Result<()> {
    let cfg = load_with_overrides(args)?;
    let spec = cfg.problem_spec()?;
    let study = cfg.study.as_ref().ok_or_else(|| {
        Error::config("config has no \"study\" section; the reference resolution is study.reference")
    })?;
    let solver = cfg.solver_config()?;
    let reference = make_reference(&spec, &solver, study.reference.elements, study.reference.dt)?;
    std::fs::create_dir_all(&args.out)?;
    let path = out_file
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| args.out.join("reference.txt"));
    write_reference(&path, &reference)?;
    println!(
        "reference: {} elements, dt {} -> {}",
        reference.elements,
        reference.dt,
        path.display()
    );
    Ok(())
}

fn cmd_converge(args: &CommonArgs, reference: Option<&std::path::Path>) -> Result<()> {
    let cfg = load_with_overrides(args)?;
    let spec = cfg.problem_spec()?;
    let study_cfg = cfg.study.as_ref().ok_or_else(|| {
        Error::config("config has no \"study\" section with mesh_ladder/dt_ladder/reference")
    })?;
    let solver = cfg.solver_config()?;
    let ref_path = reference
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| args.out.join("reference.txt"));
    if !ref_path.exists() {
        return Err(Error::config(format!(
            "no cached reference at {}; run `trt1d reference --config {} --out {}` first",
            ref_path.display(),
            args.config.display(),
            args.out.display()
        )));
    }
    let reference = read_reference(&ref_path)?;
    let study = convergence_study(
        &spec,
        &solver,
        &study_cfg.mesh_ladder,
        &study_cfg.dt_ladder,
        &reference,
    )?;
    std::fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&study)
        .map_err(|e| Error::invalid(format!("study serialization: {e}")))?;
    std::fs::write(args.out.join("study.json"), json + "\n")?;
    let mut csv = String::from("elements,dt,abs_error,rel_error,converged\n");
    for p in &study.points {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{:e},{}",
            p.elements, p.dt, p.abs_error, p.rel_error, p.converged
        );
    }
    std::fs::write(args.out.join("study.csv"), csv)?;
    println!(
        "{}: spatial order {:?}, temporal order {:?} -> {}",
        spec.name,
        study.spatial_order,
        study.temporal_order,
        args.out.display()
    );
    if !study.failures.is_empty() {
        return Err(Error::solver(format!(
            "{} study point(s) failed; see study.json",
            study.failures.len()
        )));
    }
    Ok(())
}

fn cmd_compare(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_with_overrides(args)?;
    // The comparison always runs all three schemes; the method field only
    // seeds the shared tolerances.
    if cfg.method.is_none() {
        cfg.method = Some("consistent".to_owned());
    }
    let spec = cfg.problem_spec()?;
    let solver = cfg.solver_config()?;
    let dts = cfg.compare_dts.as_ref().ok_or_else(|| {
        Error::config("config has no \"compare_dts\" list of step sizes to compare")
    })?;
    let comparison = compare_methods(&spec, &solver, cfg.elements, dts)?;
    std::fs::create_dir_all(&args.out)?;
    let json = serde_json::to_string_pretty(&comparison)
        .map_err(|e| Error::invalid(format!("comparison serialization: {e}")))?;
    std::fs::write(args.out.join("compare.json"), json + "\n")?;
    let mut csv = String::from("method,dt,total_steps,total_sweeps,failed\n");
    for r in &comparison.runs {
        let _ = writeln!(
            csv,
            "{},{:e},{},{},{}",
            r.method,
            r.dt,
            r.total_steps,
            r.total_sweeps,
            r.failure.is_some()
        );
    }
    std::fs::write(args.out.join("compare.csv"), csv)?;
    for &dt in dts {
        let mut line = format!("dt {dt:e}:");
        for m in [Method::Consistent, Method::Independent] {
            match comparison.sweep_ratio(m, dt) {
                Some(ratio) => {
                    let _ = write!(line, " {} {:.2}x", m.name(), ratio);
                }
                None => {
                    let _ = write!(line, " {} n/a", m.name());
                }
            }
        }
        println!("{line}");
    }
    let failed: Vec<&str> = comparison
        .runs
        .iter()
        .filter(|r| r.failure.is_some())
        .map(|r| r.method)
        .collect();
    if !failed.is_empty() {
        return Err(Error::solver(format!(
            "comparison run(s) failed for {}; see compare.json",
            failed.join(", ")
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run_cli(["trt1d", "frobnicate"]), 2);
        assert_eq!(run_cli(["trt1d", "run"]), 2);
        assert_eq!(run_cli(["trt1d", "run", "--config", "/nonexistent.json"]), 2);
    }

    #[test]
    fn help_exits_clean() {
        assert_eq!(run_cli(["trt1d", "--help"]), 0);
        assert_eq!(run_cli(["trt1d", "run", "--help"]), 0);
    }

    #[test]
    fn invalid_thread_count_is_a_usage_error() {
        assert_eq!(run_cli(["trt1d", "run", "--config", "x.json", "--threads", "0"]), 2);
    }
}
