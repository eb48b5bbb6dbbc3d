//! Text artifacts written by the command-line driver: per-snapshot CSVs,
//! a probe trace, a per-step table, a structured run summary, and the
//! reference-solution file used by convergence studies.
//!
//! Everything is plain text. Floats are written with Rust's shortest
//! round-trip formatting, so re-reading a file reproduces the original
//! bits exactly; wall-clock timings live in their own file so the rest of
//! the output directory is reproducible byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::bench::Reference;
use crate::driver::{RunResult, Snapshot, TimeStepReport};
use crate::error::{Error, Result};
use crate::fem1d::{DGField, Mesh1D};

/// Shortest decimal representation that parses back to the same f64.
fn full(x: f64) -> String {
    format!("{x:e}")
}

pub const SNAPSHOT_HEADER: &str =
    "x_left,x_right,T_left,T_right,E_left,E_right,F_left,F_right";

/// One row per element: element bounds and the left/right trace values of
/// temperature, radiation energy density, and flux.
pub fn snapshot_csv(snap: &Snapshot) -> String {
    let mesh = snap.t.mesh();
    let mut out = String::new();
    out.push_str(SNAPSHOT_HEADER);
    out.push('\n');
    for e in 0..mesh.n_elems() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            full(mesh.x_left(e)),
            full(mesh.x_right(e)),
            full(snap.t.left(e)),
            full(snap.t.right(e)),
            full(snap.e.left(e)),
            full(snap.e.right(e)),
            full(snap.f.left(e)),
            full(snap.f.right(e)),
        );
    }
    out
}

pub fn write_snapshot_csv(path: &Path, snap: &Snapshot) -> Result<()> {
    std::fs::write(path, snapshot_csv(snap))?;
    Ok(())
}

/// Parse a snapshot CSV back into rows of eight columns.
pub fn read_snapshot_csv(path: &Path) -> Result<Vec<[f64; 8]>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SNAPSHOT_HEADER => {}
        other => {
            return Err(Error::invalid(format!(
                "{}: expected snapshot header, found {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let mut row = [0.0; 8];
        let mut cols = 0;
        for (i, cell) in line.split(',').enumerate() {
            if i >= 8 {
                cols = i + 1;
                break;
            }
            row[i] = cell.parse::<f64>().map_err(|e| {
                Error::invalid(format!("{} line {}: {e}", path.display(), k + 2))
            })?;
            cols = i + 1;
        }
        if cols != 8 {
            return Err(Error::invalid(format!(
                "{} line {}: expected 8 columns, found {cols}",
                path.display(),
                k + 2
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Probe trace: one row per completed step (plus the initial state), with
/// temperature and energy-density columns for every probe position. With no
/// sampled rows this is still a valid header-only CSV.
pub fn probes_csv(probes: &[f64], rows: &[(f64, Vec<f64>, Vec<f64>)]) -> String {
    let mut out = String::from("t");
    for x in probes {
        let _ = write!(out, ",T_at_{x}", x = full(*x));
    }
    for x in probes {
        let _ = write!(out, ",E_at_{x}", x = full(*x));
    }
    out.push('\n');
    for (t, ts, es) in rows {
        out.push_str(&full(*t));
        for v in ts {
            out.push(',');
            out.push_str(&full(*v));
        }
        for v in es {
            out.push(',');
            out.push_str(&full(*v));
        }
        out.push('\n');
    }
    out
}

/// Per-step iteration and conservation table. Wall-clock columns are
/// deliberately excluded; see [`Timings`].
pub fn steps_csv(reports: &[TimeStepReport]) -> String {
    let mut out = String::from(
        "step,time,dt,sweeps,outer_iters,inner_iters,linear_iters,\
         fixup_interventions,fixup_energy_added,fixup_source_rate,\
         floor_count,floor_defect_rate,consistency_e,consistency_f,\
         du_mat,du_rad,leakage_rate,emission_mismatch_rate,\
         balance_residual,balance_rel\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            full(r.time),
            full(r.dt),
            r.sweeps,
            r.outer_iters,
            r.inner_iters,
            r.linear_iters,
            r.fixup_interventions,
            full(r.fixup_energy_added),
            full(r.fixup_source_rate),
            r.floor_count,
            full(r.floor_defect_rate),
            full(r.consistency_e),
            full(r.consistency_f),
            full(r.du_mat),
            full(r.du_rad),
            full(r.leakage_rate),
            full(r.emission_mismatch_rate),
            full(r.balance_residual),
            full(r.balance_rel),
        );
    }
    out
}

/// Deterministic run summary: identification, iteration totals, and the
/// worst per-step diagnostics. Contains no wall-clock data.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunSummary {
    pub problem: String,
    pub method: String,
    pub elements: usize,
    pub groups: usize,
    pub sn_order: usize,
    pub final_time: f64,
    pub steps: u64,
    pub total_sweeps: u64,
    pub total_outer_iters: u64,
    pub total_inner_iters: u64,
    pub total_linear_iters: u64,
    pub fixup_interventions: u64,
    pub floor_count: u64,
    pub max_consistency_e: f64,
    pub max_consistency_f: f64,
    pub max_balance_rel: f64,
    pub temperature_norm: f64,
    pub energy_norm: f64,
    pub snapshot_times: Vec<f64>,
    pub failure: Option<String>,
}

fn coeff_norm(field: &DGField) -> f64 {
    field.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl RunSummary {
    pub fn new(
        problem: &str,
        method: &str,
        groups: usize,
        sn_order: usize,
        result: &RunResult,
    ) -> Self {
        let r = &result.reports;
        let maxed = |f: fn(&TimeStepReport) -> f64| r.iter().map(f).fold(0.0, f64::max);
        RunSummary {
            problem: problem.to_owned(),
            method: method.to_owned(),
            elements: result.final_state.t.mesh().n_elems(),
            groups,
            sn_order,
            final_time: result.final_state.time,
            steps: result.final_state.step,
            total_sweeps: r.iter().map(|x| x.sweeps).sum(),
            total_outer_iters: r.iter().map(|x| x.outer_iters).sum(),
            total_inner_iters: r.iter().map(|x| x.inner_iters).sum(),
            total_linear_iters: r.iter().map(|x| x.linear_iters).sum(),
            fixup_interventions: r.iter().map(|x| x.fixup_interventions).sum(),
            floor_count: r.iter().map(|x| x.floor_count).sum(),
            max_consistency_e: maxed(|x| x.consistency_e),
            max_consistency_f: maxed(|x| x.consistency_f),
            max_balance_rel: maxed(|x| x.balance_rel),
            temperature_norm: coeff_norm(&result.final_state.t),
            energy_norm: coeff_norm(&result.final_state.e),
            snapshot_times: result.snapshots.iter().map(|s| s.time).collect(),
            failure: result.failure.clone(),
        }
    }
}

/// Wall-clock timings, kept apart from the deterministic artifacts.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Timings {
    pub wall_seconds: f64,
    pub sweep_seconds: f64,
    pub lo_seconds: f64,
}

impl Timings {
    pub fn new(wall_seconds: f64, reports: &[TimeStepReport]) -> Self {
        Timings {
            wall_seconds,
            sweep_seconds: reports.iter().map(|r| r.sweep_seconds).sum(),
            lo_seconds: reports.iter().map(|r| r.lo_seconds).sum(),
        }
    }
}

/// Write the full artifact set for one run into `dir`:
/// `final.csv`, `snapshot_NNN.csv`, `probes.csv`, `steps.csv`,
/// `summary.json`, and (unless suppressed) `timings.json`.
pub fn emit_outputs(
    dir: &Path,
    summary: &RunSummary,
    result: &RunResult,
    probes: &[f64],
    timings: Option<&Timings>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let fin = Snapshot {
        time: result.final_state.time,
        e: result.final_state.e.clone(),
        f: result.final_state.f.clone(),
        t: result.final_state.t.clone(),
    };
    write_snapshot_csv(&dir.join("final.csv"), &fin)?;
    for (k, snap) in result.snapshots.iter().enumerate() {
        write_snapshot_csv(&dir.join(format!("snapshot_{k:03}.csv")), snap)?;
    }
    std::fs::write(dir.join("probes.csv"), probes_csv(probes, &result.probe_rows))?;
    std::fs::write(dir.join("steps.csv"), steps_csv(&result.reports))?;
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::invalid(format!("summary serialization: {e}")))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    if let Some(t) = timings {
        let json = serde_json::to_string_pretty(t)
            .map_err(|e| Error::invalid(format!("timings serialization: {e}")))?;
        std::fs::write(dir.join("timings.json"), json + "\n")?;
    }
    Ok(())
}

const REFERENCE_MAGIC: &str = "reference-solution v1";

/// Store a reference solution verbatim: mesh nodes and the temperature
/// coefficients, one shortest-round-trip value per line.
pub fn write_reference(path: &Path, reference: &Reference) -> Result<()> {
    let mesh = reference.t.mesh();
    let mut out = String::new();
    let _ = writeln!(out, "{REFERENCE_MAGIC}");
    let _ = writeln!(out, "elements {}", reference.elements);
    let _ = writeln!(out, "dt {}", full(reference.dt));
    let _ = writeln!(out, "nodes {}", mesh.nodes().len());
    for x in mesh.nodes() {
        let _ = writeln!(out, "{}", full(*x));
    }
    let _ = writeln!(out, "temperature {}", reference.t.as_slice().len());
    for c in reference.t.as_slice() {
        let _ = writeln!(out, "{}", full(*c));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a reference written by [`write_reference`], reproducing the stored
/// values bit for bit.
pub fn read_reference(path: &Path) -> Result<Reference> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    if lines.next() != Some(REFERENCE_MAGIC) {
        return Err(bad("not a reference-solution file"));
    }
    let mut tagged = |tag: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let rest = line
            .strip_prefix(tag)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(&format!("expected `{tag} <value>`, found `{line}`")))?;
        rest.parse::<usize>().map_err(|e| bad(&format!("{tag}: {e}")))
    };
    let elements = tagged("elements")?;
    let dt_line = lines.next().ok_or_else(|| bad("truncated header"))?;
    let dt = dt_line
        .strip_prefix("dt ")
        .and_then(|r| r.parse::<f64>().ok())
        .ok_or_else(|| bad("malformed dt line"))?;
    let mut tagged2 = |tag: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let rest = line
            .strip_prefix(tag)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| bad(&format!("expected `{tag} <count>`, found `{line}`")))?;
        rest.parse::<usize>().map_err(|e| bad(&format!("{tag}: {e}")))
    };
    let n_nodes = tagged2("nodes")?;
    if n_nodes != elements + 1 {
        return Err(bad("node count does not match element count"));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let line = lines.next().ok_or_else(|| bad("truncated node list"))?;
        nodes.push(line.parse::<f64>().map_err(|e| bad(&format!("node: {e}")))?);
    }
    let line = lines.next().ok_or_else(|| bad("truncated header"))?;
    let n_coeff = line
        .strip_prefix("temperature ")
        .and_then(|r| r.parse::<usize>().ok())
        .ok_or_else(|| bad("malformed temperature count"))?;
    if n_coeff != 2 * elements {
        return Err(bad("coefficient count does not match element count"));
    }
    let mut coeff = Vec::with_capacity(n_coeff);
    for _ in 0..n_coeff {
        let line = lines.next().ok_or_else(|| bad("truncated coefficient list"))?;
        coeff.push(line.parse::<f64>().map_err(|e| bad(&format!("coefficient: {e}")))?);
    }
    let mesh = Arc::new(Mesh1D::new(nodes, vec![0; elements])?);
    let t = DGField::from_vals(mesh, coeff)?;
    Ok(Reference { elements, dt, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::{DGField, Mesh1D};
    use std::sync::Arc;

    fn awkward(i: usize) -> f64 {
        // Values with no short decimal expansion, spanning many magnitudes.
        (1.0 / 3.0) * 10f64.powi(i as i32 * 7 - 21) + 0.1 + 0.2
    }

    fn sample_snapshot(n: usize) -> Snapshot {
        let mesh = Arc::new(Mesh1D::uniform(0.0, 0.05, n).unwrap());
        let mut t = DGField::zeros(mesh.clone());
        let mut e = DGField::zeros(mesh.clone());
        let mut f = DGField::zeros(mesh.clone());
        for (i, v) in t.as_mut_slice().iter_mut().enumerate() {
            *v = awkward(i % 7);
        }
        for (i, v) in e.as_mut_slice().iter_mut().enumerate() {
            *v = awkward((i + 3) % 7) * 137.0;
        }
        for (i, v) in f.as_mut_slice().iter_mut().enumerate() {
            *v = awkward((i + 5) % 7) - 2.0e4;
        }
        Snapshot { time: 0.125, e, f, t }
    }

    #[test]
    fn snapshot_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let snap = sample_snapshot(9);
        let path = dir.path().join("snap.csv");
        write_snapshot_csv(&path, &snap).unwrap();
        let rows = read_snapshot_csv(&path).unwrap();
        assert_eq!(rows.len(), 9);
        let mut norm_in = 0.0;
        let mut norm_out = 0.0;
        for e in 0..9 {
            norm_in += snap.t.left(e).powi(2) + snap.t.right(e).powi(2);
            norm_out += rows[e][2].powi(2) + rows[e][3].powi(2);
            assert_eq!(rows[e][0].to_bits(), snap.t.mesh().x_left(e).to_bits());
            assert_eq!(rows[e][4].to_bits(), snap.e.left(e).to_bits());
            assert_eq!(rows[e][6].to_bits(), snap.f.left(e).to_bits());
        }
        let rel = (norm_in.sqrt() - norm_out.sqrt()).abs() / norm_in.sqrt();
        assert!(rel <= 1e-12, "norm drift {rel}");
    }

    #[test]
    fn malformed_snapshot_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, format!("{SNAPSHOT_HEADER}\n1,2,3\n")).unwrap();
        let err = read_snapshot_csv(&path).unwrap_err().to_string();
        assert!(err.contains("expected 8 columns"), "got: {err}");
        std::fs::write(&path, "x_left,wrong\n").unwrap();
        assert!(read_snapshot_csv(&path).is_err());
    }

    #[test]
    fn probes_csv_is_header_only_without_rows() {
        let text = probes_csv(&[0.01, 0.02], &[]);
        assert_eq!(text, "t,T_at_1e-2,T_at_2e-2,E_at_1e-2,E_at_2e-2\n");
        let filled = probes_csv(&[0.01], &[(0.0, vec![1.5], vec![2.5])]);
        assert_eq!(filled.lines().count(), 2);
    }

    #[test]
    fn reference_file_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Arc::new(Mesh1D::uniform(0.0, 0.05, 6).unwrap());
        let mut t = DGField::zeros(mesh);
        for (i, v) in t.as_mut_slice().iter_mut().enumerate() {
            *v = awkward(i % 7) * 997.0;
        }
        let reference = Reference { elements: 6, dt: 2.5e-4, t };
        let path = dir.path().join("reference.txt");
        write_reference(&path, &reference).unwrap();
        let back = read_reference(&path).unwrap();
        assert_eq!(back.elements, 6);
        assert_eq!(back.dt.to_bits(), reference.dt.to_bits());
        for (a, b) in back.t.as_slice().iter().zip(reference.t.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in back.t.mesh().nodes().iter().zip(reference.t.mesh().nodes()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn corrupt_reference_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.txt");
        std::fs::write(&path, "something else\n").unwrap();
        let err = read_reference(&path).unwrap_err().to_string();
        assert!(err.contains("not a reference-solution file"), "got: {err}");
        std::fs::write(&path, format!("{REFERENCE_MAGIC}\nelements 4\ndt 0.1\nnodes 3\n"))
            .unwrap();
        assert!(read_reference(&path).is_err());
    }
}
