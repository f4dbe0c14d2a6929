//! Error metrics and report files: per-step relative error series,
//! CSV tables, and plain-text field dumps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assembly::{ContinuumMesh, MulticontinuumSystem};
use crate::timestepping::RunRecord;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Plain Euclidean norm of the dof vector.
    Euclidean,
    /// Cell-measure weighted norm, sqrt(sum w_i v_i^2).
    MeasureWeighted,
}

impl NormKind {
    pub fn label(&self) -> &'static str {
        match self {
            NormKind::Euclidean => "euclidean",
            NormKind::MeasureWeighted => "weighted",
        }
    }
}

/// Relative errors of a trajectory against a reference, in percent,
/// one entry per time step 1..=N. Both trajectories share the initial
/// state, so step 0 is omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub norm: NormKind,
    pub percent: Vec<f64>,
}

impl ErrorSeries {
    pub fn final_percent(&self) -> f64 {
        self.percent.last().copied().unwrap_or(0.0)
    }
}

/// Computes 100 * ||p^n - r^n|| / ||r^n|| for every step n >= 1. With
/// `weights` the norm is the weighted Euclidean norm; the weights are
/// cell measures in the intended use.
pub fn error_series(
    reference: &[Vec<f64>],
    candidate: &[Vec<f64>],
    weights: Option<&[f64]>,
) -> Result<ErrorSeries, ExperimentError> {
    if reference.len() != candidate.len() {
        return Err(ExperimentError::Config(format!(
            "trajectory length mismatch: reference has {} states, candidate {}",
            reference.len(),
            candidate.len()
        )));
    }
    if reference.is_empty() {
        return Err(ExperimentError::Config(
            "cannot compare empty trajectories".into(),
        ));
    }
    let mut percent = Vec::with_capacity(reference.len() - 1);
    for (n, (r, c)) in reference.iter().zip(candidate).enumerate().skip(1) {
        if r.len() != c.len() {
            return Err(ExperimentError::Config(format!(
                "state length mismatch at step {n}: {} vs {}",
                r.len(),
                c.len()
            )));
        }
        if let Some(w) = weights {
            if w.len() != r.len() {
                return Err(ExperimentError::Config(format!(
                    "weight vector has length {}, states have {}",
                    w.len(),
                    r.len()
                )));
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..r.len() {
            let w = weights.map_or(1.0, |w| w[i]);
            let d = c[i] - r[i];
            num += w * d * d;
            den += w * r[i] * r[i];
        }
        if den == 0.0 {
            return Err(ExperimentError::ZeroReference { step: n });
        }
        percent.push(100.0 * (num / den).sqrt());
    }
    Ok(ErrorSeries {
        norm: if weights.is_some() {
            NormKind::MeasureWeighted
        } else {
            NormKind::Euclidean
        },
        percent,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ExperimentError::Io {
                path: parent.display().to_string(),
                message: e.to_string(),
            })?;
        }
    }
    std::fs::write(path, content).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes a per-step error table: one row per time step, one column per
/// labelled series. All series must have the same length.
pub fn write_error_table(
    path: &Path,
    tau: f64,
    columns: &[(String, &ErrorSeries)],
) -> Result<(), ExperimentError> {
    let mut out = String::from("step,time");
    for (label, _) in columns {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let n_steps = columns.first().map_or(0, |(_, s)| s.percent.len());
    for (label, series) in columns {
        if series.percent.len() != n_steps {
            return Err(ExperimentError::Config(format!(
                "error series {label:?} has {} steps, expected {n_steps}",
                series.percent.len()
            )));
        }
    }
    for n in 1..=n_steps {
        let _ = write!(out, "{},{}", n, n as f64 * tau);
        for (_, series) in columns {
            let _ = write!(out, ",{}", series.percent[n - 1]);
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// One row of the run summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub level: String,
    pub scheme: &'static str,
    /// "system", "continuum_0", ..., or "total".
    pub target: String,
    pub solves: usize,
    pub avg_iterations: f64,
    pub seconds: f64,
    pub final_error_percent: Option<f64>,
}

/// Builds the summary rows for one run: one row per solve target with
/// solver wall time, then a "total" row carrying the whole-run wall
/// time and the final error.
pub fn summary_rows(
    level: &str,
    record: &RunRecord,
    final_error_percent: Option<f64>,
) -> Vec<SummaryRow> {
    let stats = record.target_stats();
    let mut rows: Vec<SummaryRow> = stats
        .iter()
        .map(|s| SummaryRow {
            level: level.to_string(),
            scheme: record.kind.label(),
            target: s.target.to_string().replace(' ', "_"),
            solves: s.solves,
            avg_iterations: s.avg_iterations(),
            seconds: s.seconds,
            final_error_percent: None,
        })
        .collect();
    let total_solves: usize = stats.iter().map(|s| s.solves).sum();
    let total_iterations: usize = stats.iter().map(|s| s.total_iterations).sum();
    rows.push(SummaryRow {
        level: level.to_string(),
        scheme: record.kind.label(),
        target: "total".into(),
        solves: total_solves,
        avg_iterations: if total_solves == 0 {
            0.0
        } else {
            total_iterations as f64 / total_solves as f64
        },
        seconds: record.seconds_total,
        final_error_percent,
    });
    rows
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), ExperimentError> {
    let mut out =
        String::from("level,scheme,target,solves,avg_iterations,seconds,final_error_percent\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.level, r.scheme, r.target, r.solves, r.avg_iterations, r.seconds
        );
        match r.final_error_percent {
            Some(e) => {
                let _ = write!(out, ",{e}");
            }
            None => out.push(','),
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Dumps the state of every continuum at one step. Grid continua go to
/// a legacy VTK structured-points file with cell data; fracture and
/// point-cloud continua go to a midpoint CSV.
pub fn dump_fields(
    dir: &Path,
    prefix: &str,
    system: &MulticontinuumSystem,
    state: &[f64],
    step: usize,
) -> Result<Vec<PathBuf>, ExperimentError> {
    assert_eq!(state.len(), system.n_dofs(), "state length mismatch");
    let mut written = Vec::new();
    for a in 0..system.n_continua() {
        let range = system.range(a);
        let values = &state[range.clone()];
        match system.mesh(a) {
            ContinuumMesh::Matrix(grid) => {
                let mut out = String::new();
                let _ = writeln!(out, "# vtk DataFile Version 3.0");
                let _ = writeln!(out, "pressure continuum {a} step {step}");
                let _ = writeln!(out, "ASCII");
                let _ = writeln!(out, "DATASET STRUCTURED_POINTS");
                let _ = writeln!(out, "DIMENSIONS {} {} 1", grid.nx() + 1, grid.ny() + 1);
                let _ = writeln!(out, "ORIGIN 0 0 0");
                let _ = writeln!(out, "SPACING {} {} {}", grid.h(), grid.h(), grid.h());
                let _ = writeln!(out, "CELL_DATA {}", grid.cell_count());
                let _ = writeln!(out, "SCALARS pressure double 1");
                let _ = writeln!(out, "LOOKUP_TABLE default");
                for v in values {
                    let _ = writeln!(out, "{v}");
                }
                let path = dir.join(format!("{prefix}_c{a}_step{step:04}.vtk"));
                write_file(&path, &out)?;
                written.push(path);
            }
            ContinuumMesh::Fracture(_) | ContinuumMesh::Cloud(_) => {
                let mut out = String::from("x,y,value\n");
                let mids = &system.midpoints()[range];
                for (v, (x, y)) in values.iter().zip(mids) {
                    let _ = writeln!(out, "{x},{y},{v}");
                }
                let path = dir.join(format!("{prefix}_c{a}_step{step:04}.csv"));
                write_file(&path, &out)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
