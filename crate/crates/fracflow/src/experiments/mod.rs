//! Experiment driver: scenario files, run matrices over schemes and
//! grid levels, error metrics, and CSV/field reports.
//!
//! A scenario always produces a fine-grid coupled run first; it is the
//! reference every fine decoupled run is measured against. When a
//! coarse level is requested, the fine coupled trajectory is averaged
//! onto the coarse cells and all coarse runs (the coupled one included)
//! are measured against that averaged reference.

mod report;
mod scenario;

pub use report::{
    dump_fields, error_series, summary_rows, write_error_table, write_summary, ErrorSeries,
    NormKind, SummaryRow,
};
pub use scenario::{
    bundled_fracture_network, make_bundled_scenarios, BuiltScenario, CoarseSpec, ContinuumEntry,
    CouplingEntry, GridSpec, KindSpec, Scenario, SolverSpec, WellEntry,
};

use std::fmt;
use std::path::PathBuf;

use crate::assembly::AssemblyError;
use crate::geometry::GeometryError;
use crate::nlmc::{
    assemble_coarse, average_fine_to_coarse, basis_cache_key, load_bases, run_coarse, save_bases,
    solve_all_bases, CoarseGrid, NlmcError,
};
use crate::timestepping::{run, SchemeKind, SolverConfig, TimesteppingError};

#[derive(Debug)]
pub enum ExperimentError {
    /// Bad scenario or option values.
    Config(String),
    /// File system failure with the path involved.
    Io { path: String, message: String },
    /// The reference trajectory vanished at a step, so a relative
    /// error is undefined there.
    ZeroReference { step: usize },
    Geometry(GeometryError),
    Assembly(AssemblyError),
    Stepping(TimesteppingError),
    Nlmc(NlmcError),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::Config(m) => write!(f, "configuration error: {m}"),
            ExperimentError::Io { path, message } => write!(f, "io error on {path}: {message}"),
            ExperimentError::ZeroReference { step } => {
                write!(f, "reference trajectory is zero at step {step}")
            }
            ExperimentError::Geometry(e) => write!(f, "geometry: {e}"),
            ExperimentError::Assembly(e) => write!(f, "assembly: {e}"),
            ExperimentError::Stepping(e) => write!(f, "time stepping: {e}"),
            ExperimentError::Nlmc(e) => write!(f, "coarse space: {e}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<GeometryError> for ExperimentError {
    fn from(e: GeometryError) -> Self {
        ExperimentError::Geometry(e)
    }
}

impl From<AssemblyError> for ExperimentError {
    fn from(e: AssemblyError) -> Self {
        ExperimentError::Assembly(e)
    }
}

impl From<TimesteppingError> for ExperimentError {
    fn from(e: TimesteppingError) -> Self {
        ExperimentError::Stepping(e)
    }
}

impl From<NlmcError> for ExperimentError {
    fn from(e: NlmcError) -> Self {
        ExperimentError::Nlmc(e)
    }
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 1 for solver
    /// and metric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Io { .. }
            | ExperimentError::Geometry(_)
            | ExperimentError::Assembly(_) => 2,
            ExperimentError::ZeroReference { .. }
            | ExperimentError::Stepping(_)
            | ExperimentError::Nlmc(_) => 1,
        }
    }
}

/// Caps the worker pool from the FRACFLOW_THREADS environment
/// variable. A no-op when the variable is unset, unparsable, or the
/// pool is already running.
pub fn init_thread_pool() {
    if let Ok(raw) = std::env::var("FRACFLOW_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Options layered over a scenario by the caller.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Replaces the scenario's scheme list.
    pub schemes: Option<Vec<SchemeKind>>,
    /// Run the coarse level when the scenario declares one.
    pub include_coarse: bool,
    /// Dump fields every this many steps (plus the final step); 0
    /// disables dumps.
    pub dump_every: usize,
    /// Replaces the scenario's output directory.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            schemes: None,
            include_coarse: true,
            dump_every: 0,
            output_dir: None,
        }
    }
}

/// One finished run: the record plus its error series against the
/// level's reference. The fine coupled run is the reference itself and
/// carries no errors.
pub struct SchemeOutcome {
    pub scheme: SchemeKind,
    pub record: crate::timestepping::RunRecord,
    pub errors: Option<ErrorSeries>,
    pub weighted_errors: Option<ErrorSeries>,
}

impl SchemeOutcome {
    pub fn final_error_percent(&self) -> Option<f64> {
        self.errors.as_ref().map(ErrorSeries::final_percent)
    }
}

/// All runs of one grid level.
pub struct LevelReport {
    pub label: String,
    pub n_dofs: usize,
    pub runs: Vec<SchemeOutcome>,
}

/// Everything run_scenario produced, with the list of files written.
pub struct ScenarioReport {
    pub output_dir: PathBuf,
    pub fine: LevelReport,
    pub coarse: Option<LevelReport>,
    pub files: Vec<PathBuf>,
}

fn dump_steps(n_steps: usize, every: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=n_steps).step_by(every.max(1)).collect();
    if steps.last() != Some(&n_steps) {
        steps.push(n_steps);
    }
    steps
}

/// Runs the full experiment a scenario describes: fine-grid runs for
/// every requested scheme against the fine coupled reference, the
/// optional coarse level against the averaged reference, CSV tables,
/// and field dumps.
pub fn run_scenario(
    scenario: &Scenario,
    options: &RunOptions,
) -> Result<ScenarioReport, ExperimentError> {
    scenario.validate()?;
    let built = scenario.build()?;
    let system = &built.system;
    let config = SolverConfig {
        tolerance: scenario.solver.tolerance,
        max_iterations_factor: scenario.solver.max_iterations_factor,
    };
    let schemes = match &options.schemes {
        Some(list) if list.is_empty() => {
            return Err(ExperimentError::Config("empty scheme selection".into()))
        }
        Some(list) => {
            let mut out: Vec<SchemeKind> = Vec::new();
            for &k in list {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
            out
        }
        None => scenario.scheme_kinds(),
    };
    let out_dir = options
        .output_dir
        .clone()
        .unwrap_or_else(|| scenario.resolve(&scenario.output_dir));
    std::fs::create_dir_all(&out_dir).map_err(|e| ExperimentError::Io {
        path: out_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = Vec::new();

    // Fine level. The coupled run is always needed as the reference.
    let coupled_record = run(
        system,
        SchemeKind::Coupled,
        scenario.tau,
        scenario.n_steps,
        config,
        None,
    )?;
    let mut decoupled_runs: Vec<SchemeOutcome> = Vec::new();
    for &kind in schemes.iter().filter(|&&k| k != SchemeKind::Coupled) {
        let record = run(
            system,
            kind,
            scenario.tau,
            scenario.n_steps,
            config,
            Some(&coupled_record.trajectory),
        )?;
        let errors = error_series(&coupled_record.trajectory, &record.trajectory, None)?;
        let weighted_errors = if scenario.weighted_norm {
            Some(error_series(
                &coupled_record.trajectory,
                &record.trajectory,
                Some(system.measures()),
            )?)
        } else {
            None
        };
        decoupled_runs.push(SchemeOutcome {
            scheme: kind,
            record,
            errors: Some(errors),
            weighted_errors,
        });
    }

    // Coarse level against the averaged fine coupled reference.
    let coarse_level = match (&scenario.coarse, options.include_coarse) {
        (Some(cs), true) => {
            let coarse = CoarseGrid::build(system, cs.nx, cs.ny, cs.m)?;
            let bases = match &scenario.basis_cache {
                Some(rel) => {
                    let cache_path = scenario.resolve(rel);
                    let key = basis_cache_key(system, cs.nx, cs.ny, cs.m);
                    match load_bases(&cache_path, &key) {
                        Some(bases) => bases,
                        None => {
                            let bases = solve_all_bases(system, &coarse)?;
                            save_bases(&cache_path, &key, &bases).map_err(|e| {
                                ExperimentError::Io {
                                    path: cache_path.display().to_string(),
                                    message: e.to_string(),
                                }
                            })?;
                            bases
                        }
                    }
                }
                None => solve_all_bases(system, &coarse)?,
            };
            let space = assemble_coarse(system, &coarse, &bases)?;
            let reference: Vec<Vec<f64>> = coupled_record
                .trajectory
                .iter()
                .map(|state| average_fine_to_coarse(&coarse, system, state))
                .collect();
            let mut runs_out: Vec<SchemeOutcome> = Vec::new();
            for &kind in &schemes {
                let record = run_coarse(
                    &space,
                    kind,
                    scenario.tau,
                    scenario.n_steps,
                    config,
                    Some(&reference),
                )?;
                let errors = error_series(&reference, &record.trajectory, None)?;
                let weighted_errors = if scenario.weighted_norm {
                    Some(error_series(
                        &reference,
                        &record.trajectory,
                        Some(space.system().measures()),
                    )?)
                } else {
                    None
                };
                runs_out.push(SchemeOutcome {
                    scheme: kind,
                    record,
                    errors: Some(errors),
                    weighted_errors,
                });
            }
            let label = format!("coarse{}x{}", cs.nx, cs.ny);
            if options.dump_every > 0 {
                let fields_dir = out_dir.join("fields");
                for outcome in &runs_out {
                    for &step in &dump_steps(scenario.n_steps, options.dump_every) {
                        let prefix = format!("{label}_{}", outcome.scheme.label());
                        files.extend(dump_fields(
                            &fields_dir,
                            &prefix,
                            space.system(),
                            &outcome.record.trajectory[step],
                            step,
                        )?);
                    }
                }
            }
            Some(LevelReport {
                label,
                n_dofs: space.system().n_dofs(),
                runs: runs_out,
            })
        }
        _ => None,
    };

    let mut fine_runs = vec![SchemeOutcome {
        scheme: SchemeKind::Coupled,
        record: coupled_record,
        errors: None,
        weighted_errors: None,
    }];
    fine_runs.extend(decoupled_runs);
    // Keep report order aligned with the request: coupled first, then
    // the requested order.
    let fine = LevelReport {
        label: "fine".into(),
        n_dofs: system.n_dofs(),
        runs: fine_runs,
    };

    if options.dump_every > 0 {
        let fields_dir = out_dir.join("fields");
        for outcome in &fine.runs {
            for &step in &dump_steps(scenario.n_steps, options.dump_every) {
                let prefix = format!("fine_{}", outcome.scheme.label());
                files.extend(dump_fields(
                    &fields_dir,
                    &prefix,
                    system,
                    &outcome.record.trajectory[step],
                    step,
                )?);
            }
        }
    }

    // Error tables.
    let fine_columns: Vec<(String, &ErrorSeries)> = fine
        .runs
        .iter()
        .flat_map(|r| {
            let mut cols = Vec::new();
            if let Some(e) = &r.errors {
                cols.push((r.scheme.label().to_string(), e));
            }
            if let Some(e) = &r.weighted_errors {
                cols.push((format!("{}_weighted", r.scheme.label()), e));
            }
            cols
        })
        .collect();
    if !fine_columns.is_empty() {
        let path = out_dir.join("errors_fine.csv");
        write_error_table(&path, scenario.tau, &fine_columns)?;
        files.push(path);
    }
    if let Some(level) = &coarse_level {
        let columns: Vec<(String, &ErrorSeries)> = level
            .runs
            .iter()
            .flat_map(|r| {
                let mut cols = Vec::new();
                if let Some(e) = &r.errors {
                    cols.push((r.scheme.label().to_string(), e));
                }
                if let Some(e) = &r.weighted_errors {
                    cols.push((format!("{}_weighted", r.scheme.label()), e));
                }
                cols
            })
            .collect();
        let path = out_dir.join(format!("errors_{}.csv", level.label));
        write_error_table(&path, scenario.tau, &columns)?;
        files.push(path);
    }

    // Summary table.
    let mut rows: Vec<SummaryRow> = Vec::new();
    for outcome in &fine.runs {
        rows.extend(summary_rows(
            &fine.label,
            &outcome.record,
            outcome.final_error_percent(),
        ));
    }
    if let Some(level) = &coarse_level {
        for outcome in &level.runs {
            rows.extend(summary_rows(
                &level.label,
                &outcome.record,
                outcome.final_error_percent(),
            ));
        }
    }
    let summary_path = out_dir.join("summary.csv");
    write_summary(&summary_path, &rows)?;
    files.push(summary_path);

    Ok(ScenarioReport {
        output_dir: out_dir,
        fine,
        coarse: coarse_level,
        files,
    })
}

/// Outcome of one built-in invariant check.
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<(), String>) -> CheckOutcome {
    match result {
        Ok(()) => CheckOutcome {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

/// Runs the built-in invariant suite on small systems: operator
/// symmetry, conservation, positive semidefiniteness, splitting
/// stability, exact decoupling at zero exchange, and coarse-space
/// consistency.
pub fn run_checks() -> Vec<CheckOutcome> {
    use crate::assembly::{
        assemble_system, AssemblyOptions, ContinuumKind, ContinuumSpec, CouplingGeometry,
        CouplingSpec, WellSpec,
    };
    use crate::geometry::{build_grid, mesh_fractures, FractureNetwork};
    use crate::timestepping::{check_stability_condition, make_split};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    let mut out = Vec::new();

    let grid = match build_grid(10, 10, 0.1) {
        Ok(g) => Arc::new(g),
        Err(e) => {
            out.push(check("grid construction", Err(e.to_string())));
            return out;
        }
    };
    let network = FractureNetwork::from_endpoints(&[
        ((0.15, 0.35), (0.85, 0.45)),
        ((0.45, 0.1), (0.55, 0.9)),
    ]);
    let mesh = match mesh_fractures(&grid, &network) {
        Ok(m) => Arc::new(m),
        Err(e) => {
            out.push(check("fracture meshing", Err(e.to_string())));
            return out;
        }
    };
    let continua = [
        ContinuumSpec { kind: ContinuumKind::Matrix, c: 0.1, k: 1.0, source: 0.0, initial: 1.0 },
        ContinuumSpec { kind: ContinuumKind::Fracture, c: 1.0, k: 1e3, source: 0.0, initial: 1.0 },
    ];
    let coupling = [CouplingSpec {
        pair: (0, 1),
        sigma: 0.9,
        geometry: CouplingGeometry::Embedded,
    }];
    let wells = [WellSpec {
        continuum: 1,
        rect: (0.4, 0.0, 0.6, 0.4),
        rate: 100.0,
        pressure: 1.2,
    }];
    let options = AssemblyOptions::default();
    let system = match assemble_system(&grid, Some(&mesh), &continua, &coupling, &[], &options) {
        Ok(s) => s,
        Err(e) => {
            out.push(check("assembly", Err(e.to_string())));
            return out;
        }
    };
    let a = system.full_matrix();
    let scale = a.inf_norm().max(1.0);

    out.push(check("operator symmetry", {
        let err = a.symmetry_error();
        if err <= 1e-10 * scale {
            Ok(())
        } else {
            Err(format!("symmetry error {err:e} exceeds 1e-10 relative"))
        }
    }));

    out.push(check("zero row sums without wells", {
        let ones = vec![1.0; a.nrows()];
        let sums = a.mul_vec(&ones);
        let worst = sums.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst <= 1e-10 * scale {
            Ok(())
        } else {
            Err(format!("row sum {worst:e} exceeds 1e-10 relative"))
        }
    }));

    out.push(check("positive semidefiniteness", {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..16 {
            let x: Vec<f64> = (0..a.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax = a.mul_vec(&x);
            let quad: f64 = x.iter().zip(&ax).map(|(u, v)| u * v).sum();
            let nx: f64 = x.iter().map(|v| v * v).sum();
            worst = worst.min(quad / (scale * nx));
        }
        if worst >= -1e-10 {
            Ok(())
        } else {
            Err(format!("quadratic form dipped to {worst:e} relative"))
        }
    }));

    out.push(check("well rows balance the well diagonal", {
        match assemble_system(&grid, Some(&mesh), &continua, &coupling, &wells, &options) {
            Ok(sw) => {
                let aw = sw.full_matrix();
                let ones = vec![1.0; aw.nrows()];
                let sums = aw.mul_vec(&ones);
                let worst = sums
                    .iter()
                    .zip(sw.well_diag())
                    .fold(0.0f64, |m, (s, w)| m.max((s - w).abs()));
                if worst <= 1e-10 * aw.inf_norm().max(1.0) {
                    Ok(())
                } else {
                    Err(format!("row sums deviate from well diagonal by {worst:e}"))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    }));

    out.push(check("splitting stability condition", {
        let mut result = Ok(());
        for kind in [
            SchemeKind::DecoupledD,
            SchemeKind::DecoupledL,
            SchemeKind::DecoupledU,
        ] {
            let split = make_split(&system, kind);
            let (ok, estimate) = check_stability_condition(&system, &split);
            if !ok {
                result = Err(format!(
                    "{} split fails the stability estimate ({estimate:e})",
                    kind.label()
                ));
                break;
            }
        }
        result
    }));

    out.push(check("exact decoupling at zero exchange", {
        let zero_coupling = [CouplingSpec {
            pair: (0, 1),
            sigma: 0.0,
            geometry: CouplingGeometry::Embedded,
        }];
        match assemble_system(&grid, Some(&mesh), &continua, &zero_coupling, &[], &options) {
            Ok(sz) => {
                let config = SolverConfig::default();
                let coupled = run(&sz, SchemeKind::Coupled, 0.01, 3, config, None);
                let diag = run(&sz, SchemeKind::DecoupledD, 0.01, 3, config, None);
                match (coupled, diag) {
                    (Ok(c), Ok(d)) => {
                        let worst = c
                            .final_state()
                            .iter()
                            .zip(d.final_state())
                            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                        if worst <= 10.0 * config.tolerance {
                            Ok(())
                        } else {
                            Err(format!("trajectories diverge by {worst:e}"))
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
                }
            }
            Err(e) => Err(e.to_string()),
        }
    }));

    out.push(check("coarse space consistency", {
        match CoarseGrid::build(&system, 5, 5, 1)
            .and_then(|coarse| solve_all_bases(&system, &coarse).map(|b| (coarse, b)))
            .and_then(|(coarse, bases)| assemble_coarse(&system, &coarse, &bases))
        {
            Ok(space) => {
                let ac = space.system().full_matrix();
                let err = ac.symmetry_error();
                if err <= 1e-10 * ac.inf_norm().max(1.0) {
                    Ok(())
                } else {
                    Err(format!("coarse operator symmetry error {err:e}"))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    }));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario(dir: &std::path::Path) -> Scenario {
        std::fs::write(dir.join("net.txt"), "0.1 0.52 0.9 0.52\n0.48 0.1 0.48 0.9\n").unwrap();
        let json = r#"{
            "grid": {"nx": 8, "ny": 8, "h": 0.125},
            "fracture_file": "net.txt",
            "continua": [
                {"kind": "matrix", "c": 0.1, "k": 1.0, "initial": 1.0},
                {"kind": "fracture", "c": 1.0, "k": 100.0, "initial": 1.0}
            ],
            "couplings": [{"pair": [0, 1], "sigma": 1.0}],
            "wells": [
                {"continuum": 1, "rect": [0.0, 0.0, 0.4, 0.6], "rate": 100.0, "pressure": 1.2}
            ],
            "tau": 0.005,
            "n_steps": 4,
            "coarse": {"nx": 4, "ny": 4, "m": 1},
            "output_dir": "out"
        }"#;
        let path = dir.join("case.json");
        std::fs::write(&path, json).unwrap();
        Scenario::load(&path).unwrap()
    }

    #[test]
    fn full_scenario_produces_runs_errors_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = tiny_scenario(dir.path());
        let options = RunOptions { dump_every: 2, ..RunOptions::default() };
        let report = run_scenario(&scenario, &options).unwrap();

        assert_eq!(report.fine.runs.len(), 4);
        assert_eq!(report.fine.runs[0].scheme, SchemeKind::Coupled);
        assert!(report.fine.runs[0].errors.is_none());
        for outcome in &report.fine.runs[1..] {
            let errors = outcome.errors.as_ref().unwrap();
            assert_eq!(errors.percent.len(), 4);
            assert!(errors.percent.iter().all(|e| e.is_finite() && *e >= 0.0));
        }

        let coarse = report.coarse.as_ref().unwrap();
        assert_eq!(coarse.runs.len(), 4);
        assert!(coarse.n_dofs < report.fine.n_dofs);
        for outcome in &coarse.runs {
            assert!(outcome.errors.is_some());
        }

        assert!(report.output_dir.join("errors_fine.csv").is_file());
        assert!(report.output_dir.join("errors_coarse4x4.csv").is_file());
        assert!(report.output_dir.join("summary.csv").is_file());
        // Steps 0, 2, 4 for 4 schemes on 2 levels, 2 continua each.
        let dumps: Vec<_> = report
            .files
            .iter()
            .filter(|p| p.parent().map_or(false, |d| d.ends_with("fields")))
            .collect();
        assert_eq!(dumps.len(), 3 * 4 * 2 * 2);

        let summary = std::fs::read_to_string(report.output_dir.join("summary.csv")).unwrap();
        assert!(summary.contains("fine,coupled,system,"));
        assert!(summary.contains("fine,d,continuum_0,"));
        assert!(summary.contains("coarse4x4,u,total,"));
    }

    #[test]
    fn scheme_filter_still_runs_the_fine_reference() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = tiny_scenario(dir.path());
        let options = RunOptions {
            schemes: Some(vec![SchemeKind::DecoupledU]),
            include_coarse: false,
            ..RunOptions::default()
        };
        let report = run_scenario(&scenario, &options).unwrap();
        assert!(report.coarse.is_none());
        assert_eq!(report.fine.runs.len(), 2);
        assert_eq!(report.fine.runs[0].scheme, SchemeKind::Coupled);
        assert_eq!(report.fine.runs[1].scheme, SchemeKind::DecoupledU);
        assert!(!report.output_dir.join("errors_coarse4x4.csv").exists());
    }

    #[test]
    fn single_step_scenario_produces_one_row_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = tiny_scenario(dir.path());
        scenario.n_steps = 1;
        scenario.coarse = None;
        let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
        let text = std::fs::read_to_string(report.output_dir.join("errors_fine.csv")).unwrap();
        assert_eq!(text.lines().count(), 2, "header plus exactly one step row");
        for outcome in &report.fine.runs[1..] {
            assert_eq!(outcome.errors.as_ref().unwrap().percent.len(), 1);
        }
    }

    #[test]
    fn error_tables_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = tiny_scenario(dir.path());
        let opts_a = RunOptions {
            output_dir: Some(dir.path().join("out_a")),
            ..RunOptions::default()
        };
        let opts_b = RunOptions {
            output_dir: Some(dir.path().join("out_b")),
            ..RunOptions::default()
        };
        run_scenario(&scenario, &opts_a).unwrap();
        run_scenario(&scenario, &opts_b).unwrap();
        for name in ["errors_fine.csv", "errors_coarse4x4.csv"] {
            let a = std::fs::read(dir.path().join("out_a").join(name)).unwrap();
            let b = std::fs::read(dir.path().join("out_b").join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn weighted_norm_flag_adds_weighted_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = tiny_scenario(dir.path());
        scenario.weighted_norm = true;
        scenario.coarse = None;
        let report = run_scenario(&scenario, &RunOptions::default()).unwrap();
        for outcome in &report.fine.runs[1..] {
            assert!(outcome.weighted_errors.is_some());
        }
        let text = std::fs::read_to_string(report.output_dir.join("errors_fine.csv")).unwrap();
        assert!(text.lines().next().unwrap().contains("d_weighted"));
    }

    #[test]
    fn basis_cache_round_trips_through_run_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let mut scenario = tiny_scenario(dir.path());
        scenario.basis_cache = Some("cache/bases.bin".into());
        let report1 = run_scenario(&scenario, &RunOptions::default()).unwrap();
        let cache_path = dir.path().join("cache/bases.bin");
        assert!(cache_path.is_file(), "first run writes the cache");
        let report2 = run_scenario(&scenario, &RunOptions::default()).unwrap();
        let c1 = &report1.coarse.as_ref().unwrap().runs[0];
        let c2 = &report2.coarse.as_ref().unwrap().runs[0];
        assert_eq!(c1.record.trajectory, c2.record.trajectory);
    }

    #[test]
    fn built_in_checks_all_pass() {
        let outcomes = run_checks();
        assert!(outcomes.len() >= 6);
        for outcome in &outcomes {
            assert!(outcome.passed, "{} failed: {}", outcome.name, outcome.detail);
        }
    }
}
