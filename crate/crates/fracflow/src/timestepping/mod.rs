//! Implicit time integration of the multicontinuum flow system
//! `M dp/dt + A p = F`, either fully coupled or with the continuum
//! coupling split across the time levels so each continuum is solved
//! on its own.
//!
//! A scheme is described by a splitting `A = A0 + A1` over the
//! continuum blocks: blocks in `A0` are taken implicitly (at the new
//! time level) and blocks in `A1` explicitly (at the previous level).
//! The decoupled schemes order the single-continuum solves so that
//! every implicit off-diagonal block multiplies a continuum that has
//! already been updated within the step, which makes each step a
//! sequence of symmetric positive definite solves.

use std::error::Error;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{MulticontinuumSystem, SparseMatrix};
use crate::linalg::{cg_solve, norm2, FactorError, Ilu0, SolveError, SolverReport};

/// Which blocks of the coupling are taken implicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// All blocks implicit; one global solve per step.
    Coupled,
    /// Only diagonal blocks implicit; continua advance independently.
    DecoupledD,
    /// Blocks at or below the diagonal (in the permeability ordering)
    /// implicit; continua solved from lowest to highest permeability.
    DecoupledL,
    /// Blocks at or above the diagonal implicit; continua solved from
    /// highest to lowest permeability.
    DecoupledU,
}

impl SchemeKind {
    /// Short lowercase label used in file names and tables.
    pub fn label(&self) -> &'static str {
        match self {
            SchemeKind::Coupled => "coupled",
            SchemeKind::DecoupledD => "d",
            SchemeKind::DecoupledL => "l",
            SchemeKind::DecoupledU => "u",
        }
    }

    /// Parses a label as accepted on the command line.
    pub fn parse(s: &str) -> Option<SchemeKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coupled" | "c" => Some(SchemeKind::Coupled),
            "d" | "decoupled-d" | "diagonal" => Some(SchemeKind::DecoupledD),
            "l" | "decoupled-l" | "lower" => Some(SchemeKind::DecoupledL),
            "u" | "decoupled-u" | "upper" => Some(SchemeKind::DecoupledU),
            _ => None,
        }
    }

    /// All schemes, in the order used by reports.
    pub fn all() -> [SchemeKind; 4] {
        [
            SchemeKind::Coupled,
            SchemeKind::DecoupledL,
            SchemeKind::DecoupledD,
            SchemeKind::DecoupledU,
        ]
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// What a single linear solve within a step targeted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SolveTarget {
    /// The full coupled system.
    System,
    /// One continuum block, by continuum index.
    Continuum(usize),
}

impl fmt::Display for SolveTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveTarget::System => f.write_str("system"),
            SolveTarget::Continuum(a) => write!(f, "continuum {}", a),
        }
    }
}

/// Splitting of the block operator for one scheme: membership of every
/// block in the implicit part, the per-step solve order, and the two
/// assembled halves.
#[derive(Debug, Clone)]
pub struct SchemeSplit {
    kind: SchemeKind,
    order: Vec<usize>,
    rank: Vec<usize>,
    implicit: Vec<Vec<bool>>,
    a0: SparseMatrix,
    a1: SparseMatrix,
}

impl SchemeSplit {
    /// Scheme this split realizes.
    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    /// Continuum solve order within a step (identity for the coupled
    /// scheme, where the step is a single solve).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Rank of each continuum when sorted by ascending permeability,
    /// ties broken by index.
    pub fn rank(&self) -> &[usize] {
        &self.rank
    }

    /// Whether block (a, b) is taken at the new time level.
    pub fn is_implicit(&self, a: usize, b: usize) -> bool {
        self.implicit[a][b]
    }

    /// Implicit half of the operator.
    pub fn a0(&self) -> &SparseMatrix {
        &self.a0
    }

    /// Explicit half of the operator.
    pub fn a1(&self) -> &SparseMatrix {
        &self.a1
    }
}

/// Errors raised while preparing or running a time integration.
#[derive(Debug)]
pub enum TimesteppingError {
    /// A linear solve failed; the context names the step and target.
    Solve {
        step: usize,
        target: SolveTarget,
        source: SolveError,
    },
    /// Preconditioner setup failed for a block.
    Factor {
        target: SolveTarget,
        source: FactorError,
    },
    /// Invalid configuration.
    InvalidArgument(String),
}

impl fmt::Display for TimesteppingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimesteppingError::Solve {
                step,
                target,
                source,
            } => write!(f, "linear solve for {} failed at step {}: {}", target, step, source),
            TimesteppingError::Factor { target, source } => {
                write!(f, "preconditioner setup for {} failed: {}", target, source)
            }
            TimesteppingError::InvalidArgument(msg) => write!(f, "invalid argument: {}", msg),
        }
    }
}

impl Error for TimesteppingError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            TimesteppingError::Solve { source, .. } => Some(source),
            TimesteppingError::Factor { source, .. } => Some(source),
            TimesteppingError::InvalidArgument(_) => None,
        }
    }
}

/// Iterative solver settings for the time-step systems.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Relative residual tolerance.
    pub tolerance: f64,
    /// Iteration cap as a multiple of the system dimension.
    pub max_iterations_factor: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-8,
            max_iterations_factor: 10,
        }
    }
}

/// Builds the splitting for a scheme on a given system. Continua are
/// ranked by ascending permeability (ties by index); membership of a
/// block in the implicit half depends only on the ranks of its row and
/// column continua.
pub fn make_split(system: &MulticontinuumSystem, kind: SchemeKind) -> SchemeSplit {
    let l = system.n_continua();
    let kvals = system.k_order();
    let mut order_by_k: Vec<usize> = (0..l).collect();
    order_by_k.sort_by(|&a, &b| {
        kvals[a]
            .partial_cmp(&kvals[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; l];
    for (r, &a) in order_by_k.iter().enumerate() {
        rank[a] = r;
    }

    let implicit: Vec<Vec<bool>> = (0..l)
        .map(|a| {
            (0..l)
                .map(|b| match kind {
                    SchemeKind::Coupled => true,
                    SchemeKind::DecoupledD => a == b,
                    SchemeKind::DecoupledL => rank[a] >= rank[b],
                    SchemeKind::DecoupledU => rank[a] <= rank[b],
                })
                .collect()
        })
        .collect();

    let order: Vec<usize> = match kind {
        SchemeKind::Coupled | SchemeKind::DecoupledD => (0..l).collect(),
        SchemeKind::DecoupledL => order_by_k.clone(),
        SchemeKind::DecoupledU => order_by_k.iter().rev().copied().collect(),
    };

    let n = system.n_dofs();
    let mut a0 = SparseMatrix::zeros(n, n);
    let mut a1 = SparseMatrix::zeros(n, n);
    for a in 0..l {
        for b in 0..l {
            let block = system.block(a, b);
            if block.nnz() == 0 {
                continue;
            }
            let embedded = block.embed(n, n, system.offset(a), system.offset(b));
            if implicit[a][b] {
                a0 = a0.add_scaled(&embedded, 1.0);
            } else {
                a1 = a1.add_scaled(&embedded, 1.0);
            }
        }
    }

    SchemeSplit {
        kind,
        order,
        rank,
        implicit,
        a0,
        a1,
    }
}

/// Record of a completed run: trajectory, operator norms, solver
/// statistics, and optional per-step errors against a reference.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Scheme that produced the run.
    pub kind: SchemeKind,
    /// Time-step size.
    pub tau: f64,
    /// Number of steps taken.
    pub n_steps: usize,
    /// States p^0 .. p^N.
    pub trajectory: Vec<Vec<f64>>,
    /// Energy seminorm sqrt(p' A p) of every state.
    pub a_norms: Vec<f64>,
    /// Solver reports per step, in solve order within the step.
    pub step_reports: Vec<Vec<(SolveTarget, SolverReport)>>,
    /// Wall time of the whole run in seconds.
    pub seconds_total: f64,
    /// Per-step relative errors in percent against the reference
    /// trajectory, for steps 1..N.
    pub errors_percent: Option<Vec<f64>>,
}

/// Aggregate solver statistics for one solve target across a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetStats {
    pub target: SolveTarget,
    pub solves: usize,
    pub total_iterations: usize,
    pub seconds: f64,
}

impl TargetStats {
    /// Mean iterations per solve.
    pub fn avg_iterations(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.total_iterations as f64 / self.solves as f64
        }
    }
}

impl RunRecord {
    /// Final state of the run.
    pub fn final_state(&self) -> &[f64] {
        self.trajectory.last().expect("run keeps at least the initial state")
    }

    /// Solver statistics grouped by solve target, in target order.
    pub fn target_stats(&self) -> Vec<TargetStats> {
        let mut stats: Vec<TargetStats> = Vec::new();
        for step in &self.step_reports {
            for (target, report) in step {
                match stats.iter_mut().find(|s| s.target == *target) {
                    Some(s) => {
                        s.solves += 1;
                        s.total_iterations += report.iterations;
                        s.seconds += report.seconds;
                    }
                    None => stats.push(TargetStats {
                        target: *target,
                        solves: 1,
                        total_iterations: report.iterations,
                        seconds: report.seconds,
                    }),
                }
            }
        }
        stats.sort_by_key(|s| s.target);
        stats
    }

    /// Whether the energy seminorm is non-increasing along the run, up
    /// to a relative slack on the initial norm.
    pub fn a_norm_monotone(&self, relative_slack: f64) -> bool {
        let scale = self.a_norms.first().copied().unwrap_or(0.0);
        self.a_norms
            .windows(2)
            .all(|w| w[1] <= w[0] + relative_slack * scale)
    }
}

struct BlockSolver {
    target: SolveTarget,
    matrix: SparseMatrix,
    precond: Ilu0,
    max_iterations: usize,
}

/// Prepared stepper: per-run factorizations and block references, so a
/// run factors each time-step matrix once.
struct Stepper<'a> {
    system: &'a MulticontinuumSystem,
    split: &'a SchemeSplit,
    tau: f64,
    config: SolverConfig,
    solvers: Vec<BlockSolver>,
    rhs_constant: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(
        system: &'a MulticontinuumSystem,
        split: &'a SchemeSplit,
        tau: f64,
        config: SolverConfig,
    ) -> Result<Self, TimesteppingError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(TimesteppingError::InvalidArgument(format!(
                "time-step size must be positive and finite, got {}",
                tau
            )));
        }
        let mass = system.mass_diag();
        let mut solvers = Vec::new();
        match split.kind() {
            SchemeKind::Coupled => {
                let n = system.n_dofs();
                let mass_over_tau: Vec<f64> = mass.iter().map(|&v| v / tau).collect();
                let m = system
                    .full_matrix()
                    .add_scaled(&SparseMatrix::from_diag(&mass_over_tau), 1.0);
                let precond = Ilu0::factor(&m).map_err(|source| TimesteppingError::Factor {
                    target: SolveTarget::System,
                    source,
                })?;
                solvers.push(BlockSolver {
                    target: SolveTarget::System,
                    matrix: m,
                    precond,
                    max_iterations: config.max_iterations_factor.max(1) * n,
                });
            }
            _ => {
                for &a in split.order() {
                    let r = system.range(a);
                    let (lo, hi) = (r.start, r.end);
                    let n_a = hi - lo;
                    let mass_over_tau: Vec<f64> = mass[lo..hi].iter().map(|&v| v / tau).collect();
                    let m = system
                        .block(a, a)
                        .add_scaled(&SparseMatrix::from_diag(&mass_over_tau), 1.0);
                    let precond = Ilu0::factor(&m).map_err(|source| TimesteppingError::Factor {
                        target: SolveTarget::Continuum(a),
                        source,
                    })?;
                    solvers.push(BlockSolver {
                        target: SolveTarget::Continuum(a),
                        matrix: m,
                        precond,
                        max_iterations: config.max_iterations_factor.max(1) * n_a,
                    });
                }
            }
        }
        Ok(Stepper {
            system,
            split,
            tau,
            config,
            solvers,
            rhs_constant: system.rhs(),
        })
    }

    /// Advances one step from `p_prev`, writing solver reports for the
    /// solves performed.
    fn advance(
        &self,
        step: usize,
        p_prev: &[f64],
        reports: &mut Vec<(SolveTarget, SolverReport)>,
    ) -> Result<Vec<f64>, TimesteppingError> {
        let system = self.system;
        let mass = system.mass_diag();
        match self.split.kind() {
            SchemeKind::Coupled => {
                let solver = &self.solvers[0];
                let n = system.n_dofs();
                let mut rhs = self.rhs_constant.clone();
                for i in 0..n {
                    rhs[i] += mass[i] / self.tau * p_prev[i];
                }
                let (x, report) = cg_solve(
                    &solver.matrix,
                    &rhs,
                    p_prev,
                    self.config.tolerance,
                    solver.max_iterations,
                    Some(&solver.precond),
                )
                .map_err(|source| TimesteppingError::Solve {
                    step,
                    target: SolveTarget::System,
                    source,
                })?;
                reports.push((SolveTarget::System, report));
                Ok(x)
            }
            _ => {
                let mut p_next = p_prev.to_vec();
                for solver in &self.solvers {
                    let a = match solver.target {
                        SolveTarget::Continuum(a) => a,
                        SolveTarget::System => unreachable!("decoupled stepper has block targets"),
                    };
                    let r = system.range(a);
                    let (lo, hi) = (r.start, r.end);
                    let n_a = hi - lo;
                    let mut rhs: Vec<f64> = self.rhs_constant[lo..hi].to_vec();
                    for i in 0..n_a {
                        rhs[i] += mass[lo + i] / self.tau * p_prev[lo + i];
                    }
                    for b in 0..system.n_continua() {
                        if b == a {
                            continue;
                        }
                        let block = system.block(a, b);
                        if block.nnz() == 0 {
                            continue;
                        }
                        // Implicit blocks multiply the state updated so
                        // far this step; explicit blocks the previous
                        // state. The solve order guarantees implicit
                        // partners are already advanced.
                        let state = if self.split.is_implicit(a, b) {
                            &p_next
                        } else {
                            p_prev
                        };
                        let blo = system.offset(b);
                        block.mul_slice_sub(&state[blo..blo + block.ncols()], &mut rhs);
                    }
                    let (x, report) = cg_solve(
                        &solver.matrix,
                        &rhs,
                        &p_prev[lo..hi],
                        self.config.tolerance,
                        solver.max_iterations,
                        Some(&solver.precond),
                    )
                    .map_err(|source| TimesteppingError::Solve {
                        step,
                        target: solver.target,
                        source,
                    })?;
                    p_next[lo..hi].copy_from_slice(&x);
                    reports.push((solver.target, report));
                }
                Ok(p_next)
            }
        }
    }
}

/// Advances a single step with a freshly prepared stepper. Convenient
/// for experiments and tests; full runs use `run`, which factors each
/// matrix once.
pub fn step(
    system: &MulticontinuumSystem,
    split: &SchemeSplit,
    p_prev: &[f64],
    tau: f64,
    config: SolverConfig,
) -> Result<(Vec<f64>, Vec<(SolveTarget, SolverReport)>), TimesteppingError> {
    let stepper = Stepper::new(system, split, tau, config)?;
    let mut reports = Vec::new();
    let p_next = stepper.advance(1, p_prev, &mut reports)?;
    Ok((p_next, reports))
}

/// Runs `n_steps` implicit steps of the given scheme from the system's
/// initial state. If a reference trajectory is given (states p^0..p^N
/// of the same dimension), per-step relative errors are recorded.
pub fn run(
    system: &MulticontinuumSystem,
    kind: SchemeKind,
    tau: f64,
    n_steps: usize,
    config: SolverConfig,
    reference: Option<&[Vec<f64>]>,
) -> Result<RunRecord, TimesteppingError> {
    run_from(system, kind, &system.initial_vector(), tau, n_steps, config, reference)
}

/// Same as `run`, but starting from an explicit initial state.
pub fn run_from(
    system: &MulticontinuumSystem,
    kind: SchemeKind,
    initial: &[f64],
    tau: f64,
    n_steps: usize,
    config: SolverConfig,
    reference: Option<&[Vec<f64>]>,
) -> Result<RunRecord, TimesteppingError> {
    let n = system.n_dofs();
    if initial.len() != n {
        return Err(TimesteppingError::InvalidArgument(format!(
            "initial state has length {}, system has {} unknowns",
            initial.len(),
            n
        )));
    }
    if let Some(r) = reference {
        if r.len() != n_steps + 1 {
            return Err(TimesteppingError::InvalidArgument(format!(
                "reference trajectory has {} states, expected {}",
                r.len(),
                n_steps + 1
            )));
        }
    }

    let start = Instant::now();
    let split = make_split(system, kind);
    let stepper = Stepper::new(system, &split, tau, config)?;
    let a_full = system.full_matrix();
    let a_norm_of = |v: &[f64]| -> f64 {
        let av = a_full.mul_vec(v);
        crate::linalg::dot(v, &av).max(0.0).sqrt()
    };

    let mut trajectory = Vec::with_capacity(n_steps + 1);
    let mut a_norms = Vec::with_capacity(n_steps + 1);
    let mut step_reports = Vec::with_capacity(n_steps);
    let mut errors = reference.map(|_| Vec::with_capacity(n_steps));

    trajectory.push(initial.to_vec());
    a_norms.push(a_norm_of(initial));

    for step_idx in 1..=n_steps {
        let mut reports = Vec::new();
        let p_next = stepper.advance(step_idx, trajectory.last().unwrap(), &mut reports)?;
        a_norms.push(a_norm_of(&p_next));
        if let (Some(errs), Some(refs)) = (errors.as_mut(), reference) {
            let r = &refs[step_idx];
            let mut diff = 0.0;
            for i in 0..n {
                let d = p_next[i] - r[i];
                diff += d * d;
            }
            let ref_norm = norm2(r);
            errs.push(if ref_norm > 0.0 {
                100.0 * diff.sqrt() / ref_norm
            } else {
                f64::INFINITY
            });
        }
        trajectory.push(p_next);
        step_reports.push(reports);
    }

    Ok(RunRecord {
        kind,
        tau,
        n_steps,
        trajectory,
        a_norms,
        step_reports,
        seconds_total: start.elapsed().as_secs_f64(),
        errors_percent: errors,
    })
}

/// Estimates whether the splitting satisfies the unconditional
/// stability criterion: the symmetric part of `A0 - A1` should be
/// positive semidefinite. Returns the verdict and the estimated
/// smallest eigenvalue; the verdict allows a small negative slack
/// relative to the operator norm.
pub fn check_stability_condition(system: &MulticontinuumSystem, split: &SchemeSplit) -> (bool, f64) {
    let n = system.n_dofs();
    if n == 0 {
        return (true, 0.0);
    }
    // S = sym(A0 - A1).
    let d = split.a0().add_scaled(split.a1(), -1.0);
    let s = d.add_scaled(&d.transpose(), 1.0);
    let s_apply = |v: &[f64], out: &mut Vec<f64>| {
        s.mul_vec_into(v, out);
        for x in out.iter_mut() {
            *x *= 0.5;
        }
    };

    let shift = 0.5 * s.inf_norm();
    if shift == 0.0 {
        return (true, 0.0);
    }

    // Power iteration on shift*I - S converges to the eigenvector of
    // the smallest eigenvalue of S.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm2(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }
    let mut sv = vec![0.0; n];
    for _ in 0..50 {
        s_apply(&v, &mut sv);
        let mut w: Vec<f64> = (0..n).map(|i| shift * v[i] - sv[i]).collect();
        let wn = norm2(&w);
        if wn == 0.0 {
            break;
        }
        for x in w.iter_mut() {
            *x /= wn;
        }
        v = w;
    }
    // The converged vector approximates the eigenvector of the
    // smallest eigenvalue of S, so its Rayleigh quotient estimates
    // that eigenvalue (from above).
    s_apply(&v, &mut sv);
    let lambda_min = crate::linalg::dot(&v, &sv);

    let scale = system.full_matrix().inf_norm().max(1.0);
    (lambda_min >= -1e-8 * scale, lambda_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_system, AssemblyOptions, ContinuumKind, ContinuumSpec, CouplingGeometry,
        CouplingSpec,
    };
    use crate::geometry::build_grid;
    use std::sync::Arc;

    fn two_matrix_system(
        nx: usize,
        ny: usize,
        c: [f64; 2],
        k: [f64; 2],
        sigma: f64,
        initial: [f64; 2],
    ) -> MulticontinuumSystem {
        let grid = Arc::new(build_grid(nx, ny, 1.0 / nx as f64).unwrap());
        let mut c0 = ContinuumSpec::new(ContinuumKind::Matrix, c[0], k[0]);
        c0.initial = initial[0];
        let mut c1 = ContinuumSpec::new(ContinuumKind::Matrix, c[1], k[1]);
        c1.initial = initial[1];
        assemble_system(
            &grid,
            None,
            &[c0, c1],
            &[CouplingSpec {
                pair: (0, 1),
                sigma,
                geometry: CouplingGeometry::CoLocated,
            }],
            &[],
            &AssemblyOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn split_membership_matches_scheme_definitions() {
        let sys = two_matrix_system(2, 2, [1.0, 1.0], [2.0, 1.0], 0.5, [0.0, 0.0]);
        // k = [2, 1]: ascending permeability order is [1, 0].
        let d = make_split(&sys, SchemeKind::DecoupledD);
        assert!(d.is_implicit(0, 0) && d.is_implicit(1, 1));
        assert!(!d.is_implicit(0, 1) && !d.is_implicit(1, 0));
        assert_eq!(d.order(), &[0, 1]);

        let l = make_split(&sys, SchemeKind::DecoupledL);
        // rank(1) = 0 (lower k), rank(0) = 1; block (0,1) has
        // rank(0) >= rank(1) so it is implicit, (1,0) is not.
        assert!(l.is_implicit(0, 1));
        assert!(!l.is_implicit(1, 0));
        assert_eq!(l.order(), &[1, 0]);

        let u = make_split(&sys, SchemeKind::DecoupledU);
        assert!(u.is_implicit(1, 0));
        assert!(!u.is_implicit(0, 1));
        assert_eq!(u.order(), &[0, 1]);

        let c = make_split(&sys, SchemeKind::Coupled);
        assert!(c.is_implicit(0, 1) && c.is_implicit(1, 0));
    }

    #[test]
    fn split_halves_sum_to_full_operator() {
        let sys = two_matrix_system(3, 2, [1.0, 0.5], [1.0, 3.0], 2.0, [1.0, 0.0]);
        let a = sys.full_matrix();
        for kind in SchemeKind::all() {
            let split = make_split(&sys, kind);
            let sum = split.a0().add_scaled(split.a1(), 1.0);
            let diff = sum.add_scaled(&a, -1.0);
            assert!(
                diff.inf_norm() < 1e-14,
                "A0 + A1 must reproduce A for {}",
                kind
            );
        }
    }

    #[test]
    fn three_continuum_orderings_follow_permeability() {
        let grid = Arc::new(build_grid(2, 2, 0.5).unwrap());
        let specs = vec![
            ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 5.0),
            ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 0.1),
            ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 5.0),
        ];
        let sys = assemble_system(
            &grid,
            None,
            &specs,
            &[
                CouplingSpec {
                    pair: (0, 1),
                    sigma: 1.0,
                    geometry: CouplingGeometry::CoLocated,
                },
                CouplingSpec {
                    pair: (1, 2),
                    sigma: 1.0,
                    geometry: CouplingGeometry::CoLocated,
                },
            ],
            &[],
            &AssemblyOptions::default(),
        )
        .unwrap();
        // k = [5, 0.1, 5]: ascending order is [1, 0, 2] with the tie
        // between continua 0 and 2 broken by index.
        let l = make_split(&sys, SchemeKind::DecoupledL);
        assert_eq!(l.order(), &[1, 0, 2]);
        let u = make_split(&sys, SchemeKind::DecoupledU);
        assert_eq!(u.order(), &[2, 0, 1]);
        // Tied continua: lower index gets lower rank, so (2,0) is the
        // implicit off-diagonal side for L.
        assert!(l.is_implicit(2, 0));
        assert!(!l.is_implicit(0, 2));
    }

    #[test]
    fn constant_state_is_steady_without_wells() {
        let sys = two_matrix_system(4, 3, [1.0, 2.0], [1.0, 4.0], 3.0, [5.0, 5.0]);
        for kind in SchemeKind::all() {
            let rec = run(&sys, kind, 0.1, 4, SolverConfig::default(), None).unwrap();
            for state in &rec.trajectory {
                for &v in state {
                    assert!(
                        (v - 5.0).abs() < 1e-9,
                        "constant state should persist under {}",
                        kind
                    );
                }
            }
        }
    }

    #[test]
    fn single_cell_exchange_coupled_step_has_closed_form() {
        // One cell, two continua, c1 = c2 = 1, sigma = 1, tau = 1,
        // h = 1, k = 0. Coupled implicit step from (1, 0):
        // p1 - 1 + (p1 - p2) = 0 and p2 + (p2 - p1) = 0 gives
        // p = (2/3, 1/3).
        let grid = Arc::new(build_grid(1, 1, 1.0).unwrap());
        let mut c0 = ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 0.0);
        c0.initial = 1.0;
        let c1 = ContinuumSpec::new(ContinuumKind::Matrix, 1.0, 0.0);
        let sys = assemble_system(
            &grid,
            None,
            &[c0, c1],
            &[CouplingSpec {
                pair: (0, 1),
                sigma: 1.0,
                geometry: CouplingGeometry::CoLocated,
            }],
            &[],
            &AssemblyOptions::default(),
        )
        .unwrap();
        let rec = run(&sys, SchemeKind::Coupled, 1.0, 1, SolverConfig::default(), None).unwrap();
        let p = rec.final_state();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-10);

        // Diagonal splitting takes the exchange partner explicitly:
        // p1 - 1 + (p1 - 0) = 0 and p2 + (p2 - 1) = 0 gives (1/2, 1/2).
        let rec_d =
            run(&sys, SchemeKind::DecoupledD, 1.0, 1, SolverConfig::default(), None).unwrap();
        let p_d = rec_d.final_state();
        assert!((p_d[0] - 0.5).abs() < 1e-10);
        assert!((p_d[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn zero_steps_returns_initial_state_only() {
        let sys = two_matrix_system(2, 2, [1.0, 1.0], [1.0, 1.0], 1.0, [2.0, 0.5]);
        let rec = run(&sys, SchemeKind::Coupled, 0.1, 0, SolverConfig::default(), None).unwrap();
        assert_eq!(rec.trajectory.len(), 1);
        assert_eq!(rec.a_norms.len(), 1);
        assert!(rec.step_reports.is_empty());
    }

    #[test]
    fn runs_are_deterministic() {
        let sys = two_matrix_system(5, 4, [1.0, 0.3], [0.2, 2.0], 1.5, [1.0, 0.0]);
        for kind in SchemeKind::all() {
            let r1 = run(&sys, kind, 0.05, 6, SolverConfig::default(), None).unwrap();
            let r2 = run(&sys, kind, 0.05, 6, SolverConfig::default(), None).unwrap();
            assert_eq!(r1.trajectory, r2.trajectory, "scheme {} not deterministic", kind);
        }
    }

    #[test]
    fn energy_norm_decays_without_forcing() {
        let sys = two_matrix_system(6, 6, [1.0, 0.7], [0.5, 4.0], 2.0, [0.0, 0.0]);
        // Random-ish nonconstant initial state.
        let n = sys.n_dofs();
        let initial: Vec<f64> = (0..n).map(|i| ((i * 37 % 19) as f64) / 19.0 - 0.5).collect();
        for kind in SchemeKind::all() {
            let rec = run_from(
                &sys,
                kind,
                &initial,
                0.02,
                10,
                SolverConfig::default(),
                None,
            )
            .unwrap();
            assert!(
                rec.a_norm_monotone(1e-7),
                "energy norm must decay for {} (norms {:?})",
                kind,
                rec.a_norms
            );
        }
    }

    #[test]
    fn stability_criterion_accepts_decoupled_splits_and_rejects_reversed_one() {
        let sys = two_matrix_system(5, 5, [1.0, 0.5], [0.3, 3.0], 1.0, [0.0, 0.0]);
        for kind in SchemeKind::all() {
            let split = make_split(&sys, kind);
            let (ok, lambda_min) = check_stability_condition(&sys, &split);
            assert!(ok, "{} split should satisfy the criterion, got {}", kind, lambda_min);
        }

        // Adversarial splitting: everything explicit. Then
        // sym(A0 - A1) = -A, which is negative semidefinite with a
        // strictly negative smallest eigenvalue.
        let real = make_split(&sys, SchemeKind::Coupled);
        let reversed = SchemeSplit {
            kind: SchemeKind::Coupled,
            order: real.order.clone(),
            rank: real.rank.clone(),
            implicit: real.implicit.clone(),
            a0: real.a1().clone(),
            a1: real.a0().clone(),
        };
        let (ok, lambda_min) = check_stability_condition(&sys, &reversed);
        assert!(!ok, "reversed split must fail, estimated lambda_min {}", lambda_min);
        assert!(lambda_min < 0.0);
    }

    #[test]
    fn decoupled_schemes_match_coupled_when_exchange_vanishes() {
        let sys = two_matrix_system(4, 4, [1.0, 0.6], [0.4, 2.5], 0.0, [0.0, 0.0]);
        let n = sys.n_dofs();
        let initial: Vec<f64> = (0..n).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let reference = run_from(
            &sys,
            SchemeKind::Coupled,
            &initial,
            0.05,
            5,
            SolverConfig::default(),
            None,
        )
        .unwrap();
        for kind in [SchemeKind::DecoupledD, SchemeKind::DecoupledL, SchemeKind::DecoupledU] {
            let rec = run_from(
                &sys,
                kind,
                &initial,
                0.05,
                5,
                SolverConfig::default(),
                None,
            )
            .unwrap();
            for (a, b) in rec.trajectory.iter().zip(&reference.trajectory) {
                for i in 0..n {
                    assert!(
                        (a[i] - b[i]).abs() < 1e-7,
                        "decoupled {} must equal coupled with zero exchange",
                        kind
                    );
                }
            }
        }
    }

    #[test]
    fn splitting_error_shrinks_linearly_with_step_size() {
        let sys = two_matrix_system(3, 3, [1.0, 0.8], [0.6, 1.4], 2.0, [0.0, 0.0]);
        let n = sys.n_dofs();
        let initial: Vec<f64> = (0..n).map(|i| ((i * 11 % 5) as f64) * 0.4 - 0.8).collect();
        let t_final = 0.2;
        let config = SolverConfig {
            tolerance: 1e-12,
            ..SolverConfig::default()
        };
        let mut deviations = Vec::new();
        for &steps in &[8usize, 16, 32, 64] {
            let tau = t_final / steps as f64;
            let coupled = run_from(&sys, SchemeKind::Coupled, &initial, tau, steps, config, None)
                .unwrap();
            let split = run_from(
                &sys,
                SchemeKind::DecoupledD,
                &initial,
                tau,
                steps,
                config,
                None,
            )
            .unwrap();
            let d: f64 = coupled
                .final_state()
                .iter()
                .zip(split.final_state())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            deviations.push(d);
        }
        // First-order splitting: halving tau should roughly halve the
        // deviation from the coupled solution.
        for w in deviations.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 1.5 && ratio < 2.6,
                "expected first-order decay, ratios from {:?}",
                deviations
            );
        }
    }

    #[test]
    fn errors_against_reference_trajectory_are_recorded() {
        let sys = two_matrix_system(3, 3, [1.0, 1.0], [1.0, 2.0], 1.0, [1.0, 0.0]);
        let coupled = run(&sys, SchemeKind::Coupled, 0.1, 4, SolverConfig::default(), None)
            .unwrap();
        let rec = run(
            &sys,
            SchemeKind::DecoupledD,
            0.1,
            4,
            SolverConfig::default(),
            Some(&coupled.trajectory),
        )
        .unwrap();
        let errors = rec.errors_percent.as_ref().unwrap();
        assert_eq!(errors.len(), 4);
        for &e in errors {
            assert!(e.is_finite() && e >= 0.0 && e < 50.0);
        }
        // Self-comparison yields zero error.
        let self_rec = run(
            &sys,
            SchemeKind::Coupled,
            0.1,
            4,
            SolverConfig::default(),
            Some(&coupled.trajectory),
        )
        .unwrap();
        for &e in self_rec.errors_percent.as_ref().unwrap() {
            assert!(e < 1e-6);
        }
    }
}
