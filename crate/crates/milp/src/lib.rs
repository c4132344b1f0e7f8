//! Mixed-integer linear programming for desk-scale planning problems.
//!
//! [`MilpModel`] is a plain container of variables, rows, and a minimization
//! objective. Models can be solved in-process with [`solve_milp`] (best-first
//! branch-and-bound on a dense bounded simplex) or handed to an external
//! solver through the LP text format ([`lp_format`], [`external`]).

mod branch;
pub mod external;
pub mod lp_format;
pub mod model;
pub mod simplex;

use std::time::Duration;

pub use model::{Constraint, MilpModel, Sense, VarId, VarKind, Variable};
pub use simplex::{LpOptions, LpSolution, LpStatus};

#[derive(Debug, thiserror::Error)]
pub enum MilpError {
    #[error("assignment has {found} values, model has {expected} variables")]
    Dimension { expected: usize, found: usize },
    #[error("assignment infeasible: {0}")]
    Infeasible(String),
    #[error("LP format error at line {line}: {message}")]
    LpFormat { line: usize, message: String },
    #[error("solution file error: {0}")]
    SolutionFormat(String),
    #[error("external solver `{program}` could not be run: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("external solver `{program}` failed: {message}")]
    ExternalFailure { program: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// A node, time, or pivot limit stopped the search; `values` holds the
    /// best incumbent when one was found.
    IterationLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub nodes: usize,
    pub wall_time: Duration,
}

impl SolveOutcome {
    pub fn has_solution(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

#[derive(Clone, Debug)]
pub struct SolveLimits {
    pub max_nodes: usize,
    pub max_lp_iterations: usize,
    pub time_limit: Option<Duration>,
    pub absolute_gap: f64,
    pub feasibility_tol: f64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_nodes: 100_000,
            max_lp_iterations: 200_000,
            time_limit: None,
            absolute_gap: 1e-6,
            feasibility_tol: 1e-6,
        }
    }
}

/// Solves the continuous relaxation (integrality dropped).
pub fn solve_lp(model: &MilpModel) -> SolveOutcome {
    let start = std::time::Instant::now();
    let lower: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
    let upper: Vec<f64> = model.vars().iter().map(|v| v.upper).collect();
    let sol = simplex::solve_relaxation(model, &lower, &upper, &LpOptions::default());
    let status = match sol.status {
        LpStatus::Optimal => SolveStatus::Optimal,
        LpStatus::Infeasible => SolveStatus::Infeasible,
        LpStatus::Unbounded => SolveStatus::Unbounded,
        LpStatus::IterationLimit => SolveStatus::IterationLimit,
        LpStatus::NumericalFailure => SolveStatus::NumericalFailure,
    };
    let ok = status == SolveStatus::Optimal;
    SolveOutcome {
        status,
        objective: if ok { sol.objective } else { f64::NAN },
        values: if ok { sol.values } else { Vec::new() },
        nodes: 1,
        wall_time: start.elapsed(),
    }
}

/// Solves `model` to optimality (absolute gap) with branch-and-bound.
pub fn solve_milp(model: &MilpModel, limits: &SolveLimits) -> SolveOutcome {
    solve_milp_with_start(model, limits, None)
}

/// Like [`solve_milp`], seeding the search with a known feasible assignment.
/// An infeasible start is ignored.
pub fn solve_milp_with_start(
    model: &MilpModel,
    limits: &SolveLimits,
    start: Option<&[f64]>,
) -> SolveOutcome {
    let out = branch::branch_and_bound(model, limits, start);
    debug_assert!(
        !out.has_solution() || model.check_feasible(&out.values, limits.feasibility_tol).is_ok()
    );
    out
}
