//! Scenario files (TOML).
//!
//! ```toml
//! theta = 0.7
//! horizon = 20
//! cr = "gaussian"            # gaussian | chebyshev | chebyshev-compat
//!
//! [algorithm]
//! mode = "iterative"         # iterative | centralized
//! kmax = 30
//! coloring = [[1, 3], [2]]   # round robin when absent
//! mu_weight = 1.0
//! per_window_tightening = false
//!
//! [encoding]
//! eps = 1e-4
//! style = "compact"          # compact | full
//!
//! [solver]
//! kind = "internal"          # internal | external
//! program = "highs"          # external only
//! max_nodes = 100000
//!
//! [[agents]]
//! id = 1
//! A = [[1.0, 0.0], [0.0, 1.0]]
//! B = [[1.0, 0.0], [0.0, 1.0]]
//! K = [[-0.5, 0.0], [0.0, -0.5]]
//! x0 = [0.0, 0.0]
//! input_lo = [-0.8, -0.8]
//! input_hi = [0.8, 0.8]
//! task = "F[5,10] (x1[0] >= 2 & x1[0] <= 3)"
//! [agents.disturbance]
//! kind = "gaussian"          # gaussian | moment-only
//! Q = [[0.05, 0.0], [0.0, 0.05]]
//!
//! [[joint_tasks]]
//! agents = [1, 2]
//! task = "F[0,20] (x1[0] - x2[0] <= 1 & x2[0] - x1[0] <= 1)"
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use milp::external::{Dialect, ExternalSolver};
use milp::SolveLimits;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::budget::{budget_uniform, budget_validate, BudgetError, ProbabilityBudget};
use crate::coordinator::{PlanConfig, PlanMode, SchedulePolicy, Solver};
use crate::encode::{EncodingConfig, EncodingStyle};
use crate::model::{AgentModel, CostSpec, DisturbanceKind, DisturbanceSpec, GlobalSpec, MasModel, ModelError};
use crate::reach::CrKind;
use crate::stl::{parse_formula, Layout, StlError};
use crate::tighten::TightenOptions;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Toml(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("task of {owner}: {source}")]
    Task {
        owner: String,
        #[source]
        source: StlError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    theta: f64,
    horizon: usize,
    #[serde(default)]
    cr: Option<String>,
    /// Explicit per-agent region levels (uniform split when absent).
    #[serde(default)]
    region_levels: Option<Vec<f64>>,
    #[serde(default)]
    algorithm: RawAlgorithm,
    #[serde(default)]
    encoding: RawEncoding,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    plot: RawPlot,
    agents: Vec<RawAgent>,
    #[serde(default)]
    joint_tasks: Vec<RawJoint>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    mode: Option<String>,
    kmax: Option<usize>,
    coloring: Option<Vec<Vec<usize>>>,
    mu_weight: Option<f64>,
    per_window_tightening: Option<bool>,
    parallel: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEncoding {
    big_m: Option<f64>,
    eps: Option<f64>,
    robustness_cap: Option<f64>,
    style: Option<String>,
    condensed: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    kind: Option<String>,
    program: Option<String>,
    dialect: Option<String>,
    max_nodes: Option<usize>,
    time_limit_secs: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlot {
    dims: Option<[usize; 2]>,
    /// [xmin, xmax, ymin, ymax]
    workspace: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    x0: Vec<f64>,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    state_lo: Option<Vec<f64>>,
    state_hi: Option<Vec<f64>>,
    task: Option<String>,
    disturbance: RawDisturbance,
    #[serde(default)]
    cost: Option<RawCost>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    kind: Option<String>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    input_l1: Option<f64>,
    state_l1: Option<f64>,
    terminal_l1: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    agents: Vec<usize>,
    task: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotConfig {
    pub dims: [usize; 2],
    pub workspace: Option<[f64; 4]>,
}

/// A fully validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: MasModel,
    pub budget: ProbabilityBudget,
    pub cr: CrKind,
    pub mode: PlanMode,
    pub plan: PlanConfig,
    pub tighten: TightenOptions,
    pub plot: PlotConfig,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(ScenarioError::Invalid(format!("{what} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn cr_kind(s: Option<&str>) -> Result<CrKind, ScenarioError> {
    match s.unwrap_or("gaussian") {
        "gaussian" => Ok(CrKind::Gaussian),
        "chebyshev" => Ok(CrKind::Chebyshev),
        "chebyshev-compat" => Ok(CrKind::ChebyshevCompat),
        other => Err(ScenarioError::Invalid(format!("unknown confidence region kind `{other}`"))),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Toml(e.to_string()))?;
        Scenario::from_raw(raw)
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
        Scenario::from_toml(&std::fs::read_to_string(path)?)
    }

    fn from_raw(raw: RawScenario) -> Result<Scenario, ScenarioError> {
        let layout = Layout::new(raw.agents.iter().map(|a| (a.id, a.x0.len())));
        let mut agents = Vec::with_capacity(raw.agents.len());
        let mut local_tasks = BTreeMap::new();
        for ra in &raw.agents {
            let kind = match ra.disturbance.kind.as_deref().unwrap_or("gaussian") {
                "gaussian" => DisturbanceKind::Gaussian,
                "moment-only" => DisturbanceKind::MomentOnly,
                other => return Err(ScenarioError::Invalid(format!("unknown disturbance kind `{other}`"))),
            };
            let cost = match &ra.cost {
                None => CostSpec::default(),
                Some(c) => CostSpec {
                    input_l1: c.input_l1.unwrap_or(1.0),
                    state_l1: c.state_l1.unwrap_or(0.0),
                    terminal_l1: c.terminal_l1.unwrap_or(0.0),
                },
            };
            agents.push(AgentModel {
                id: ra.id,
                a: matrix(&ra.a, "A")?,
                b: matrix(&ra.b, "B")?,
                k: matrix(&ra.k, "K")?,
                x0: DVector::from_vec(ra.x0.clone()),
                input_lo: DVector::from_vec(ra.input_lo.clone()),
                input_hi: DVector::from_vec(ra.input_hi.clone()),
                state_lo: ra.state_lo.clone().map(DVector::from_vec),
                state_hi: ra.state_hi.clone().map(DVector::from_vec),
                disturbance: DisturbanceSpec {
                    kind,
                    q: matrix(&ra.disturbance.q, "Q")?,
                },
                cost,
            });
            if let Some(task) = &ra.task {
                let f = parse_formula(task, &layout).map_err(|source| ScenarioError::Task {
                    owner: format!("agent {}", ra.id),
                    source,
                })?;
                local_tasks.insert(ra.id, f);
            }
        }
        let mut joint_tasks = BTreeMap::new();
        for j in &raw.joint_tasks {
            let mut clique = j.agents.clone();
            clique.sort_unstable();
            let f = parse_formula(&j.task, &layout).map_err(|source| ScenarioError::Task {
                owner: format!("clique {clique:?}"),
                source,
            })?;
            if joint_tasks.insert(clique.clone(), f).is_some() {
                return Err(ScenarioError::Invalid(format!("two joint tasks for clique {clique:?}")));
            }
        }
        let spec = GlobalSpec {
            local_tasks,
            joint_tasks,
            theta: raw.theta,
            horizon: raw.horizon,
        };
        let model = MasModel::new(agents, spec)?;
        let budget = match &raw.region_levels {
            Some(levels) => {
                if levels.len() != model.agents().len() {
                    return Err(ScenarioError::Invalid(format!(
                        "{} region levels for {} agents",
                        levels.len(),
                        model.agents().len()
                    )));
                }
                budget_validate(levels, raw.theta, raw.horizon)?
            }
            None => budget_uniform(raw.theta, model.agents().len(), raw.horizon)?,
        };

        let mode = match raw.algorithm.mode.as_deref().unwrap_or("iterative") {
            "iterative" => PlanMode::Iterative,
            "centralized" => PlanMode::Centralized,
            other => return Err(ScenarioError::Invalid(format!("unknown mode `{other}`"))),
        };
        let defaults = EncodingConfig::default();
        let encoding = EncodingConfig {
            big_m: raw.encoding.big_m,
            eps: raw.encoding.eps.unwrap_or(defaults.eps),
            robustness_cap: raw.encoding.robustness_cap.unwrap_or(defaults.robustness_cap),
            mu_weight: raw.algorithm.mu_weight.unwrap_or(defaults.mu_weight),
            style: match raw.encoding.style.as_deref().unwrap_or("compact") {
                "compact" => EncodingStyle::Compact,
                "full" => EncodingStyle::Full,
                other => return Err(ScenarioError::Invalid(format!("unknown encoding style `{other}`"))),
            },
            condensed: raw.encoding.condensed.unwrap_or(defaults.condensed),
            integer_inputs: false,
        };
        encoding
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut limits = SolveLimits::default();
        if let Some(n) = raw.solver.max_nodes {
            limits.max_nodes = n;
        }
        if let Some(s) = raw.solver.time_limit_secs {
            if !(s > 0.0) {
                return Err(ScenarioError::Invalid("time limit must be positive".into()));
            }
            limits.time_limit = Some(Duration::from_secs_f64(s));
        }
        let solver = match raw.solver.kind.as_deref().unwrap_or("internal") {
            "internal" => Solver::Internal(limits),
            "external" => {
                let program = raw
                    .solver
                    .program
                    .as_ref()
                    .ok_or_else(|| ScenarioError::Invalid("external solver needs `program`".into()))?;
                let mut ext = ExternalSolver::new(PathBuf::from(program));
                match raw.solver.dialect.as_deref() {
                    None => {}
                    Some("highs") => ext = ext.with_dialect(Dialect::Highs),
                    Some("cbc") => ext = ext.with_dialect(Dialect::Cbc),
                    Some(other) => return Err(ScenarioError::Invalid(format!("unknown solver dialect `{other}`"))),
                }
                Solver::External(ext)
            }
            other => return Err(ScenarioError::Invalid(format!("unknown solver kind `{other}`"))),
        };
        if raw.algorithm.kmax == Some(0) {
            return Err(ScenarioError::Invalid("kmax must be positive".into()));
        }
        let plan = PlanConfig {
            encoding,
            solver,
            k_max: raw.algorithm.kmax,
            schedule: match raw.algorithm.coloring {
                Some(sets) => SchedulePolicy::Coloring(sets),
                None => SchedulePolicy::RoundRobin,
            },
            parallel: raw.algorithm.parallel.unwrap_or(true),
        };
        let plot = PlotConfig {
            dims: raw.plot.dims.unwrap_or([0, 1]),
            workspace: raw.plot.workspace,
        };
        let max_dim = model.agents().iter().map(|a| a.state_dim()).max().unwrap_or(0);
        if plot.dims.iter().any(|&d| d >= max_dim) && max_dim >= 2 {
            return Err(ScenarioError::Invalid(format!("plot dims {:?} out of range", plot.dims)));
        }
        Ok(Scenario {
            model,
            budget,
            cr: cr_kind(raw.cr.as_deref())?,
            mode,
            plan,
            tighten: TightenOptions {
                per_window: raw.algorithm.per_window_tightening.unwrap_or(false),
            },
            plot,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"
theta = 0.7
horizon = 5

[[agents]]
id = 1
A = [[1.0]]
B = [[1.0]]
K = [[-0.5]]
x0 = [0.0]
input_lo = [-1.0]
input_hi = [1.0]
task = "F[0,5] x1[0] >= 2"
[agents.disturbance]
Q = [[0.01]]
"#;

    #[test]
    fn loads_minimal_scenario() {
        let s = Scenario::from_toml(TINY).unwrap();
        assert_eq!(s.model.horizon(), 5);
        assert_eq!(s.mode, PlanMode::Iterative);
        assert_eq!(s.budget.region_levels.len(), 1);
        assert!(s.model.spec().local_tasks.contains_key(&1));
    }

    #[test]
    fn reports_bad_tasks_and_fields() {
        let bad = TINY.replace("x1[0] >= 2", "x3[0] >= 2");
        assert!(matches!(Scenario::from_toml(&bad), Err(ScenarioError::Task { .. })));
        let unknown = format!("{TINY}\n[algorithm]\nspeed = 3\n");
        assert!(matches!(Scenario::from_toml(&unknown), Err(ScenarioError::Toml(_))));
    }
}
