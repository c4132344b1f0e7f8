//! Distributed synthesis: task decomposition, schedules, and the iterative
//! per-agent optimization loop (plus a centralized fallback).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use milp::external::ExternalSolver;
use milp::{solve_milp_with_start, MilpError, MilpModel, SolveLimits, SolveOutcome, SolveStatus};
use rayon::prelude::*;

use crate::encode::{
    build_agent_problem, build_init_problem, build_plan_problem, clique_robustness, plans_trajectory, AgentPlan,
    EncodeError, EncodingConfig,
};
use crate::model::{GlobalSpec, MasModel};
use crate::stl::{eval_boolean, eval_robustness, Formula, StlError};
use crate::tighten::TightenedSpec;

/// Tolerance of the per-iteration robustness contract.
pub const CONTRACT_TOL: f64 = 1e-6;
/// Tolerance of the carry-forward feasibility check.
pub const CARRY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CoordError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("solver failure for agent {agent:?}: {source}")]
    Solver {
        agent: Option<usize>,
        #[source]
        source: MilpError,
    },
    #[error("subproblem of agent {agent} at iteration {k} ended with status {status}")]
    SolveFailed { agent: usize, k: usize, status: &'static str },
    #[error("previous iterate of agent {agent} is infeasible for its iteration-{k} problem: {detail}")]
    RecursiveFeasibility { agent: usize, k: usize, detail: String },
    #[error("plan of agent {agent} at iteration {k} violates its local task")]
    LocalTask { agent: usize, k: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// 𝒯_i: for every agent in some clique, the cliques containing it with the
/// agent itself removed.
pub fn build_ti(spec: &GlobalSpec) -> BTreeMap<usize, Vec<Vec<usize>>> {
    let mut out: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for clique in spec.cliques() {
        for &i in clique {
            out.entry(i)
                .or_default()
                .push(clique.iter().copied().filter(|&j| j != i).collect());
        }
    }
    for v in out.values_mut() {
        v.sort();
    }
    out
}

/// ψ̂_i: local task plus every joint task the agent takes part in.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub local: Formula,
    pub joint: Vec<(Vec<usize>, Formula)>,
}

impl Bundle {
    pub fn len(&self) -> usize {
        self.joint.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn formula(&self) -> Formula {
        let mut parts = vec![self.local.clone()];
        parts.extend(self.joint.iter().map(|(_, f)| f.clone()));
        Formula::and(parts)
    }
}

pub fn build_psi_hat(spec: &GlobalSpec, agents: &[usize]) -> BTreeMap<usize, Bundle> {
    agents
        .iter()
        .map(|&i| {
            let local = spec.local_tasks.get(&i).cloned().unwrap_or_else(Formula::truth);
            let joint = spec
                .joint_tasks
                .iter()
                .filter(|(c, _)| c.contains(&i))
                .map(|(c, f)| (c.clone(), f.clone()))
                .collect();
            (i, Bundle { local, joint })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum SchedulePolicy {
    /// One agent per iteration in id order.
    RoundRobin,
    /// User-provided sets, cycled.
    Coloring(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// O_1, ..., O_kmax.
    pub sets: Vec<Vec<usize>>,
}

impl Schedule {
    pub fn at(&self, k: usize) -> &[usize] {
        &self.sets[k - 1]
    }

    pub fn k_max(&self) -> usize {
        self.sets.len()
    }
}

pub fn make_schedule(
    spec: &GlobalSpec,
    agents: &[usize],
    policy: &SchedulePolicy,
    k_max: usize,
) -> Result<Schedule, CoordError> {
    if k_max == 0 {
        return Err(CoordError::Schedule("k_max must be at least 1".into()));
    }
    let mut ids = agents.to_vec();
    ids.sort_unstable();
    let pattern: Vec<Vec<usize>> = match policy {
        SchedulePolicy::RoundRobin => ids.iter().map(|&i| vec![i]).collect(),
        SchedulePolicy::Coloring(sets) => {
            if sets.is_empty() {
                return Err(CoordError::Schedule("empty coloring".into()));
            }
            for set in sets {
                let unique: BTreeSet<usize> = set.iter().copied().collect();
                if unique.len() != set.len() {
                    return Err(CoordError::Schedule(format!("set {set:?} repeats an agent")));
                }
                if let Some(bad) = set.iter().find(|i| ids.binary_search(i).is_err()) {
                    return Err(CoordError::Schedule(format!("unknown agent {bad} in {set:?}")));
                }
                for clique in spec.cliques() {
                    let shared: Vec<usize> = set.iter().copied().filter(|i| clique.contains(i)).collect();
                    if shared.len() > 1 {
                        return Err(CoordError::Schedule(format!(
                            "agents {shared:?} of set {set:?} share the clique {clique:?}"
                        )));
                    }
                }
            }
            sets.clone()
        }
    };
    Ok(Schedule {
        sets: (0..k_max).map(|k| pattern[k % pattern.len()].clone()).collect(),
    })
}

#[derive(Clone, Debug)]
pub enum Solver {
    Internal(SolveLimits),
    External(ExternalSolver),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Internal(SolveLimits::default())
    }
}

impl Solver {
    /// Solves `model`; the start point is only used by the internal solver.
    pub fn solve(&self, model: &MilpModel, start: Option<&[f64]>) -> Result<SolveOutcome, MilpError> {
        match self {
            Solver::Internal(limits) => Ok(solve_milp_with_start(model, limits, start)),
            Solver::External(ext) => ext.solve(model),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanMode {
    Centralized,
    Iterative,
}

#[derive(Clone, Debug)]
pub struct PlanConfig {
    pub encoding: EncodingConfig,
    pub solver: Solver,
    /// Defaults to 10 times the number of agents.
    pub k_max: Option<usize>,
    pub schedule: SchedulePolicy,
    /// Solve the members of one schedule set concurrently.
    pub parallel: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            encoding: EncodingConfig::default(),
            solver: Solver::default(),
            k_max: None,
            schedule: SchedulePolicy::RoundRobin,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanStatus {
    Satisfied,
    MinimallyViolating,
    /// No plan exists for the tightened problem (the agent whose initial
    /// problem failed, if the failure is local).
    Infeasible { agent: Option<usize> },
}

impl PlanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanStatus::Satisfied => "satisfied",
            PlanStatus::MinimallyViolating => "minimally-violating",
            PlanStatus::Infeasible { .. } => "infeasible",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Init,
    Solved,
    /// Member of O_k without joint tasks.
    Skipped,
    Centralized,
}

impl Action {
    fn as_str(self) -> &'static str {
        match self {
            Action::Init => "init",
            Action::Solved => "solved",
            Action::Skipped => "skipped",
            Action::Centralized => "centralized",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentLog {
    pub agent: usize,
    pub action: Action,
    pub status: Option<SolveStatus>,
    pub cost: f64,
    pub selected: Option<Vec<usize>>,
    pub mu: Option<f64>,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub agents: Vec<AgentLog>,
    /// Robustness of every joint task on the committed iterate.
    pub joint_rho: BTreeMap<Vec<usize>, f64>,
    pub rho_psi: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractViolation {
    pub k: usize,
    pub clique: Vec<usize>,
    pub previous: f64,
    pub current: f64,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub plans: BTreeMap<usize, AgentPlan>,
    /// Iterations executed (0 for centralized planning).
    pub iterations: usize,
    pub rho_psi: f64,
    pub log: Vec<IterationRecord>,
    /// Number of carry-forward feasibility checks performed (all passed).
    pub feasibility_checks: usize,
    pub contract_violations: Vec<ContractViolation>,
    pub total_cost: f64,
    pub elapsed: Duration,
}

fn joint_robustness(
    spec: &GlobalSpec,
    plans: &BTreeMap<usize, AgentPlan>,
) -> Result<BTreeMap<Vec<usize>, f64>, CoordError> {
    let mut out = BTreeMap::new();
    for (c, f) in &spec.joint_tasks {
        out.insert(c.clone(), clique_robustness(f, c, plans)?);
    }
    Ok(out)
}

/// (ρ^ψ, ψ holds) on the assembled trajectory.
pub fn assess(spec: &GlobalSpec, plans: &BTreeMap<usize, AgentPlan>) -> Result<(f64, bool), CoordError> {
    let traj = plans_trajectory(plans)?;
    let psi = spec.conjunction();
    Ok((eval_robustness(&psi, &traj, 0)?, eval_boolean(&psi, &traj, 0)?))
}

fn local_task_holds(spec: &TightenedSpec, agent: usize, plan: &AgentPlan) -> Result<bool, CoordError> {
    let Some(f) = spec.psi.local_tasks.get(&agent) else {
        return Ok(true);
    };
    let traj = plans_trajectory(&BTreeMap::from([(agent, plan.clone())]))?;
    Ok(eval_boolean(f, &traj, 0)?)
}

fn usable(out: &SolveOutcome) -> bool {
    out.has_solution() && matches!(out.status, SolveStatus::Optimal | SolveStatus::IterationLimit)
}

/// Solves the centralized problem over all agents and tasks.
pub fn plan_centralized(model: &MasModel, spec: &TightenedSpec, config: &PlanConfig) -> Result<PlanResult, CoordError> {
    let clock = Instant::now();
    let enc = build_plan_problem(model, spec, &config.encoding)?;
    let out = config
        .solver
        .solve(enc.milp(), None)
        .map_err(|source| CoordError::Solver { agent: None, source })?;
    if !usable(&out) {
        return Ok(PlanResult {
            status: PlanStatus::Infeasible { agent: None },
            plans: BTreeMap::new(),
            iterations: 0,
            rho_psi: f64::NEG_INFINITY,
            log: Vec::new(),
            feasibility_checks: 0,
            contract_violations: Vec::new(),
            total_cost: f64::NAN,
            elapsed: clock.elapsed(),
        });
    }
    enc.check_big_m(&out.values)?;
    let plans = enc.extract(&out.values);
    let (rho_psi, holds) = assess(&spec.psi, &plans)?;
    let log = vec![IterationRecord {
        k: 0,
        agents: vec![AgentLog {
            agent: 0,
            action: Action::Centralized,
            status: Some(out.status),
            cost: out.objective,
            selected: None,
            mu: None,
            nodes: out.nodes,
        }],
        joint_rho: joint_robustness(&spec.psi, &plans)?,
        rho_psi,
        satisfied: holds,
    }];
    Ok(PlanResult {
        status: if holds {
            PlanStatus::Satisfied
        } else {
            PlanStatus::MinimallyViolating
        },
        plans,
        iterations: 0,
        rho_psi,
        log,
        feasibility_checks: 0,
        contract_violations: Vec::new(),
        total_cost: out.objective,
        elapsed: clock.elapsed(),
    })
}

struct Step {
    plan: AgentPlan,
    log: AgentLog,
    checked: bool,
}

fn init_step(model: &MasModel, spec: &TightenedSpec, agent: usize, config: &PlanConfig) -> Result<Option<Step>, CoordError> {
    let enc = build_init_problem(model, spec, agent, &config.encoding)?;
    let out = config
        .solver
        .solve(enc.milp(), None)
        .map_err(|source| CoordError::Solver { agent: Some(agent), source })?;
    if !usable(&out) {
        return Ok(None);
    }
    enc.check_big_m(&out.values)?;
    let plan = enc.extract(&out.values).remove(&agent).expect("planned agent");
    if !local_task_holds(spec, agent, &plan)? {
        return Err(CoordError::LocalTask { agent, k: 0 });
    }
    Ok(Some(Step {
        plan,
        log: AgentLog {
            agent,
            action: Action::Init,
            status: Some(out.status),
            cost: out.objective,
            selected: None,
            mu: None,
            nodes: out.nodes,
        },
        checked: false,
    }))
}

fn iteration_step(
    model: &MasModel,
    spec: &TightenedSpec,
    agent: usize,
    k: usize,
    prev: &BTreeMap<usize, AgentPlan>,
    config: &PlanConfig,
) -> Result<Step, CoordError> {
    let problem = build_agent_problem(model, spec, agent, prev, &config.encoding)?;
    // the previous iterate must be feasible for the new problem
    let start = problem
        .encoded
        .witness(prev, problem.previous_slack())
        .map_err(|e| CoordError::RecursiveFeasibility {
            agent,
            k,
            detail: e.to_string(),
        })?;
    problem
        .encoded
        .milp()
        .check_feasible(&start, CARRY_TOL)
        .map_err(|e| CoordError::RecursiveFeasibility {
            agent,
            k,
            detail: e.to_string(),
        })?;
    let out = config
        .solver
        .solve(problem.encoded.milp(), Some(&start))
        .map_err(|source| CoordError::Solver { agent: Some(agent), source })?;
    if !usable(&out) {
        return Err(CoordError::SolveFailed {
            agent,
            k,
            status: out.status.as_str(),
        });
    }
    problem.encoded.check_big_m(&out.values)?;
    let plan = problem.encoded.extract(&out.values).remove(&agent).expect("planned agent");
    if !local_task_holds(spec, agent, &plan)? {
        return Err(CoordError::LocalTask { agent, k });
    }
    Ok(Step {
        log: AgentLog {
            agent,
            action: Action::Solved,
            status: Some(out.status),
            cost: problem.encoded.cost(&out.values),
            selected: problem.selected.clone(),
            mu: problem.encoded.slack().map(|s| out.values[s.0]),
            nodes: out.nodes,
        },
        plan,
        checked: true,
    })
}

fn plan_cost(model: &MasModel, plans: &BTreeMap<usize, AgentPlan>) -> f64 {
    let mut total = 0.0;
    for (id, p) in plans {
        let Some(a) = model.agent(*id) else { continue };
        let n = p.v.len();
        for t in 0..n {
            total += a.cost.input_l1 * p.v[t].iter().map(|x| x.abs()).sum::<f64>();
            total += a.cost.state_l1 * p.z[t].iter().map(|x| x.abs()).sum::<f64>();
        }
        total += a.cost.terminal_l1 * p.z[n].iter().map(|x| x.abs()).sum::<f64>();
    }
    total
}

/// Iterative synthesis: initial local plans, then for k = 1..k_max the
/// agents of O_k re-plan against a frozen snapshot of the previous iterate;
/// stops once the assembled plan satisfies ψ.
pub fn run_algorithm1(model: &MasModel, spec: &TightenedSpec, config: &PlanConfig) -> Result<PlanResult, CoordError> {
    let clock = Instant::now();
    let ids = model.agent_ids();
    let k_max = config.k_max.unwrap_or(10 * ids.len());
    let schedule = make_schedule(&spec.psi, &ids, &config.schedule, k_max)?;
    let has_joint: BTreeSet<usize> = build_ti(&spec.psi).keys().copied().collect();

    let init: Vec<Result<Option<Step>, CoordError>> = if config.parallel {
        ids.par_iter().map(|&i| init_step(model, spec, i, config)).collect()
    } else {
        ids.iter().map(|&i| init_step(model, spec, i, config)).collect()
    };
    let mut plans = BTreeMap::new();
    let mut init_log = Vec::new();
    for (&i, step) in ids.iter().zip(init) {
        match step? {
            Some(s) => {
                plans.insert(i, s.plan);
                init_log.push(s.log);
            }
            None => {
                return Ok(PlanResult {
                    status: PlanStatus::Infeasible { agent: Some(i) },
                    plans,
                    iterations: 0,
                    rho_psi: f64::NEG_INFINITY,
                    log: Vec::new(),
                    feasibility_checks: 0,
                    contract_violations: Vec::new(),
                    total_cost: f64::NAN,
                    elapsed: clock.elapsed(),
                })
            }
        }
    }
    let mut joint = joint_robustness(&spec.psi, &plans)?;
    let (mut rho_psi, mut holds) = assess(&spec.psi, &plans)?;
    let mut log = vec![IterationRecord {
        k: 0,
        agents: init_log,
        joint_rho: joint.clone(),
        rho_psi,
        satisfied: holds,
    }];
    let mut checks = 0;
    let mut violations = Vec::new();
    let mut iterations = 0;
    for k in 1..=k_max {
        iterations = k;
        let active: Vec<usize> = schedule.at(k).to_vec();
        let snapshot = &plans;
        let run = |&i: &usize| -> Result<Step, CoordError> {
            if has_joint.contains(&i) {
                iteration_step(model, spec, i, k, snapshot, config)
            } else {
                Ok(Step {
                    plan: snapshot[&i].clone(),
                    log: AgentLog {
                        agent: i,
                        action: Action::Skipped,
                        status: None,
                        cost: 0.0,
                        selected: None,
                        mu: None,
                        nodes: 0,
                    },
                    checked: false,
                })
            }
        };
        let steps: Vec<Result<Step, CoordError>> = if config.parallel {
            active.par_iter().map(run).collect()
        } else {
            active.iter().map(run).collect()
        };
        // commit the whole sweep at once
        let mut next = plans.clone();
        let mut agent_logs = Vec::new();
        for (&i, step) in active.iter().zip(steps) {
            let step = step?;
            checks += usize::from(step.checked);
            next.insert(i, step.plan);
            agent_logs.push(step.log);
        }
        plans = next;
        let current = joint_robustness(&spec.psi, &plans)?;
        for (c, &rho) in &current {
            let before = joint[c];
            if rho < before.min(0.0) - CONTRACT_TOL {
                violations.push(ContractViolation {
                    k,
                    clique: c.clone(),
                    previous: before,
                    current: rho,
                });
            }
        }
        joint = current;
        (rho_psi, holds) = assess(&spec.psi, &plans)?;
        log.push(IterationRecord {
            k,
            agents: agent_logs,
            joint_rho: joint.clone(),
            rho_psi,
            satisfied: rho_psi >= 0.0 && holds,
        });
        if rho_psi >= 0.0 && holds {
            break;
        }
    }
    Ok(PlanResult {
        status: if rho_psi >= 0.0 && holds {
            PlanStatus::Satisfied
        } else {
            PlanStatus::MinimallyViolating
        },
        total_cost: plan_cost(model, &plans),
        plans,
        iterations,
        rho_psi,
        log,
        feasibility_checks: checks,
        contract_violations: violations,
        elapsed: clock.elapsed(),
    })
}

pub fn plan(model: &MasModel, spec: &TightenedSpec, mode: PlanMode, config: &PlanConfig) -> Result<PlanResult, CoordError> {
    match mode {
        PlanMode::Centralized => plan_centralized(model, spec, config),
        PlanMode::Iterative => run_algorithm1(model, spec, config),
    }
}

fn clique_name(c: &[usize]) -> String {
    let parts: Vec<String> = c.iter().map(|i| i.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Tab-separated iteration log: one `agent` line per agent action and one
/// `sweep` line per iteration with the joint robustness values.
pub fn format_log(result: &PlanResult) -> String {
    let mut out = String::from("kind\tk\tagent\taction\tstatus\tcost\tselected\tmu\tnodes\n");
    for rec in &result.log {
        for a in &rec.agents {
            let _ = writeln!(
                out,
                "agent\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rec.k,
                a.agent,
                a.action.as_str(),
                a.status.map(|s| s.as_str()).unwrap_or("-"),
                a.cost,
                a.selected.as_deref().map(clique_name).unwrap_or_else(|| "-".into()),
                a.mu.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
                a.nodes
            );
        }
        let rhos: Vec<String> = rec
            .joint_rho
            .iter()
            .map(|(c, r)| format!("{}={r}", clique_name(c)))
            .collect();
        let _ = writeln!(
            out,
            "sweep\t{}\trho_psi={}\tsatisfied={}\t{}",
            rec.k,
            rec.rho_psi,
            rec.satisfied,
            rhos.join(" ")
        );
    }
    let _ = writeln!(
        out,
        "result\tstatus={}\titerations={}\trho_psi={}\tcost={}\tcarry_checks={}\tcontract_violations={}",
        result.status.as_str(),
        result.iterations,
        result.rho_psi,
        result.total_cost,
        result.feasibility_checks,
        result.contract_violations.len()
    );
    out
}
