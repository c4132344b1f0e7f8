//! Agents, disturbances, the global specification and its clique graph.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::stl::{check_assumption1, Formula, Layout, Predicate, StlError, Trajectory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("agent {agent}: {message}")]
    Agent { agent: usize, message: String },
    #[error("agent {agent}: closed loop A+BK has spectral radius {radius:.6} (needs < 1)")]
    Unstable { agent: usize, radius: f64 },
    #[error("agent {agent}: disturbance covariance is not positive definite")]
    Covariance { agent: usize },
    #[error("clique {clique:?}: {message}")]
    Clique { clique: Vec<usize>, message: String },
    #[error("specification: {0}")]
    Spec(String),
    #[error(transparent)]
    Stl(#[from] StlError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisturbanceKind {
    /// Only the first two moments are known.
    MomentOnly,
    Gaussian,
}

/// Zero-mean i.i.d. disturbance with covariance `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub q: DMatrix<f64>,
}

impl DisturbanceSpec {
    pub fn gaussian(q: DMatrix<f64>) -> Self {
        DisturbanceSpec {
            kind: DisturbanceKind::Gaussian,
            q,
        }
    }

    /// Lower Cholesky factor of `q`, if it is symmetric positive definite.
    pub fn cholesky(&self) -> Option<DMatrix<f64>> {
        if !self.q.is_square() || (&self.q - self.q.transpose()).amax() > 1e-12 * (1.0 + self.q.amax()) {
            return None;
        }
        self.q.clone().cholesky().map(|c| c.l())
    }
}

/// L1 weights: Σ_t (input_l1‖v(t)‖₁ + state_l1‖z(t)‖₁) + terminal_l1‖z(N)‖₁.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub input_l1: f64,
    pub state_l1: f64,
    pub terminal_l1: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            input_l1: 1.0,
            state_l1: 0.0,
            terminal_l1: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentModel {
    pub id: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub input_lo: DVector<f64>,
    pub input_hi: DVector<f64>,
    pub state_lo: Option<DVector<f64>>,
    pub state_hi: Option<DVector<f64>>,
    pub disturbance: DisturbanceSpec,
    pub cost: CostSpec,
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Closed-loop error dynamics A + BK.
    pub fn a_bar(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| ModelError::Agent {
            agent: self.id,
            message: m,
        };
        let n = self.a.nrows();
        let m = self.b.ncols();
        if !self.a.is_square() || n == 0 {
            return Err(err(format!("A must be square and non-empty, got {}x{}", self.a.nrows(), self.a.ncols())));
        }
        if self.b.nrows() != n {
            return Err(err(format!("B has {} rows, expected {n}", self.b.nrows())));
        }
        if self.k.shape() != (m, n) {
            return Err(err(format!("K is {:?}, expected ({m}, {n})", self.k.shape())));
        }
        if self.x0.len() != n {
            return Err(err(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        if self.input_lo.len() != m || self.input_hi.len() != m {
            return Err(err(format!("input box must have {m} entries")));
        }
        if self.input_lo.iter().zip(self.input_hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(err("input box is empty".into()));
        }
        match (&self.state_lo, &self.state_hi) {
            (None, None) => {}
            (Some(lo), Some(hi)) => {
                if lo.len() != n || hi.len() != n {
                    return Err(err(format!("state box must have {n} entries")));
                }
                if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
                    return Err(err("state box is empty".into()));
                }
            }
            _ => return Err(err("state box needs both lower and upper bounds".into())),
        }
        if self.disturbance.q.shape() != (n, n) {
            return Err(err(format!("Q must be {n}x{n}")));
        }
        if self.disturbance.cholesky().is_none() {
            return Err(ModelError::Covariance { agent: self.id });
        }
        let c = &self.cost;
        if c.input_l1 < 0.0 || c.state_l1 < 0.0 || c.terminal_l1 < 0.0 {
            return Err(err("cost weights must be non-negative".into()));
        }
        let radius = spectral_radius(&self.a_bar());
        if radius >= 1.0 - 1e-6 {
            return Err(ModelError::Unstable {
                agent: self.id,
                radius,
            });
        }
        Ok(())
    }

    /// The state box as `G[0,N]` over per-coordinate bounds, if present.
    pub fn state_box_formula(&self, horizon: usize) -> Option<Formula> {
        let (lo, hi) = (self.state_lo.as_ref()?, self.state_hi.as_ref()?);
        let mut parts = Vec::new();
        for d in 0..self.state_dim() {
            if lo[d].is_finite() {
                parts.push(Formula::pred(Predicate::at_least(self.id, d, lo[d])));
            }
            if hi[d].is_finite() {
                parts.push(Formula::pred(Predicate::at_most(self.id, d, hi[d])));
            }
        }
        Some(Formula::always(Formula::and(parts), 0, horizon))
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Gain placing every closed-loop eigenvalue at zero when B is square and
/// invertible (K = -B⁻¹A). A convenience for integrator-like agents; it is
/// not a general synthesis method.
pub fn deadbeat_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !b.is_square() || b.nrows() != a.nrows() {
        return None;
    }
    let inv = b.clone().try_inverse()?;
    Some(-(inv * a))
}

/// Local tasks per agent, joint tasks per clique, target probability and horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalSpec {
    pub local_tasks: BTreeMap<usize, Formula>,
    pub joint_tasks: BTreeMap<Vec<usize>, Formula>,
    pub theta: f64,
    pub horizon: usize,
}

impl GlobalSpec {
    pub fn cliques(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.joint_tasks.keys()
    }

    /// Conjunction of every local and joint task.
    pub fn conjunction(&self) -> Formula {
        Formula::and(
            self.local_tasks
                .values()
                .chain(self.joint_tasks.values())
                .cloned()
                .collect(),
        )
    }

    pub fn validate(&self, layout: &Layout) -> Result<(), ModelError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ModelError::Spec(format!("theta must lie in (0,1), got {}", self.theta)));
        }
        for (agent, f) in &self.local_tasks {
            if layout.dim(*agent).is_none() {
                return Err(ModelError::Spec(format!("local task for unknown agent {agent}")));
            }
            let used = f.agents();
            if used.iter().any(|a| a != agent) {
                return Err(ModelError::Spec(format!(
                    "local task of agent {agent} references agents {used:?}"
                )));
            }
            self.check_horizon(f, &format!("local task of agent {agent}"))?;
        }
        for (clique, f) in &self.joint_tasks {
            let cerr = |m: &str| ModelError::Clique {
                clique: clique.clone(),
                message: m.to_string(),
            };
            if clique.len() < 2 {
                return Err(cerr("needs at least two agents"));
            }
            if clique.windows(2).any(|w| w[0] >= w[1]) {
                return Err(cerr("agent ids must be sorted and distinct"));
            }
            if let Some(a) = clique.iter().find(|a| layout.dim(**a).is_none()) {
                return Err(cerr(&format!("unknown agent {a}")));
            }
            if f.agents().iter().any(|a| !clique.contains(a)) {
                return Err(cerr("task references agents outside the clique"));
            }
            self.check_horizon(f, &format!("joint task {clique:?}"))?;
        }
        check_assumption1(self.local_tasks.values().chain(self.joint_tasks.values()))?;
        Ok(())
    }

    fn check_horizon(&self, f: &Formula, what: &str) -> Result<(), ModelError> {
        if f.horizon() > self.horizon {
            return Err(ModelError::Spec(format!(
                "{what} has horizon {} beyond N = {}",
                f.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// All unordered agent pairs that share a clique.
pub fn induced_graph(spec: &GlobalSpec) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for clique in spec.cliques() {
        for (i, a) in clique.iter().enumerate() {
            for b in &clique[i + 1..] {
                edges.insert((*a.min(b), *a.max(b)));
            }
        }
    }
    edges
}

/// Block-diagonal aggregate of the agent dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    /// (agent id, state offset, state dim, input offset, input dim)
    pub blocks: Vec<(usize, usize, usize, usize, usize)>,
}

impl Aggregate {
    /// Extracts agent `id`'s blocks (A, B, K).
    pub fn slice(&self, id: usize) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let &(_, so, sn, io, im) = self.blocks.iter().find(|b| b.0 == id)?;
        Some((
            self.a.view((so, so), (sn, sn)).into_owned(),
            self.b.view((so, io), (sn, im)).into_owned(),
            self.k.view((io, so), (im, sn)).into_owned(),
        ))
    }
}

pub fn aggregate_dynamics(agents: &[AgentModel]) -> Aggregate {
    let n: usize = agents.iter().map(|a| a.state_dim()).sum();
    let m: usize = agents.iter().map(|a| a.input_dim()).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut k = DMatrix::zeros(m, n);
    let mut blocks = Vec::new();
    let (mut so, mut io) = (0, 0);
    for ag in agents {
        let (sn, im) = (ag.state_dim(), ag.input_dim());
        a.view_mut((so, so), (sn, sn)).copy_from(&ag.a);
        b.view_mut((so, io), (sn, im)).copy_from(&ag.b);
        k.view_mut((io, so), (im, sn)).copy_from(&ag.k);
        blocks.push((ag.id, so, sn, io, im));
        so += sn;
        io += im;
    }
    let a_bar = &a + &b * &k;
    Aggregate {
        a,
        b,
        k,
        a_bar,
        blocks,
    }
}

/// x = z + e.
pub fn decompose_trajectory(z: &Trajectory, e: &Trajectory) -> Result<Trajectory, StlError> {
    z.add(e)
}

/// A validated multi-agent system with its specification.
#[derive(Clone, Debug, PartialEq)]
pub struct MasModel {
    agents: Vec<AgentModel>,
    spec: GlobalSpec,
    layout: Layout,
}

impl MasModel {
    pub fn new(mut agents: Vec<AgentModel>, spec: GlobalSpec) -> Result<Self, ModelError> {
        if agents.is_empty() {
            return Err(ModelError::Spec("no agents".into()));
        }
        agents.sort_by_key(|a| a.id);
        if agents.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(ModelError::Spec("duplicate agent id".into()));
        }
        for a in &agents {
            a.validate()?;
        }
        let layout = Layout::new(agents.iter().map(|a| (a.id, a.state_dim())));
        spec.validate(&layout)?;
        Ok(MasModel {
            agents,
            spec,
            layout,
        })
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> Option<&AgentModel> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn agent_ids(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.id).collect()
    }

    pub fn spec(&self) -> &GlobalSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Agent `id`'s local task with its state box conjoined (TRUE if neither exists).
    pub fn effective_local_task(&self, id: usize) -> Formula {
        let agent = self.agent(id).expect("known agent");
        let task = self.spec.local_tasks.get(&id).cloned();
        let boxed = agent.state_box_formula(self.spec.horizon);
        match (task, boxed) {
            (Some(t), Some(b)) => Formula::and(vec![t, b]),
            (Some(t), None) => t,
            (None, Some(b)) => b,
            (None, None) => Formula::truth(),
        }
    }

    /// The specification the plan must satisfy, with state boxes folded into
    /// the local tasks.
    pub fn effective_spec(&self) -> GlobalSpec {
        GlobalSpec {
            local_tasks: self
                .agents
                .iter()
                .map(|a| (a.id, self.effective_local_task(a.id)))
                .collect(),
            joint_tasks: self.spec.joint_tasks.clone(),
            theta: self.spec.theta,
            horizon: self.spec.horizon,
        }
    }
}
