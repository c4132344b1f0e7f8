//! Big-M MILP encodings of STL planning problems.
//!
//! Two encodings of STL constraints are available:
//!
//! * [`EncodingStyle::Compact`] encodes "formula holds" (or "robustness is at
//!   least c") as implications from an indicator: conjunctions pass their
//!   indicator down, disjunctions introduce one binary per live branch, and
//!   each literal becomes one big-M row.
//! * [`EncodingStyle::Full`] introduces a satisfaction binary per node and
//!   time (and a robustness variable per node and time for robustness
//!   bounds) with the usual two-sided and/or linearizations.
//!
//! Every big-M row uses the tightest constant implied by the variable bounds,
//! and literals whose truth is already decided by those bounds are folded.

use std::collections::{BTreeMap, HashMap};

use milp::{MilpModel, Sense, VarId, VarKind};

use crate::model::{AgentModel, MasModel};
use crate::stl::{
    eval_robustness, expand_until, Formula, FormulaKind, Polarity, Predicate, Signal, StlError, Trajectory,
};
use crate::tighten::{InputBoxes, TightenedSpec};

const WITNESS_TOL: f64 = 1e-7;

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("agent {0} is not part of the model")]
    UnknownAgent(usize),
    #[error("no trajectory available for agent {0}")]
    MissingNeighbor(usize),
    #[error("formula is not in negation normal form")]
    NotNnf,
    #[error("invalid encoding configuration: {0}")]
    Config(String),
    #[error("witness construction failed: {0}")]
    Witness(String),
    #[error("predicate value {value} at t={t} exceeds half the big-M constant {big_m}")]
    BigM { value: f64, t: usize, big_m: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodingStyle {
    Compact,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodingConfig {
    /// Global big-M; derived from the state bounds when `None`.
    pub big_m: Option<f64>,
    /// Strictness margin on predicate literals.
    pub eps: f64,
    pub robustness_cap: f64,
    /// Weight of the robustness slack against the cost.
    pub mu_weight: f64,
    pub style: EncodingStyle,
    /// Substitute states as affine functions of the inputs instead of
    /// introducing state variables with dynamics rows.
    pub condensed: bool,
    /// Declare inputs integral (used by enumeration oracles).
    pub integer_inputs: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            big_m: None,
            eps: 1e-4,
            robustness_cap: 1e3,
            mu_weight: 1.0,
            style: EncodingStyle::Compact,
            condensed: true,
            integer_inputs: false,
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if !(self.eps > 0.0) {
            return Err(EncodeError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if let Some(m) = self.big_m {
            if !(m > self.eps) {
                return Err(EncodeError::Config(format!("big-M {m} must exceed eps {}", self.eps)));
            }
        }
        if !(self.robustness_cap > 0.0) || !self.mu_weight.is_finite() || self.mu_weight < 0.0 {
            return Err(EncodeError::Config("robustness cap and slack weight must be positive".into()));
        }
        Ok(())
    }
}

/// Affine expression over model variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        Affine {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_scaled(&mut self, other: &Affine, c: f64) {
        if c == 0.0 {
            return;
        }
        self.constant += c * other.constant;
        self.terms.extend(other.terms.iter().map(|&(v, a)| (v, c * a)));
    }

    fn normalize(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * values[v.0]).sum::<f64>()
    }

    /// Exact range over the variable bounds of `model`.
    pub fn range(&self, model: &MilpModel) -> (f64, f64) {
        let (mut lo, mut hi) = (self.constant, self.constant);
        for &(v, c) in &self.terms {
            let var = model.var(v);
            if c > 0.0 {
                lo += c * var.lower;
                hi += c * var.upper;
            } else {
                lo += c * var.upper;
                hi += c * var.lower;
            }
        }
        (lo, hi)
    }
}

/// Model entity a variable stands for.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    State { agent: usize, t: usize, dim: usize },
    Input { agent: usize, t: usize, dim: usize },
    InputPos { agent: usize, t: usize, dim: usize },
    InputNeg { agent: usize, t: usize, dim: usize },
    Sat { scope: usize, node: usize, t: usize },
    Rob { scope: usize, node: usize, t: usize },
    Select { scope: usize, node: usize, t: usize, child: usize },
    Branch { scope: usize, seq: usize },
    Slack,
    CostAux { agent: usize, seq: usize },
    Infeasible,
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    by_entity: BTreeMap<Entity, VarId>,
    by_var: Vec<Entity>,
}

impl Registry {
    fn insert(&mut self, e: Entity, v: VarId) {
        assert_eq!(v.0, self.by_var.len(), "variables must be registered in creation order");
        let prev = self.by_entity.insert(e.clone(), v);
        assert!(prev.is_none(), "entity {e:?} registered twice");
        self.by_var.push(e);
    }

    pub fn get(&self, e: &Entity) -> Option<VarId> {
        self.by_entity.get(e).copied()
    }

    pub fn entity(&self, v: VarId) -> &Entity {
        &self.by_var[v.0]
    }

    pub fn len(&self) -> usize {
        self.by_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Entity, VarId)> {
        self.by_entity.iter().map(|(e, v)| (e, *v))
    }
}

/// Nominal plan of one agent: `z` has N+1 samples, `v` has N.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPlan {
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AgentPlan {
    /// Forward simulation of z(t+1) = A z(t) + B v(t).
    pub fn simulate(agent: &AgentModel, v: Vec<Vec<f64>>) -> AgentPlan {
        let mut z = vec![agent.x0.iter().copied().collect::<Vec<f64>>()];
        for vt in &v {
            let zt = nalgebra::DVector::from_column_slice(z.last().unwrap());
            let next = &agent.a * zt + &agent.b * nalgebra::DVector::from_column_slice(vt);
            z.push(next.iter().copied().collect());
        }
        AgentPlan { z, v }
    }
}

/// Stacked state trajectory of the given plans.
pub fn plans_trajectory(plans: &BTreeMap<usize, AgentPlan>) -> Result<Trajectory, StlError> {
    let parts: BTreeMap<usize, Vec<Vec<f64>>> = plans.iter().map(|(i, p)| (*i, p.z.clone())).collect();
    Trajectory::from_agents(&parts)
}

/// Lower bound in a robustness constraint.
#[derive(Clone, Debug, PartialEq)]
pub enum Bound {
    Constant(f64),
    /// The slack variable (which must have been added).
    Slack,
}

#[derive(Clone, Debug)]
enum Threshold {
    /// Boolean satisfaction with the eps margin.
    Sat,
    /// Robustness at least the expression.
    Rob(Affine),
}

#[derive(Clone, Debug)]
enum EncTree {
    True,
    Never,
    Lit { expr: Affine, strict: f64 },
    All(Vec<EncTree>),
    Any { binaries: Vec<VarId>, children: Vec<EncTree> },
}

impl EncTree {
    fn holds(&self, values: &[f64]) -> bool {
        match self {
            EncTree::True => true,
            EncTree::Never => false,
            EncTree::Lit { expr, strict } => expr.eval(values) >= strict - WITNESS_TOL,
            EncTree::All(v) => v.iter().all(|c| c.holds(values)),
            EncTree::Any { children, .. } => children.iter().any(|c| c.holds(values)),
        }
    }

    fn assign(&self, active: bool, values: &mut [f64]) -> bool {
        match self {
            EncTree::True | EncTree::Lit { .. } => true,
            EncTree::Never => !active,
            EncTree::All(v) => v.iter().all(|c| c.assign(active, values)),
            EncTree::Any { binaries, children } => {
                let pick = if active {
                    match children.iter().position(|c| c.holds(values)) {
                        Some(i) => Some(i),
                        None => return false,
                    }
                } else {
                    None
                };
                let mut ok = true;
                for (i, (b, c)) in binaries.iter().zip(children).enumerate() {
                    let on = pick == Some(i);
                    values[b.0] = if on { 1.0 } else { 0.0 };
                    ok &= c.assign(on, values);
                }
                ok
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Bin {
    Const(bool),
    Var(VarId),
}

#[derive(Clone, Copy, Debug)]
enum RobRef {
    Const(f64),
    Var(VarId),
}

#[derive(Clone, Debug)]
enum Record {
    SatLit { var: VarId, expr: Affine, strict: f64 },
    SatAnd { var: VarId, children: Vec<VarId> },
    SatOr { var: VarId, children: Vec<VarId> },
    RobLit { var: VarId, expr: Affine },
    RobMin { var: VarId, children: Vec<RobRef>, selectors: Vec<VarId> },
    RobMax { var: VarId, children: Vec<RobRef>, selectors: Vec<VarId> },
}

#[derive(Clone, Debug)]
enum InputRepr {
    Plain(VarId),
    Split(VarId, VarId),
}

#[derive(Clone, Debug)]
struct AgentBlock {
    states: Vec<Vec<Affine>>,
    state_vars: Option<Vec<Vec<VarId>>>,
    inputs: Vec<Vec<InputRepr>>,
}

/// Incremental builder of an encoded planning problem.
pub struct Encoder {
    config: EncodingConfig,
    horizon: usize,
    milp: MilpModel,
    registry: Registry,
    blocks: BTreeMap<usize, AgentBlock>,
    frozen: BTreeMap<usize, Vec<Vec<f64>>>,
    trees: Vec<EncTree>,
    records: Vec<Record>,
    cost_aux: Vec<(VarId, Affine)>,
    predicates: Vec<(Predicate, usize)>,
    slack: Option<VarId>,
    infeasible: Option<VarId>,
    scope: usize,
    branch_seq: usize,
    row_seq: usize,
    aux_seq: usize,
}

impl Encoder {
    pub fn new(name: &str, horizon: usize, config: &EncodingConfig) -> Result<Self, EncodeError> {
        config.validate()?;
        Ok(Encoder {
            config: config.clone(),
            horizon,
            milp: MilpModel::new(name),
            registry: Registry::default(),
            blocks: BTreeMap::new(),
            frozen: BTreeMap::new(),
            trees: Vec::new(),
            records: Vec::new(),
            cost_aux: Vec::new(),
            predicates: Vec::new(),
            slack: None,
            infeasible: None,
            scope: 0,
            branch_seq: 0,
            row_seq: 0,
            aux_seq: 0,
        })
    }

    fn new_var(&mut self, e: Entity, name: String, lo: f64, hi: f64, kind: VarKind) -> VarId {
        let v = self.milp.add_var(name, lo, hi, kind);
        self.registry.insert(e, v);
        v
    }

    fn row(&mut self, prefix: &str, terms: Vec<(VarId, f64)>, sense: Sense, rhs: f64) {
        let name = format!("{prefix}{}", self.row_seq);
        self.row_seq += 1;
        self.milp.add_constraint(name, terms, sense, rhs);
    }

    /// Adds agent dynamics over the horizon with per-time input boxes
    /// (the agent's own box when `boxes` is `None`) and its L1 cost.
    pub fn add_agent(&mut self, agent: &AgentModel, boxes: Option<&InputBoxes>) {
        let n = self.horizon;
        let (sd, id) = (agent.state_dim(), agent.id);
        let input_kind = if self.config.integer_inputs {
            VarKind::Integer
        } else {
            VarKind::Continuous
        };
        let w_in = agent.cost.input_l1;
        let mut inputs = Vec::with_capacity(n);
        let mut input_exprs: Vec<Vec<Affine>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut row = Vec::new();
            let mut exprs = Vec::new();
            for d in 0..agent.input_dim() {
                let (lo, hi) = match boxes {
                    Some(b) => (b.lower[t][d], b.upper[t][d]),
                    None => (agent.input_lo[d], agent.input_hi[d]),
                };
                let key = (id, t, d);
                if w_in > 0.0 && lo < 0.0 && hi > 0.0 {
                    let p = self.new_var(
                        Entity::InputPos { agent: key.0, t, dim: d },
                        format!("vp_{id}_{t}_{d}"),
                        0.0,
                        hi,
                        input_kind,
                    );
                    let q = self.new_var(
                        Entity::InputNeg { agent: key.0, t, dim: d },
                        format!("vn_{id}_{t}_{d}"),
                        0.0,
                        -lo,
                        input_kind,
                    );
                    self.milp.add_objective_term(p, w_in);
                    self.milp.add_objective_term(q, w_in);
                    let mut e = Affine::var(p);
                    e.add_scaled(&Affine::var(q), -1.0);
                    row.push(InputRepr::Split(p, q));
                    exprs.push(e);
                } else {
                    let v = self.new_var(
                        Entity::Input { agent: id, t, dim: d },
                        format!("v_{id}_{t}_{d}"),
                        lo,
                        hi,
                        input_kind,
                    );
                    // the sign of v is fixed by its bounds
                    if w_in > 0.0 {
                        self.milp.add_objective_term(v, if lo >= 0.0 { w_in } else { -w_in });
                    }
                    row.push(InputRepr::Plain(v));
                    exprs.push(Affine::var(v));
                }
            }
            inputs.push(row);
            input_exprs.push(exprs);
        }

        // condensed state expressions
        let mut cond: Vec<Vec<Affine>> = vec![agent.x0.iter().map(|&x| Affine::constant(x)).collect()];
        for t in 0..n {
            let prev = &cond[t];
            let mut next = Vec::with_capacity(sd);
            for r in 0..sd {
                let mut e = Affine::default();
                for c in 0..sd {
                    e.add_scaled(&prev[c], agent.a[(r, c)]);
                }
                for c in 0..agent.input_dim() {
                    e.add_scaled(&input_exprs[t][c], agent.b[(r, c)]);
                }
                e.normalize();
                next.push(e);
            }
            cond.push(next);
        }

        let (states, state_vars) = if self.config.condensed {
            (cond, None)
        } else {
            let mut vars: Vec<Vec<VarId>> = Vec::with_capacity(n + 1);
            for (t, exprs) in cond.iter().enumerate() {
                let mut row = Vec::with_capacity(sd);
                for (d, e) in exprs.iter().enumerate() {
                    let (lo, hi) = e.range(&self.milp);
                    row.push(self.new_var(
                        Entity::State { agent: id, t, dim: d },
                        format!("z_{id}_{t}_{d}"),
                        lo,
                        hi,
                        VarKind::Continuous,
                    ));
                }
                vars.push(row);
            }
            for t in 0..n {
                for r in 0..sd {
                    let mut terms = vec![(vars[t + 1][r], 1.0)];
                    for c in 0..sd {
                        terms.push((vars[t][c], -agent.a[(r, c)]));
                    }
                    for c in 0..agent.input_dim() {
                        for &(v, k) in &input_exprs[t][c].terms {
                            terms.push((v, -agent.b[(r, c)] * k));
                        }
                    }
                    self.milp
                        .add_constraint(format!("dyn_{id}_{t}_{r}"), terms, Sense::Eq, 0.0);
                }
            }
            let states = vars
                .iter()
                .map(|row| row.iter().map(|&v| Affine::var(v)).collect())
                .collect();
            (states, Some(vars))
        };

        // state cost over t = 0..N-1 plus terminal cost at N
        for t in 0..=n {
            let mut w = if t < n { agent.cost.state_l1 } else { 0.0 };
            if t == n {
                w += agent.cost.terminal_l1;
            }
            if w <= 0.0 {
                continue;
            }
            for d in 0..sd {
                let e = states[t][d].clone();
                self.abs_cost(id, e, w);
            }
        }

        self.blocks.insert(
            id,
            AgentBlock {
                states,
                state_vars,
                inputs,
            },
        );
    }

    fn abs_cost(&mut self, agent: usize, e: Affine, w: f64) {
        if e.is_constant() {
            let off = self.milp.objective_offset();
            let obj = self.milp.objective().to_vec();
            self.milp.set_objective(obj, off + w * e.constant.abs());
            return;
        }
        let (lo, hi) = e.range(&self.milp);
        let s = self.new_var(
            Entity::CostAux {
                agent,
                seq: self.aux_seq,
            },
            format!("abs_{agent}_{}", self.aux_seq),
            0.0,
            lo.abs().max(hi.abs()),
            VarKind::Continuous,
        );
        self.aux_seq += 1;
        // s >= e and s >= -e
        let mut up = vec![(s, 1.0)];
        up.extend(e.terms.iter().map(|&(v, c)| (v, -c)));
        self.row("abs", up, Sense::Ge, e.constant);
        let mut down = vec![(s, 1.0)];
        down.extend(e.terms.iter().copied());
        self.row("abs", down, Sense::Ge, -e.constant);
        self.milp.add_objective_term(s, w);
        self.cost_aux.push((s, e));
    }

    /// Treats `agent`'s states as the given constants.
    pub fn freeze(&mut self, agent: usize, z: Vec<Vec<f64>>) {
        self.frozen.insert(agent, z);
    }

    /// Adds the robustness slack μ ∈ [lo, hi] with objective weight `-weight`.
    pub fn add_slack(&mut self, lo: f64, hi: f64, weight: f64) -> VarId {
        let v = self.new_var(Entity::Slack, "mu".into(), lo, hi, VarKind::Continuous);
        if weight != 0.0 {
            self.milp.add_objective_term(v, -weight);
        }
        self.slack = Some(v);
        v
    }

    fn state(&self, s: Signal, t: usize) -> Result<Affine, EncodeError> {
        if let Some(b) = self.blocks.get(&s.agent) {
            return Ok(b.states[t][s.dim].clone());
        }
        match self.frozen.get(&s.agent) {
            Some(z) => Ok(Affine::constant(z[t][s.dim])),
            None => Err(EncodeError::MissingNeighbor(s.agent)),
        }
    }

    fn mu(&self, p: &Predicate, t: usize) -> Result<Affine, EncodeError> {
        let mut e = Affine::constant(p.offset);
        for (s, c) in &p.coeffs {
            e.add_scaled(&self.state(*s, t)?, *c);
        }
        e.normalize();
        Ok(e)
    }

    /// Literal as `expr >= strict`.
    fn literal(&self, p: &Predicate, t: usize, thr: &Threshold) -> Result<(Affine, f64), EncodeError> {
        let mu = self.mu(p, t)?;
        let sign = match p.polarity {
            Polarity::Positive => 1.0,
            Polarity::Negated => -1.0,
        };
        let mut e = Affine::default();
        e.add_scaled(&mu, sign);
        Ok(match thr {
            Threshold::Sat => (e, self.config.eps),
            Threshold::Rob(c) => {
                e.add_scaled(c, -1.0);
                e.normalize();
                (e, 0.0)
            }
        })
    }

    fn static_value(&self, f: &Formula, t: usize, thr: &Threshold) -> Result<Option<bool>, EncodeError> {
        let and = |vals: Vec<Option<bool>>| {
            if vals.iter().any(|v| *v == Some(false)) {
                Some(false)
            } else if vals.iter().all(|v| *v == Some(true)) {
                Some(true)
            } else {
                None
            }
        };
        let or = |vals: Vec<Option<bool>>| {
            if vals.iter().any(|v| *v == Some(true)) {
                Some(true)
            } else if vals.iter().all(|v| *v == Some(false)) {
                Some(false)
            } else {
                None
            }
        };
        Ok(match f.kind() {
            FormulaKind::True => match thr {
                Threshold::Sat => Some(true),
                Threshold::Rob(c) => {
                    let (_, hi) = c.range(&self.milp);
                    (hi <= self.config.robustness_cap).then_some(true)
                }
            },
            FormulaKind::Pred(p) => {
                let (e, strict) = self.literal(p, t, thr)?;
                let (lo, hi) = e.range(&self.milp);
                if lo >= strict {
                    Some(true)
                } else if hi < strict {
                    Some(false)
                } else {
                    None
                }
            }
            FormulaKind::Not(_) => return Err(EncodeError::NotNnf),
            FormulaKind::And(v) => and(v.iter().map(|g| self.static_value(g, t, thr)).collect::<Result<_, _>>()?),
            FormulaKind::Or(v) => or(v.iter().map(|g| self.static_value(g, t, thr)).collect::<Result<_, _>>()?),
            FormulaKind::Always { inner, a, b } => {
                and((t + a..=t + b).map(|s| self.static_value(inner, s, thr)).collect::<Result<_, _>>()?)
            }
            FormulaKind::Eventually { inner, a, b } => {
                or((t + a..=t + b).map(|s| self.static_value(inner, s, thr)).collect::<Result<_, _>>()?)
            }
            FormulaKind::Until { left, right, a, b } => {
                self.static_value(&expand_until(left, right, *a, *b), t, thr)?
            }
        })
    }

    fn never(&mut self, ind: Option<VarId>) {
        match ind {
            Some(b) => self.milp.set_bounds(b, 0.0, 0.0),
            None => {
                if self.infeasible.is_none() {
                    let v = self.new_var(Entity::Infeasible, "infeasible".into(), 0.0, 0.0, VarKind::Continuous);
                    self.milp.add_constraint("infeasible", [(v, 1.0)], Sense::Ge, 1.0);
                    self.infeasible = Some(v);
                }
            }
        }
    }

    fn note_predicate(&mut self, p: &Predicate, t: usize) {
        if p.coeffs.keys().any(|s| self.blocks.contains_key(&s.agent)) {
            self.predicates.push((p.clone(), t));
        }
    }

    /// expr >= strict - M(1 - ind) with the tightest valid M.
    fn literal_row(&mut self, expr: &Affine, strict: f64, ind: Option<VarId>) {
        let mut terms = expr.terms.clone();
        match ind {
            None => self.row("lit", terms, Sense::Ge, strict - expr.constant),
            Some(b) => {
                let (lo, _) = expr.range(&self.milp);
                let m = (strict - lo).max(0.0);
                terms.push((b, -m));
                self.row("lit", terms, Sense::Ge, strict - m - expr.constant);
            }
        }
    }

    fn implied(&mut self, f: &Formula, t: usize, ind: Option<VarId>, thr: &Threshold) -> Result<EncTree, EncodeError> {
        match self.static_value(f, t, thr)? {
            Some(true) => return Ok(EncTree::True),
            Some(false) => {
                self.never(ind);
                return Ok(EncTree::Never);
            }
            None => {}
        }
        Ok(match f.kind() {
            FormulaKind::True => EncTree::True,
            FormulaKind::Pred(p) => {
                let (expr, strict) = self.literal(p, t, thr)?;
                self.note_predicate(p, t);
                self.literal_row(&expr, strict, ind);
                EncTree::Lit { expr, strict }
            }
            FormulaKind::Not(_) => return Err(EncodeError::NotNnf),
            FormulaKind::And(v) => {
                let mut out = Vec::with_capacity(v.len());
                for g in v {
                    out.push(self.implied(g, t, ind, thr)?);
                }
                EncTree::All(out)
            }
            FormulaKind::Always { inner, a, b } => {
                let mut out = Vec::new();
                for s in t + a..=t + b {
                    out.push(self.implied(inner, s, ind, thr)?);
                }
                EncTree::All(out)
            }
            FormulaKind::Or(v) => {
                let items: Vec<(&Formula, usize)> = v.iter().map(|g| (g, t)).collect();
                self.any(&items, ind, thr)?
            }
            FormulaKind::Eventually { inner, a, b } => {
                let items: Vec<(&Formula, usize)> = (t + a..=t + b).map(|s| (&**inner, s)).collect();
                self.any(&items, ind, thr)?
            }
            FormulaKind::Until { left, right, a, b } => {
                let e = expand_until(left, right, *a, *b);
                self.implied(&e, t, ind, thr)?
            }
        })
    }

    fn any(&mut self, items: &[(&Formula, usize)], ind: Option<VarId>, thr: &Threshold) -> Result<EncTree, EncodeError> {
        let mut live = Vec::new();
        for &(g, s) in items {
            match self.static_value(g, s, thr)? {
                Some(true) => return Ok(EncTree::True),
                Some(false) => {}
                None => live.push((g, s)),
            }
        }
        match live.len() {
            0 => {
                self.never(ind);
                Ok(EncTree::Never)
            }
            1 => self.implied(live[0].0, live[0].1, ind, thr),
            _ => {
                let mut binaries = Vec::with_capacity(live.len());
                for _ in &live {
                    let seq = self.branch_seq;
                    self.branch_seq += 1;
                    let b = self.new_var(
                        Entity::Branch { scope: self.scope, seq },
                        format!("or_{}_{seq}", self.scope),
                        0.0,
                        1.0,
                        VarKind::Binary,
                    );
                    binaries.push(b);
                }
                let mut sum: Vec<(VarId, f64)> = binaries.iter().map(|&b| (b, 1.0)).collect();
                match ind {
                    None => self.row("or", sum, Sense::Ge, 1.0),
                    Some(c) => {
                        sum.push((c, -1.0));
                        self.row("or", sum, Sense::Ge, 0.0);
                        for &b in &binaries {
                            self.row("or", vec![(b, 1.0), (c, -1.0)], Sense::Le, 0.0);
                        }
                    }
                }
                let mut children = Vec::with_capacity(live.len());
                for (&(g, s), &b) in live.iter().zip(&binaries) {
                    children.push(self.implied(g, s, Some(b), thr)?);
                }
                Ok(EncTree::Any { binaries, children })
            }
        }
    }

    fn check_horizon(&self, f: &Formula) -> Result<(), EncodeError> {
        if f.horizon() > self.horizon {
            return Err(StlError::HorizonOverflow {
                t: 0,
                horizon: f.horizon(),
                last: self.horizon,
            }
            .into());
        }
        Ok(())
    }

    /// Requires `f` (NNF) to hold at t = 0.
    pub fn require(&mut self, f: &Formula) -> Result<(), EncodeError> {
        self.check_horizon(f)?;
        self.scope += 1;
        self.branch_seq = 0;
        match self.config.style {
            EncodingStyle::Compact => {
                let tree = self.implied(f, 0, None, &Threshold::Sat)?;
                self.trees.push(tree);
            }
            EncodingStyle::Full => {
                let expanded = expand_all(f);
                let ids = preorder_ids(&expanded);
                let mut memo = HashMap::new();
                match self.sat(&expanded, 0, &ids, &mut memo)? {
                    Bin::Const(true) => {}
                    Bin::Const(false) => self.never(None),
                    Bin::Var(q) => self.milp.set_bounds(q, 1.0, 1.0),
                }
            }
        }
        Ok(())
    }

    /// Requires ρ(f, 0) >= bound.
    pub fn require_robustness(&mut self, f: &Formula, bound: Bound) -> Result<(), EncodeError> {
        self.check_horizon(f)?;
        let thr = match bound {
            Bound::Constant(c) => {
                if c <= -crate::stl::TRUE_ROBUSTNESS {
                    return Ok(());
                }
                Affine::constant(c)
            }
            Bound::Slack => Affine::var(self.slack.ok_or_else(|| EncodeError::Config("no slack variable".into()))?),
        };
        self.scope += 1;
        self.branch_seq = 0;
        match self.config.style {
            EncodingStyle::Compact => {
                let tree = self.implied(f, 0, None, &Threshold::Rob(thr))?;
                self.trees.push(tree);
            }
            EncodingStyle::Full => {
                let expanded = expand_all(f);
                let ids = preorder_ids(&expanded);
                let mut memo = HashMap::new();
                let root = self.rob(&expanded, 0, &ids, &mut memo)?;
                let mut terms: Vec<(VarId, f64)> = thr.terms.iter().map(|&(v, c)| (v, -c)).collect();
                let mut rhs = thr.constant;
                match root {
                    RobRef::Const(c) => rhs -= c,
                    RobRef::Var(r) => terms.push((r, 1.0)),
                }
                if terms.is_empty() {
                    if rhs > 0.0 {
                        self.never(None);
                    }
                } else {
                    self.row("rob", terms, Sense::Ge, rhs);
                }
            }
        }
        Ok(())
    }

    fn sat(
        &mut self,
        f: &Formula,
        t: usize,
        ids: &HashMap<usize, usize>,
        memo: &mut HashMap<(usize, usize), Bin>,
    ) -> Result<Bin, EncodeError> {
        let key = (f as *const Formula as usize, t);
        if let Some(b) = memo.get(&key) {
            return Ok(*b);
        }
        let node = ids[&key.0];
        let out = match f.kind() {
            FormulaKind::True => Bin::Const(true),
            FormulaKind::Not(_) => return Err(EncodeError::NotNnf),
            FormulaKind::Until { .. } => unreachable!("expanded before encoding"),
            FormulaKind::Pred(p) => {
                match self.static_value(f, t, &Threshold::Sat)? {
                    Some(v) => Bin::Const(v),
                    None => {
                        let (expr, strict) = self.literal(p, t, &Threshold::Sat)?;
                        self.note_predicate(p, t);
                        let var = self.new_var(
                            Entity::Sat { scope: self.scope, node, t },
                            format!("sat_{}_{node}_{t}", self.scope),
                            0.0,
                            1.0,
                            VarKind::Binary,
                        );
                        self.literal_row(&expr, strict, Some(var));
                        self.records.push(Record::SatLit { var, expr, strict });
                        Bin::Var(var)
                    }
                }
            }
            FormulaKind::And(_) | FormulaKind::Always { .. } | FormulaKind::Or(_) | FormulaKind::Eventually { .. } => {
                let conj = matches!(f.kind(), FormulaKind::And(_) | FormulaKind::Always { .. });
                let items: Vec<(&Formula, usize)> = match f.kind() {
                    FormulaKind::And(v) | FormulaKind::Or(v) => v.iter().map(|g| (g, t)).collect(),
                    FormulaKind::Always { inner, a, b } | FormulaKind::Eventually { inner, a, b } => {
                        (t + a..=t + b).map(|s| (&**inner, s)).collect()
                    }
                    _ => unreachable!(),
                };
                let mut vars = Vec::new();
                let mut decided = None;
                for (g, s) in items {
                    match self.sat(g, s, ids, memo)? {
                        Bin::Const(v) if v != conj => {
                            decided = Some(v);
                            break;
                        }
                        Bin::Const(_) => {}
                        Bin::Var(q) => vars.push(q),
                    }
                }
                if let Some(v) = decided {
                    Bin::Const(v)
                } else if vars.is_empty() {
                    Bin::Const(conj)
                } else if vars.len() == 1 {
                    Bin::Var(vars[0])
                } else {
                    let var = self.new_var(
                        Entity::Sat { scope: self.scope, node, t },
                        format!("sat_{}_{node}_{t}", self.scope),
                        0.0,
                        1.0,
                        VarKind::Binary,
                    );
                    let k = vars.len() as f64;
                    let mut sum = vec![(var, 1.0)];
                    sum.extend(vars.iter().map(|&q| (q, -1.0)));
                    if conj {
                        for &q in &vars {
                            self.row("and", vec![(var, 1.0), (q, -1.0)], Sense::Le, 0.0);
                        }
                        self.row("and", sum, Sense::Ge, -(k - 1.0));
                        self.records.push(Record::SatAnd { var, children: vars });
                    } else {
                        for &q in &vars {
                            self.row("or", vec![(var, 1.0), (q, -1.0)], Sense::Ge, 0.0);
                        }
                        self.row("or", sum, Sense::Le, 0.0);
                        self.records.push(Record::SatOr { var, children: vars });
                    }
                    Bin::Var(var)
                }
            }
        };
        memo.insert(key, out);
        Ok(out)
    }

    fn rob_range(&self, r: RobRef) -> (f64, f64) {
        match r {
            RobRef::Const(c) => (c, c),
            RobRef::Var(v) => (self.milp.var(v).lower, self.milp.var(v).upper),
        }
    }

    fn rob(
        &mut self,
        f: &Formula,
        t: usize,
        ids: &HashMap<usize, usize>,
        memo: &mut HashMap<(usize, usize), RobRef>,
    ) -> Result<RobRef, EncodeError> {
        let key = (f as *const Formula as usize, t);
        if let Some(r) = memo.get(&key) {
            return Ok(*r);
        }
        let node = ids[&key.0];
        let cap = self.config.robustness_cap;
        let out = match f.kind() {
            FormulaKind::True => RobRef::Const(cap),
            FormulaKind::Not(_) => return Err(EncodeError::NotNnf),
            FormulaKind::Until { .. } => unreachable!("expanded before encoding"),
            FormulaKind::Pred(p) => {
                let (expr, _) = self.literal(p, t, &Threshold::Rob(Affine::constant(0.0)))?;
                self.note_predicate(p, t);
                if expr.is_constant() {
                    RobRef::Const(expr.constant)
                } else {
                    let (lo, hi) = expr.range(&self.milp);
                    let var = self.new_var(
                        Entity::Rob { scope: self.scope, node, t },
                        format!("rob_{}_{node}_{t}", self.scope),
                        lo,
                        hi,
                        VarKind::Continuous,
                    );
                    let mut terms = vec![(var, 1.0)];
                    terms.extend(expr.terms.iter().map(|&(v, c)| (v, -c)));
                    self.row("rlit", terms, Sense::Eq, expr.constant);
                    self.records.push(Record::RobLit { var, expr });
                    RobRef::Var(var)
                }
            }
            FormulaKind::And(_) | FormulaKind::Always { .. } | FormulaKind::Or(_) | FormulaKind::Eventually { .. } => {
                let is_min = matches!(f.kind(), FormulaKind::And(_) | FormulaKind::Always { .. });
                let items: Vec<(&Formula, usize)> = match f.kind() {
                    FormulaKind::And(v) | FormulaKind::Or(v) => v.iter().map(|g| (g, t)).collect(),
                    FormulaKind::Always { inner, a, b } | FormulaKind::Eventually { inner, a, b } => {
                        (t + a..=t + b).map(|s| (&**inner, s)).collect()
                    }
                    _ => unreachable!(),
                };
                let mut children = Vec::with_capacity(items.len());
                for (g, s) in items {
                    children.push(self.rob(g, s, ids, memo)?);
                }
                let ranges: Vec<(f64, f64)> = children.iter().map(|&c| self.rob_range(c)).collect();
                if children.is_empty() {
                    RobRef::Const(if is_min { cap } else { -cap })
                } else if children.len() == 1 {
                    children[0]
                } else if children.iter().all(|c| matches!(c, RobRef::Const(_))) {
                    let vals = ranges.iter().map(|r| r.0);
                    RobRef::Const(if is_min {
                        vals.fold(f64::INFINITY, f64::min)
                    } else {
                        vals.fold(f64::NEG_INFINITY, f64::max)
                    })
                } else {
                    let (lo, hi) = if is_min {
                        (
                            ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
                            ranges.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
                        )
                    } else {
                        (
                            ranges.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
                            ranges.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
                        )
                    };
                    let var = self.new_var(
                        Entity::Rob { scope: self.scope, node, t },
                        format!("rob_{}_{node}_{t}", self.scope),
                        lo,
                        hi,
                        VarKind::Continuous,
                    );
                    let mut selectors = Vec::with_capacity(children.len());
                    for child in 0..children.len() {
                        selectors.push(self.new_var(
                            Entity::Select { scope: self.scope, node, t, child },
                            format!("sel_{}_{node}_{t}_{child}", self.scope),
                            0.0,
                            1.0,
                            VarKind::Binary,
                        ));
                    }
                    self.row("sel", selectors.iter().map(|&s| (s, 1.0)).collect(), Sense::Eq, 1.0);
                    for ((&c, &(clo, chi)), &s) in children.iter().zip(&ranges).zip(&selectors) {
                        // child as (terms, constant)
                        let (cterm, cconst) = match c {
                            RobRef::Const(v) => (None, v),
                            RobRef::Var(v) => (Some(v), 0.0),
                        };
                        let mut bound = vec![(var, 1.0)];
                        if let Some(v) = cterm {
                            bound.push((v, -1.0));
                        }
                        if is_min {
                            // r <= r_i ; r >= r_i - M(1 - s)
                            self.row("min", bound.clone(), Sense::Le, cconst);
                            let m = (chi - lo).max(0.0);
                            bound.push((s, -m));
                            self.row("min", bound, Sense::Ge, cconst - m);
                        } else {
                            // r >= r_i ; r <= r_i + M(1 - s)
                            self.row("max", bound.clone(), Sense::Ge, cconst);
                            let m = (hi - clo).max(0.0);
                            bound.push((s, m));
                            self.row("max", bound, Sense::Le, cconst + m);
                        }
                    }
                    self.records.push(if is_min {
                        Record::RobMin { var, children, selectors }
                    } else {
                        Record::RobMax { var, children, selectors }
                    });
                    RobRef::Var(var)
                }
            }
        };
        memo.insert(key, out);
        Ok(out)
    }

    pub fn finish(self) -> Encoded {
        // derived big-M from the interval bounds of every referenced state
        let mut radius: f64 = 0.0;
        for b in self.blocks.values() {
            for row in &b.states {
                for e in row {
                    let (lo, hi) = e.range(&self.milp);
                    radius = radius.max(lo.abs()).max(hi.abs());
                }
            }
        }
        for z in self.frozen.values() {
            for row in z {
                for x in row {
                    radius = radius.max(x.abs());
                }
            }
        }
        let derived = self
            .predicates
            .iter()
            .map(|(p, _)| 2.0 * (p.offset.abs() + p.l1_norm() * radius))
            .fold(1e3, f64::max);
        Encoded {
            big_m: self.config.big_m.unwrap_or(derived),
            config: self.config,
            horizon: self.horizon,
            milp: self.milp,
            registry: self.registry,
            blocks: self.blocks,
            frozen: self.frozen,
            trees: self.trees,
            records: self.records,
            cost_aux: self.cost_aux,
            predicates: self.predicates,
            slack: self.slack,
            infeasible: self.infeasible,
        }
    }
}

fn expand_all(f: &Formula) -> Formula {
    match f.kind() {
        FormulaKind::True | FormulaKind::Pred(_) => f.clone(),
        FormulaKind::Not(g) => Formula::not(expand_all(g)),
        FormulaKind::And(v) => Formula::and(v.iter().map(expand_all).collect()),
        FormulaKind::Or(v) => Formula::or(v.iter().map(expand_all).collect()),
        FormulaKind::Eventually { inner, a, b } => Formula::eventually(expand_all(inner), *a, *b),
        FormulaKind::Always { inner, a, b } => Formula::always(expand_all(inner), *a, *b),
        FormulaKind::Until { left, right, a, b } => expand_until(&expand_all(left), &expand_all(right), *a, *b),
    }
}

fn preorder_ids(f: &Formula) -> HashMap<usize, usize> {
    fn walk(f: &Formula, out: &mut HashMap<usize, usize>) {
        let n = out.len();
        out.insert(f as *const Formula as usize, n);
        for c in f.children() {
            walk(c, out);
        }
    }
    let mut out = HashMap::new();
    walk(f, &mut out);
    out
}

/// An encoded problem ready to solve.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub config: EncodingConfig,
    pub big_m: f64,
    horizon: usize,
    milp: MilpModel,
    registry: Registry,
    blocks: BTreeMap<usize, AgentBlock>,
    frozen: BTreeMap<usize, Vec<Vec<f64>>>,
    trees: Vec<EncTree>,
    records: Vec<Record>,
    cost_aux: Vec<(VarId, Affine)>,
    predicates: Vec<(Predicate, usize)>,
    slack: Option<VarId>,
    infeasible: Option<VarId>,
}

impl Encoded {
    pub fn milp(&self) -> &MilpModel {
        &self.milp
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slack(&self) -> Option<VarId> {
        self.slack
    }

    /// True when constant folding already proved the problem infeasible.
    pub fn trivially_infeasible(&self) -> bool {
        self.infeasible.is_some()
    }

    pub fn planned_agents(&self) -> Vec<usize> {
        self.blocks.keys().copied().collect()
    }

    /// State expression of a planned agent.
    pub fn state_expr(&self, agent: usize, t: usize, dim: usize) -> Option<&Affine> {
        self.blocks.get(&agent).map(|b| &b.states[t][dim])
    }

    fn input_value(repr: &InputRepr, values: &[f64]) -> f64 {
        match *repr {
            InputRepr::Plain(v) => values[v.0],
            InputRepr::Split(p, n) => values[p.0] - values[n.0],
        }
    }

    pub fn extract(&self, values: &[f64]) -> BTreeMap<usize, AgentPlan> {
        self.blocks
            .iter()
            .map(|(&id, b)| {
                let z = b
                    .states
                    .iter()
                    .map(|row| row.iter().map(|e| e.eval(values)).collect())
                    .collect();
                let v = b
                    .inputs
                    .iter()
                    .map(|row| row.iter().map(|r| Self::input_value(r, values)).collect())
                    .collect();
                (id, AgentPlan { z, v })
            })
            .collect()
    }

    /// Objective without the slack term.
    pub fn cost(&self, values: &[f64]) -> f64 {
        let mut c = self.milp.evaluate_objective(values);
        if let Some(s) = self.slack {
            let w = self
                .milp
                .objective()
                .iter()
                .find(|t| t.0 == s)
                .map(|t| t.1)
                .unwrap_or(0.0);
            c -= w * values[s.0];
        }
        c
    }

    /// Full assignment reproducing the given plans (used to verify that a
    /// previous iterate remains feasible and as a solver start).
    pub fn witness(&self, plans: &BTreeMap<usize, AgentPlan>, slack: Option<f64>) -> Result<Vec<f64>, EncodeError> {
        let mut values = vec![0.0; self.milp.num_vars()];
        for (&id, b) in &self.blocks {
            let plan = plans.get(&id).ok_or(EncodeError::MissingNeighbor(id))?;
            if plan.v.len() < b.inputs.len() || plan.z.len() < b.states.len() {
                return Err(EncodeError::Witness(format!("plan of agent {id} is too short")));
            }
            for (row, vt) in b.inputs.iter().zip(&plan.v) {
                for (r, &x) in row.iter().zip(vt) {
                    match *r {
                        InputRepr::Plain(v) => values[v.0] = x,
                        InputRepr::Split(p, n) => {
                            values[p.0] = x.max(0.0);
                            values[n.0] = (-x).max(0.0);
                        }
                    }
                }
            }
            if let Some(vars) = &b.state_vars {
                for (row, zt) in vars.iter().zip(&plan.z) {
                    for (v, &x) in row.iter().zip(zt) {
                        values[v.0] = x;
                    }
                }
            }
        }
        if let Some(s) = self.slack {
            let var = self.milp.var(s);
            values[s.0] = slack.unwrap_or(var.lower).clamp(var.lower, var.upper);
        }
        for (i, tree) in self.trees.iter().enumerate() {
            if !tree.assign(true, &mut values) {
                return Err(EncodeError::Witness(format!("constraint block {i} does not hold for the given plans")));
            }
        }
        for rec in &self.records {
            match rec {
                Record::SatLit { var, expr, strict } => {
                    values[var.0] = if expr.eval(&values) >= strict - WITNESS_TOL { 1.0 } else { 0.0 };
                }
                Record::SatAnd { var, children } => {
                    values[var.0] = if children.iter().all(|c| values[c.0] > 0.5) { 1.0 } else { 0.0 };
                }
                Record::SatOr { var, children } => {
                    values[var.0] = if children.iter().any(|c| values[c.0] > 0.5) { 1.0 } else { 0.0 };
                }
                Record::RobLit { var, expr } => values[var.0] = expr.eval(&values),
                Record::RobMin { var, children, selectors } | Record::RobMax { var, children, selectors } => {
                    let is_min = matches!(rec, Record::RobMin { .. });
                    let vals: Vec<f64> = children
                        .iter()
                        .map(|c| match *c {
                            RobRef::Const(x) => x,
                            RobRef::Var(v) => values[v.0],
                        })
                        .collect();
                    let mut best = 0;
                    for (i, &x) in vals.iter().enumerate() {
                        if (is_min && x < vals[best]) || (!is_min && x > vals[best]) {
                            best = i;
                        }
                    }
                    values[var.0] = vals[best];
                    for (i, s) in selectors.iter().enumerate() {
                        values[s.0] = if i == best { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        for (s, e) in &self.cost_aux {
            values[s.0] = e.eval(&values).abs();
        }
        Ok(values)
    }

    /// Guards against an undersized big-M: every encoded predicate value must
    /// stay within half of it.
    pub fn check_big_m(&self, values: &[f64]) -> Result<(), EncodeError> {
        for (p, t) in &self.predicates {
            let mut v = p.offset;
            for (s, c) in &p.coeffs {
                let x = match self.blocks.get(&s.agent) {
                    Some(b) => b.states[*t][s.dim].eval(values),
                    None => self.frozen[&s.agent][*t][s.dim],
                };
                v += c * x;
            }
            if v.abs() > self.big_m / 2.0 {
                return Err(EncodeError::BigM {
                    value: v,
                    t: *t,
                    big_m: self.big_m,
                });
            }
        }
        Ok(())
    }
}

fn tightened_agent(model: &MasModel, agent: usize) -> Result<&AgentModel, EncodeError> {
    model.agent(agent).ok_or(EncodeError::UnknownAgent(agent))
}

/// Centralized problem: all agents, every tightened task at t = 0.
pub fn build_plan_problem(
    model: &MasModel,
    spec: &TightenedSpec,
    config: &EncodingConfig,
) -> Result<Encoded, EncodeError> {
    let mut enc = Encoder::new("plan", model.horizon(), config)?;
    for a in model.agents() {
        enc.add_agent(a, spec.input_boxes.get(&a.id));
    }
    for f in spec.psi.local_tasks.values() {
        enc.require(f)?;
    }
    for f in spec.psi.joint_tasks.values() {
        enc.require(f)?;
    }
    Ok(enc.finish())
}

/// Single-agent problem over the agent's own tightened local task.
pub fn build_init_problem(
    model: &MasModel,
    spec: &TightenedSpec,
    agent: usize,
    config: &EncodingConfig,
) -> Result<Encoded, EncodeError> {
    let a = tightened_agent(model, agent)?;
    let mut enc = Encoder::new(&format!("init_{agent}"), model.horizon(), config)?;
    enc.add_agent(a, spec.input_boxes.get(&agent));
    if let Some(f) = spec.psi.local_tasks.get(&agent) {
        enc.require(f)?;
    }
    Ok(enc.finish())
}

/// Robustness of a clique task on the given plans.
pub fn clique_robustness(
    f: &Formula,
    clique: &[usize],
    plans: &BTreeMap<usize, AgentPlan>,
) -> Result<f64, EncodeError> {
    let mut parts = BTreeMap::new();
    for &j in clique {
        let p = plans.get(&j).ok_or(EncodeError::MissingNeighbor(j))?;
        parts.insert(j, p.z.clone());
    }
    Ok(eval_robustness(f, &Trajectory::from_agents(&parts)?, 0)?)
}

#[derive(Clone, Debug)]
pub struct AgentProblem {
    pub encoded: Encoded,
    pub agent: usize,
    /// Clique whose robustness is maximized (none without joint tasks).
    pub selected: Option<Vec<usize>>,
    /// Robustness of every joint task of the agent on the previous iterate.
    pub rho_prev: BTreeMap<Vec<usize>, f64>,
    pub mu_lower: f64,
}

impl AgentProblem {
    /// Start value of the slack matching the previous iterate.
    pub fn previous_slack(&self) -> Option<f64> {
        let sel = self.selected.as_ref()?;
        Some(self.rho_prev[sel].min(self.encoded.config.robustness_cap))
    }
}

/// Per-agent iteration problem: own dynamics and local task, robustness of
/// the least robust joint task maximized through the slack, and every other
/// joint task kept at or above min(0, previous robustness). Neighbors are
/// frozen at their previous trajectories.
pub fn build_agent_problem(
    model: &MasModel,
    spec: &TightenedSpec,
    agent: usize,
    prev: &BTreeMap<usize, AgentPlan>,
    config: &EncodingConfig,
) -> Result<AgentProblem, EncodeError> {
    let a = tightened_agent(model, agent)?;
    let mut rho_prev = BTreeMap::new();
    for (clique, f) in &spec.psi.joint_tasks {
        if clique.contains(&agent) {
            rho_prev.insert(clique.clone(), clique_robustness(f, clique, prev)?);
        }
    }
    // least robust clique; ties go to the lexicographically smallest clique minus self
    let selected = rho_prev
        .iter()
        .min_by(|x, y| {
            x.1.total_cmp(y.1).then_with(|| {
                let xs: Vec<usize> = x.0.iter().copied().filter(|&j| j != agent).collect();
                let ys: Vec<usize> = y.0.iter().copied().filter(|&j| j != agent).collect();
                xs.cmp(&ys)
            })
        })
        .map(|(c, _)| c.clone());

    let mut enc = Encoder::new(&format!("agent_{agent}"), model.horizon(), config)?;
    enc.add_agent(a, spec.input_boxes.get(&agent));
    for (clique, _) in &rho_prev {
        for &j in clique {
            if j != agent && !enc.frozen.contains_key(&j) {
                let p = prev.get(&j).ok_or(EncodeError::MissingNeighbor(j))?;
                enc.freeze(j, p.z.clone());
            }
        }
    }
    let mut mu_lower = 0.0;
    if let Some(sel) = &selected {
        mu_lower = rho_prev[sel].min(0.0);
        enc.add_slack(mu_lower, config.robustness_cap, config.mu_weight);
    }
    if let Some(f) = spec.psi.local_tasks.get(&agent) {
        enc.require(f)?;
    }
    for (clique, rho) in &rho_prev {
        let f = &spec.psi.joint_tasks[clique];
        if Some(clique) == selected.as_ref() {
            enc.require_robustness(f, Bound::Slack)?;
        } else {
            enc.require_robustness(f, Bound::Constant(rho.min(0.0)))?;
        }
    }
    Ok(AgentProblem {
        encoded: enc.finish(),
        agent,
        selected,
        rho_prev,
        mu_lower,
    })
}
