//! Tightening predicates and input boxes by the probabilistic reachable tubes
//! so that nominal satisfaction implies satisfaction under every error inside
//! the tube.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::budget::ProbabilityBudget;
use crate::model::{AgentModel, GlobalSpec, MasModel};
use crate::reach::{confidence_region, prs_sequence, CrKind, ReachError, ReachSet};
use crate::stl::{to_nnf, Formula, FormulaKind, Polarity, Predicate, Signal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TightenError {
    #[error("agent {agent}: input box for coordinate {coord} is empty at t={t} ([{lo}, {hi}])")]
    EmptyInputBox {
        agent: usize,
        t: usize,
        coord: usize,
        lo: f64,
        hi: f64,
    },
    #[error("agent {agent}: {source}")]
    Reach {
        agent: usize,
        #[source]
        source: ReachError,
    },
}

/// Per-agent reach sets E_i(0..=N).
#[derive(Clone, Debug)]
pub struct Tubes {
    sets: BTreeMap<usize, Vec<ReachSet>>,
    horizon: usize,
}

impl Tubes {
    /// One tube per agent, agent `k` (in id order) at region level
    /// `budget.region_levels[k]`.
    pub fn build(model: &MasModel, budget: &ProbabilityBudget, kind: CrKind) -> Result<Tubes, TightenError> {
        let horizon = model.horizon();
        let mut sets = BTreeMap::new();
        for (k, agent) in model.agents().iter().enumerate() {
            let level = budget.region_levels[k.min(budget.region_levels.len() - 1)];
            let cr = confidence_region(kind, &agent.disturbance.q, level).map_err(|source| TightenError::Reach {
                agent: agent.id,
                source,
            })?;
            sets.insert(agent.id, prs_sequence(agent.id, &agent.a_bar(), &cr, horizon));
        }
        Ok(Tubes { sets, horizon })
    }

    /// E_i(t) = {0} for all agents and times.
    pub fn zero(model: &MasModel) -> Tubes {
        let horizon = model.horizon();
        let sets = model
            .agents()
            .iter()
            .map(|a| {
                let origin = ReachSet::origin(a.id, a.state_dim());
                (a.id, vec![origin; horizon + 1])
            })
            .collect();
        Tubes { sets, horizon }
    }

    pub fn from_sets(sets: BTreeMap<usize, Vec<ReachSet>>, horizon: usize) -> Tubes {
        Tubes { sets, horizon }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn agent(&self, id: usize) -> &[ReachSet] {
        &self.sets[&id]
    }

    pub fn agents(&self) -> impl Iterator<Item = (&usize, &Vec<ReachSet>)> {
        self.sets.iter()
    }

    /// Support of the product set at time `t` in direction `sign·a` where `a`
    /// is given by the predicate coefficients.
    pub fn support(&self, t: usize, coeffs: &BTreeMap<Signal, f64>, sign: f64) -> f64 {
        let mut by_agent: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (s, c) in coeffs {
            by_agent.entry(s.agent).or_default().push((s.dim, sign * c));
        }
        by_agent
            .into_iter()
            .map(|(agent, entries)| {
                let set = &self.sets[&agent][t];
                let mut a = DVector::zeros(set.dim());
                for (d, c) in entries {
                    a[d] = c;
                }
                set.support(&a)
            })
            .sum()
    }
}

/// How a single predicate occurrence was shifted.
#[derive(Clone, Debug, PartialEq)]
pub struct Margin {
    pub task: TaskRef,
    /// Occurrence index within the task, in document order.
    pub occurrence: usize,
    pub predicate: Predicate,
    pub original_offset: f64,
    pub shift: f64,
    /// Time index attaining the worst case (0 when no time was considered).
    pub t_star: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskRef {
    Local(usize),
    Joint(Vec<usize>),
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskRef::Local(i) => write!(f, "local {i}"),
            TaskRef::Joint(c) => {
                let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
                write!(f, "joint ({})", ids.join(","))
            }
        }
    }
}

/// Shifted predicate, shift δ and worst time t*. Positive polarity:
/// b' = b - max_t h_t(-a); negated: b' = b + max_t h_t(a). Ties keep the
/// earliest t. `window` restricts t (always within 1..=N).
pub fn tighten_predicate(
    pred: &Predicate,
    tubes: &Tubes,
    window: Option<(usize, usize)>,
) -> (Predicate, f64, usize) {
    let n = tubes.horizon();
    let (lo, hi) = match window {
        Some((a, b)) => (a.max(1), b.min(n)),
        None => (1, n),
    };
    let sign = match pred.polarity {
        Polarity::Positive => -1.0,
        Polarity::Negated => 1.0,
    };
    let mut worst = 0.0;
    let mut t_star = 0;
    for t in lo..=hi {
        let h = tubes.support(t, &pred.coeffs, sign);
        if t_star == 0 || h > worst {
            worst = h;
            t_star = t;
        }
    }
    let shift = match pred.polarity {
        Polarity::Positive => -worst,
        Polarity::Negated => worst,
    };
    let mut out = pred.clone();
    out.offset += shift;
    (out, shift, t_star)
}

/// Absolute time windows at which each predicate occurrence is evaluated when
/// the formula is evaluated at t = 0, in document order.
pub fn predicate_windows(f: &Formula) -> Vec<(usize, usize)> {
    fn walk(f: &Formula, lo: usize, hi: usize, out: &mut Vec<(usize, usize)>) {
        match f.kind() {
            FormulaKind::True => {}
            FormulaKind::Pred(_) => out.push((lo, hi)),
            FormulaKind::Not(g) => walk(g, lo, hi, out),
            FormulaKind::And(v) | FormulaKind::Or(v) => {
                for g in v {
                    walk(g, lo, hi, out)
                }
            }
            FormulaKind::Eventually { inner, a, b } | FormulaKind::Always { inner, a, b } => {
                walk(inner, lo + a, hi + b, out)
            }
            FormulaKind::Until { left, right, a, b } => {
                walk(left, lo, hi + b, out);
                walk(right, lo + a, hi + b, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(f, 0, 0, &mut out);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TightenOptions {
    /// Tighten each occurrence only over the times it is evaluated at,
    /// instead of uniformly over 1..=N.
    pub per_window: bool,
}

/// Per-time input bounds for one agent (index t = 0..N-1).
#[derive(Clone, Debug, PartialEq)]
pub struct InputBoxes {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TightenedSpec {
    /// Normalized original specification (state boxes folded in).
    pub phi: GlobalSpec,
    /// Same operator trees with shifted offsets.
    pub psi: GlobalSpec,
    pub margins: Vec<Margin>,
    pub input_boxes: BTreeMap<usize, InputBoxes>,
    pub warnings: Vec<String>,
}

impl TightenedSpec {
    pub fn task(&self, task: &TaskRef) -> Option<&Formula> {
        match task {
            TaskRef::Local(i) => self.psi.local_tasks.get(i),
            TaskRef::Joint(c) => self.psi.joint_tasks.get(c),
        }
    }
}

/// U ⊖ K·E: upper' = upper - h_E(Kᵀe_j), lower' = lower + h_E(-Kᵀe_j).
/// Returns the first empty coordinate as the error.
pub fn tighten_input_box(
    lower: &[f64],
    upper: &[f64],
    k: &DMatrix<f64>,
    e: &ReachSet,
) -> Result<(Vec<f64>, Vec<f64>), usize> {
    let mut lo = Vec::with_capacity(lower.len());
    let mut hi = Vec::with_capacity(upper.len());
    for j in 0..lower.len() {
        let dir = k.row(j).transpose();
        let l = lower[j] + e.support(&(-&dir));
        let h = upper[j] - e.support(&dir);
        if l > h {
            return Err(j);
        }
        lo.push(l);
        hi.push(h);
    }
    Ok((lo, hi))
}

fn agent_input_boxes(agent: &AgentModel, tubes: &Tubes) -> Result<InputBoxes, TightenError> {
    let sets = tubes.agent(agent.id);
    let lo0: Vec<f64> = agent.input_lo.iter().copied().collect();
    let hi0: Vec<f64> = agent.input_hi.iter().copied().collect();
    let mut boxes = InputBoxes {
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for (t, set) in sets.iter().enumerate().take(tubes.horizon()) {
        match tighten_input_box(&lo0, &hi0, &agent.k, set) {
            Ok((l, h)) => {
                boxes.lower.push(l);
                boxes.upper.push(h);
            }
            Err(coord) => {
                let dir = agent.k.row(coord).transpose();
                return Err(TightenError::EmptyInputBox {
                    agent: agent.id,
                    t,
                    coord,
                    lo: lo0[coord] + set.support(&(-&dir)),
                    hi: hi0[coord] - set.support(&dir),
                });
            }
        }
    }
    Ok(boxes)
}

fn unsatisfiable_over_box(p: &Predicate, model: &MasModel) -> bool {
    // max (positive) or min (negated) of μ over the state boxes
    let mut best = p.offset;
    for (s, c) in &p.coeffs {
        let Some(agent) = model.agent(s.agent) else { return false };
        let (Some(lo), Some(hi)) = (&agent.state_lo, &agent.state_hi) else {
            return false;
        };
        let (l, h) = (lo[s.dim], hi[s.dim]);
        best += match p.polarity {
            Polarity::Positive => (c * l).max(c * h),
            Polarity::Negated => (c * l).min(c * h),
        };
    }
    match p.polarity {
        Polarity::Positive => best < 0.0,
        Polarity::Negated => best >= 0.0,
    }
}

pub fn tighten_spec(model: &MasModel, tubes: &Tubes, options: TightenOptions) -> Result<TightenedSpec, TightenError> {
    let eff = model.effective_spec();
    let mut margins = Vec::new();
    let mut warnings = Vec::new();
    let mut tighten_task = |task: TaskRef, f: &Formula| -> (Formula, Formula) {
        let nnf = to_nnf(f);
        let windows = predicate_windows(&nnf);
        let mut occurrence = 0;
        let psi = nnf.map_predicates(&mut |p| {
            let window = options.per_window.then(|| windows[occurrence]);
            let (q, shift, t_star) = tighten_predicate(p, tubes, window);
            if unsatisfiable_over_box(&q, model) && !unsatisfiable_over_box(p, model) {
                warnings.push(format!(
                    "{task}: predicate `{}` cannot hold anywhere in the state box after tightening",
                    Formula::pred(q.clone())
                ));
            }
            margins.push(Margin {
                task: task.clone(),
                occurrence,
                predicate: p.clone(),
                original_offset: p.offset,
                shift,
                t_star,
            });
            occurrence += 1;
            q
        });
        (nnf, psi)
    };
    let mut phi = GlobalSpec {
        local_tasks: BTreeMap::new(),
        joint_tasks: BTreeMap::new(),
        theta: eff.theta,
        horizon: eff.horizon,
    };
    let mut psi = phi.clone();
    for (id, f) in &eff.local_tasks {
        let (n, t) = tighten_task(TaskRef::Local(*id), f);
        phi.local_tasks.insert(*id, n);
        psi.local_tasks.insert(*id, t);
    }
    for (c, f) in &eff.joint_tasks {
        let (n, t) = tighten_task(TaskRef::Joint(c.clone()), f);
        phi.joint_tasks.insert(c.clone(), n);
        psi.joint_tasks.insert(c.clone(), t);
    }
    let mut input_boxes = BTreeMap::new();
    for agent in model.agents() {
        input_boxes.insert(agent.id, agent_input_boxes(agent, tubes)?);
    }
    Ok(TightenedSpec {
        phi,
        psi,
        margins,
        input_boxes,
        warnings,
    })
}

/// Plain-text report: one line per predicate occurrence.
pub fn margin_report(spec: &TightenedSpec) -> String {
    let mut out = String::from("task\toccurrence\tpolarity\tpredicate\toriginal_offset\tshift\ttightened_offset\tt_star\n");
    for m in &spec.margins {
        let mut shown = m.predicate.clone();
        shown.polarity = Polarity::Positive;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            m.task,
            m.occurrence,
            match m.predicate.polarity {
                Polarity::Positive => "positive",
                Polarity::Negated => "negated",
            },
            Formula::pred(shown),
            m.original_offset,
            m.shift,
            m.original_offset + m.shift,
            m.t_star
        ));
    }
    for w in &spec.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}
