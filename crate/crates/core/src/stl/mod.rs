//! Discrete-time signal temporal logic over affine predicates.
//!
//! Time is measured in integer steps. Predicates are `a·x + b >= 0` where `x`
//! ranges over the stacked states of one or more agents.

mod eval;
mod nnf;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

pub use eval::{eval_boolean, eval_robustness, eval_robustness_with, TRUE_ROBUSTNESS};
pub use nnf::{check_assumption1, collect_predicates, expand_until, is_nnf, to_nnf};
pub use parse::parse_formula;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StlError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unresolved signal reference x{agent}[{dim}]")]
    UnresolvedSignal { agent: usize, dim: usize },
    #[error("invalid interval [{a},{b}]")]
    Interval { a: i64, b: i64 },
    #[error("evaluation at t={t} needs {horizon} more steps but the trajectory ends at {last}")]
    HorizonOverflow { t: usize, horizon: usize, last: usize },
    #[error("predicate `{0}` appears both plain and negated")]
    Assumption1(String),
    #[error("{0}")]
    Shape(String),
}

/// Reference to state coordinate `dim` (0-based) of agent `agent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signal {
    pub agent: usize,
    pub dim: usize,
}

impl Signal {
    pub fn new(agent: usize, dim: usize) -> Self {
        Signal { agent, dim }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negated,
}

impl Polarity {
    pub fn flip(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negated,
            Polarity::Negated => Polarity::Positive,
        }
    }
}

/// `μ(x) = Σ coeffs·x + offset`, satisfied when `μ >= 0` (positive polarity)
/// or `μ < 0` (negated).
#[derive(Clone, Debug, PartialEq)]
pub struct Predicate {
    pub coeffs: BTreeMap<Signal, f64>,
    pub offset: f64,
    pub polarity: Polarity,
}

impl Predicate {
    pub fn new(coeffs: BTreeMap<Signal, f64>, offset: f64) -> Self {
        Predicate {
            coeffs,
            offset,
            polarity: Polarity::Positive,
        }
    }

    /// `x_agent[dim] >= value`
    pub fn at_least(agent: usize, dim: usize, value: f64) -> Self {
        Predicate::new(BTreeMap::from([(Signal::new(agent, dim), 1.0)]), -value)
    }

    /// `x_agent[dim] <= value`
    pub fn at_most(agent: usize, dim: usize, value: f64) -> Self {
        Predicate::new(BTreeMap::from([(Signal::new(agent, dim), -1.0)]), value)
    }

    pub fn negated(mut self) -> Self {
        self.polarity = self.polarity.flip();
        self
    }

    /// Agents referenced by the coefficient vector, ascending.
    pub fn agents(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.coeffs.keys().map(|s| s.agent).collect();
        ids.dedup();
        ids
    }

    /// μ evaluated on a state accessor.
    pub fn value(&self, state: impl Fn(Signal) -> f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(s, c)| c * state(*s))
            .sum::<f64>()
            + self.offset
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.abs()).sum()
    }

    /// Identity of the affine function, ignoring polarity.
    pub(crate) fn key(&self) -> (Vec<(Signal, u64)>, u64) {
        (
            self.coeffs.iter().map(|(s, c)| (*s, c.to_bits())).collect(),
            self.offset.to_bits(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FormulaKind {
    True,
    Pred(Predicate),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Until {
        left: Box<Formula>,
        right: Box<Formula>,
        a: usize,
        b: usize,
    },
    Eventually {
        inner: Box<Formula>,
        a: usize,
        b: usize,
    },
    Always {
        inner: Box<Formula>,
        a: usize,
        b: usize,
    },
}

/// STL syntax tree with its horizon cached at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    kind: FormulaKind,
    horizon: usize,
}

impl Formula {
    pub fn truth() -> Self {
        Formula {
            kind: FormulaKind::True,
            horizon: 0,
        }
    }

    pub fn pred(p: Predicate) -> Self {
        Formula {
            kind: FormulaKind::Pred(p),
            horizon: 0,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        let horizon = f.horizon;
        Formula {
            kind: FormulaKind::Not(Box::new(f)),
            horizon,
        }
    }

    pub fn and(fs: Vec<Formula>) -> Self {
        let horizon = fs.iter().map(|f| f.horizon).max().unwrap_or(0);
        Formula {
            kind: FormulaKind::And(fs),
            horizon,
        }
    }

    pub fn or(fs: Vec<Formula>) -> Self {
        let horizon = fs.iter().map(|f| f.horizon).max().unwrap_or(0);
        Formula {
            kind: FormulaKind::Or(fs),
            horizon,
        }
    }

    /// Panics unless `a <= b`.
    pub fn until(left: Formula, right: Formula, a: usize, b: usize) -> Self {
        assert!(a <= b, "inverted interval [{a},{b}]");
        let horizon = b + left.horizon.max(right.horizon);
        Formula {
            kind: FormulaKind::Until {
                left: Box::new(left),
                right: Box::new(right),
                a,
                b,
            },
            horizon,
        }
    }

    pub fn eventually(inner: Formula, a: usize, b: usize) -> Self {
        assert!(a <= b, "inverted interval [{a},{b}]");
        let horizon = b + inner.horizon;
        Formula {
            kind: FormulaKind::Eventually {
                inner: Box::new(inner),
                a,
                b,
            },
            horizon,
        }
    }

    pub fn always(inner: Formula, a: usize, b: usize) -> Self {
        assert!(a <= b, "inverted interval [{a},{b}]");
        let horizon = b + inner.horizon;
        Formula {
            kind: FormulaKind::Always {
                inner: Box::new(inner),
                a,
                b,
            },
            horizon,
        }
    }

    /// Rebuilds the node from a kind, recomputing the horizon.
    pub fn from_kind(kind: FormulaKind) -> Self {
        match kind {
            FormulaKind::True => Formula::truth(),
            FormulaKind::Pred(p) => Formula::pred(p),
            FormulaKind::Not(f) => Formula::not(*f),
            FormulaKind::And(v) => Formula::and(v),
            FormulaKind::Or(v) => Formula::or(v),
            FormulaKind::Until { left, right, a, b } => Formula::until(*left, *right, a, b),
            FormulaKind::Eventually { inner, a, b } => Formula::eventually(*inner, a, b),
            FormulaKind::Always { inner, a, b } => Formula::always(*inner, a, b),
        }
    }

    pub fn kind(&self) -> &FormulaKind {
        &self.kind
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Horizon recomputed from scratch (the cached value must match).
    pub fn recompute_horizon(&self) -> usize {
        match &self.kind {
            FormulaKind::True | FormulaKind::Pred(_) => 0,
            FormulaKind::Not(f) => f.recompute_horizon(),
            FormulaKind::And(v) | FormulaKind::Or(v) => {
                v.iter().map(|f| f.recompute_horizon()).max().unwrap_or(0)
            }
            FormulaKind::Until { left, right, b, .. } => {
                b + left.recompute_horizon().max(right.recompute_horizon())
            }
            FormulaKind::Eventually { inner, b, .. } | FormulaKind::Always { inner, b, .. } => {
                b + inner.recompute_horizon()
            }
        }
    }

    pub fn children(&self) -> Vec<&Formula> {
        match &self.kind {
            FormulaKind::True | FormulaKind::Pred(_) => vec![],
            FormulaKind::Not(f) => vec![f],
            FormulaKind::And(v) | FormulaKind::Or(v) => v.iter().collect(),
            FormulaKind::Until { left, right, .. } => vec![left, right],
            FormulaKind::Eventually { inner, .. } | FormulaKind::Always { inner, .. } => {
                vec![inner]
            }
        }
    }

    /// Applies `f` to every predicate, keeping the operator tree.
    pub fn map_predicates(&self, f: &mut impl FnMut(&Predicate) -> Predicate) -> Formula {
        let kind = match &self.kind {
            FormulaKind::True => FormulaKind::True,
            FormulaKind::Pred(p) => FormulaKind::Pred(f(p)),
            FormulaKind::Not(g) => FormulaKind::Not(Box::new(g.map_predicates(f))),
            FormulaKind::And(v) => FormulaKind::And(v.iter().map(|g| g.map_predicates(f)).collect()),
            FormulaKind::Or(v) => FormulaKind::Or(v.iter().map(|g| g.map_predicates(f)).collect()),
            FormulaKind::Until { left, right, a, b } => FormulaKind::Until {
                left: Box::new(left.map_predicates(f)),
                right: Box::new(right.map_predicates(f)),
                a: *a,
                b: *b,
            },
            FormulaKind::Eventually { inner, a, b } => FormulaKind::Eventually {
                inner: Box::new(inner.map_predicates(f)),
                a: *a,
                b: *b,
            },
            FormulaKind::Always { inner, a, b } => FormulaKind::Always {
                inner: Box::new(inner.map_predicates(f)),
                a: *a,
                b: *b,
            },
        };
        Formula {
            kind,
            horizon: self.horizon,
        }
    }

    /// True when both trees have the same operators and intervals, with
    /// predicates compared by polarity and coefficients only.
    pub fn same_shape(&self, other: &Formula) -> bool {
        use FormulaKind::*;
        match (&self.kind, &other.kind) {
            (True, True) => true,
            (Pred(p), Pred(q)) => p.polarity == q.polarity && p.coeffs == q.coeffs,
            (Not(f), Not(g)) => f.same_shape(g),
            (And(v), And(w)) | (Or(v), Or(w)) => {
                v.len() == w.len() && v.iter().zip(w).all(|(f, g)| f.same_shape(g))
            }
            (
                Until { left, right, a, b },
                Until {
                    left: l2,
                    right: r2,
                    a: a2,
                    b: b2,
                },
            ) => a == a2 && b == b2 && left.same_shape(l2) && right.same_shape(r2),
            (
                Eventually { inner, a, b },
                Eventually {
                    inner: i2,
                    a: a2,
                    b: b2,
                },
            )
            | (
                Always { inner, a, b },
                Always {
                    inner: i2,
                    a: a2,
                    b: b2,
                },
            ) => a == a2 && b == b2 && inner.same_shape(i2),
            _ => false,
        }
    }

    /// Agents referenced anywhere in the formula, ascending.
    pub fn agents(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_predicates(&mut |p| out.extend(p.agents()));
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn visit_predicates(&self, f: &mut impl FnMut(&Predicate)) {
        if let FormulaKind::Pred(p) = &self.kind {
            f(p);
        }
        for c in self.children() {
            c.visit_predicates(f);
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }
}

/// Per-agent state dimensions, sorted by agent id.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    entries: Vec<(usize, usize, usize)>, // (agent, dim, offset)
}

impl Layout {
    pub fn new(dims: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut v: Vec<(usize, usize)> = dims.into_iter().collect();
        v.sort_unstable();
        v.dedup_by_key(|e| e.0);
        let mut offset = 0;
        let entries = v
            .into_iter()
            .map(|(a, d)| {
                let e = (a, d, offset);
                offset += d;
                e
            })
            .collect();
        Layout { entries }
    }

    pub fn agents(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn dim(&self, agent: usize) -> Option<usize> {
        self.entry(agent).map(|e| e.1)
    }

    pub fn offset(&self, agent: usize) -> Option<usize> {
        self.entry(agent).map(|e| e.2)
    }

    fn entry(&self, agent: usize) -> Option<&(usize, usize, usize)> {
        self.entries
            .binary_search_by_key(&agent, |e| e.0)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn total_dim(&self) -> usize {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn index(&self, s: Signal) -> Option<usize> {
        let (_, d, off) = self.entry(s.agent)?;
        (s.dim < *d).then_some(off + s.dim)
    }

    pub fn contains(&self, s: Signal) -> bool {
        self.index(s).is_some()
    }

    /// Layout restricted to the listed agents.
    pub fn restrict(&self, agents: &[usize]) -> Layout {
        Layout::new(
            self.entries
                .iter()
                .filter(|e| agents.contains(&e.0))
                .map(|e| (e.0, e.1)),
        )
    }
}

/// Stacked state samples x(0), ..., x(N).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    layout: Layout,
    samples: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(layout: Layout, samples: Vec<Vec<f64>>) -> Result<Self, StlError> {
        let n = layout.total_dim();
        if samples.is_empty() {
            return Err(StlError::Shape("trajectory has no samples".into()));
        }
        if let Some((t, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(StlError::Shape(format!(
                "sample {t} has {} entries, layout needs {n}",
                s.len()
            )));
        }
        Ok(Trajectory { layout, samples })
    }

    /// Builds the stacked trajectory from per-agent sample sequences.
    pub fn from_agents(parts: &BTreeMap<usize, Vec<Vec<f64>>>) -> Result<Self, StlError> {
        let layout = Layout::new(
            parts
                .iter()
                .map(|(id, xs)| (*id, xs.first().map_or(0, |x| x.len()))),
        );
        let len = parts.values().next().map_or(0, |v| v.len());
        if parts.values().any(|v| v.len() != len) {
            return Err(StlError::Shape("agents have different trajectory lengths".into()));
        }
        let samples = (0..len)
            .map(|t| parts.values().flat_map(|xs| xs[t].iter().copied()).collect())
            .collect();
        Trajectory::new(layout, samples)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Last time index N.
    pub fn last(&self) -> usize {
        self.samples.len() - 1
    }

    /// Panics if the signal is not part of the layout.
    pub fn get(&self, t: usize, s: Signal) -> f64 {
        let i = self
            .layout
            .index(s)
            .unwrap_or_else(|| panic!("signal x{}[{}] not in trajectory", s.agent, s.dim));
        self.samples[t][i]
    }

    /// Slice of agent `agent` at time `t`.
    pub fn agent_state(&self, t: usize, agent: usize) -> &[f64] {
        let off = self.layout.offset(agent).expect("agent in layout");
        let d = self.layout.dim(agent).unwrap();
        &self.samples[t][off..off + d]
    }

    /// Pointwise sum, used for x = z + e.
    pub fn add(&self, other: &Trajectory) -> Result<Trajectory, StlError> {
        if self.layout != other.layout || self.samples.len() != other.samples.len() {
            return Err(StlError::Shape("trajectories differ in shape".into()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Trajectory {
            layout: self.layout.clone(),
            samples,
        })
    }
}

fn write_predicate(f: &mut fmt::Formatter<'_>, p: &Predicate) -> fmt::Result {
    for (k, (s, c)) in p.coeffs.iter().enumerate() {
        let (neg, mag) = (*c < 0.0, c.abs());
        match (k, neg) {
            (0, true) => write!(f, "-")?,
            (0, false) => {}
            (_, true) => write!(f, " - ")?,
            (_, false) => write!(f, " + ")?,
        }
        if mag != 1.0 {
            write!(f, "{mag}*")?;
        }
        write!(f, "x{}[{}]", s.agent, s.dim)?;
    }
    write!(f, " >= {}", -p.offset)
}

fn needs_parens(f: &Formula) -> bool {
    matches!(
        f.kind,
        FormulaKind::And(_) | FormulaKind::Or(_) | FormulaKind::Until { .. }
    ) || matches!(&f.kind, FormulaKind::Pred(p) if p.polarity == Polarity::Negated)
}

fn write_operand(f: &mut fmt::Formatter<'_>, g: &Formula) -> fmt::Result {
    if needs_parens(g) || matches!(g.kind, FormulaKind::Pred(_)) {
        write!(f, "({g})")
    } else {
        write!(f, "{g}")
    }
}

/// Prints in the concrete grammar accepted by [`parse_formula`]. Negated
/// predicates print as `!(...)`, empty conjunctions as `TRUE` and empty
/// disjunctions as `!TRUE`.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FormulaKind::True => write!(f, "TRUE"),
            FormulaKind::Pred(p) => {
                if p.polarity == Polarity::Negated {
                    write!(f, "!(")?;
                    write_predicate(f, p)?;
                    write!(f, ")")
                } else {
                    write_predicate(f, p)
                }
            }
            FormulaKind::Not(g) => {
                write!(f, "!")?;
                write_operand(f, g)
            }
            FormulaKind::And(v) | FormulaKind::Or(v) => {
                let (op, empty) = if matches!(self.kind, FormulaKind::And(_)) {
                    (" & ", "TRUE")
                } else {
                    (" | ", "!TRUE")
                };
                if v.is_empty() {
                    return write!(f, "{empty}");
                }
                if v.len() == 1 {
                    // A one-element list has no infix form; parenthesize so it
                    // at least reads back as its only child.
                    return write_operand(f, &v[0]);
                }
                for (k, g) in v.iter().enumerate() {
                    if k > 0 {
                        write!(f, "{op}")?;
                    }
                    write_operand(f, g)?;
                }
                Ok(())
            }
            FormulaKind::Until { left, right, a, b } => {
                write_operand(f, left)?;
                write!(f, " U[{a},{b}] ")?;
                write_operand(f, right)
            }
            FormulaKind::Eventually { inner, a, b } => {
                write!(f, "F[{a},{b}] ")?;
                write_operand(f, inner)
            }
            FormulaKind::Always { inner, a, b } => {
                write!(f, "G[{a},{b}] ")?;
                write_operand(f, inner)
            }
        }
    }
}
