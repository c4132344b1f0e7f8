//! Solver-agnostic mixed-integer linear model.

use std::fmt;

use crate::MilpError;

/// Index of a variable inside a [`MilpModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarKind::Continuous)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates the row (zero when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.activity(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Minimization model: `min c'x + c0` subject to linear rows and bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MilpModel {
    pub name: String,
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Vec<(VarId, f64)>,
    objective_offset: f64,
}

impl MilpModel {
    pub fn new(name: impl Into<String>) -> Self {
        MilpModel {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        kind: VarKind,
    ) -> VarId {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            kind,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.add_var(name, lower, upper, VarKind::Continuous)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    /// Adds a row; repeated variables are merged and zero coefficients dropped.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: impl IntoIterator<Item = (VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        let terms = merge_terms(terms);
        for &(v, _) in &terms {
            assert!(v.0 < self.vars.len(), "constraint references unknown variable {v}");
        }
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn set_objective(&mut self, terms: impl IntoIterator<Item = (VarId, f64)>, offset: f64) {
        self.objective = merge_terms(terms);
        self.objective_offset = offset;
    }

    pub fn add_objective_term(&mut self, var: VarId, coeff: f64) {
        let mut all = std::mem::take(&mut self.objective);
        all.push((var, coeff));
        self.objective = merge_terms(all);
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        let v = &mut self.vars[var.0];
        v.lower = lower;
        v.upper = upper;
    }

    pub fn set_kind(&mut self, var: VarId, kind: VarKind) {
        let v = &mut self.vars[var.0];
        v.kind = kind;
        if kind == VarKind::Binary {
            v.lower = v.lower.max(0.0);
            v.upper = v.upper.min(1.0);
        }
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &Variable {
        &self.vars[id.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(VarId, f64)] {
        &self.objective
    }

    pub fn objective_offset(&self) -> f64 {
        self.objective_offset
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_integral(&self) -> usize {
        self.vars.iter().filter(|v| v.kind.is_integral()).count()
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.objective_offset
            + self
                .objective
                .iter()
                .map(|&(v, c)| c * values[v.0])
                .sum::<f64>()
    }

    /// Largest violation of any row, bound, or integrality requirement.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
            if v.kind.is_integral() {
                worst = worst.max((x - x.round()).abs());
            }
        }
        for c in &self.constraints {
            worst = worst.max(c.violation(values));
        }
        worst
    }

    /// Checks a full assignment against every row and bound.
    pub fn check_feasible(&self, values: &[f64], tol: f64) -> Result<(), MilpError> {
        if values.len() != self.vars.len() {
            return Err(MilpError::Dimension {
                expected: self.vars.len(),
                found: values.len(),
            });
        }
        for (v, &x) in self.vars.iter().zip(values) {
            if !x.is_finite() || x < v.lower - tol || x > v.upper + tol {
                return Err(MilpError::Infeasible(format!(
                    "variable {} = {x} outside [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
            if v.kind.is_integral() && (x - x.round()).abs() > tol {
                return Err(MilpError::Infeasible(format!(
                    "variable {} = {x} is not integral",
                    v.name
                )));
            }
        }
        for c in &self.constraints {
            let viol = c.violation(values);
            if viol > tol {
                return Err(MilpError::Infeasible(format!(
                    "row {} violated by {viol:e} (activity {}, {} {})",
                    c.name,
                    c.activity(values),
                    c.sense.symbol(),
                    c.rhs
                )));
            }
        }
        Ok(())
    }
}

fn merge_terms(terms: impl IntoIterator<Item = (VarId, f64)>) -> Vec<(VarId, f64)> {
    let mut terms: Vec<(VarId, f64)> = terms.into_iter().collect();
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for (v, c) in terms {
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => out.push((v, c)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_are_merged() {
        let mut m = MilpModel::new("t");
        let x = m.add_continuous("x", 0.0, 1.0);
        let y = m.add_continuous("y", 0.0, 1.0);
        m.add_constraint("c", [(y, 1.0), (x, 2.0), (y, -1.0), (x, 1.0)], Sense::Le, 1.0);
        assert_eq!(m.constraints()[0].terms, vec![(x, 3.0)]);
    }

    #[test]
    fn feasibility_check_reports_rows() {
        let mut m = MilpModel::new("t");
        let x = m.add_binary("b");
        m.add_constraint("c", [(x, 1.0)], Sense::Ge, 1.0);
        assert!(m.check_feasible(&[1.0], 1e-9).is_ok());
        assert!(m.check_feasible(&[0.0], 1e-9).is_err());
        assert!(m.check_feasible(&[0.5], 1e-9).is_err());
    }
}
