//! Dense bounded-variable primal simplex.
//!
//! Variables are shifted onto `[0, u]` (or split when free), rows are
//! normalized to a non-negative right-hand side and closed with slack,
//! surplus, and artificial columns. Phase one minimizes the artificial sum,
//! phase two the user objective. Dantzig pricing is used until a run of
//! degenerate pivots is observed, after which Bland's rule takes over until
//! the objective moves again.

use crate::model::{MilpModel, Sense};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values of the model variables (meaningful only when optimal).
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Final re-check of rows and bounds in model space.
    pub check_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions {
            max_iterations: 200_000,
            check_tol: 1e-6,
        }
    }
}

/// How a model variable is expressed through tableau columns.
#[derive(Clone, Copy, Debug)]
enum ColMap {
    /// x = offset + y
    Shift { col: usize, offset: f64 },
    /// x = offset - y
    Mirror { col: usize, offset: f64 },
    /// x = y+ - y-
    Split { pos: usize, neg: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColKind {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    m: usize,
    n: usize,
    /// Row-major B^-1 A, `m * n`.
    t: Vec<f64>,
    /// Current values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    /// Upper bounds of every column (lower bounds are all zero).
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    is_basic: Vec<bool>,
    kind: Vec<ColKind>,
    /// Reduced costs for the current phase.
    d: Vec<f64>,
    iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Limit,
    Continue,
}

impl Tableau {
    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.n..(i + 1) * self.n]
    }

    fn value_of_nonbasic(&self, j: usize) -> f64 {
        if self.at_upper[j] {
            self.upper[j]
        } else {
            0.0
        }
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n..(i + 1) * self.n];
                for (dj, &tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        for i in 0..self.m {
            d[self.basis[i]] = 0.0;
        }
        self.d = d;
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        let mut z = 0.0;
        for j in 0..self.n {
            if !self.is_basic[j] && self.at_upper[j] {
                z += cost[j] * self.upper[j];
            }
        }
        for i in 0..self.m {
            z += cost[self.basis[i]] * self.beta[i];
        }
        z
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.n {
            if self.is_basic[j] || self.upper[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let dir = if !self.at_upper[j] && dj < -COST_TOL {
                1.0
            } else if self.at_upper[j] && dj > COST_TOL {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn iterate(&mut self, bland: bool, max_iterations: usize) -> Step {
        if self.iterations >= max_iterations {
            return Step::Limit;
        }
        let Some((q, dir)) = self.choose_entering(bland) else {
            return Step::Optimal;
        };
        self.iterations += 1;

        // Ratio test.
        let mut step = self.upper[q];
        let mut leave: Option<(usize, bool)> = None;
        let mut best_pivot = 0.0;
        for i in 0..self.m {
            let alpha = self.t[i * self.n + q] * dir;
            let b = self.basis[i];
            let (limit, to_upper) = if alpha > PIVOT_TOL {
                (self.beta[i].max(0.0) / alpha, false)
            } else if alpha < -PIVOT_TOL && self.upper[b].is_finite() {
                ((self.upper[b] - self.beta[i]).max(0.0) / -alpha, true)
            } else {
                continue;
            };
            let take = if limit < step - 1e-12 {
                true
            } else if limit <= step + 1e-12 {
                match leave {
                    // Prefer a real pivot over a bound flip of equal length.
                    None => true,
                    Some((r, _)) if bland => b < self.basis[r],
                    Some(_) => alpha.abs() > best_pivot,
                }
            } else {
                false
            };
            if take {
                step = step.min(limit);
                leave = Some((i, to_upper));
                best_pivot = alpha.abs();
            }
        }
        if !step.is_finite() {
            return Step::Unbounded;
        }

        for i in 0..self.m {
            let a = self.t[i * self.n + q];
            if a != 0.0 {
                self.beta[i] -= dir * step * a;
            }
        }
        let entering_value = self.value_of_nonbasic(q) + dir * step;

        match leave {
            None => {
                self.at_upper[q] = !self.at_upper[q];
            }
            Some((r, to_upper)) => {
                let out = self.basis[r];
                self.pivot(r, q);
                self.is_basic[out] = false;
                self.at_upper[out] = to_upper;
                self.is_basic[q] = true;
                self.at_upper[q] = false;
                self.basis[r] = q;
                self.beta[r] = entering_value;
            }
        }
        Step::Continue
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let n = self.n;
        let piv = self.t[r * n + q];
        let inv = 1.0 / piv;
        {
            let row = &mut self.t[r * n..(r + 1) * n];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[q] = 1.0;
        }
        let nz: Vec<usize> = (0..n).filter(|&j| self.t[r * n + j] != 0.0).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&j| self.t[r * n + j]).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * n + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * n..(i + 1) * n];
            for (&j, &pv) in nz.iter().zip(&pivot_row) {
                row[j] -= f * pv;
            }
            row[q] = 0.0;
        }
        let f = self.d[q];
        if f != 0.0 {
            for (&j, &pv) in nz.iter().zip(&pivot_row) {
                self.d[j] -= f * pv;
            }
            self.d[q] = 0.0;
        }
    }

    fn run(&mut self, cost: &[f64], max_iterations: usize) -> Step {
        let mut last_obj = self.objective(cost);
        let mut stall = 0usize;
        let mut bland = false;
        loop {
            match self.iterate(bland, max_iterations) {
                Step::Continue => {}
                other => return other,
            }
            let obj = self.objective(cost);
            if obj < last_obj - 1e-12 * (1.0 + last_obj.abs()) {
                last_obj = obj;
                stall = 0;
                bland = false;
            } else {
                stall += 1;
                if stall >= DEGENERATE_RUN {
                    bland = true;
                }
            }
        }
    }

    /// Pivots zero-level artificials out of the basis; redundant rows keep
    /// theirs, pinned at zero.
    fn drive_out_artificials(&mut self) {
        for r in 0..self.m {
            if self.kind[self.basis[r]] != ColKind::Artificial {
                continue;
            }
            let row = self.row(r);
            let mut best: Option<usize> = None;
            let mut best_abs = 1e-7;
            for (j, &v) in row.iter().enumerate() {
                if !self.is_basic[j] && self.kind[j] != ColKind::Artificial && v.abs() > best_abs {
                    best_abs = v.abs();
                    best = Some(j);
                }
            }
            if let Some(q) = best {
                let out = self.basis[r];
                let value = self.value_of_nonbasic(q);
                // Degenerate pivot: the artificial sits at zero, so the entering
                // column keeps its current value and the other basics do not move.
                let delta = self.beta[r] / self.t[r * self.n + q];
                for i in 0..self.m {
                    if i != r {
                        let a = self.t[i * self.n + q];
                        if a != 0.0 {
                            self.beta[i] -= a * delta;
                        }
                    }
                }
                self.pivot(r, q);
                self.is_basic[out] = false;
                self.at_upper[out] = false;
                self.is_basic[q] = true;
                self.at_upper[q] = false;
                self.basis[r] = q;
                self.beta[r] = value + delta;
            }
        }
        for j in 0..self.n {
            if self.kind[j] == ColKind::Artificial {
                self.upper[j] = 0.0;
            }
        }
    }
}

/// Solves the continuous relaxation of `model` with the given variable bounds.
pub fn solve_relaxation(
    model: &MilpModel,
    lower: &[f64],
    upper: &[f64],
    opts: &LpOptions,
) -> LpSolution {
    let nvars = model.num_vars();
    let fail = |status: LpStatus, iterations: usize| LpSolution {
        status,
        values: vec![0.0; nvars],
        objective: f64::NAN,
        iterations,
    };

    // Column mapping for structural variables.
    let mut maps = Vec::with_capacity(nvars);
    let mut col_upper: Vec<f64> = Vec::new();
    for j in 0..nvars {
        let (lo, hi) = (lower[j], upper[j]);
        if lo > hi + 1e-9 {
            return fail(LpStatus::Infeasible, 0);
        }
        let hi = hi.max(lo);
        if lo.is_finite() {
            maps.push(ColMap::Shift {
                col: col_upper.len(),
                offset: lo,
            });
            col_upper.push(hi - lo);
        } else if hi.is_finite() {
            maps.push(ColMap::Mirror {
                col: col_upper.len(),
                offset: hi,
            });
            col_upper.push(f64::INFINITY);
        } else {
            maps.push(ColMap::Split {
                pos: col_upper.len(),
                neg: col_upper.len() + 1,
            });
            col_upper.push(f64::INFINITY);
            col_upper.push(f64::INFINITY);
        }
    }
    let n_struct = col_upper.len();

    // Structural objective.
    let mut cost = vec![0.0; n_struct];
    for &(v, c) in model.objective() {
        match maps[v.0] {
            ColMap::Shift { col, .. } => cost[col] += c,
            ColMap::Mirror { col, .. } => cost[col] -= c,
            ColMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }

    // Normalized rows: (sparse structural terms, sense, rhs >= 0).
    struct Row {
        terms: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::with_capacity(model.num_constraints());
    for c in model.constraints() {
        let mut rhs = c.rhs;
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(c.terms.len() + 1);
        for &(v, a) in &c.terms {
            match maps[v.0] {
                ColMap::Shift { col, offset } => {
                    terms.push((col, a));
                    rhs -= a * offset;
                }
                ColMap::Mirror { col, offset } => {
                    terms.push((col, -a));
                    rhs -= a * offset;
                }
                ColMap::Split { pos, neg } => {
                    terms.push((pos, a));
                    terms.push((neg, -a));
                }
            }
        }
        let mut sense = c.sense;
        let flip = match sense {
            Sense::Le => rhs < 0.0,
            Sense::Ge => rhs <= 0.0,
            Sense::Eq => rhs < 0.0,
        };
        if flip {
            rhs = -rhs;
            for t in terms.iter_mut() {
                t.1 = -t.1;
            }
            sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        if terms.is_empty() {
            let ok = match sense {
                Sense::Le => 0.0 <= rhs + 1e-9,
                Sense::Ge => 0.0 >= rhs - 1e-9,
                Sense::Eq => rhs.abs() <= 1e-9,
            };
            if !ok {
                return fail(LpStatus::Infeasible, 0);
            }
            continue;
        }
        rows.push(Row { terms, sense, rhs });
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.sense != Sense::Le).count();
    let n = n_struct + n_slack + n_art;

    let mut kind = vec![ColKind::Structural; n_struct];
    kind.extend(std::iter::repeat_n(ColKind::Slack, n_slack));
    kind.extend(std::iter::repeat_n(ColKind::Artificial, n_art));
    let mut upper_all = col_upper.clone();
    upper_all.extend(std::iter::repeat_n(f64::INFINITY, n_slack + n_art));

    let mut t = vec![0.0; m * n];
    let mut beta = vec![0.0; m];
    let mut basis = vec![0; m];
    let mut next_slack = n_struct;
    let mut next_art = n_struct + n_slack;
    for (i, row) in rows.iter().enumerate() {
        for &(j, a) in &row.terms {
            t[i * n + j] += a;
        }
        beta[i] = row.rhs;
        match row.sense {
            Sense::Le => {
                t[i * n + next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                t[i * n + next_slack] = -1.0;
                next_slack += 1;
                t[i * n + next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                t[i * n + next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            }
        }
    }
    let mut is_basic = vec![false; n];
    for &b in &basis {
        is_basic[b] = true;
    }

    let mut tab = Tableau {
        m,
        n,
        t,
        beta,
        basis,
        upper: upper_all,
        at_upper: vec![false; n],
        is_basic,
        kind,
        d: vec![0.0; n],
        iterations: 0,
    };

    // Phase one.
    if n_art > 0 {
        let mut c1 = vec![0.0; n];
        for (j, k) in tab.kind.iter().enumerate() {
            if *k == ColKind::Artificial {
                c1[j] = 1.0;
            }
        }
        tab.set_costs(&c1);
        match tab.run(&c1, opts.max_iterations) {
            Step::Limit => return fail(LpStatus::IterationLimit, tab.iterations),
            Step::Unbounded => return fail(LpStatus::NumericalFailure, tab.iterations),
            _ => {}
        }
        let infeas = tab.objective(&c1);
        let scale = 1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeas > PHASE1_TOL * scale {
            return fail(LpStatus::Infeasible, tab.iterations);
        }
        tab.drive_out_artificials();
    }

    // Phase two.
    let mut c2 = vec![0.0; n];
    c2[..n_struct].copy_from_slice(&cost);
    tab.set_costs(&c2);
    match tab.run(&c2, opts.max_iterations) {
        Step::Limit => return fail(LpStatus::IterationLimit, tab.iterations),
        Step::Unbounded => return fail(LpStatus::Unbounded, tab.iterations),
        _ => {}
    }

    // Recover model-space values.
    let mut col_val = vec![0.0; n];
    for j in 0..n {
        if !tab.is_basic[j] {
            col_val[j] = tab.value_of_nonbasic(j);
        }
    }
    for i in 0..m {
        col_val[tab.basis[i]] = tab.beta[i];
    }
    let mut values: Vec<f64> = maps
        .iter()
        .map(|mp| match *mp {
            ColMap::Shift { col, offset } => offset + col_val[col],
            ColMap::Mirror { col, offset } => offset - col_val[col],
            ColMap::Split { pos, neg } => col_val[pos] - col_val[neg],
        })
        .collect();
    for (j, x) in values.iter_mut().enumerate() {
        *x = x.clamp(lower[j], upper[j].max(lower[j]));
    }

    let viol = max_row_violation(model, &values);
    if viol > opts.check_tol {
        return fail(LpStatus::NumericalFailure, tab.iterations);
    }
    let objective = model.evaluate_objective(&values);
    LpSolution {
        status: LpStatus::Optimal,
        values,
        objective,
        iterations: tab.iterations,
    }
}

fn max_row_violation(model: &MilpModel, values: &[f64]) -> f64 {
    model
        .constraints()
        .iter()
        .map(|c| {
            let scale = 1.0 + c.rhs.abs();
            c.violation(values) / scale.sqrt()
        })
        .fold(0.0, f64::max)
}
