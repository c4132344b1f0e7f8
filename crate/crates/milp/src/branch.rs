//! Best-first branch-and-bound over the simplex relaxation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::model::MilpModel;
use crate::simplex::{solve_relaxation, LpOptions, LpStatus};
use crate::{SolveLimits, SolveOutcome, SolveStatus};

const INTEGRALITY_TOL: f64 = 1e-6;

struct Node {
    bound: f64,
    depth: usize,
    id: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

// Max-heap ordering: lowest bound first, then deepest, then newest.
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

/// Most fractional integral variable; ties go to the lowest index.
fn branching_candidate(model: &MilpModel, values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut best_frac = INTEGRALITY_TOL;
    for (j, v) in model.vars().iter().enumerate() {
        if !v.kind.is_integral() {
            continue;
        }
        let x = values[j];
        let frac = (x - x.floor()).min(x.ceil() - x);
        if frac > best_frac + 1e-12 {
            best_frac = frac;
            best = Some((j, x));
        }
    }
    best
}

/// Rounds the integral variables, fixes them, and re-solves the remaining LP
/// so the continuous part is consistent with exact 0/1 values.
fn polish(
    model: &MilpModel,
    lower: &[f64],
    upper: &[f64],
    values: &[f64],
    opts: &LpOptions,
) -> Option<(Vec<f64>, f64)> {
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    for (j, v) in model.vars().iter().enumerate() {
        if v.kind.is_integral() {
            let r = values[j].round();
            lo[j] = r;
            hi[j] = r;
        }
    }
    let sol = solve_relaxation(model, &lo, &hi, opts);
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let mut x = sol.values;
    for (j, v) in model.vars().iter().enumerate() {
        if v.kind.is_integral() {
            x[j] = lo[j];
        }
    }
    Some((x, sol.objective))
}

pub(crate) fn branch_and_bound(
    model: &MilpModel,
    limits: &SolveLimits,
    start: Option<&[f64]>,
) -> SolveOutcome {
    let clock = Instant::now();
    let opts = LpOptions {
        max_iterations: limits.max_lp_iterations,
        check_tol: limits.feasibility_tol,
    };
    let lower0: Vec<f64> = model.vars().iter().map(|v| v.lower).collect();
    let upper0: Vec<f64> = model
        .vars()
        .iter()
        .map(|v| if v.kind.is_integral() { v.upper.floor() } else { v.upper })
        .collect();
    let lower0: Vec<f64> = model
        .vars()
        .iter()
        .zip(lower0)
        .map(|(v, l)| if v.kind.is_integral() { l.ceil() } else { l })
        .collect();

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    if let Some(x) = start {
        if model.check_feasible(x, limits.feasibility_tol).is_ok() {
            incumbent = Some((x.to_vec(), model.evaluate_objective(x)));
        }
    }

    let mut nodes_solved = 0usize;
    let mut next_id = 0usize;
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: next_id,
        lower: lower0,
        upper: upper0,
    });
    next_id += 1;
    let mut hit_limit = false;
    let mut numerical_trouble = false;

    while let Some(node) = heap.pop() {
        if let Some((_, best)) = &incumbent {
            if node.bound >= best - limits.absolute_gap {
                continue;
            }
        }
        if nodes_solved >= limits.max_nodes
            || limits
                .time_limit
                .is_some_and(|lim| clock.elapsed() >= lim)
        {
            hit_limit = true;
            break;
        }
        nodes_solved += 1;
        let sol = solve_relaxation(model, &node.lower, &node.upper, &opts);
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.depth == 0 {
                    return SolveOutcome {
                        status: SolveStatus::Unbounded,
                        objective: f64::NEG_INFINITY,
                        values: Vec::new(),
                        nodes: nodes_solved,
                        wall_time: clock.elapsed(),
                    };
                }
                continue;
            }
            LpStatus::IterationLimit | LpStatus::NumericalFailure => {
                numerical_trouble = true;
                continue;
            }
        }
        if let Some((_, best)) = &incumbent {
            if sol.objective >= best - limits.absolute_gap {
                continue;
            }
        }
        match branching_candidate(model, &sol.values) {
            None => {
                if let Some((x, obj)) = polish(model, &node.lower, &node.upper, &sol.values, &opts)
                {
                    if model.check_feasible(&x, limits.feasibility_tol).is_ok()
                        && incumbent.as_ref().is_none_or(|(_, b)| obj < *b)
                    {
                        incumbent = Some((x, obj));
                    }
                }
            }
            Some((j, x)) => {
                let mut down_upper = node.upper.clone();
                down_upper[j] = x.floor();
                let mut up_lower = node.lower.clone();
                up_lower[j] = x.ceil();
                heap.push(Node {
                    bound: sol.objective,
                    depth: node.depth + 1,
                    id: next_id,
                    lower: node.lower.clone(),
                    upper: down_upper,
                });
                heap.push(Node {
                    bound: sol.objective,
                    depth: node.depth + 1,
                    id: next_id + 1,
                    lower: up_lower,
                    upper: node.upper,
                });
                next_id += 2;
            }
        }
    }

    let wall_time = clock.elapsed();
    match incumbent {
        Some((values, objective)) => SolveOutcome {
            status: if hit_limit {
                SolveStatus::IterationLimit
            } else {
                SolveStatus::Optimal
            },
            objective,
            values,
            nodes: nodes_solved,
            wall_time,
        },
        None => SolveOutcome {
            status: if hit_limit {
                SolveStatus::IterationLimit
            } else if numerical_trouble {
                SolveStatus::NumericalFailure
            } else {
                SolveStatus::Infeasible
            },
            objective: f64::NAN,
            values: Vec::new(),
            nodes: nodes_solved,
            wall_time,
        },
    }
}
