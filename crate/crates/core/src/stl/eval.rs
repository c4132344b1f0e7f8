use super::{Formula, FormulaKind, Polarity, StlError, Trajectory};

/// Robustness reported for `TRUE` (and empty conjunctions).
pub const TRUE_ROBUSTNESS: f64 = 1e9;

fn check(f: &Formula, x: &Trajectory, t: usize) -> Result<(), StlError> {
    if x.is_empty() || t + f.horizon() > x.last() {
        return Err(StlError::HorizonOverflow {
            t,
            horizon: f.horizon(),
            last: x.len().saturating_sub(1),
        });
    }
    Ok(())
}

pub fn eval_boolean(f: &Formula, x: &Trajectory, t: usize) -> Result<bool, StlError> {
    check(f, x, t)?;
    Ok(holds(f, x, t))
}

fn holds(f: &Formula, x: &Trajectory, t: usize) -> bool {
    match f.kind() {
        FormulaKind::True => true,
        FormulaKind::Pred(p) => {
            let mu = p.value(|s| x.get(t, s));
            match p.polarity {
                Polarity::Positive => mu >= 0.0,
                Polarity::Negated => mu < 0.0,
            }
        }
        FormulaKind::Not(g) => !holds(g, x, t),
        FormulaKind::And(v) => v.iter().all(|g| holds(g, x, t)),
        FormulaKind::Or(v) => v.iter().any(|g| holds(g, x, t)),
        FormulaKind::Eventually { inner, a, b } => (t + a..=t + b).any(|s| holds(inner, x, s)),
        FormulaKind::Always { inner, a, b } => (t + a..=t + b).all(|s| holds(inner, x, s)),
        FormulaKind::Until { left, right, a, b } => (t + a..=t + b)
            .any(|tau| holds(right, x, tau) && (t..=tau).all(|s| holds(left, x, s))),
    }
}

pub fn eval_robustness(f: &Formula, x: &Trajectory, t: usize) -> Result<f64, StlError> {
    eval_robustness_with(f, x, t, TRUE_ROBUSTNESS)
}

/// Robustness with `TRUE` valued at `top` (and empty disjunctions at `-top`).
pub fn eval_robustness_with(f: &Formula, x: &Trajectory, t: usize, top: f64) -> Result<f64, StlError> {
    check(f, x, t)?;
    Ok(rho(f, x, t, top))
}

fn rho(f: &Formula, x: &Trajectory, t: usize, top: f64) -> f64 {
    match f.kind() {
        FormulaKind::True => top,
        FormulaKind::Pred(p) => {
            let mu = p.value(|s| x.get(t, s));
            match p.polarity {
                Polarity::Positive => mu,
                Polarity::Negated => -mu,
            }
        }
        FormulaKind::Not(g) => -rho(g, x, t, top),
        FormulaKind::And(v) => v.iter().map(|g| rho(g, x, t, top)).fold(top, f64::min),
        FormulaKind::Or(v) => v.iter().map(|g| rho(g, x, t, top)).fold(-top, f64::max),
        FormulaKind::Eventually { inner, a, b } => (t + a..=t + b)
            .map(|s| rho(inner, x, s, top))
            .fold(f64::NEG_INFINITY, f64::max),
        FormulaKind::Always { inner, a, b } => (t + a..=t + b)
            .map(|s| rho(inner, x, s, top))
            .fold(f64::INFINITY, f64::min),
        FormulaKind::Until { left, right, a, b } => {
            // Running minimum of the left robustness over [t, τ].
            let mut left_min = f64::INFINITY;
            for s in t..t + a {
                left_min = left_min.min(rho(left, x, s, top));
            }
            let mut best = f64::NEG_INFINITY;
            for tau in t + a..=t + b {
                left_min = left_min.min(rho(left, x, tau, top));
                best = best.max(rho(right, x, tau, top).min(left_min));
            }
            best
        }
    }
}
