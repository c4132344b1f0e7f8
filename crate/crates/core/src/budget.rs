//! Splitting the target probability across agents and time.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("{what} must lie in (0,1), got {value}")]
    Range { what: &'static str, value: f64 },
    #[error("horizon and agent count must be positive")]
    Size,
    #[error("agent {index}: tube level 1-N(1-θᵢ) = {level} is not positive")]
    EmptyTube { index: usize, level: f64 },
    #[error("tube product {global} is below the target {target} (short by {margin:e})")]
    Shortfall { global: f64, target: f64, margin: f64 },
}

/// Per-agent region levels θᵢ, tube levels Θᵢ = 1 - N(1-θᵢ) and Θ = ΠΘᵢ.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityBudget {
    pub region_levels: Vec<f64>,
    pub tube_levels: Vec<f64>,
    pub global: f64,
    pub target: f64,
    pub horizon: usize,
}

impl ProbabilityBudget {
    /// Θ - θ (non-negative for a valid budget).
    pub fn margin(&self) -> f64 {
        self.global - self.target
    }
}

fn tube_level(theta_i: f64, horizon: usize) -> f64 {
    1.0 - horizon as f64 * (1.0 - theta_i)
}

/// Same level for every agent: θᵢ = 1 - (1 - θ^{1/M}) / N, raised by a few
/// ulps if rounding would leave ΠΘᵢ below θ.
pub fn budget_uniform(theta: f64, agents: usize, horizon: usize) -> Result<ProbabilityBudget, BudgetError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(BudgetError::Range {
            what: "theta",
            value: theta,
        });
    }
    if agents == 0 || horizon == 0 {
        return Err(BudgetError::Size);
    }
    let mut level = 1.0 - (1.0 - theta.powf(1.0 / agents as f64)) / horizon as f64;
    for _ in 0..10_000 {
        let tube = tube_level(level, horizon);
        if tube.powi(agents as i32) >= theta && (0..agents).fold(1.0, |p, _| p * tube) >= theta {
            break;
        }
        level = level.next_up();
    }
    budget_validate(&vec![level; agents], theta, horizon)
}

pub fn budget_validate(levels: &[f64], theta: f64, horizon: usize) -> Result<ProbabilityBudget, BudgetError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(BudgetError::Range {
            what: "theta",
            value: theta,
        });
    }
    if levels.is_empty() || horizon == 0 {
        return Err(BudgetError::Size);
    }
    let mut tubes = Vec::with_capacity(levels.len());
    for (index, &l) in levels.iter().enumerate() {
        if !(l > 0.0 && l < 1.0) {
            return Err(BudgetError::Range {
                what: "region level",
                value: l,
            });
        }
        let level = tube_level(l, horizon);
        if level <= 0.0 {
            return Err(BudgetError::EmptyTube { index, level });
        }
        tubes.push(level);
    }
    let global = tubes.iter().product::<f64>();
    if global < theta {
        return Err(BudgetError::Shortfall {
            global,
            target: theta,
            margin: theta - global,
        });
    }
    Ok(ProbabilityBudget {
        region_levels: levels.to_vec(),
        tube_levels: tubes,
        global,
        target: theta,
        horizon,
    })
}
