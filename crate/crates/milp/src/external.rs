//! Running an external MILP solver through LP files.
//!
//! Two command-line dialects are supported:
//!
//! * HiGHS: `<program> --model_file <lp> --solution_file <sol>`, reading the
//!   HiGHS raw solution format (`Model status`, `# Columns n`, `name value`).
//! * CBC: `<program> <lp> solve solu <sol>`, reading the CBC solution format
//!   (`Optimal - objective value v` followed by `index name value reduced`).
//!
//! The returned assignment is always checked against the model rows; a solver
//! that claims optimality for an infeasible point is reported as an error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crate::lp_format::{variable_names, write_lp};
use crate::model::MilpModel;
use crate::{MilpError, SolveOutcome, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    Highs,
    Cbc,
}

#[derive(Clone, Debug)]
pub struct ExternalSolver {
    pub program: PathBuf,
    pub dialect: Dialect,
    pub extra_args: Vec<String>,
    pub feasibility_tol: f64,
}

/// Parsed contents of a solution file, keyed by column name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedSolution {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub values: HashMap<String, f64>,
}

impl ExternalSolver {
    /// Guesses the dialect from the executable name (`cbc*` means CBC,
    /// anything else is treated as HiGHS-compatible).
    pub fn new(program: impl Into<PathBuf>) -> Self {
        let program = program.into();
        let stem = program
            .file_stem()
            .map(|s| s.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        let dialect = if stem.starts_with("cbc") {
            Dialect::Cbc
        } else {
            Dialect::Highs
        };
        ExternalSolver {
            program,
            dialect,
            extra_args: Vec::new(),
            feasibility_tol: 1e-6,
        }
    }

    pub fn with_dialect(mut self, dialect: Dialect) -> Self {
        self.dialect = dialect;
        self
    }

    fn command(&self, lp: &Path, sol: &Path) -> Command {
        let mut cmd = Command::new(&self.program);
        match self.dialect {
            Dialect::Highs => {
                cmd.arg("--model_file")
                    .arg(lp)
                    .arg("--solution_file")
                    .arg(sol);
            }
            Dialect::Cbc => {
                cmd.arg(lp).arg("solve").arg("solu").arg(sol);
            }
        }
        cmd.args(&self.extra_args);
        cmd
    }

    pub fn solve(&self, model: &MilpModel) -> Result<SolveOutcome, MilpError> {
        let clock = Instant::now();
        let program = self.program.display().to_string();
        let dir = tempfile::tempdir()?;
        let lp = dir.path().join("model.lp");
        let sol = dir.path().join("model.sol");
        std::fs::write(&lp, write_lp(model))?;
        let output = self
            .command(&lp, &sol)
            .output()
            .map_err(|source| MilpError::Spawn {
                program: program.clone(),
                source,
            })?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(MilpError::ExternalFailure {
                program,
                message: format!("exit status {}: {}", output.status, stderr.trim()),
            });
        }
        let text = std::fs::read_to_string(&sol).map_err(|e| MilpError::ExternalFailure {
            program: program.clone(),
            message: format!("no solution file: {e}"),
        })?;
        let parsed = match self.dialect {
            Dialect::Highs => parse_highs_solution(&text)?,
            Dialect::Cbc => parse_cbc_solution(&text)?,
        };
        let has_point = matches!(
            parsed.status,
            SolveStatus::Optimal | SolveStatus::IterationLimit
        ) && !parsed.values.is_empty();
        let mut values = Vec::new();
        if has_point {
            // CBC may omit zero columns, so missing names read as zero.
            values = variable_names(model)
                .iter()
                .map(|n| parsed.values.get(n).copied().unwrap_or(0.0))
                .collect();
            model
                .check_feasible(&values, self.feasibility_tol)
                .map_err(|e| MilpError::ExternalFailure {
                    program: program.clone(),
                    message: format!("returned point fails the constraint check: {e}"),
                })?;
        } else if parsed.status == SolveStatus::Optimal {
            return Err(MilpError::SolutionFormat(
                "optimal status without column values".into(),
            ));
        }
        let objective = if has_point {
            model.evaluate_objective(&values)
        } else {
            f64::NAN
        };
        Ok(SolveOutcome {
            status: parsed.status,
            objective,
            values,
            nodes: 0,
            wall_time: clock.elapsed(),
        })
    }
}

fn parse_value(s: &str) -> Result<f64, MilpError> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse()
            .map_err(|_| MilpError::SolutionFormat(format!("bad number `{s}`"))),
    }
}

fn highs_status(s: &str) -> SolveStatus {
    let l = s.trim().to_ascii_lowercase();
    if l == "optimal" {
        SolveStatus::Optimal
    } else if l.contains("infeasible") && !l.contains("unbounded") {
        SolveStatus::Infeasible
    } else if l.contains("unbounded") {
        SolveStatus::Unbounded
    } else if l.contains("limit") {
        SolveStatus::IterationLimit
    } else {
        SolveStatus::NumericalFailure
    }
}

/// Reads the HiGHS raw solution format.
pub fn parse_highs_solution(text: &str) -> Result<ParsedSolution, MilpError> {
    let lines: Vec<&str> = text.lines().map(str::trim).collect();
    let status_at = lines
        .iter()
        .position(|l| l.eq_ignore_ascii_case("model status"))
        .ok_or_else(|| MilpError::SolutionFormat("missing `Model status`".into()))?;
    let status_line = lines
        .get(status_at + 1)
        .ok_or_else(|| MilpError::SolutionFormat("missing status value".into()))?;
    let status = highs_status(status_line);
    let mut objective = None;
    let mut values = HashMap::new();
    let mut i = status_at + 2;
    while i < lines.len() {
        let l = lines[i];
        if let Some(rest) = l.strip_prefix("Objective") {
            objective = Some(parse_value(rest.trim())?);
        } else if let Some(rest) = l.strip_prefix("# Columns") {
            let n: usize = rest
                .trim()
                .parse()
                .map_err(|_| MilpError::SolutionFormat(format!("bad column count `{rest}`")))?;
            for k in 0..n {
                let entry = lines.get(i + 1 + k).ok_or_else(|| {
                    MilpError::SolutionFormat(format!("expected {n} columns, found {k}"))
                })?;
                let mut parts = entry.split_whitespace();
                let (Some(name), Some(v)) = (parts.next(), parts.next()) else {
                    return Err(MilpError::SolutionFormat(format!("bad column line `{entry}`")));
                };
                values.insert(name.to_string(), parse_value(v)?);
            }
            i += n;
        } else if l.starts_with("# Dual") {
            break;
        }
        i += 1;
    }
    Ok(ParsedSolution {
        status,
        objective,
        values,
    })
}

/// Reads the CBC solution format.
pub fn parse_cbc_solution(text: &str) -> Result<ParsedSolution, MilpError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| MilpError::SolutionFormat("empty solution file".into()))?;
    let lower = header.to_ascii_lowercase();
    let status = if lower.starts_with("optimal") {
        SolveStatus::Optimal
    } else if lower.contains("infeasible") {
        SolveStatus::Infeasible
    } else if lower.contains("unbounded") {
        SolveStatus::Unbounded
    } else if lower.starts_with("stopped") {
        SolveStatus::IterationLimit
    } else {
        return Err(MilpError::SolutionFormat(format!(
            "unrecognized status line `{header}`"
        )));
    };
    let objective = match header.rsplit_once("objective value") {
        Some((_, v)) => Some(parse_value(v.trim())?),
        None => None,
    };
    let mut values = HashMap::new();
    for line in lines {
        // Lines may start with `**` when the column is infeasible.
        let line = line.trim().trim_start_matches("**").trim();
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 3 || parts[0].parse::<usize>().is_err() {
            return Err(MilpError::SolutionFormat(format!("bad column line `{line}`")));
        }
        values.insert(parts[1].to_string(), parse_value(parts[2])?);
    }
    Ok(ParsedSolution {
        status,
        objective,
        values,
    })
}

/// Writes a solution in the HiGHS raw format (used by the built-in
/// command-line emulation and by tests).
pub fn write_highs_solution(model: &MilpModel, outcome: &SolveOutcome) -> String {
    let names = variable_names(model);
    let status = match outcome.status {
        SolveStatus::Optimal => "Optimal",
        SolveStatus::Infeasible => "Infeasible",
        SolveStatus::Unbounded => "Unbounded",
        SolveStatus::IterationLimit => "Iteration limit reached",
        SolveStatus::NumericalFailure => "Unknown",
    };
    let mut out = format!("Model status\n{status}\n\n# Primal solution values\n");
    if outcome.has_solution() {
        out.push_str("Feasible\n");
        out.push_str(&format!("Objective {}\n", crate::lp_format::format_number(outcome.objective)));
        out.push_str(&format!("# Columns {}\n", names.len()));
        for (n, v) in names.iter().zip(&outcome.values) {
            out.push_str(&format!("{n} {}\n", crate::lp_format::format_number(*v)));
        }
    } else {
        out.push_str("None\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_highs_output() {
        let text = "Model status\nOptimal\n\n# Primal solution values\nFeasible\nObjective 12\n# Columns 2\nx 2\ny 3\n# Rows 1\nc1 5\n\n# Dual solution values\nNone\n";
        let s = parse_highs_solution(text).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.objective, Some(12.0));
        assert_eq!(s.values["y"], 3.0);
        let inf = parse_highs_solution("Model status\nInfeasible\n").unwrap();
        assert_eq!(inf.status, SolveStatus::Infeasible);
        assert!(parse_highs_solution("Model status\nOptimal\n# Columns 3\nx 1\n").is_err());
    }

    #[test]
    fn reads_cbc_output() {
        let text = "Optimal - objective value 12.00000000\n      0 x                      2                       0\n      1 y                      3                       0\n";
        let s = parse_cbc_solution(text).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.values["x"], 2.0);
        let inf = parse_cbc_solution("Infeasible - objective value 0.00000000\n").unwrap();
        assert_eq!(inf.status, SolveStatus::Infeasible);
        assert!(parse_cbc_solution("garbage\n").is_err());
    }
}
