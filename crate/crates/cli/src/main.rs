//! `prtstl` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (plan satisfied, verification bound ≥ θ) |
//! | 1 | unreadable scenario, artifact or command line |
//! | 2 | plan minimally violating, or verification bound < θ |
//! | 3 | infeasible: empty tightened input box or no plan |
//! | 4 | solver or internal failure |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use milp::external::{write_highs_solution, ExternalSolver};
use milp::lp_format::parse_lp;
use milp::{solve_milp, SolveLimits};
use prtstl::budget::ProbabilityBudget;
use prtstl::coordinator::{format_log, plan, CoordError, PlanMode, PlanStatus, Solver};
use prtstl::encode::AgentPlan;
use prtstl::plot::{build_scene, read_trajectory_csv, write_trajectory_csv, write_tube_csv};
use prtstl::reach::CrKind;
use prtstl::scenario::Scenario;
use prtstl::tighten::{margin_report, tighten_spec, TightenError, TightenedSpec, Tubes};
use prtstl::verify::{estimate_satisfaction, format_records, format_report, tube_containment, Surrogate};

#[derive(Parser)]
#[command(name = "prtstl", version, about = "Multi-agent planning under probabilistic STL tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a scenario and print its tasks and probability budget.
    Parse(Common),
    /// Build the tubes and report the tightened predicates and input boxes.
    Tighten(Common),
    /// Plan nominal trajectories.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// `internal` or `external:<path to solver>`
        #[arg(long)]
        solver: Option<String>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        kmax: Option<u64>,
    },
    /// Monte Carlo check of the planned trajectories against the original tasks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distribution used for moment-only disturbances.
        #[arg(long, value_enum, default_value_t = SurrogateArg::Gaussian)]
        surrogate: SurrogateArg,
    },
    /// Render the planned scene as SVG.
    Plot(Common),
    /// Solve an LP file and write a HiGHS-style solution file.
    #[command(name = "lp-solve")]
    LpSolve {
        #[arg(long = "model_file")]
        model_file: PathBuf,
        #[arg(long = "solution_file")]
        solution_file: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        max_nodes: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for output artifacts (and plan input for verify/plot).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Size Chebyshev regions with r² = n/θ instead of n/(1-θ).
    #[arg(long)]
    chebyshev_paper_radius: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Centralized,
    Iterative,
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateArg {
    Gaussian,
    Rademacher,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Failure {
    fail(1, format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(&common.scenario).map_err(|e| io_fail(&common.scenario, e))?;
    if common.chebyshev_paper_radius {
        if s.cr != CrKind::Chebyshev && s.cr != CrKind::ChebyshevCompat {
            return Err(fail(1, "--chebyshev-paper-radius requires cr = \"chebyshev\""));
        }
        s.cr = CrKind::ChebyshevCompat;
    }
    Ok(s)
}

fn prepare(s: &Scenario) -> Result<(Tubes, TightenedSpec), Failure> {
    let tubes = Tubes::build(&s.model, &s.budget, s.cr).map_err(|e| fail(4, e.to_string()))?;
    let spec = tighten_spec(&s.model, &tubes, s.tighten).map_err(|e| match e {
        TightenError::EmptyInputBox { t, .. } => fail(3, format!("{e} (time index {t})")),
        other => fail(4, other.to_string()),
    })?;
    Ok((tubes, spec))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn budget_summary(b: &ProbabilityBudget, ids: &[usize]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "target\t{}", b.target);
    let _ = writeln!(out, "horizon\t{}", b.horizon);
    let _ = writeln!(out, "global\t{}", b.global);
    let _ = writeln!(out, "margin\t{}", b.margin());
    for (k, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "agent\t{id}\tregion_level={}\ttube_level={}", b.region_levels[k], b.tube_levels[k]);
    }
    out
}

fn cmd_parse(common: &Common) -> Result<u8, Failure> {
    let s = load(common)?;
    let spec = s.model.spec();
    println!("agents\t{}", s.model.agent_ids().iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    println!("horizon\t{}", spec.horizon);
    for (id, f) in &spec.local_tasks {
        println!("local\t{id}\t{f}");
    }
    for (c, f) in &spec.joint_tasks {
        let name: Vec<String> = c.iter().map(usize::to_string).collect();
        println!("joint\t({})\t{f}", name.join(","));
    }
    print!("{}", budget_summary(&s.budget, &s.model.agent_ids()));
    Ok(0)
}

fn cmd_tighten(common: &Common) -> Result<u8, Failure> {
    let s = load(common)?;
    let (_, spec) = prepare(&s)?;
    let report = margin_report(&spec);
    write(&common.out.join("margins.tsv"), &report)?;
    let mut boxes = String::from("agent\tt\tcoord\tlower\tupper\n");
    for (id, b) in &spec.input_boxes {
        for t in 0..b.lower.len() {
            for j in 0..b.lower[t].len() {
                let _ = writeln!(boxes, "{id}\t{t}\t{j}\t{}\t{}", b.lower[t][j], b.upper[t][j]);
            }
        }
    }
    write(&common.out.join("input_boxes.tsv"), &boxes)?;
    write(&common.out.join("budget.txt"), &budget_summary(&s.budget, &s.model.agent_ids()))?;
    print!("{report}");
    Ok(0)
}

fn parse_solver(arg: &str) -> Result<Option<Solver>, Failure> {
    if arg == "internal" {
        Ok(None)
    } else if let Some(path) = arg.strip_prefix("external:") {
        if path.is_empty() {
            return Err(fail(1, "--solver external:<path> needs a path"));
        }
        Ok(Some(Solver::External(ExternalSolver::new(path))))
    } else {
        Err(fail(1, format!("unknown solver `{arg}` (expected internal or external:<path>)")))
    }
}

fn cmd_plan(common: &Common, mode: Option<ModeArg>, solver: Option<&str>, kmax: Option<u64>) -> Result<u8, Failure> {
    let mut s = load(common)?;
    match solver.map(parse_solver).transpose()? {
        Some(Some(ext)) => s.plan.solver = ext,
        Some(None) => {
            if !matches!(s.plan.solver, Solver::Internal(_)) {
                s.plan.solver = Solver::Internal(SolveLimits::default());
            }
        }
        None => {}
    }
    if let Some(k) = kmax {
        s.plan.k_max = Some(k as usize);
    }
    let mode = match mode {
        Some(ModeArg::Centralized) => PlanMode::Centralized,
        Some(ModeArg::Iterative) => PlanMode::Iterative,
        None => s.mode,
    };
    let ids = s.model.agent_ids();
    write(&common.out.join("budget.txt"), &budget_summary(&s.budget, &ids))?;
    let (_, spec) = prepare(&s)?;
    let result = plan(&s.model, &spec, mode, &s.plan).map_err(|e| match e {
        CoordError::Encode(_) | CoordError::Stl(_) | CoordError::Schedule(_) => fail(1, e.to_string()),
        other => fail(4, other.to_string()),
    })?;
    write(&common.out.join("iterations.tsv"), &format_log(&result))?;
    if !result.plans.is_empty() {
        let mut csv = Vec::new();
        write_trajectory_csv(&mut csv, &result.plans).map_err(|e| fail(4, e.to_string()))?;
        write(&common.out.join("trajectory.csv"), &String::from_utf8_lossy(&csv))?;
    }
    println!(
        "status\t{}\niterations\t{}\nrho_psi\t{}\ncost\t{}",
        result.status.as_str(),
        result.iterations,
        result.rho_psi,
        result.total_cost
    );
    Ok(match result.status {
        PlanStatus::Satisfied => 0,
        PlanStatus::MinimallyViolating => 2,
        PlanStatus::Infeasible { agent } => {
            if let Some(a) = agent {
                eprintln!("no plan for agent {a}");
            }
            3
        }
    })
}

fn read_plans(out: &Path) -> Result<BTreeMap<usize, AgentPlan>, Failure> {
    let path = out.join("trajectory.csv");
    let file = fs::File::open(&path).map_err(|e| io_fail(&path, e))?;
    read_trajectory_csv(file).map_err(|e| io_fail(&path, e))
}

fn cmd_verify(common: &Common, samples: u64, seed: u64, surrogate: SurrogateArg) -> Result<u8, Failure> {
    let s = load(common)?;
    let (tubes, spec) = prepare(&s)?;
    let plans = read_plans(&common.out)?;
    let surrogate = match surrogate {
        SurrogateArg::Gaussian => Surrogate::Gaussian,
        SurrogateArg::Rademacher => Surrogate::Rademacher,
    };
    let phi = spec.phi.conjunction();
    let mut report = estimate_satisfaction(&s.model, &plans, &phi, samples as usize, seed, surrogate)
        .map_err(|e| fail(1, e.to_string()))?;
    report.containment =
        tube_containment(&s.model, &tubes, samples as usize, seed, surrogate).map_err(|e| fail(4, e.to_string()))?;
    let text = format_report(&report);
    write(&common.out.join("verify.txt"), &text)?;
    write(&common.out.join("samples.csv"), &format_records(&report))?;
    print!("{text}");
    Ok(if report.lower_bound >= s.budget.target { 0 } else { 2 })
}

fn cmd_plot(common: &Common) -> Result<u8, Failure> {
    let s = load(common)?;
    let (tubes, spec) = prepare(&s)?;
    let plans = match read_plans(&common.out) {
        Ok(p) => p,
        Err(e) if !common.out.join("trajectory.csv").exists() => {
            eprintln!("{}; drawing regions only", e.message);
            BTreeMap::new()
        }
        Err(e) => return Err(e),
    };
    let dims = s.plot.dims;
    let usable = s.model.agents().iter().all(|a| a.state_dim() > dims[0].max(dims[1]));
    if !usable {
        return Err(fail(1, format!("plot dims {dims:?} exceed the state dimension of some agent")));
    }
    let scene = build_scene(
        &s.model,
        &spec.phi.conjunction(),
        &spec.psi.conjunction(),
        &plans,
        Some(&tubes),
        dims,
        s.plot.workspace,
    );
    write(&common.out.join("scene.svg"), &scene.to_svg())?;
    let mut csv = Vec::new();
    write_tube_csv(&mut csv, &tubes, &plans, dims).map_err(|e| fail(4, e.to_string()))?;
    write(&common.out.join("tubes.csv"), &String::from_utf8_lossy(&csv))?;
    Ok(0)
}

fn cmd_lp_solve(model_file: &Path, solution_file: &Path, max_nodes: usize) -> Result<u8, Failure> {
    let text = fs::read_to_string(model_file).map_err(|e| io_fail(model_file, e))?;
    let model = parse_lp(&text).map_err(|e| io_fail(model_file, e))?;
    let limits = SolveLimits {
        max_nodes,
        ..SolveLimits::default()
    };
    let outcome = solve_milp(&model, &limits);
    write(solution_file, &write_highs_solution(&model, &outcome))?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors; bad command lines share code 1
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Parse(c) => cmd_parse(c),
        Command::Tighten(c) => cmd_tighten(c),
        Command::Plan {
            common,
            mode,
            solver,
            kmax,
        } => cmd_plan(common, *mode, solver.as_deref(), *kmax),
        Command::Verify {
            common,
            samples,
            seed,
            surrogate,
        } => cmd_verify(common, *samples, *seed, *surrogate),
        Command::Plot(c) => cmd_plot(c),
        Command::LpSolve {
            model_file,
            solution_file,
            max_nodes,
        } => cmd_lp_solve(model_file, solution_file, *max_nodes),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
