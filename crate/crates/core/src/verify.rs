//! Monte Carlo validation of plans: closed-loop rollouts under sampled
//! disturbances, empirical satisfaction of the original specification, and
//! tube containment rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::encode::AgentPlan;
use crate::model::{AgentModel, DisturbanceKind, DisturbanceSpec, MasModel};
use crate::reach::Directions;
use crate::stl::{eval_boolean, eval_robustness, Formula, StlError, Trajectory};
use crate::tighten::Tubes;

/// Confidence level of the reported lower bound.
pub const CONFIDENCE: f64 = 0.99;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("covariance of agent {0} is not positive definite")]
    Covariance(usize),
    #[error("no plan for agent {0}")]
    MissingPlan(usize),
}

/// Test distribution used when only the disturbance moments are known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Surrogate {
    #[default]
    Gaussian,
    /// w = L·r with independent ±1 entries in r.
    Rademacher,
}

impl Surrogate {
    pub fn as_str(self) -> &'static str {
        match self {
            Surrogate::Gaussian => "gaussian",
            Surrogate::Rademacher => "rademacher",
        }
    }
}

/// Generator of the stream belonging to one sample.
pub fn sample_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample);
    rng
}

/// Draws w(0..N) with covariance Q. Gaussian disturbances are sampled as
/// L·n; moment-only ones use the surrogate.
pub fn sample_disturbance(
    spec: &DisturbanceSpec,
    surrogate: Surrogate,
    rng: &mut impl Rng,
    horizon: usize,
) -> Option<Vec<DVector<f64>>> {
    let l = spec.cholesky()?;
    Some(draw(&l, spec.kind, surrogate, rng, horizon))
}

fn draw(
    l: &DMatrix<f64>,
    kind: DisturbanceKind,
    surrogate: Surrogate,
    rng: &mut impl Rng,
    horizon: usize,
) -> Vec<DVector<f64>> {
    let n = l.nrows();
    let use_sign = kind == DisturbanceKind::MomentOnly && surrogate == Surrogate::Rademacher;
    (0..horizon)
        .map(|_| {
            let r = DVector::from_fn(n, |_, _| {
                if use_sign {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    StandardNormal.sample(rng)
                }
            });
            l * r
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub x: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// Time steps where u(t) leaves the input box.
    pub input_violations: usize,
}

/// e(0) = 0, e(t+1) = Ā e(t) + w(t), u = K e + v, x = z + e.
pub fn rollout(agent: &AgentModel, plan: &AgentPlan, w: &[DVector<f64>]) -> Rollout {
    let n = plan.v.len();
    let a_bar = agent.a_bar();
    let mut e = vec![DVector::zeros(agent.state_dim())];
    for t in 0..n {
        let next = &a_bar * &e[t] + &w[t];
        e.push(next);
    }
    let mut u = Vec::with_capacity(n);
    let mut violations = 0;
    for t in 0..n {
        let ut = &agent.k * &e[t] + DVector::from_column_slice(&plan.v[t]);
        let outside = ut
            .iter()
            .enumerate()
            .any(|(d, &x)| x < agent.input_lo[d] - 1e-12 || x > agent.input_hi[d] + 1e-12);
        violations += usize::from(outside);
        u.push(ut);
    }
    let x = plan
        .z
        .iter()
        .zip(&e)
        .map(|(z, e)| DVector::from_column_slice(z) + e)
        .collect();
    Rollout {
        x,
        e,
        u,
        input_violations: violations,
    }
}

/// One closed-loop realization of every agent.
pub fn rollout_all(
    model: &MasModel,
    plans: &BTreeMap<usize, AgentPlan>,
    factors: &BTreeMap<usize, DMatrix<f64>>,
    surrogate: Surrogate,
    rng: &mut impl Rng,
) -> Result<BTreeMap<usize, Rollout>, VerifyError> {
    let mut out = BTreeMap::new();
    for a in model.agents() {
        let plan = plans.get(&a.id).ok_or(VerifyError::MissingPlan(a.id))?;
        let w = draw(&factors[&a.id], a.disturbance.kind, surrogate, rng, plan.v.len());
        out.insert(a.id, rollout(a, plan, &w));
    }
    Ok(out)
}

fn factors(model: &MasModel) -> Result<BTreeMap<usize, DMatrix<f64>>, VerifyError> {
    model
        .agents()
        .iter()
        .map(|a| {
            a.disturbance
                .cholesky()
                .map(|l| (a.id, l))
                .ok_or(VerifyError::Covariance(a.id))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub index: u64,
    pub satisfied: bool,
    pub robustness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub samples: usize,
    pub satisfied: usize,
    pub rate: f64,
    /// Hoeffding lower bound at level [`CONFIDENCE`].
    pub lower_bound: f64,
    /// Samples in which some u(t) left the original input box.
    pub input_violations: usize,
    pub containment: BTreeMap<usize, f64>,
    pub seed: u64,
    /// Set when some disturbance was only known through its moments.
    pub surrogate: Option<Surrogate>,
    pub records: Vec<SampleRecord>,
}

pub fn hoeffding_lower_bound(rate: f64, samples: usize) -> f64 {
    rate - ((1.0 / (1.0 - CONFIDENCE)).ln() / (2.0 * samples as f64)).sqrt()
}

/// Empirical Pr{x ⊨ φ} over `samples` closed-loop realizations. Sample `i`
/// uses stream `i` of the seeded generator, so the report does not depend on
/// the evaluation order.
pub fn estimate_satisfaction(
    model: &MasModel,
    plans: &BTreeMap<usize, AgentPlan>,
    phi: &Formula,
    samples: usize,
    seed: u64,
    surrogate: Surrogate,
) -> Result<VerifyReport, VerifyError> {
    let factors = factors(model)?;
    let results: Vec<Result<(SampleRecord, bool), VerifyError>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let runs = rollout_all(model, plans, &factors, surrogate, &mut rng)?;
            let parts: BTreeMap<usize, Vec<Vec<f64>>> = runs
                .iter()
                .map(|(id, r)| (*id, r.x.iter().map(|v| v.iter().copied().collect()).collect()))
                .collect();
            let x = Trajectory::from_agents(&parts)?;
            let satisfied = eval_boolean(phi, &x, 0)?;
            let robustness = eval_robustness(phi, &x, 0)?;
            let violated_input = runs.values().any(|r| r.input_violations > 0);
            Ok((
                SampleRecord {
                    index: i,
                    satisfied,
                    robustness,
                },
                violated_input,
            ))
        })
        .collect();
    let mut records = Vec::with_capacity(samples);
    let mut input_violations = 0;
    for r in results {
        let (rec, bad) = r?;
        input_violations += usize::from(bad);
        records.push(rec);
    }
    let satisfied = records.iter().filter(|r| r.satisfied).count();
    let rate = if samples == 0 {
        0.0
    } else {
        satisfied as f64 / samples as f64
    };
    let moment_only = model
        .agents()
        .iter()
        .any(|a| a.disturbance.kind == DisturbanceKind::MomentOnly);
    Ok(VerifyReport {
        samples,
        satisfied,
        rate,
        lower_bound: hoeffding_lower_bound(rate, samples.max(1)),
        input_violations,
        containment: BTreeMap::new(),
        seed,
        surrogate: moment_only.then_some(surrogate),
        records,
    })
}

/// Fraction of error rollouts with e_i(t) ∈ E_i(t) for all t, per agent.
pub fn tube_containment(
    model: &MasModel,
    tubes: &Tubes,
    samples: usize,
    seed: u64,
    surrogate: Surrogate,
) -> Result<BTreeMap<usize, f64>, VerifyError> {
    let n = tubes.horizon();
    let factors = factors(model)?;
    let mut out = BTreeMap::new();
    for (k, a) in model.agents().iter().enumerate() {
        let sets = tubes.agent(a.id);
        let dirs = Directions::for_dim(a.state_dim());
        // h_{E(t)}(d) for every time and direction
        let table: Vec<Vec<f64>> = sets
            .iter()
            .map(|s| dirs.dirs.iter().map(|d| s.support(d)).collect())
            .collect();
        let a_bar = a.a_bar();
        let l = &factors[&a.id];
        let inside = (0..samples as u64)
            .into_par_iter()
            .filter(|&i| {
                // separate streams per agent
                let mut rng = sample_rng(seed ^ ((k as u64 + 1) << 48), i);
                let w = draw(l, a.disturbance.kind, surrogate, &mut rng, n);
                let mut e = DVector::zeros(a.state_dim());
                for t in 0..=n {
                    let ok = dirs
                        .dirs
                        .iter()
                        .zip(&table[t])
                        .all(|(d, h)| d.dot(&e) <= h + 1e-9);
                    if !ok {
                        return false;
                    }
                    if t < n {
                        e = &a_bar * e + &w[t];
                    }
                }
                true
            })
            .count();
        out.insert(a.id, inside as f64 / samples.max(1) as f64);
    }
    Ok(out)
}

/// Limit of P ← Ā P Āᵀ + Q (stationary error covariance).
pub fn stationary_covariance(a_bar: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let next = a_bar * &p * a_bar.transpose() + q;
        let diff = (&next - &p).norm();
        p = next;
        if diff <= 1e-14 * p.norm().max(1.0) {
            break;
        }
    }
    p
}

pub fn format_report(r: &VerifyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "samples\t{}", r.samples);
    let _ = writeln!(out, "satisfied\t{}", r.satisfied);
    let _ = writeln!(out, "rate\t{}", r.rate);
    let _ = writeln!(out, "lower_bound_{}\t{}", CONFIDENCE, r.lower_bound);
    let _ = writeln!(out, "input_violations\t{}", r.input_violations);
    let _ = writeln!(out, "seed\t{}", r.seed);
    match r.surrogate {
        Some(s) => {
            let _ = writeln!(
                out,
                "disturbance\tmoment-only, sampled from a {} surrogate with matching covariance",
                s.as_str()
            );
        }
        None => {
            let _ = writeln!(out, "disturbance\tgaussian");
        }
    }
    for (id, rate) in &r.containment {
        let _ = writeln!(out, "containment_agent_{id}\t{rate}");
    }
    out
}

pub fn format_records(r: &VerifyReport) -> String {
    let mut out = String::from("sample,satisfied,robustness\n");
    for rec in &r.records {
        let _ = writeln!(out, "{},{},{}", rec.index, u8::from(rec.satisfied), rec.robustness);
    }
    out
}
