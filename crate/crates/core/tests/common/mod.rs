#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use prtstl::model::{AgentModel, CostSpec, DisturbanceSpec};
use prtstl::stl::{Formula, FormulaKind, Layout, Polarity, Predicate, Signal, Trajectory, TRUE_ROBUSTNESS};

/// x+ = x + u + w with K = -0.5 I and a box input bound.
pub fn integrator(id: usize, x0: &[f64], umax: f64, q: f64) -> AgentModel {
    let n = x0.len();
    AgentModel {
        id,
        a: DMatrix::identity(n, n),
        b: DMatrix::identity(n, n),
        k: DMatrix::identity(n, n) * -0.5,
        x0: DVector::from_column_slice(x0),
        input_lo: DVector::from_element(n, -umax),
        input_hi: DVector::from_element(n, umax),
        state_lo: None,
        state_hi: None,
        disturbance: DisturbanceSpec::gaussian(DMatrix::identity(n, n) * q),
        cost: CostSpec::default(),
    }
}

/// Satisfaction signal of `f` at every t with t + horizon <= last.
pub fn oracle_sat(f: &Formula, x: &Trajectory) -> Vec<bool> {
    let len = x.len() - f.horizon();
    match f.kind() {
        FormulaKind::True => vec![true; len],
        FormulaKind::Pred(p) => (0..len)
            .map(|t| {
                let mu = p.value(|s| x.get(t, s));
                match p.polarity {
                    Polarity::Positive => mu >= 0.0,
                    Polarity::Negated => mu < 0.0,
                }
            })
            .collect(),
        FormulaKind::Not(g) => oracle_sat(g, x)[..len].iter().map(|b| !b).collect(),
        FormulaKind::And(gs) => {
            let sigs: Vec<Vec<bool>> = gs.iter().map(|g| oracle_sat(g, x)).collect();
            (0..len).map(|t| sigs.iter().all(|s| s[t])).collect()
        }
        FormulaKind::Or(gs) => {
            let sigs: Vec<Vec<bool>> = gs.iter().map(|g| oracle_sat(g, x)).collect();
            (0..len).map(|t| sigs.iter().any(|s| s[t])).collect()
        }
        FormulaKind::Eventually { inner, a, b } => {
            let s = oracle_sat(inner, x);
            (0..len).map(|t| (t + a..=t + b).any(|tau| s[tau])).collect()
        }
        FormulaKind::Always { inner, a, b } => {
            let s = oracle_sat(inner, x);
            (0..len).map(|t| (t + a..=t + b).all(|tau| s[tau])).collect()
        }
        FormulaKind::Until { left, right, a, b } => {
            let l = oracle_sat(left, x);
            let r = oracle_sat(right, x);
            (0..len)
                .map(|t| (t + a..=t + b).any(|tau| r[tau] && (t..=tau).all(|s| l[s])))
                .collect()
        }
    }
}

/// Robustness signal, same domain as [`oracle_sat`].
pub fn oracle_rob(f: &Formula, x: &Trajectory) -> Vec<f64> {
    let len = x.len() - f.horizon();
    let fold = |v: &mut dyn Iterator<Item = f64>, max: bool| {
        v.fold(if max { -TRUE_ROBUSTNESS } else { TRUE_ROBUSTNESS }, |acc, r| {
            if max {
                acc.max(r)
            } else {
                acc.min(r)
            }
        })
    };
    match f.kind() {
        FormulaKind::True => vec![TRUE_ROBUSTNESS; len],
        FormulaKind::Pred(p) => (0..len)
            .map(|t| {
                let mu = p.value(|s| x.get(t, s));
                match p.polarity {
                    Polarity::Positive => mu,
                    Polarity::Negated => -mu,
                }
            })
            .collect(),
        FormulaKind::Not(g) => oracle_rob(g, x)[..len].iter().map(|r| -r).collect(),
        FormulaKind::And(gs) | FormulaKind::Or(gs) => {
            let max = matches!(f.kind(), FormulaKind::Or(_));
            let sigs: Vec<Vec<f64>> = gs.iter().map(|g| oracle_rob(g, x)).collect();
            (0..len).map(|t| fold(&mut sigs.iter().map(|s| s[t]), max)).collect()
        }
        FormulaKind::Eventually { inner, a, b } | FormulaKind::Always { inner, a, b } => {
            let max = matches!(f.kind(), FormulaKind::Eventually { .. });
            let s = oracle_rob(inner, x);
            (0..len).map(|t| fold(&mut (t + a..=t + b).map(|tau| s[tau]), max)).collect()
        }
        FormulaKind::Until { left, right, a, b } => {
            let l = oracle_rob(left, x);
            let r = oracle_rob(right, x);
            (0..len)
                .map(|t| {
                    fold(
                        &mut (t + a..=t + b).map(|tau| r[tau].min(fold(&mut (t..=tau).map(|s| l[s]), false))),
                        true,
                    )
                })
                .collect()
        }
    }
}

/// Two agents: agent 1 in R², agent 2 in R¹.
pub fn test_layout() -> Layout {
    Layout::new([(1, 2), (2, 1)])
}

pub fn signals() -> Vec<Signal> {
    vec![Signal::new(1, 0), Signal::new(1, 1), Signal::new(2, 0)]
}

/// Small integer-valued coefficients and offsets so printed formulas are
/// short; values are multiples of 0.25 so they round-trip exactly.
pub fn arb_predicate() -> impl Strategy<Value = Predicate> {
    let sig = proptest::sample::select(signals());
    (
        proptest::collection::btree_map(sig, (-8i32..=8).prop_filter("nonzero", |c| *c != 0), 1..=2),
        -16i32..=16,
    )
        .prop_map(|(coeffs, b)| {
            let coeffs: BTreeMap<Signal, f64> = coeffs.into_iter().map(|(s, c)| (s, c as f64 * 0.25)).collect();
            Predicate::new(coeffs, b as f64 * 0.25)
        })
}

/// Random formulas with horizon at most about 9 and no empty lists.
pub fn arb_formula() -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        1 => Just(Formula::truth()),
        6 => arb_predicate().prop_map(Formula::pred),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        let iv = (0usize..=2, 0usize..=2).prop_map(|(a, d)| (a, a + d));
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Formula::and),
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Formula::or),
            (inner.clone(), iv.clone()).prop_map(|(f, (a, b))| Formula::eventually(f, a, b)),
            (inner.clone(), iv.clone()).prop_map(|(f, (a, b))| Formula::always(f, a, b)),
            (inner.clone(), inner, iv).prop_map(|(l, r, (a, b))| Formula::until(l, r, a, b)),
        ]
    })
}

/// Trajectory long enough for `horizon`, with values on a 0.25 grid in
/// [-3, 3] so that predicates hit μ = 0 with positive probability.
pub fn arb_trajectory(horizon: usize) -> impl Strategy<Value = Trajectory> {
    proptest::collection::vec(proptest::collection::vec(-12i32..=12, 3), horizon + 1..=horizon + 3).prop_map(|rows| {
        let samples = rows.into_iter().map(|r| r.into_iter().map(|v| v as f64 * 0.25).collect()).collect();
        Trajectory::new(test_layout(), samples).unwrap()
    })
}

pub fn arb_case() -> impl Strategy<Value = (Formula, Trajectory)> {
    arb_formula().prop_flat_map(|f| {
        let h = f.horizon();
        (Just(f), arb_trajectory(h))
    })
}

pub fn traj_1d(values: &[f64]) -> Trajectory {
    Trajectory::new(Layout::new([(1, 1)]), values.iter().map(|v| vec![*v]).collect()).unwrap()
}

/// Cliques of the ten-agent benchmark.
pub fn benchmark_cliques() -> Vec<Vec<usize>> {
    vec![
        vec![1, 2, 3],
        vec![3, 4],
        vec![1, 5],
        vec![5, 6],
        vec![4, 7],
        vec![7, 8],
        vec![6, 8],
        vec![6, 9],
        vec![8, 10],
        vec![9, 10],
        vec![4, 5],
    ]
}

/// ‖x_i − x_j‖∞ ≤ r for every pair in the clique (planar agents).
pub fn proximity(clique: &[usize], r: f64) -> Formula {
    let mut lits = Vec::new();
    for (k, &i) in clique.iter().enumerate() {
        for &j in &clique[k + 1..] {
            for d in 0..2 {
                for s in [1.0, -1.0] {
                    let coeffs = BTreeMap::from([(Signal::new(i, d), -s), (Signal::new(j, d), s)]);
                    lits.push(Formula::pred(Predicate::new(coeffs, r)));
                }
            }
        }
    }
    Formula::and(lits)
}

/// Random symmetric positive-definite n×n matrix.
pub fn random_spd(rng: &mut impl rand::Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.1
}

/// r·sqrt(aᵀQa), written out independently of the library.
pub fn ellipsoid_support(q: &DMatrix<f64>, r2: f64, a: &DVector<f64>) -> f64 {
    (r2 * (a.transpose() * q * a)[(0, 0)]).sqrt()
}

/// Largest absolute gap, over `directions` random stacked directions, between
/// the support of (X₁×X₂)⊕(Y₁×Y₂) (oracle) and that of (X₁⊕Y₁)×(X₂⊕Y₂)
/// (library) for one random instance.
pub fn lemma1_gap(rng: &mut impl rand::Rng, directions: usize) -> f64 {
    use prtstl::reach::{clique_support, Ellipsoid, ReachSet, ReachTerm};
    let n1 = rng.random_range(1..=3);
    let n2 = rng.random_range(1..=3);
    let mut ell = |n: usize| (random_spd(rng, n), rng.random_range(0.1..5.0));
    let (x1, x2, y1, y2) = (ell(n1), ell(n2), ell(n1), ell(n2));
    let set = |n: usize, parts: [&(DMatrix<f64>, f64); 2]| {
        let terms = parts
            .iter()
            .map(|(q, r2)| ReachTerm::new(DMatrix::identity(n, n), Ellipsoid::new(q.clone(), *r2).unwrap()))
            .collect();
        ReachSet::from_terms(0, 0, n, terms)
    };
    let s1 = set(n1, [&x1, &y1]);
    let s2 = set(n2, [&x2, &y2]);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let a = DVector::from_fn(n1 + n2, |_, _| rng.random_range(-1.0..1.0));
        let (a1, a2) = (a.rows(0, n1).into_owned(), a.rows(n1, n2).into_owned());
        let product_x = ellipsoid_support(&x1.0, x1.1, &a1) + ellipsoid_support(&x2.0, x2.1, &a2);
        let product_y = ellipsoid_support(&y1.0, y1.1, &a1) + ellipsoid_support(&y2.0, y2.1, &a2);
        let lhs = product_x + product_y;
        let rhs = clique_support(&[&s1, &s2], &a).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// Model from agents and textual tasks; θ = 0.7.
pub fn model_with(
    agents: Vec<AgentModel>,
    locals: &[(usize, &str)],
    joints: &[(&[usize], &str)],
    horizon: usize,
) -> prtstl::model::MasModel {
    use prtstl::stl::parse_formula;
    let layout = Layout::new(agents.iter().map(|a| (a.id, a.x0.len())));
    let spec = prtstl::model::GlobalSpec {
        local_tasks: locals.iter().map(|(i, s)| (*i, parse_formula(s, &layout).unwrap())).collect(),
        joint_tasks: joints.iter().map(|(c, s)| (c.to_vec(), parse_formula(s, &layout).unwrap())).collect(),
        theta: 0.7,
        horizon,
    };
    prtstl::model::MasModel::new(agents, spec).unwrap()
}

/// Point of a reach set: one point per term, each chosen on the boundary in a
/// random direction and pulled inward by a random factor.
pub fn sample_in_set(rng: &mut impl rand::Rng, set: &prtstl::reach::ReachSet) -> DVector<f64> {
    let n = set.dim();
    let mut e = DVector::zeros(n);
    for term in set.terms() {
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let scale: f64 = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..1.0) };
        e += term.support_point(&a) * scale;
    }
    e
}

/// One of the shipped scenarios under `scenarios/`.
pub fn scenario(name: &str) -> prtstl::scenario::Scenario {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    prtstl::scenario::Scenario::load(&path).unwrap()
}

/// Tubes and tightened specification of a scenario.
pub fn prepare(s: &prtstl::scenario::Scenario) -> (prtstl::tighten::Tubes, prtstl::tighten::TightenedSpec) {
    let tubes = prtstl::tighten::Tubes::build(&s.model, &s.budget, s.cr).unwrap();
    let spec = prtstl::tighten::tighten_spec(&s.model, &tubes, s.tighten).unwrap();
    (tubes, spec)
}

/// x+ = x + v with v ∈ [-1, 1], x(0) = 0.
pub fn unit_integrator() -> AgentModel {
    let mut a = integrator(1, &[0.0], 1.0, 0.01);
    a.k = DMatrix::zeros(1, 1);
    a
}

/// Predicates x ≥ k + 0.5 or x ≤ k + 0.5, so integer states never sit on a
/// boundary; no TRUE leaves.
pub fn arb_half_formula() -> impl Strategy<Value = Formula> {
    let leaf = (any::<bool>(), -3i32..=3).prop_map(|(ge, k)| {
        let c = k as f64 + 0.5;
        Formula::pred(if ge { Predicate::at_least(1, 0, c) } else { Predicate::at_most(1, 0, c) })
    });
    leaf.prop_recursive(3, 12, 3, |inner| {
        let iv = (0usize..=1, 0usize..=1).prop_map(|(a, d)| (a, a + d));
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Formula::and),
            proptest::collection::vec(inner.clone(), 2..=3).prop_map(Formula::or),
            (inner.clone(), iv.clone()).prop_map(|(f, (a, b))| Formula::eventually(f, a, b)),
            (inner.clone(), iv.clone()).prop_map(|(f, (a, b))| Formula::always(f, a, b)),
            (inner.clone(), inner, iv).prop_map(|(l, r, (a, b))| Formula::until(l, r, a, b)),
        ]
    })
    .prop_filter("horizon at most 4", |f| f.horizon() <= 4)
}

/// All input sequences in {-1,0,1}^N with their trajectories.
pub fn enumerate(n: usize) -> Vec<(Vec<f64>, Trajectory)> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let d = (c % 3) as f64 - 1.0;
                c /= 3;
                d
            })
            .collect();
        let mut x = vec![0.0];
        for vt in &v {
            x.push(x.last().unwrap() + vt);
        }
        out.push((v, traj_1d(&x)));
    }
    out
}
