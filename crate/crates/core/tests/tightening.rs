mod common;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use prtstl::reach::{Ellipsoid, ReachSet, ReachTerm};
use prtstl::stl::*;
use prtstl::tighten::*;

/// Tube with E(0) = {0} and E(t) = ball of radius `r` for every agent.
fn ball_tubes(dims: &[(usize, usize)], r: f64, horizon: usize) -> Tubes {
    let sets = dims
        .iter()
        .map(|&(id, n)| {
            let ball = ReachTerm::new(DMatrix::identity(n, n), Ellipsoid::new(DMatrix::identity(n, n), r * r).unwrap());
            let mut v = vec![ReachSet::origin(id, n)];
            v.extend((1..=horizon).map(|t| ReachSet::from_terms(id, t, n, vec![ball.clone()])));
            (id, v)
        })
        .collect();
    Tubes::from_sets(sets, horizon)
}

/// Random ellipsoidal tube, growing in t, with E(0) = {0}.
fn random_tubes(rng: &mut ChaCha8Rng, dims: &[(usize, usize)], scale: f64, horizon: usize) -> Tubes {
    let sets = dims
        .iter()
        .map(|&(id, n)| {
            let ell = Ellipsoid::new(random_spd(rng, n) * scale, 1.0).unwrap();
            let mut v = vec![ReachSet::origin(id, n)];
            v.extend((1..=horizon).map(|t| {
                let map = DMatrix::identity(n, n) * (t as f64 / horizon as f64).sqrt();
                ReachSet::from_terms(id, t, n, vec![ReachTerm::new(map, ell.clone())])
            }));
            (id, v)
        })
        .collect();
    Tubes::from_sets(sets, horizon)
}

fn tighten_formula(f: &Formula, tubes: &Tubes) -> Formula {
    to_nnf(f).map_predicates(&mut |p| tighten_predicate(p, tubes, None).0)
}

fn preds(f: &Formula) -> Vec<Predicate> {
    let mut v = Vec::new();
    f.visit_predicates(&mut |p| v.push(p.clone()));
    v
}

#[test]
fn zero_tube_is_identity() {
    let agents = vec![integrator(1, &[0.0, 0.0], 1.0, 0.01), integrator(2, &[3.0], 1.0, 0.01)];
    let m = model_with(
        agents,
        &[(1, "G[0,4] (x1[0] <= 2 & !(x1[1] >= 1))"), (2, "F[1,3] x2[0] >= 0")],
        &[(&[1, 2], "F[2,5] x1[0] - x2[0] >= -1")],
        5,
    );
    let ts = tighten_spec(&m, &Tubes::zero(&m), TightenOptions::default()).unwrap();
    assert_eq!(ts.psi, ts.phi);
    assert!(ts.margins.iter().all(|m| m.shift == 0.0));
    for boxes in ts.input_boxes.values() {
        assert!(boxes.lower.iter().all(|l| l == &[-1.0; 1] || l == &[-1.0; 2]));
    }
}

#[test]
fn shift_examples() {
    let tubes = ball_tubes(&[(1, 1), (2, 1)], 0.3, 4);
    let (q, shift, t) = tighten_predicate(&Predicate::at_least(1, 0, 1.0), &tubes, None);
    assert!((q.offset + 1.3).abs() < 1e-12 && (shift + 0.3).abs() < 1e-12);
    assert_eq!(t, 1);
    let (q, shift, _) = tighten_predicate(&Predicate::at_least(1, 0, 1.0).negated(), &tubes, None);
    assert!((q.offset + 0.7).abs() < 1e-12 && (shift - 0.3).abs() < 1e-12);

    // clique predicate: shift is the sum of per-agent supports
    let coeffs = BTreeMap::from([(Signal::new(1, 0), 2.0), (Signal::new(2, 0), -1.0)]);
    let (_, shift, _) = tighten_predicate(&Predicate::new(coeffs, 0.0), &tubes, None);
    assert!((shift + 0.3 * 3.0).abs() < 1e-12);
}

#[test]
fn worst_time_and_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tubes = random_tubes(&mut rng, &[(1, 2)], 0.2, 6);
    let p = Predicate::new(BTreeMap::from([(Signal::new(1, 1), 1.0)]), 0.0);
    let (_, full, t_star) = tighten_predicate(&p, &tubes, None);
    assert_eq!(t_star, 6);
    let (_, win, t_win) = tighten_predicate(&p, &tubes, Some((2, 3)));
    assert_eq!(t_win, 3);
    assert!(win.abs() <= full.abs());
    assert_eq!(
        predicate_windows(&to_nnf(&parse_formula("F[2,3] G[1,2] x1[0] >= 0 & x1[1] >= 0", &Layout::new([(1, 2)])).unwrap())),
        vec![(3, 5), (0, 0)]
    );
}

#[test]
fn input_box_example() {
    let e = ReachSet::from_terms(1, 1, 1, vec![ReachTerm::new(DMatrix::identity(1, 1), Ellipsoid::new(DMatrix::identity(1, 1), 0.04).unwrap())]);
    let k = DMatrix::from_element(1, 1, -0.5);
    let (lo, hi) = tighten_input_box(&[-0.8], &[0.8], &k, &e).unwrap();
    assert!((lo[0] + 0.7).abs() < 1e-12 && (hi[0] - 0.7).abs() < 1e-12);
    assert_eq!(tighten_input_box(&[-0.05], &[0.05], &k, &e), Err(0));
    let (lo0, hi0) = tighten_input_box(&[-0.8], &[0.8], &k, &ReachSet::origin(1, 1)).unwrap();
    assert_eq!((lo0, hi0), (vec![-0.8], vec![0.8]));
}

#[test]
fn empty_input_box_is_reported_with_time() {
    let m = model_with(vec![integrator(1, &[0.0, 0.0], 0.05, 0.05)], &[], &[], 5);
    let budget = prtstl::budget::budget_uniform(0.7, 1, 5).unwrap();
    let tubes = Tubes::build(&m, &budget, prtstl::reach::CrKind::Gaussian).unwrap();
    match tighten_spec(&m, &tubes, TightenOptions::default()) {
        Err(TightenError::EmptyInputBox { agent: 1, t: 1, lo, hi, .. }) => assert!(lo > hi),
        other => panic!("{other:?}"),
    }
}

/// For every sampled e ∈ E: u' + (K e)_j stays within the original bounds,
/// and the worst sample comes close to the support.
#[test]
fn input_box_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let k = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let set = ReachSet::from_terms(1, 1, 2, vec![
            ReachTerm::new(DMatrix::identity(2, 2), Ellipsoid::new(random_spd(&mut rng, 2) * 0.05, 1.0).unwrap()),
            ReachTerm::new(DMatrix::identity(2, 2) * 0.5, Ellipsoid::new(random_spd(&mut rng, 2) * 0.05, 2.0).unwrap()),
        ]);
        let Ok((lo, hi)) = tighten_input_box(&[-3.0, -3.0], &[3.0, 3.0], &k, &set) else { continue };
        let mut reach_hi = [f64::NEG_INFINITY; 2];
        let mut reach_lo = [f64::INFINITY; 2];
        for _ in 0..4_000 {
            let e = sample_in_set(&mut rng, &set);
            let ke = &k * e;
            for j in 0..2 {
                assert!(hi[j] + ke[j] <= 3.0 + 1e-9 && lo[j] + ke[j] >= -3.0 - 1e-9);
                reach_hi[j] = reach_hi[j].max(hi[j] + ke[j]);
                reach_lo[j] = reach_lo[j].min(lo[j] + ke[j]);
            }
        }
        for j in 0..2 {
            let width = 3.0 - hi[j];
            assert!(3.0 - reach_hi[j] <= 0.1 * width + 1e-9, "{} vs {}", reach_hi[j], hi[j]);
            assert!(reach_lo[j] + 3.0 <= 0.1 * (lo[j] + 3.0) + 1e-9);
        }
    }
}

#[test]
fn goals_shrink_obstacles_grow() {
    let l = Layout::new([(1, 2)]);
    let goal = parse_formula("F[1,3] (x1[0] >= 3 & x1[0] <= 6 & x1[1] >= 3 & x1[1] <= 6)", &l).unwrap();
    let avoid = parse_formula("G[0,3] !(x1[0] >= 1.5 & x1[0] <= 2.5 & x1[1] >= 1.5 & x1[1] <= 2.5)", &l).unwrap();
    let tubes = ball_tubes(&[(1, 2)], 0.2, 3);
    // points inside the tightened goal are inside the original, not vice versa
    let g = tighten_formula(&goal, &tubes);
    let a = tighten_formula(&avoid, &tubes);
    let at = |x: f64, y: f64| Trajectory::new(l.clone(), vec![vec![x, y]; 4]).unwrap();
    assert!(eval_boolean(&goal, &at(3.1, 4.0), 0).unwrap());
    assert!(!eval_boolean(&g, &at(3.1, 4.0), 0).unwrap());
    assert!(eval_boolean(&g, &at(3.3, 5.7), 0).unwrap());
    assert!(eval_boolean(&avoid, &at(1.4, 2.0), 0).unwrap());
    assert!(!eval_boolean(&a, &at(1.4, 2.0), 0).unwrap());
    assert!(eval_boolean(&a, &at(1.25, 2.0), 0).unwrap());
}

#[test]
fn per_window_never_exceeds_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let agents = vec![integrator(1, &[0.0, 0.0], 1.0, 0.01)];
    let m = model_with(agents, &[(1, "F[1,2] x1[0] >= 0.5 & G[3,6] x1[1] <= 1")], &[], 8);
    let tubes = random_tubes(&mut rng, &[(1, 2)], 0.1, 8);
    let uni = tighten_spec(&m, &tubes, TightenOptions { per_window: false }).unwrap();
    let win = tighten_spec(&m, &tubes, TightenOptions { per_window: true }).unwrap();
    assert_eq!(uni.margins.len(), win.margins.len());
    for (u, w) in uni.margins.iter().zip(&win.margins) {
        assert!(w.shift.abs() <= u.shift.abs() + 1e-12);
    }
    assert!(win.margins[0].t_star <= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    /// ψ holding on z implies φ holding on z + e for every e inside the tube,
    /// with robustness no smaller.
    #[test]
    fn tightening_is_sound((f, z) in arb_case(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = z.len() - 1;
        let tubes = random_tubes(&mut rng, &[(1, 2), (2, 1)], 0.05, h.max(1));
        let psi = tighten_formula(&f, &tubes);
        let rho_psi = eval_robustness(&psi, &z, 0).unwrap();
        let sat_psi = eval_boolean(&psi, &z, 0).unwrap();
        for _ in 0..4 {
            let mut rows = Vec::new();
            for t in 0..z.len() {
                let mut row = Vec::new();
                for id in [1, 2] {
                    row.extend(sample_in_set(&mut rng, &tubes.agent(id)[t]).iter().copied());
                }
                rows.push(row);
            }
            let x = z.add(&Trajectory::new(test_layout(), rows).unwrap()).unwrap();
            if sat_psi {
                prop_assert!(eval_boolean(&f, &x, 0).unwrap(), "{} / {}", f, psi);
            }
            prop_assert!(eval_robustness(&f, &x, 0).unwrap() >= rho_psi - 1e-9);
        }
    }

    #[test]
    fn tightening_is_monotone_in_radius((f, z) in arb_case(), r in 0.0f64..1.0, dr in 0.0f64..1.0) {
        let h = (z.len() - 1).max(1);
        let dims = [(1, 2), (2, 1)];
        let small = tighten_formula(&f, &ball_tubes(&dims, r, h));
        let large = tighten_formula(&f, &ball_tubes(&dims, r + dr, h));
        if eval_boolean(&large, &z, 0).unwrap() {
            prop_assert!(eval_boolean(&small, &z, 0).unwrap());
        }
        prop_assert!(eval_robustness(&large, &z, 0).unwrap() <= eval_robustness(&small, &z, 0).unwrap() + 1e-9);
    }

    /// Same operators, intervals, coefficients and polarities; only offsets move.
    #[test]
    fn tightening_keeps_structure(f in arb_formula(), r in 0.0f64..1.0) {
        let nnf = to_nnf(&f);
        let psi = tighten_formula(&f, &ball_tubes(&[(1, 2), (2, 1)], r, f.horizon().max(1)));
        prop_assert!(nnf.same_shape(&psi));
        prop_assert_eq!(nnf.size(), psi.size());
        prop_assert_eq!(nnf.horizon(), psi.horizon());
        let (a, b) = (preds(&nnf), preds(&psi));
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(&p.coeffs, &q.coeffs);
            prop_assert_eq!(p.polarity, q.polarity);
            let norm = |id: usize| p.coeffs.iter().filter(|(s, _)| s.agent == id).map(|(_, c)| c * c).sum::<f64>().sqrt();
            let expected = r * (norm(1) + norm(2));
            let moved = match p.polarity {
                Polarity::Positive => p.offset - q.offset,
                Polarity::Negated => q.offset - p.offset,
            };
            prop_assert!((moved - expected).abs() <= 1e-9);
        }
    }
}
