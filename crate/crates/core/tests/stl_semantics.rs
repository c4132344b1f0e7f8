mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use prtstl::stl::*;

fn layout1() -> Layout {
    Layout::new([(1, 1), (2, 1)])
}

#[test]
fn parse_examples() {
    let l = layout1();
    let g = parse_formula("G[0,10](1*x1[0] >= 0)", &l).unwrap();
    assert_eq!(g, Formula::always(Formula::pred(Predicate::at_least(1, 0, 0.0)), 0, 10));
    assert_eq!(g.horizon(), 10);

    let f = parse_formula("F[10,50](x1[0] >= 2)", &l).unwrap();
    assert!(matches!(f.kind(), FormulaKind::Eventually { a: 10, b: 50, .. }));
    assert_eq!(f.horizon(), 50);

    let le = parse_formula("x1[0] <= 3", &l).unwrap();
    let FormulaKind::Pred(p) = le.kind() else { panic!("expected a predicate") };
    assert_eq!(p.coeffs, BTreeMap::from([(Signal::new(1, 0), -1.0)]));
    assert_eq!(p.offset, 3.0);
}

#[test]
fn parse_errors() {
    let l = layout1();
    match parse_formula("x1[0] >=\n  & 2", &l) {
        Err(StlError::Syntax { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a syntax error, got {other:?}"),
    }
    assert!(matches!(
        parse_formula("x7[0] >= 1", &l),
        Err(StlError::UnresolvedSignal { agent: 7, dim: 0 })
    ));
    assert!(matches!(parse_formula("F[5,2] x1[0] >= 1", &l), Err(StlError::Interval { .. })));
    assert!(parse_formula("F[-1,2] x1[0] >= 1", &l).is_err());
}

#[test]
fn precedence() {
    let l = layout1();
    // unary > U > & > |
    let f = parse_formula("x1[0] >= 0 | x2[0] >= 0 & !x1[0] >= 1 U[0,2] x2[0] >= 1", &l).unwrap();
    let FormulaKind::Or(v) = f.kind() else { panic!("top level should be |") };
    let FormulaKind::And(w) = v[1].kind() else { panic!("second operand should be &") };
    let FormulaKind::Until { left, .. } = w[1].kind() else { panic!("U binds tighter than &") };
    assert!(matches!(left.kind(), FormulaKind::Not(_)));
}

#[test]
fn horizon_examples() {
    let p = Formula::pred(Predicate::at_least(1, 0, 0.0));
    assert_eq!(p.horizon(), 0);
    assert_eq!(Formula::until(p.clone(), p.clone(), 3, 7).horizon(), 7);
    let f = Formula::and(vec![
        Formula::eventually(p.clone(), 10, 50),
        Formula::always(p, 0, 100),
    ]);
    assert_eq!(f.horizon(), 100);
}

#[test]
fn nnf_examples() {
    let p1 = Predicate::at_least(1, 0, 0.0);
    let p2 = Predicate::at_least(2, 0, 1.0);
    let dm = to_nnf(&Formula::not(Formula::and(vec![Formula::pred(p1.clone()), Formula::pred(p2.clone())])));
    assert_eq!(
        dm,
        Formula::or(vec![
            Formula::pred(p1.clone().negated()),
            Formula::pred(p2.negated())
        ])
    );
    assert_eq!(to_nnf(&Formula::not(Formula::not(Formula::pred(p1.clone())))), Formula::pred(p1.clone()));
    assert_eq!(
        to_nnf(&Formula::not(Formula::always(Formula::pred(p1.clone()), 0, 2))),
        Formula::eventually(Formula::pred(p1.negated()), 0, 2)
    );
}

#[test]
fn boolean_examples() {
    let x = traj_1d(&[0.0]);
    assert!(eval_boolean(&Formula::pred(Predicate::at_least(1, 0, 0.0)), &x, 0).unwrap());
    assert!(eval_boolean(&Formula::truth(), &x, 0).unwrap());

    // π₁ holds at 0,1,2 and π₂ first holds at τ=2
    let l = Layout::new([(1, 2)]);
    let x = Trajectory::new(l, vec![vec![1.0, -1.0], vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap();
    let u = Formula::until(
        Formula::pred(Predicate::at_least(1, 0, 0.0)),
        Formula::pred(Predicate::at_least(1, 1, 0.0)),
        0,
        2,
    );
    assert!(eval_boolean(&u, &x, 0).unwrap());
    assert_eq!(oracle_sat(&u, &x), vec![true]);
    // left side must hold at τ itself
    let x2 = Trajectory::new(Layout::new([(1, 2)]), vec![vec![1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    assert!(!eval_boolean(&u, &x2, 0).unwrap());

    assert!(matches!(
        eval_boolean(&Formula::eventually(Formula::truth(), 0, 3), &traj_1d(&[0.0, 0.0]), 0),
        Err(StlError::HorizonOverflow { .. })
    ));
}

#[test]
fn robustness_examples() {
    let l = Layout::new([(1, 2)]);
    let x = Trajectory::new(l, vec![vec![3.0, 0.0]]).unwrap();
    let p = Predicate::new(BTreeMap::from([(Signal::new(1, 0), 1.0)]), -2.0);
    assert_eq!(eval_robustness(&Formula::pred(p), &x, 0).unwrap(), 1.0);

    let y = traj_1d(&[0.0]);
    let and = Formula::and(vec![
        Formula::pred(Predicate::at_least(1, 0, -1.0)),
        Formula::pred(Predicate::at_least(1, 0, 0.5)),
    ]);
    assert_eq!(eval_robustness(&and, &y, 0).unwrap(), -0.5);

    let x3 = traj_1d(&[0.5, 2.0, -1.0, 3.0]);
    let u = Formula::until(
        Formula::pred(Predicate::at_least(1, 0, -0.5)),
        Formula::pred(Predicate::at_least(1, 0, 1.0)),
        0,
        3,
    );
    // brute force: τ=0: min(-0.5, 1.0)=-0.5; τ=1: min(1.0, 1.0, 2.5)=1.0; τ=2: min(-2,..)=-2; τ=3: min(2, -0.5)=-0.5
    assert_eq!(eval_robustness(&u, &x3, 0).unwrap(), 1.0);
    assert_eq!(oracle_rob(&u, &x3), vec![1.0]);
}

#[test]
fn predicate_collection_and_assumption1() {
    let p = Predicate::at_least(1, 0, 1.0);
    assert_eq!(collect_predicates(&Formula::pred(p.clone())), vec![(p.clone(), Polarity::Positive)]);
    let g = to_nnf(&Formula::always(Formula::not(Formula::pred(p.clone())), 0, 3));
    assert_eq!(collect_predicates(&g), vec![(p.clone().negated(), Polarity::Negated)]);
    let bad = Formula::and(vec![Formula::pred(p.clone()), Formula::not(Formula::pred(p))]);
    assert!(matches!(check_assumption1([&bad]), Err(StlError::Assumption1(_))));
}

#[test]
fn trajectory_shape_checks() {
    assert!(Trajectory::new(test_layout(), vec![vec![0.0, 0.0]]).is_err());
    assert!(Trajectory::new(test_layout(), vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn sign_soundness((f, x) in arb_case()) {
        let last = x.len() - 1 - f.horizon();
        for t in 0..=last {
            let rho = eval_robustness(&f, &x, t).unwrap();
            let sat = eval_boolean(&f, &x, t).unwrap();
            if rho > 1e-9 {
                prop_assert!(sat, "ρ={rho} but false for {f} at t={t}");
            } else if rho < -1e-9 {
                prop_assert!(!sat, "ρ={rho} but true for {f} at t={t}");
            }
        }
    }

    #[test]
    fn nnf_preserves_semantics((f, x) in arb_case()) {
        let g = to_nnf(&f);
        prop_assert!(is_nnf(&g));
        prop_assert_eq!(g.horizon(), f.horizon());
        let last = x.len() - 1 - f.horizon();
        for t in 0..=last {
            prop_assert_eq!(eval_boolean(&f, &x, t).unwrap(), eval_boolean(&g, &x, t).unwrap());
            let (a, b) = (eval_robustness(&f, &x, t).unwrap(), eval_robustness(&g, &x, t).unwrap());
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b} for {f}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn evaluation_matches_oracle((f, x) in arb_case()) {
        let sat = oracle_sat(&f, &x);
        let rob = oracle_rob(&f, &x);
        for t in 0..sat.len() {
            prop_assert_eq!(eval_boolean(&f, &x, t).unwrap(), sat[t]);
            prop_assert!((eval_robustness(&f, &x, t).unwrap() - rob[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn until_horizon(l in arb_formula(), r in arb_formula(), a in 0usize..5, d in 0usize..5) {
        let u = Formula::until(l.clone(), r.clone(), a, a + d);
        prop_assert_eq!(u.horizon(), a + d + l.horizon().max(r.horizon()));
        prop_assert_eq!(u.horizon(), u.recompute_horizon());
    }

    #[test]
    fn print_parse_round_trip(f in arb_formula()) {
        let text = f.to_string();
        let back = parse_formula(&text, &test_layout()).unwrap();
        prop_assert_eq!(back, f, "{}", text);
    }
}
