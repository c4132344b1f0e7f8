mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::*;
use prtstl::budget::*;
use prtstl::model::MasModel;
use prtstl::reach::*;
use prtstl::tighten::Tubes;
use prtstl::verify::{tube_containment, Surrogate};

fn ball(n: usize, r2: f64) -> Ellipsoid {
    Ellipsoid::new(DMatrix::identity(n, n), r2).unwrap()
}

#[test]
fn chebyshev_radius_examples() {
    let q = DMatrix::identity(2, 2);
    assert!((chebyshev_cr(&q, 0.5, 2).unwrap().radius_sq() - 4.0).abs() < 1e-12);
    let r = chebyshev_cr(&(q.clone() * 0.05), 0.9996, 2).unwrap().radius_sq();
    assert!((r - 5000.0).abs() < 1e-6, "{r}");
    assert!((chebyshev_cr_compat(&q, 0.5, 2).unwrap().radius_sq() - 4.0).abs() < 1e-12);
    assert!(chebyshev_cr(&q, 1.0, 2).is_err());
    assert!(gaussian_cr(&q, 0.0, 2).is_err());
}

/// Two-point radial law: w = L·s·u, u uniform on the sphere, s = ρ with
/// probability n/ρ² and 0 otherwise, so Cov(w) = Q. Placing ρ just outside
/// a radius r gives coverage 1 - n/ρ², the least any law with covariance Q
/// can give.
fn two_point_coverage(e: &Ellipsoid, n: usize, samples: usize, seed: u64) -> (f64, DMatrix<f64>) {
    let rho2 = e.radius_sq() * 1.0201;
    let p = n as f64 / rho2;
    let l = e.shape().clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0usize;
    let mut cov = DMatrix::zeros(n, n);
    for _ in 0..samples {
        let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let u: DVector<f64> = &g / g.norm();
        let s = if rng.random_bool(p) { rho2.sqrt() } else { 0.0 };
        let w = &l * u * s;
        cov += &w * w.transpose();
        inside += usize::from(e.contains(&w));
    }
    (inside as f64 / samples as f64, cov / samples as f64)
}

#[test]
fn chebyshev_coverage_two_point_law() {
    let (theta, n, samples) = (0.9, 2, 100_000);
    let q = DMatrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.03]);
    let e = chebyshev_cr(&q, theta, n).unwrap();
    let (cov, sample_q) = two_point_coverage(&e, n, samples, 11);
    let sigma = (theta * (1.0 - theta) / samples as f64).sqrt();
    assert!(cov >= theta - 3.0 * sigma, "coverage {cov}");
    assert!((&sample_q - &q).norm() / q.norm() < 0.05);
    // the n/θ radius is beaten by the same construction
    let compat = chebyshev_cr_compat(&q, theta, n).unwrap();
    let (cov_compat, _) = two_point_coverage(&compat, n, samples, 11);
    assert!(cov_compat < theta - 0.05, "compat coverage {cov_compat}");
}

#[test]
fn gaussian_radius_examples() {
    let q = DMatrix::identity(2, 2) * 0.05;
    let r = gaussian_cr(&q, 0.9996, 2).unwrap().radius_sq();
    assert!((r - (-2.0 * 4e-4f64.ln())).abs() < 1e-8);
    assert!((r - 15.6481).abs() < 1e-4);
    let r1 = gaussian_cr(&q, 1.0 - (-0.5f64).exp(), 2).unwrap().radius_sq();
    assert!((r1 - 1.0).abs() < 1e-9);

    // Monte Carlo quantile of Σ of 3 squared standard normals
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draws: Vec<f64> = (0..200_000)
        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).map(|z: f64| z * z).sum())
        .collect();
    draws.sort_by(f64::total_cmp);
    let mc = draws[(0.95 * draws.len() as f64) as usize];
    let r3 = gaussian_cr(&DMatrix::identity(3, 3), 0.95, 3).unwrap().radius_sq();
    assert!((r3 - mc).abs() / mc < 0.01, "{r3} vs {mc}");
}

#[test]
fn chi_squared_quantile_against_statrs() {
    for dof in 1..=12 {
        let d = ChiSquared::new(dof as f64).unwrap();
        for p in [0.01, 0.3, 0.5, 0.9, 0.99, 0.9996, 0.999999] {
            let q = chi_squared_quantile(dof, p);
            assert!((d.cdf(q) - p).abs() < 1e-9, "dof {dof} p {p}: cdf({q}) = {}", d.cdf(q));
        }
    }
}

#[test]
fn prs_examples() {
    let a_bar = DMatrix::identity(2, 2) * 0.5;
    let seq = prs_sequence(1, &a_bar, &ball(2, 1.0), 5);
    assert_eq!(seq.len(), 6);
    let e1 = DVector::from_vec(vec![1.0, 0.0]);
    assert!((seq[3].support(&e1) - 1.75).abs() < 1e-12);
    for a in [e1.clone(), DVector::from_vec(vec![-3.0, 7.0])] {
        assert_eq!(seq[0].support(&a), 0.0);
    }
    assert_eq!(ReachSet::origin(1, 2).support(&e1), 0.0);
}

#[test]
fn support_examples() {
    let unit = ReachSet::from_terms(1, 1, 2, vec![ReachTerm::new(DMatrix::identity(2, 2), ball(2, 1.0))]);
    assert!((unit.support(&DVector::from_vec(vec![3.0, 4.0])) - 5.0).abs() < 1e-12);
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let t1 = ReachTerm::new(DMatrix::identity(2, 2), ball(2, 1.0));
    let t2 = ReachTerm::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.7]), Ellipsoid::new(q, 2.0).unwrap());
    let both = ReachSet::from_terms(1, 2, 2, vec![t1.clone(), t2.clone()]);
    let a = DVector::from_vec(vec![0.4, -1.3]);
    assert!((both.support(&a) - t1.support(&a) - t2.support(&a)).abs() < 1e-12);
}

/// Sampling oracle: the support of ⊕ Āˢ·cr is the sum of per-term maxima.
#[test]
fn prs_support_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let a_bar = &m * (0.8 / prtstl::model::spectral_radius(&m).max(1e-3));
        let q = random_spd(&mut rng, 2);
        let cr = Ellipsoid::new(q.clone(), 3.0).unwrap();
        let seq = prs_sequence(1, &a_bar, &cr, 6);
        let l = q.clone().cholesky().unwrap().l();
        let a = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let mut sampled = 0.0;
        let mut power = DMatrix::identity(2, 2);
        for _ in 0..6 {
            let best = (0..10_000)
                .map(|k| {
                    let th = k as f64 * std::f64::consts::TAU / 10_000.0;
                    let w = &l * DVector::from_vec(vec![th.cos(), th.sin()]) * 3f64.sqrt();
                    a.dot(&(&power * w))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            sampled += best;
            power = &a_bar * power;
        }
        let exact = seq[6].support(&a);
        assert!(sampled <= exact + 1e-9 && sampled >= 0.98 * exact, "{sampled} vs {exact}");
    }
}

#[test]
fn clique_support_examples() {
    let cr = ball(2, 1.0);
    let a_bar = DMatrix::identity(2, 2) * 0.5;
    let s1 = prs_sequence(1, &a_bar, &cr, 3);
    let s2 = prs_sequence(2, &a_bar, &cr, 3);
    let v = DVector::from_vec(vec![0.3, -0.8]);
    let zero2 = DVector::from_vec(vec![0.3, -0.8, 0.0, 0.0]);
    assert!((clique_support(&[&s1[3], &s2[3]], &zero2).unwrap() - s1[3].support(&v)).abs() < 1e-12);
    let vv = DVector::from_vec(vec![0.3, -0.8, 0.3, -0.8]);
    assert!((clique_support(&[&s1[3], &s2[3]], &vv).unwrap() - 2.0 * s1[3].support(&v)).abs() < 1e-12);
    assert!(clique_support(&[&s1[3], &s2[3]], &v).is_err());
}

#[test]
fn clique_support_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (q1, q2) = (random_spd(&mut rng, 2), random_spd(&mut rng, 1));
    let s1 = ReachSet::from_terms(1, 1, 2, vec![ReachTerm::new(DMatrix::identity(2, 2), Ellipsoid::new(q1.clone(), 2.0).unwrap())]);
    let s2 = ReachSet::from_terms(2, 1, 1, vec![ReachTerm::new(DMatrix::identity(1, 1), Ellipsoid::new(q2.clone(), 2.0).unwrap())]);
    let a = DVector::from_vec(vec![0.7, -0.2, 1.1]);
    let l1 = q1.cholesky().unwrap().l();
    let mut best = f64::NEG_INFINITY;
    for _ in 0..20_000 {
        let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let g1 = &l1 * DVector::from_vec(vec![th.cos(), th.sin()]) * 2f64.sqrt();
        let g2 = (q2[(0, 0)] * 2.0).sqrt() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        best = best.max(a[0] * g1[0] + a[1] * g1[1] + a[2] * g2);
    }
    let exact = clique_support(&[&s1, &s2], &a).unwrap();
    assert!(best <= exact + 1e-9 && best >= 0.98 * exact, "{best} vs {exact}");
}

#[test]
fn lemma1_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        assert!(lemma1_gap(&mut rng, 100) <= 1e-12);
    }
}

#[test]
fn budget_examples() {
    let b = budget_uniform(0.7, 10, 100).unwrap();
    assert_eq!(format!("{:.4}", b.region_levels[0]), "0.9996");
    assert!((b.region_levels[0] - 0.99965).abs() < 5e-6);
    assert!((b.tube_levels[0] - 0.965).abs() < 1e-3);
    assert!(b.global >= 0.7);
    assert!((b.global - 0.7).abs() < 1e-12);

    let one = budget_validate(&[0.999], 0.9, 10).unwrap();
    assert!((one.global - 0.99).abs() < 1e-12);
    assert!(matches!(budget_validate(&[0.98, 0.99], 0.5, 100), Err(BudgetError::EmptyTube { .. })));
    assert!(matches!(budget_validate(&[0.99], 0.95, 10), Err(BudgetError::Shortfall { .. })));
    // ten 0.965-level tubes at full precision
    let bench = budget_validate(&b.region_levels, 0.7, 100).unwrap();
    assert!(bench.global >= 0.7 && bench.global < 0.7 + 1e-9);
}

fn coverage_model(n_agents: usize, horizon: usize) -> MasModel {
    let agents = (1..=n_agents).map(|i| integrator(i, &[0.0, 0.0], 0.8, 0.05)).collect();
    let spec = prtstl::model::GlobalSpec {
        local_tasks: Default::default(),
        joint_tasks: Default::default(),
        theta: 0.9,
        horizon,
    };
    MasModel::new(agents, spec).unwrap()
}

#[test]
fn tube_coverage_gaussian() {
    let model = coverage_model(1, 20);
    let budget = budget_uniform(0.9, 1, 20).unwrap();
    let tubes = Tubes::build(&model, &budget, CrKind::Gaussian).unwrap();
    let rate = tube_containment(&model, &tubes, 10_000, 21, Surrogate::Gaussian).unwrap()[&1];
    let sigma = (0.9f64 * 0.1 / 10_000.0).sqrt();
    assert!(rate >= 0.9 - 3.0 * sigma, "rate {rate}");
}

#[test]
fn containment_examples() {
    // one step: coverage of a single region
    let model = coverage_model(1, 1);
    let b = budget_validate(&[0.8], 0.7, 1).unwrap();
    let tubes = Tubes::build(&model, &b, CrKind::Gaussian).unwrap();
    let rate = tube_containment(&model, &tubes, 10_000, 2, Surrogate::Gaussian).unwrap()[&1];
    assert!(rate >= 0.8 - 3.0 * (0.16f64 / 10_000.0).sqrt(), "{rate}");

    // Chebyshev regions are larger, so paired containment can only rise
    let model = coverage_model(1, 10);
    let b = budget_uniform(0.7, 1, 10).unwrap();
    let g = Tubes::build(&model, &b, CrKind::Gaussian).unwrap();
    let c = Tubes::build(&model, &b, CrKind::Chebyshev).unwrap();
    let rg = tube_containment(&model, &g, 5_000, 9, Surrogate::Gaussian).unwrap()[&1];
    let rc = tube_containment(&model, &c, 5_000, 9, Surrogate::Gaussian).unwrap()[&1];
    assert!(rc >= rg, "{rc} < {rg}");
}

#[test]
fn tube_coverage_benchmark_level() {
    // Θᵢ = 0.965 per agent at N = 100
    let model = coverage_model(1, 100);
    let b = budget_uniform(0.7, 10, 100).unwrap();
    let b1 = budget_validate(&b.region_levels[..1], 0.9, 100).unwrap();
    let tubes = Tubes::build(&model, &b1, CrKind::Gaussian).unwrap();
    let rate = tube_containment(&model, &tubes, 2_000, 4, Surrogate::Gaussian).unwrap()[&1];
    assert!(rate >= 0.965, "{rate}");
}

proptest! {
    #[test]
    fn support_sublinear(seed in any::<u64>(), k in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_spd(&mut rng, 3);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let e = ReachSet::from_terms(1, 2, 3, vec![
            ReachTerm::new(DMatrix::identity(3, 3), Ellipsoid::new(q.clone(), 2.0).unwrap()),
            ReachTerm::new(m, Ellipsoid::new(q, 2.0).unwrap()),
        ]);
        let a = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        prop_assert!(e.support(&(&a + &b)) <= e.support(&a) + e.support(&b) + 1e-9);
        prop_assert!((e.support(&(&a * k)) - k * e.support(&a)).abs() <= 1e-9 * (1.0 + k));
        prop_assert!(e.support(&a) >= 0.0);
    }

    #[test]
    fn prs_recursion(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let a_bar = &m * (0.9 / prtstl::model::spectral_radius(&m).max(1e-3));
        let cr = Ellipsoid::new(random_spd(&mut rng, 2), 4.0).unwrap();
        let seq = prs_sequence(1, &a_bar, &cr, 8);
        let a = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        for t in 0..8 {
            // h_{E(t+1)}(a) = h_{E(t)}(Āᵀa) + h_cr(a)
            let rhs = seq[t].support(&(a_bar.transpose() * &a)) + cr.support(&a);
            prop_assert!((seq[t + 1].support(&a) - rhs).abs() <= 1e-9);
        }
    }
}
