//! Confidence regions and probabilistic reachable sets, represented as
//! Minkowski sums of linearly mapped ellipsoids and queried only through
//! their support functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReachError {
    #[error("confidence level must lie in (0,1), got {0}")]
    Level(f64),
    #[error("shape matrix is not symmetric positive definite")]
    Shape,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
}

/// `{g : gᵀ Q⁻¹ g ≤ r²}`
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    radius_sq: f64,
    chol: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, radius_sq: f64) -> Result<Self, ReachError> {
        if !(radius_sq > 0.0) || !shape.is_square() {
            return Err(ReachError::Shape);
        }
        if (&shape - shape.transpose()).amax() > 1e-12 * (1.0 + shape.amax()) {
            return Err(ReachError::Shape);
        }
        let chol = shape.clone().cholesky().ok_or(ReachError::Shape)?.l();
        Ok(Ellipsoid {
            shape,
            radius_sq,
            chol,
        })
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn radius_sq(&self) -> f64 {
        self.radius_sq
    }

    pub fn radius(&self) -> f64 {
        self.radius_sq.sqrt()
    }

    /// Lower Cholesky factor of the shape matrix.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// r·sqrt(aᵀQa)
    pub fn support(&self, a: &DVector<f64>) -> f64 {
        self.radius() * (self.chol.transpose() * a).norm()
    }

    pub fn contains(&self, g: &DVector<f64>) -> bool {
        let y = self
            .chol
            .solve_lower_triangular(g)
            .expect("cholesky factor is invertible");
        y.norm_squared() <= self.radius_sq * (1.0 + 1e-12)
    }
}

fn check_level(theta: f64) -> Result<(), ReachError> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(ReachError::Level(theta))
    }
}

fn check_dim(q: &DMatrix<f64>, n: usize) -> Result<(), ReachError> {
    if q.nrows() != n {
        return Err(ReachError::Dimension {
            expected: n,
            found: q.nrows(),
        });
    }
    Ok(())
}

/// Distribution-free region from the multivariate Chebyshev bound:
/// r² = n / (1 - θ).
pub fn chebyshev_cr(q: &DMatrix<f64>, theta: f64, n: usize) -> Result<Ellipsoid, ReachError> {
    check_level(theta)?;
    check_dim(q, n)?;
    Ellipsoid::new(q.clone(), n as f64 / (1.0 - theta))
}

/// The radius r² = n / θ. It does not guarantee coverage θ and exists only
/// to reproduce published numbers.
pub fn chebyshev_cr_compat(q: &DMatrix<f64>, theta: f64, n: usize) -> Result<Ellipsoid, ReachError> {
    check_level(theta)?;
    check_dim(q, n)?;
    Ellipsoid::new(q.clone(), n as f64 / theta)
}

/// Gaussian region: r² is the chi-squared quantile with n degrees of freedom.
pub fn gaussian_cr(q: &DMatrix<f64>, theta: f64, n: usize) -> Result<Ellipsoid, ReachError> {
    check_level(theta)?;
    check_dim(q, n)?;
    Ellipsoid::new(q.clone(), chi_squared_quantile(n, theta))
}

/// Inverse chi-squared CDF by bisection on the regularized lower incomplete
/// gamma function, to an absolute tolerance of 1e-10.
pub fn chi_squared_quantile(dof: usize, p: f64) -> f64 {
    assert!(dof > 0 && p > 0.0 && p < 1.0);
    let k = dof as f64 / 2.0;
    let cdf = |x: f64| statrs::function::gamma::gamma_lr(k, x / 2.0);
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrKind {
    Gaussian,
    Chebyshev,
    /// Chebyshev with the r² = n/θ radius.
    ChebyshevCompat,
}

pub fn confidence_region(kind: CrKind, q: &DMatrix<f64>, theta: f64) -> Result<Ellipsoid, ReachError> {
    let n = q.nrows();
    match kind {
        CrKind::Gaussian => gaussian_cr(q, theta, n),
        CrKind::Chebyshev => chebyshev_cr(q, theta, n),
        CrKind::ChebyshevCompat => chebyshev_cr_compat(q, theta, n),
    }
}

/// One summand `M·ℰ` of a reach set.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachTerm {
    pub map: DMatrix<f64>,
    pub ellipsoid: Ellipsoid,
    factor: DMatrix<f64>, // map · chol
}

impl ReachTerm {
    pub fn new(map: DMatrix<f64>, ellipsoid: Ellipsoid) -> Self {
        let factor = &map * ellipsoid.cholesky();
        ReachTerm {
            map,
            ellipsoid,
            factor,
        }
    }

    pub fn support(&self, a: &DVector<f64>) -> f64 {
        self.ellipsoid.radius() * (self.factor.transpose() * a).norm()
    }

    /// Point of the term attaining its support in direction `a`.
    pub fn support_point(&self, a: &DVector<f64>) -> DVector<f64> {
        let y = self.factor.transpose() * a;
        let n = y.norm();
        if n == 0.0 {
            return DVector::zeros(self.factor.nrows());
        }
        &self.factor * y * (self.ellipsoid.radius() / n)
    }
}

/// E = ⊕ terms. Terms may be shared between the sets of one tube.
#[derive(Clone, Debug)]
pub struct ReachSet {
    pub agent: usize,
    pub t: usize,
    dim: usize,
    terms: Arc<[ReachTerm]>,
    len: usize,
}

impl ReachSet {
    pub fn from_terms(agent: usize, t: usize, dim: usize, terms: Vec<ReachTerm>) -> Self {
        let len = terms.len();
        ReachSet {
            agent,
            t,
            dim,
            terms: terms.into(),
            len,
        }
    }

    /// The singleton {0}.
    pub fn origin(agent: usize, dim: usize) -> Self {
        ReachSet::from_terms(agent, 0, dim, Vec::new())
    }

    pub fn terms(&self) -> &[ReachTerm] {
        &self.terms[..self.len]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self, a: &DVector<f64>) -> f64 {
        self.terms().iter().map(|t| t.support(a)).sum()
    }

    pub fn support_point(&self, a: &DVector<f64>) -> DVector<f64> {
        self.terms()
            .iter()
            .fold(DVector::zeros(self.dim), |acc, t| acc + t.support_point(a))
    }

    /// Outer containment test: `aᵀe ≤ h(a)` on every direction of `dirs`.
    pub fn contains(&self, e: &DVector<f64>, dirs: &Directions, tol: f64) -> bool {
        dirs.dirs
            .iter()
            .all(|a| a.dot(e) <= self.support(a) + tol)
    }
}

/// E(0..=N) with E(0) = {0} and E(t) = ⊕_{s<t} Āˢ·cr. Powers of Ā are
/// computed once and the term list is shared.
pub fn prs_sequence(agent: usize, a_bar: &DMatrix<f64>, cr: &Ellipsoid, horizon: usize) -> Vec<ReachSet> {
    let n = a_bar.nrows();
    let mut terms = Vec::with_capacity(horizon);
    let mut power = DMatrix::identity(n, n);
    for _ in 0..horizon {
        terms.push(ReachTerm::new(power.clone(), cr.clone()));
        power = a_bar * power;
    }
    let shared: Arc<[ReachTerm]> = terms.into();
    (0..=horizon)
        .map(|t| ReachSet {
            agent,
            t,
            dim: n,
            terms: shared.clone(),
            len: t,
        })
        .collect()
}

/// Support of the Cartesian product of per-agent sets at a stacked direction.
pub fn clique_support(sets: &[&ReachSet], a: &DVector<f64>) -> Result<f64, ReachError> {
    let total: usize = sets.iter().map(|s| s.dim).sum();
    if a.len() != total {
        return Err(ReachError::Dimension {
            expected: total,
            found: a.len(),
        });
    }
    let mut off = 0;
    let mut h = 0.0;
    for s in sets {
        h += s.support(&a.rows(off, s.dim).into_owned());
        off += s.dim;
    }
    Ok(h)
}

/// Direction grid for containment tests.
#[derive(Clone, Debug)]
pub struct Directions {
    pub dirs: Vec<DVector<f64>>,
}

impl Directions {
    /// 720 evenly spaced directions in 2-D, ±1 in 1-D, otherwise the 2n
    /// coordinate axes plus 1000 seeded random unit vectors.
    pub fn for_dim(n: usize) -> Self {
        let dirs = match n {
            0 => vec![],
            1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
            2 => (0..720)
                .map(|k| {
                    let th = k as f64 * std::f64::consts::TAU / 720.0;
                    DVector::from_vec(vec![th.cos(), th.sin()])
                })
                .collect(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
                let mut v: Vec<DVector<f64>> = Vec::new();
                for i in 0..n {
                    for s in [1.0, -1.0] {
                        let mut e = DVector::zeros(n);
                        e[i] = s;
                        v.push(e);
                    }
                }
                while v.len() < 2 * n + 1000 {
                    let g = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    let norm: f64 = g.norm();
                    if norm > 1e-12 {
                        v.push(g / norm);
                    }
                }
                v
            }
        };
        Directions { dirs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_radii() {
        let q = DMatrix::identity(2, 2) * 0.05;
        assert!((chebyshev_cr(&q, 0.5, 2).unwrap().radius_sq() - 4.0).abs() < 1e-12);
        assert!((chebyshev_cr(&q, 0.9996, 2).unwrap().radius_sq() - 5000.0).abs() < 1e-6);
        assert!(chebyshev_cr(&q, 1.0, 2).is_err());
        assert!(chebyshev_cr(&q, 0.5, 3).is_err());
    }

    #[test]
    fn two_dof_quantile_is_closed_form() {
        let q = DMatrix::identity(2, 2);
        let e = gaussian_cr(&q, 0.9996, 2).unwrap();
        assert!((e.radius_sq() - (-2.0 * (4e-4f64).ln())).abs() < 1e-9);
        assert!((e.radius_sq() - 15.6481).abs() < 1e-4);
        let th = 1.0 - (-0.5f64).exp();
        assert!((chi_squared_quantile(2, th) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn geometric_series_support() {
        let cr = Ellipsoid::new(DMatrix::identity(2, 2), 1.0).unwrap();
        let sets = prs_sequence(1, &(DMatrix::identity(2, 2) * 0.5), &cr, 3);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(sets.len(), 4);
        assert_eq!(sets[0].support(&e1), 0.0);
        assert!((sets[3].support(&e1) - 1.75).abs() < 1e-15);
        let a = DVector::from_vec(vec![3.0, 4.0]);
        assert!((cr.support(&a) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn containment_grid() {
        let cr = Ellipsoid::new(DMatrix::identity(2, 2), 1.0).unwrap();
        let sets = prs_sequence(1, &(DMatrix::identity(2, 2) * 0.5), &cr, 2);
        let d = Directions::for_dim(2);
        assert!(sets[1].contains(&DVector::from_vec(vec![0.7, 0.7]), &d, 0.0));
        assert!(!sets[1].contains(&DVector::from_vec(vec![0.75, 0.7]), &d, 0.0));
        assert!(sets[0].contains(&DVector::zeros(2), &d, 0.0));
        assert!(!sets[0].contains(&DVector::from_vec(vec![1e-3, 0.0]), &d, 0.0));
        assert_eq!(Directions::for_dim(3).dirs.len(), 1006);
    }
}
