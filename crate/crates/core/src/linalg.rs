//! Small complex linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on dense `DMatrix<Complex64>`; the matrices in this
//! crate are at most M×M (antennas) or L×L (cells).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Relative clip window for negative eigenvalues produced by round-off.
pub const EIG_CLIP_REL: f64 = 1e-10;

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

/// `x^H A y`.
pub fn quad_form(x: &CVec, a: &CMat, y: &CVec) -> C64 {
    x.dotc(&(a * y))
}

pub fn outer(x: &CVec, y: &CVec) -> CMat {
    x * y.adjoint()
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Largest entry of `|A - A^H|`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `a`, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// PSD test with the relative slack `-tol * trace`.
pub fn is_psd(a: &CMat, tol: f64) -> bool {
    let tr = trace(a).re.abs();
    min_eigenvalue(a) >= -tol * tr.max(f64::MIN_POSITIVE)
}

/// Hermitian square root `S` with `S S^H = A`, clipping eigenvalues that are
/// negative only by round-off (above `-EIG_CLIP_REL * trace`).
pub fn hermitian_sqrt(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let tr = trace(a).re;
    let eig = SymmetricEigen::new(hermitian_part(a));
    let floor = -EIG_CLIP_REL * tr.abs();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            return Err(Error::Statistics(format!(
                "covariance is indefinite: eigenvalue {lambda:.3e} with trace {tr:.3e}"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// Cached Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct HermitianSolver {
    chol: Cholesky<C64, Dyn>,
}

impl HermitianSolver {
    pub fn new(a: &CMat) -> Result<Self> {
        Cholesky::new(hermitian_part(a))
            .map(|chol| Self { chol })
            .ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &CMat) -> CMat {
        self.chol.solve(b)
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }
}

/// One draw from CN(0, 1).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Vector of i.i.d. CN(0, 1) entries.
pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| complex_normal(rng));
        &g * g.adjoint()
    }

    #[test]
    fn trace_product_matches_full_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = CMat::from_fn(5, 5, |_, _| complex_normal(&mut rng));
        let b = CMat::from_fn(5, 5, |_, _| complex_normal(&mut rng));
        let direct = trace(&(&a * &b));
        assert!((trace_product(&a, &b) - direct).norm() < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs_psd_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_psd(&mut rng, 6);
        let s = hermitian_sqrt(&a).unwrap();
        let back = &s * s.adjoint();
        assert!((back - &a).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn sqrt_of_rank_one_clips_roundoff() {
        let v = CVec::from_vec(vec![ONE, C64::new(0.0, 1.0), C64::new(-1.0, 0.5)]);
        let a = outer(&v, &v);
        let s = hermitian_sqrt(&a).unwrap();
        assert!((&s * s.adjoint() - &a).norm() < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![ONE, C64::new(-1.0, 0.0)]));
        assert!(matches!(hermitian_sqrt(&a), Err(Error::Statistics(_))));
    }

    #[test]
    fn solver_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_psd(&mut rng, 4) + CMat::identity(4, 4);
        let b = complex_normal_vec(&mut rng, 4);
        let x = HermitianSolver::new(&a).unwrap().solve_vec(&b);
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn complex_normal_has_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let p: f64 = (0..n).map(|_| complex_normal(&mut rng).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 1.0).abs() < 0.01);
    }
}
