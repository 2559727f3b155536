//! Dense complex linear algebra: matrix exponential, spectral and logarithmic
//! norms, pivoted solves and adaptive Gauss-Legendre quadrature of
//! matrix-valued integrands.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;
/// Dense complex matrix stored by nalgebra in column-major order.
pub type CMatrix = DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = DVector<C64>;

/// Largest dimension for which norms are computed by a full SVD.
const SVD_LIMIT: usize = 1024;
/// Nodes per panel of the adaptive quadrature.
const QUAD_NODES: usize = 10;
/// Panel budget of the adaptive quadrature.
const QUAD_MAX_PANELS: usize = 4096;
/// Highest Taylor order used inside `expm`.
const EXPM_MAX_ORDER: usize = 40;

/// The `n x n` identity.
pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// The standard basis vector `|i>` of dimension `n`.
pub fn basis(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = C64::new(1.0, 0.0);
    v
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Whether every entry is finite.
pub fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn require_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{what} needs a square matrix, got {}x{}", m.nrows(), m.ncols())))
    }
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The scaled argument has Frobenius norm at most 1/2 and the series order is
/// the smallest one whose remainder falls below `tol / 2^s`, where `s` is the
/// number of squarings. The result satisfies
/// `||E - e^M|| <= tol * max(1, ||e^M||)` up to rounding.
pub fn expm(m: &CMatrix, tol: f64) -> Result<CMatrix> {
    require_square(m, "expm")?;
    if !(tol > 1e-15 && tol < 1e-2) {
        return Err(Error::Domain(format!("expm tolerance {tol} not in (1e-15, 1e-2)")));
    }
    let n = m.nrows();
    let norm = m.norm();
    if norm == 0.0 {
        return Ok(identity(n));
    }
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 2f64.powi(-squarings);
    let x = m * C64::new(scale, 0.0);
    let theta = norm * scale;
    let target = (tol * scale).max(f64::EPSILON * 0.25);

    let mut order = 1;
    let mut term = theta;
    while order < EXPM_MAX_ORDER {
        term *= theta / (order + 1) as f64;
        if 2.0 * term <= target {
            break;
        }
        order += 1;
    }

    let eye = identity(n);
    let mut e = eye.clone();
    for k in (1..=order).rev() {
        e = &eye + (&x * e) * C64::new(1.0 / k as f64, 0.0);
    }
    for _ in 0..squarings {
        e = &e * &e;
    }
    Ok(e)
}

/// Largest singular value.
///
/// Uses a full SVD up to dimension 1024 and deterministic power iteration on
/// `M^H M` from the all-ones vector beyond that.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows().max(m.ncols()) <= SVD_LIMIT {
        return m.singular_values().max();
    }
    power_norm(m)
}

fn power_norm(m: &CMatrix) -> f64 {
    let mut v = CVector::from_element(m.ncols(), C64::new(1.0, 0.0));
    v /= C64::new(v.norm(), 0.0);
    let mut sigma = 0.0;
    for _ in 0..20_000 {
        let w = m * &v;
        let next = w.norm();
        let u = m.adjoint() * w;
        let un = u.norm();
        if un == 0.0 {
            return 0.0;
        }
        v = u / C64::new(un, 0.0);
        if (next - sigma).abs() <= 1e-14 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Logarithmic norm: the largest eigenvalue of the Hermitian part `(M + M^H)/2`.
///
/// # Panics
/// Panics when `m` is not square.
pub fn log_norm(m: &CMatrix) -> f64 {
    assert!(m.is_square(), "log_norm needs a square matrix");
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().max()
}

/// Eigen-decomposition `H = U diag(w) U^H` of a Hermitian matrix, with `w` ascending.
pub fn hermitian_eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// Smallest and largest eigenvalue of a Hermitian matrix.
pub fn hermitian_extremes(h: &CMatrix) -> (f64, f64) {
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let w = sym.symmetric_eigenvalues();
    (w.min(), w.max())
}

fn lu_checked(m: &CMatrix) -> Result<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    require_square(m, "solve")?;
    let lu = m.clone().lu();
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
    let floor = scale * f64::EPSILON * m.nrows() as f64;
    if let Some(pivot) = u.diagonal().iter().position(|z| z.norm() <= floor) {
        return Err(Error::Singular { pivot });
    }
    Ok(lu)
}

/// Solve `M x = b` by LU with partial pivoting.
pub fn solve_dense(m: &CMatrix, b: &CVector) -> Result<CVector> {
    if b.len() != m.nrows() {
        return Err(Error::Dimension(format!("right-hand side has length {}, matrix has {} rows", b.len(), m.nrows())));
    }
    lu_checked(m)?.solve(b).ok_or(Error::Singular { pivot: m.nrows() })
}

/// Dense inverse by LU with partial pivoting.
pub fn invert_dense(m: &CMatrix) -> Result<CMatrix> {
    lu_checked(m)?.try_inverse().ok_or(Error::Singular { pivot: m.nrows() })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, sorted by node.
pub fn gauss_legendre(points: usize) -> Vec<(f64, f64)> {
    let degree = NonZeroUsize::new(points.max(1)).expect("positive degree");
    let mut rule = GaussLegendre::new(degree).as_node_weight_pairs().to_vec();
    rule.sort_by(|x, y| x.0.total_cmp(&y.0));
    rule
}

/// Fixed Gauss-Legendre rule mapped onto `[lo, hi]`, evaluated in parallel and
/// reduced in ascending node order.
pub fn gauss_panel<F>(f: &F, rule: &[(f64, f64)], lo: f64, hi: f64) -> CMatrix
where
    F: Fn(f64) -> CMatrix + Sync,
{
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let values: Vec<CMatrix> = rule.par_iter().map(|&(x, w)| f(mid + half * x) * C64::new(w * half, 0.0)).collect();
    let mut iter = values.into_iter();
    let first = iter.next().expect("non-empty rule");
    iter.fold(first, |acc, v| acc + v)
}

/// Adaptive composite Gauss-Legendre quadrature of a matrix-valued integrand.
///
/// Panels are bisected until the difference between a panel estimate and the
/// sum of its halves is below the panel's share of `tol` in every entry.
pub fn quad_integrate<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<CMatrix>
where
    F: Fn(f64) -> CMatrix + Sync,
{
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::Domain(format!("quadrature interval [{lo}, {hi}]")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!("quadrature tolerance {tol}")));
    }
    let width = hi - lo;
    if width == 0.0 {
        let probe = f(lo);
        return Ok(CMatrix::zeros(probe.nrows(), probe.ncols()));
    }
    let rule = gauss_legendre(QUAD_NODES);
    let mut stack = vec![(lo, hi, gauss_panel(&f, &rule, lo, hi))];
    let mut total: Option<CMatrix> = None;
    let mut panels = 0usize;
    while let Some((a, b, estimate)) = stack.pop() {
        let mid = 0.5 * (a + b);
        let left = gauss_panel(&f, &rule, a, mid);
        let right = gauss_panel(&f, &rule, mid, b);
        let refined = &left + &right;
        let err = max_abs(&(&refined - &estimate));
        let local = (tol * (b - a) / width).max(64.0 * f64::EPSILON * max_abs(&refined));
        panels += 1;
        if err <= local || b - a <= width * 1e-12 {
            total = Some(match total {
                Some(acc) => acc + refined,
                None => refined,
            });
        } else if panels >= QUAD_MAX_PANELS {
            return Err(Error::Accuracy { estimate: err });
        } else {
            stack.push((mid, b, right));
            stack.push((a, mid, left));
        }
    }
    Ok(total.expect("at least one accepted panel"))
}

/// Location and value of `max_{s in [0, t]} ||e^{sY}||`.
///
/// The norm is sampled on 65 equispaced points and the best sample is refined
/// by golden-section search on its neighbouring cells.
pub fn sup_expm_norm(y: &CMatrix, t: f64) -> Result<(f64, f64)> {
    require_square(y, "sup_expm_norm")?;
    if t == 0.0 {
        return Ok((0.0, 1.0));
    }
    const SAMPLES: usize = 64;
    let step = expm(&(y * C64::new(t / SAMPLES as f64, 0.0)), 1e-14)?;
    let mut e = identity(y.nrows());
    let mut best = (0usize, 1.0f64);
    for i in 1..=SAMPLES {
        e = &e * &step;
        let v = spectral_norm(&e);
        if v > best.1 {
            best = (i, v);
        }
    }
    let h = t / SAMPLES as f64;
    let mut lo = (best.0 as f64 - 1.0).max(0.0) * h;
    let mut hi = ((best.0 + 1) as f64 * h).min(t);
    let norm_at = |s: f64| -> Result<f64> { Ok(spectral_norm(&expm(&(y * C64::new(s, 0.0)), 1e-14)?)) };
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = norm_at(x1)?;
    let mut f2 = norm_at(x2)?;
    for _ in 0..40 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = norm_at(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = norm_at(x2)?;
        }
    }
    let (s_ref, v_ref) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if v_ref > best.1 {
        Ok((s_ref, v_ref))
    } else {
        Ok((best.0 as f64 * h, best.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64, scale: f64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale)
    }

    fn series_oracle(m: &CMatrix, order: usize) -> CMatrix {
        let n = m.nrows();
        let mut term = identity(n);
        let mut sum = identity(n);
        for k in 1..=order {
            term = &term * m / C64::new(k as f64, 0.0);
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let e = expm(&CMatrix::zeros(2, 2), 1e-12).unwrap();
        assert_eq!(e, identity(2));
    }

    #[test]
    fn expm_of_diagonal() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(-1.0, 0.0), C64::new(-2.0, 0.0)]));
        let e = expm(&m, 1e-12).unwrap();
        assert!((e[(0, 0)].re - (-1f64).exp()).abs() < 1e-12);
        assert!((e[(1, 1)].re - (-2f64).exp()).abs() < 1e-12);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn expm_matches_series_oracle() {
        for seed in 0..8 {
            let mut m = random_matrix(4, seed, 1.0);
            let nrm = spectral_norm(&m);
            m /= C64::new(nrm, 0.0);
            let e = expm(&m, 1e-14).unwrap();
            let oracle = series_oracle(&m, 40);
            assert!(spectral_norm(&(e - oracle)) < 1e-13);
        }
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(expm(&CMatrix::zeros(2, 3), 1e-10), Err(Error::Dimension(_))));
        assert!(matches!(expm(&identity(2), 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn expm_large_norm_relative_accuracy() {
        let m = random_matrix(5, 3, 3.0);
        let e = expm(&m, 1e-12).unwrap();
        let half = expm(&(&m * C64::new(0.5, 0.0)), 1e-12).unwrap();
        let err = spectral_norm(&(&e - &half * &half));
        assert!(err <= 1e-10 * spectral_norm(&e).max(1.0));
    }

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&identity(3)) - 1.0).abs() < 1e-14);
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(3.0, 0.0), C64::new(0.0, -4.0)]));
        assert!((spectral_norm(&d) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_agrees_with_svd() {
        let m = random_matrix(6, 11, 1.0);
        let svd = m.singular_values().max();
        assert!((power_norm(&m) - svd).abs() <= 1e-10 * svd);
        assert!((spectral_norm(&m) - svd).abs() <= 1e-12 * svd);
    }

    #[test]
    fn log_norm_examples() {
        assert!((log_norm(&(-identity(4))) + 1.0).abs() < 1e-14);
        let g = random_matrix(5, 4, 1.0);
        let h = &g + g.adjoint();
        let skew = h * C64::new(0.0, 1.0);
        assert!(log_norm(&skew).abs() < 1e-12);
    }

    #[test]
    fn solve_dense_reproduces_rhs() {
        let m = random_matrix(7, 5, 1.0) + identity(7) * C64::new(3.0, 0.0);
        let b = CVector::from_fn(7, |i, _| C64::new(i as f64, 1.0));
        let x = solve_dense(&m, &b).unwrap();
        assert!((&m * x - &b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn solve_dense_reports_singular_pivot() {
        let mut m = identity(3);
        m[(2, 2)] = C64::new(0.0, 0.0);
        let b = CVector::from_element(3, C64::new(1.0, 0.0));
        assert!(matches!(solve_dense(&m, &b), Err(Error::Singular { pivot: 2 })));
    }

    #[test]
    fn quadrature_of_scalar_exponential() {
        let f = |s: f64| CMatrix::from_element(1, 1, C64::new((-s).exp(), s.sin()));
        let v = quad_integrate(f, 0.0, 3.0, 1e-12).unwrap();
        let exact = C64::new(1.0 - (-3f64).exp(), 1.0 - 3f64.cos());
        assert!((v[(0, 0)] - exact).norm() < 1e-12);
    }

    #[test]
    fn quadrature_budget_exhaustion_is_an_accuracy_error() {
        let g = |s: f64| CMatrix::from_element(1, 1, C64::new((1.0 / (s + 1e-300)).sin(), 0.0));
        assert!(matches!(quad_integrate(g, 0.0, 1.0, 1e-14), Err(Error::Accuracy { .. })));
    }

    #[test]
    fn sup_norm_of_contraction_is_one() {
        let a = -identity(3);
        let (s, v) = sup_expm_norm(&a, 2.0).unwrap();
        assert_eq!(s, 0.0);
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sup_norm_finds_transient_growth() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = C64::new(-1.0, 0.0);
        a[(1, 1)] = C64::new(-1.0, 0.0);
        a[(0, 1)] = C64::new(4.0, 0.0);
        let (s, v) = sup_expm_norm(&a, 5.0).unwrap();
        let brute = (0..=5000)
            .map(|i| spectral_norm(&expm(&(&a * C64::new(i as f64 * 1e-3, 0.0)), 1e-14).unwrap()))
            .fold(0.0, f64::max);
        assert!(v >= brute - 1e-9, "{s} {v} {brute}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn log_norm_below_spectral_norm(seed in 0u64..10_000, n in 1usize..7) {
            let m = random_matrix(n, seed, 2.0);
            prop_assert!(log_norm(&m) <= spectral_norm(&m) + 1e-12);
        }

        #[test]
        fn exponential_growth_bounded_by_log_norm(seed in 0u64..10_000, s in 0.0f64..3.0) {
            let tol = 1e-12;
            let m = random_matrix(4, seed, 1.0);
            let e = expm(&(&m * C64::new(s, 0.0)), tol).unwrap();
            prop_assert!(spectral_norm(&e) <= (s * log_norm(&m)).exp() + 10.0 * tol);
        }

        #[test]
        fn commuting_exponentials_multiply(seed in 0u64..10_000, c0 in -1.0f64..1.0, c1 in -1.0f64..1.0) {
            let x = random_matrix(4, seed, 0.5);
            let m1 = &x * C64::new(c0, 0.0) + identity(4) * C64::new(0.3, 0.0);
            let m2 = &x * &x * C64::new(c1, 0.0) + &x * C64::new(0.2, 0.0);
            let lhs = expm(&(&m1 + &m2), 1e-13).unwrap();
            let rhs = expm(&m1, 1e-13).unwrap() * expm(&m2, 1e-13).unwrap();
            prop_assert!(spectral_norm(&(lhs - rhs)) < 1e-8);
        }

        #[test]
        fn solve_round_trip_moderate_conditioning(seed in 0u64..10_000, n in 1usize..9) {
            let m = random_matrix(n, seed, 1.0) + identity(n) * C64::new(2.5, 0.0);
            let b = CVector::from_fn(n, |i, _| C64::new(1.0 + i as f64, -0.5));
            let x = solve_dense(&m, &b).unwrap();
            prop_assert!((&m * x - &b).norm() <= 1e-8 * b.norm());
        }
    }
}
