//! Covariance dynamics of free fermions coupled to Markovian baths.
//!
//! For a quadratic Hamiltonian with single-particle matrix `A` and
//! dissipation rates `Gamma`, the covariance `X_{jk} = <c_j^H c_k>` obeys
//!
//! ```text
//! dX/dt = B^H X + X B + C,   B = -iA - Gamma,   C = X_beta Gamma + Gamma X_beta,
//! ```
//!
//! whose fixed point is the Fermi-Dirac matrix `X_beta = (I + e^{beta A})^{-1}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{basis, hermitian_eigh, hermitian_extremes, identity, max_abs, spectral_norm, CMatrix, C64};
use crate::oracle::{entry_of, solve_ode_at, SolutionSample};
use crate::problem::{round_up_3sig, Bounds, MatrixOdeProblem};

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Dissipative covariance model with its derived coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub ns: usize,
    pub a_herm: CMatrix,
    pub gamma: CMatrix,
    pub beta: f64,
    pub b_gen: CMatrix,
    pub c_noise: CMatrix,
    pub x_beta: CMatrix,
    pub x0: CMatrix,
}

impl CovarianceModel {
    /// Dissipation scale `||Gamma||`.
    pub fn gamma_scale(&self) -> f64 {
        spectral_norm(&self.gamma)
    }

    /// Smallest eigenvalue of `Gamma`.
    pub fn gamma_min(&self) -> f64 {
        hermitian_extremes(&self.gamma).0
    }
}

/// `(I + e^{beta A})^{-1}` through the eigen-decomposition of `A`.
pub fn fermi_dirac(a_herm: &CMatrix, beta: f64) -> CMatrix {
    let (w, u) = hermitian_eigh(a_herm);
    let occ = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        w.len(),
        w.iter().map(|&e| C64::new(fermi(beta * e), 0.0)),
    ));
    &u * occ * u.adjoint()
}

fn fermi(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn check_hermitian(m: &CMatrix, n: usize, field: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::validation(field, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    if max_abs(&(m - m.adjoint())) > HERMITIAN_TOL * (1.0 + max_abs(m)) {
        return Err(Error::validation(field, "must be Hermitian"));
    }
    Ok(())
}

/// Assemble the model from the Hamiltonian, the rates, the inverse temperature
/// and the initial covariance.
pub fn build_model(a_herm: CMatrix, gamma: CMatrix, beta: f64, x0: CMatrix) -> Result<CovarianceModel> {
    let ns = a_herm.nrows();
    if ns == 0 {
        return Err(Error::validation("A", "must have at least one mode"));
    }
    check_hermitian(&a_herm, ns, "A")?;
    check_hermitian(&gamma, ns, "Gamma")?;
    check_hermitian(&x0, ns, "X0")?;
    if hermitian_extremes(&gamma).0 < -PSD_TOL {
        return Err(Error::validation("Gamma", "must be positive semidefinite"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::validation("beta", format!("must be nonnegative and finite, got {beta}")));
    }
    let b_gen = &a_herm * C64::new(0.0, -1.0) - &gamma;
    let x_beta = fermi_dirac(&a_herm, beta);
    let c_noise = &x_beta * &gamma + &gamma * &x_beta;
    Ok(CovarianceModel { ns, a_herm, gamma, beta, b_gen, c_noise, x_beta, x0 })
}

/// Boundary condition for the dissipation of [`chain_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissipation {
    /// `Gamma = gamma I`.
    Uniform,
    /// Rate `gamma` on the two end sites only.
    Boundary,
}

/// Open tight-binding chain with unit hopping and on-site energies `0.25 i`,
/// started from the infinite-temperature state `X0 = I / 2`.
pub fn chain_model(ns: usize, gamma: f64, beta: f64, dissipation: Dissipation) -> Result<CovarianceModel> {
    if ns == 0 {
        return Err(Error::validation("ns", "must be positive"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::validation("gamma", format!("must be nonnegative, got {gamma}")));
    }
    let mut a = CMatrix::zeros(ns, ns);
    for i in 0..ns {
        a[(i, i)] = C64::new(0.25 * i as f64, 0.0);
    }
    for i in 0..ns.saturating_sub(1) {
        a[(i, i + 1)] = C64::new(-1.0, 0.0);
        a[(i + 1, i)] = C64::new(-1.0, 0.0);
    }
    let g = match dissipation {
        Dissipation::Uniform => identity(ns) * C64::new(gamma, 0.0),
        Dissipation::Boundary => {
            let mut g = CMatrix::zeros(ns, ns);
            g[(0, 0)] = C64::new(gamma, 0.0);
            g[(ns - 1, ns - 1)] = C64::new(gamma, 0.0);
            g
        }
    };
    build_model(a, g, beta, identity(ns) * C64::new(0.5, 0.0))
}

/// The equation with `A`-side and `B`-side generator `B = -iA - Gamma`,
/// reporting the occupation entry `<0|X(t)|0>`.
///
/// The log-norm bound is `-lambda_min(Gamma)` when `Gamma` is positive
/// definite and zero otherwise. Vanishing norm bounds are floored at machine
/// epsilon so that the instance remains valid.
pub fn to_ode_problem(model: &CovarianceModel, t: f64, eps: f64) -> Result<MatrixOdeProblem> {
    let floor = |x: f64| round_up_3sig(x).max(f64::EPSILON);
    let a = floor(spectral_norm(&model.b_gen));
    let gmin = model.gamma_min();
    let xi = if gmin > 0.0 { round_up_3sig(-gmin) } else { 0.0 };
    let p = MatrixOdeProblem {
        n: model.ns,
        a: model.b_gen.clone(),
        b: model.b_gen.clone(),
        c: model.c_noise.clone(),
        d: model.x0.clone(),
        t,
        eps,
        phi: basis(model.ns, 0),
        psi: basis(model.ns, 0),
        bounds: Bounds {
            a,
            b: a,
            c: floor(spectral_norm(&model.c_noise)),
            d: round_up_3sig(spectral_norm(&model.x0)),
            xi_a: xi,
            xi_b: xi,
        },
    };
    p.validate()?;
    Ok(p)
}

/// Covariance trajectory at the requested times, each sample checked to be a
/// Hermitian matrix with spectrum inside `[-tol, 1 + tol]`.
pub fn relax(model: &CovarianceModel, t_grid: &[f64], tol: f64) -> Result<Vec<SolutionSample>> {
    let horizon = t_grid.iter().copied().fold(0.0, f64::max);
    let p = to_ode_problem(model, horizon, tol.max(1e-15))?;
    let samples = solve_ode_at(&p, t_grid, (tol * 1e-3).clamp(1e-13, 1e-3))?;
    for s in &samples {
        let (lo, hi) = hermitian_extremes(&s.x);
        if max_abs(&(&s.x - s.x.adjoint())) > tol || lo < -tol || hi > 1.0 + tol {
            return Err(Error::Accuracy { estimate: (-lo).max(hi - 1.0).max(0.0) });
        }
    }
    Ok(samples)
}

/// One row of the trajectory table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub entry_re: f64,
    pub entry_im: f64,
    pub dist_to_fixed_point: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Table rows for the occupation of mode 0 along a trajectory.
pub fn trajectory_rows(model: &CovarianceModel, samples: &[SolutionSample]) -> Vec<TrajectoryRow> {
    let e0 = basis(model.ns, 0);
    samples
        .iter()
        .map(|s| {
            let entry = entry_of(&s.x, &e0, &e0);
            let (min_eig, max_eig) = hermitian_extremes(&s.x);
            TrajectoryRow {
                t: s.t,
                entry_re: entry.re,
                entry_im: entry.im,
                dist_to_fixed_point: spectral_norm(&(&s.x - &model.x_beta)),
                min_eig,
                max_eig,
            }
        })
        .collect()
}

/// Write rows as CSV with a header line.
pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
