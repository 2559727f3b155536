//! Shifted-generator history states, their closed-form normalization
//! constants, and the cost functionals built from log-norm bounds and
//! propagator norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histsolve::{HistoryState, Ordering};
use crate::matcore::{expm, identity, spectral_norm, sup_expm_norm, CMatrix, CVector, C64};
use crate::problem::{MatrixOdeProblem, Side};

const BASE_INTERVALS: usize = 64;
const MAX_INTERVALS: usize = 1 << 16;

/// Cost functionals of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LFunctionals {
    /// `max_Y int_0^t e^{2 s xi_Y} ds + (d/c) e^{2 t xi_Y}`.
    #[serde(rename = "Lcal")]
    pub lcal: f64,
    /// Square root of the product over both generators of the same terms.
    #[serde(rename = "L2")]
    pub l2: f64,
    /// `max_Y int_0^t ||e^{sY}|| ds + (d/c) max_s ||e^{sY}||`.
    #[serde(rename = "Ltilde1")]
    pub ltilde1: f64,
    /// Square root of the product of `int_0^t ||e^{sY} x||^2 ds + (d/c) ||e^{tY} x||^2`.
    #[serde(rename = "Ltilde2")]
    pub ltilde2: f64,
    /// `max_{Y, s} ||e^{sY}||`.
    #[serde(rename = "maxExp")]
    pub max_exp: f64,
    #[serde(rename = "quadTol")]
    pub quad_tol: f64,
}

/// `int_0^t e^{2 s xi} ds`.
pub fn exp2_integral(t: f64, xi: f64) -> f64 {
    if xi == 0.0 {
        t
    } else {
        (2.0 * t * xi).exp_m1() / (2.0 * xi)
    }
}

/// `sum_{m < M} e^{2 t m xi / M} + R e^{2 t xi}`.
pub fn lchs_constant(t: f64, xi: f64, m: usize, r: usize) -> f64 {
    let mf = m as f64;
    let x = 2.0 * t * xi;
    let geometric = if x == 0.0 { mf } else { x.exp_m1() / (x / mf).exp_m1() };
    geometric + r as f64 * x.exp()
}

/// `(e^2 M / t) int_0^t e^{2 s xi} ds + R e^{2 t xi}`, equal to `e^2 M + R` at `t = 0`.
///
/// Dominates [`lchs_constant`] whenever `|xi| t / M <= 1`.
pub fn lchs_constant_bound(t: f64, xi: f64, m: usize, r: usize) -> f64 {
    let e2 = std::f64::consts::E.powi(2);
    if t == 0.0 {
        return e2 * m as f64 + r as f64;
    }
    e2 * m as f64 / t * exp2_integral(t, xi) + r as f64 * (2.0 * t * xi).exp()
}

/// History state of one side evolved under `A - xi I` and reweighted by
/// `e^{h m xi}`, carrying the closed-form constant as its squared norm.
pub fn lchs_history(p: &MatrixOdeProblem, side: Side, m: usize, r: usize) -> Result<HistoryState> {
    if m == 0 {
        return Err(Error::Precondition("M must be at least 1".into()));
    }
    let xi = p.bounds.xi(side);
    let n = p.n;
    let h = p.t / m as f64;
    let shifted = p.generator(side) - identity(n) * C64::new(xi, 0.0);
    let step = expm(&(shifted * C64::new(h, 0.0)), 1e-14)?;
    let mut blocks = Vec::with_capacity(m + r);
    let mut current = p.state(side).clone();
    for i in 0..=m {
        if i > 0 {
            current = &step * current;
        }
        let weighted = &current * C64::new((h * i as f64 * xi).exp(), 0.0);
        if i < m {
            blocks.push(weighted);
        } else {
            blocks.extend(std::iter::repeat_n(weighted, r));
        }
    }
    Ok(HistoryState { m, r, blocks, norm_sq: lchs_constant(p.t, xi, m, r), ordering: Ordering::Standard })
}

/// `int_0^t f(e^{sY}) ds` by composite Simpson on 64, 128, ... intervals
/// with Richardson extrapolation, stopping once successive estimates agree
/// within `tol` relative to `max(1, |value|)`.
pub fn norm_integral<F>(y: &CMatrix, t: f64, f: F, tol: f64) -> Result<f64>
where
    F: Fn(&CMatrix) -> f64,
{
    if t == 0.0 {
        return Ok(0.0);
    }
    let simpson = |intervals: usize| -> Result<f64> {
        let dt = t / intervals as f64;
        let step = expm(&(y * C64::new(dt, 0.0)), 1e-14)?;
        let mut e = identity(y.nrows());
        let mut acc = f(&e);
        for i in 1..=intervals {
            e = &e * &step;
            let w = if i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * f(&e);
        }
        Ok(acc * dt / 3.0)
    };
    let mut intervals = BASE_INTERVALS;
    let mut coarse = simpson(intervals)?;
    loop {
        intervals *= 2;
        let fine = simpson(intervals)?;
        let diff = (fine - coarse) / 15.0;
        let value = fine + diff;
        if diff.abs() <= tol * value.abs().max(1.0) {
            return Ok(value);
        }
        if intervals >= MAX_INTERVALS {
            return Err(Error::Accuracy { estimate: diff.abs() });
        }
        coarse = fine;
    }
}

/// Evaluate all cost functionals with norm integrals at tolerance `quad_tol`.
pub fn compute_l_functionals(p: &MatrixOdeProblem, quad_tol: f64) -> Result<LFunctionals> {
    let ratio = p.bounds.d / p.bounds.c;
    let scalar = |xi: f64| exp2_integral(p.t, xi) + ratio * (2.0 * p.t * xi).exp();
    let (sa, sb) = (scalar(p.bounds.xi_a), scalar(p.bounds.xi_b));
    let side_terms = |side: Side| -> Result<(f64, f64, f64)> {
        let y = p.generator(side);
        let x: &CVector = p.state(side);
        let (_, sup) = sup_expm_norm(y, p.t)?;
        let l1 = norm_integral(y, p.t, spectral_norm, quad_tol)? + ratio * sup;
        let end = (expm(&(y * C64::new(p.t, 0.0)), 1e-14)? * x).norm_squared();
        let l2 = norm_integral(y, p.t, |e| (e * x).norm_squared(), quad_tol)? + ratio * end;
        Ok((l1, l2, sup))
    };
    let (a1, a2, a_sup) = side_terms(Side::A)?;
    let (b1, b2, b_sup) = side_terms(Side::B)?;
    Ok(LFunctionals {
        lcal: sa.max(sb),
        l2: (sa * sb).sqrt(),
        ltilde1: a1.max(b1),
        ltilde2: (a2 * b2).sqrt(),
        max_exp: a_sup.max(b_sup),
        quad_tol,
    })
}
