//! Entry estimation through history states: the per-step integral `I_C`,
//! its truncated Taylor form, the clock-block operator and the overlap
//!
//! ```text
//! <phi|X(t)|psi> = sum_{m < M} <phi_m| I_C |psi_m> + sum_{m = M}^{M+R-1} <phi_m| D/R |psi_m>
//! ```
//!
//! with `phi_m = e^{h min(m, M) A} phi` and `psi_m = e^{h min(m, M) B} psi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histsolve::{build_system, solve_history, taylor_remainder, HistoryState};
use crate::lchsmodel::{lchs_constant, lchs_history, LFunctionals};
use crate::matcore::{expm, quad_integrate, spectral_norm, CMatrix, CVector, C64};
use crate::problem::{MatrixOdeProblem, Side};

const E2: f64 = std::f64::consts::E * std::f64::consts::E;

/// How the history states are prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    LinearSystems,
    Lchs,
}

/// Block-diagonal clock operator with `M` copies of the per-step block
/// followed by `R` copies of `D / R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockBlockOperator {
    pub m: usize,
    pub r: usize,
    pub per_step_block: CMatrix,
    pub padding_block: CMatrix,
    pub lambda: f64,
}

impl ClockBlockOperator {
    /// Block acting on clock index `i`.
    pub fn block(&self, i: usize) -> &CMatrix {
        if i < self.m {
            &self.per_step_block
        } else {
            &self.padding_block
        }
    }

    /// `<left| op |right>` for history states with matching clock registers.
    pub fn contract(&self, left: &HistoryState, right: &HistoryState) -> Result<C64> {
        let l = self.m + self.r;
        if left.blocks.len() != l || right.blocks.len() != l {
            return Err(Error::Dimension(format!(
                "clock registers of length {} and {} for an operator on {l} blocks",
                left.blocks.len(),
                right.blocks.len()
            )));
        }
        let terms: Vec<C64> =
            (0..l).into_par_iter().map(|i| left.blocks[i].dotc(&(self.block(i) * &right.blocks[i]))).collect();
        Ok(terms.into_iter().fold(C64::new(0.0, 0.0), |acc, z| acc + z))
    }
}

/// Result of one entry estimate together with its a-priori error bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryEstimate {
    pub entry: C64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub route: Route,
    pub lambda: f64,
    /// Squared norms of the two history states as carried by the route.
    #[serde(rename = "normSqA")]
    pub norm_sq_a: f64,
    #[serde(rename = "normSqB")]
    pub norm_sq_b: f64,
    /// Bound on the contribution of the Taylor truncation of `I_C`.
    #[serde(rename = "icErrorBound")]
    pub ic_error_bound: f64,
    /// Bound on the contribution of the history-state errors.
    #[serde(rename = "historyErrorBound")]
    pub history_error_bound: f64,
}

impl EntryEstimate {
    /// Sum of the two a-priori error contributions.
    pub fn predicted_error(&self) -> f64 {
        self.ic_error_bound + self.history_error_bound
    }
}

/// Split of the target error between the three error sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// `eps / (3 c L~2)`.
    #[serde(rename = "epsHist")]
    pub eps_hist: f64,
    /// `eps / (3 M maxExp^2)`.
    #[serde(rename = "epsIc")]
    pub eps_ic: f64,
    /// `eps / (3 lambda sqrt(N_A N_B))`.
    #[serde(rename = "epsOverlap")]
    pub eps_overlap: f64,
}

/// `int_0^h e^{tau A^H} C e^{tau B} dtau` by adaptive quadrature.
pub fn exact_ic(p: &MatrixOdeProblem, h: f64, tol: f64) -> Result<CMatrix> {
    let ah = p.a.adjoint();
    let kernel = |tau: f64| {
        let ea = expm(&(&ah * C64::new(tau, 0.0)), 1e-14).expect("fixed tolerance");
        let eb = expm(&(&p.b * C64::new(tau, 0.0)), 1e-14).expect("fixed tolerance");
        ea * &p.c * eb
    };
    quad_integrate(kernel, 0.0, h, tol)
}

/// `sum_{p, q <= K} (A^H)^p C B^q / (p! q!) h^{p+q+1} / (p+q+1)`.
pub fn taylor_ic(p: &MatrixOdeProblem, h: f64, k: usize) -> Result<CMatrix> {
    let limit = 1.0 + 1e-12;
    if h.is_nan() || h < 0.0 || p.bounds.a * h > limit || p.bounds.b * h > limit {
        return Err(Error::Precondition(format!(
            "h = {h} must satisfy a h <= 1 and b h <= 1 (a = {}, b = {})",
            p.bounds.a, p.bounds.b
        )));
    }
    let ah = p.a.adjoint() * C64::new(h, 0.0);
    let bh = &p.b * C64::new(h, 0.0);
    let mut right = Vec::with_capacity(k + 1);
    let mut q_term = crate::matcore::identity(p.n);
    for q in 0..=k {
        if q > 0 {
            q_term = q_term * &bh * C64::new(1.0 / q as f64, 0.0);
        }
        right.push(q_term.clone());
    }
    let mut total = CMatrix::zeros(p.n, p.n);
    let mut left = p.c.clone();
    for pp in 0..=k {
        if pp > 0 {
            left = &ah * left * C64::new(1.0 / pp as f64, 0.0);
        }
        for (q, rq) in right.iter().enumerate() {
            total += &left * rq * C64::new(h / (pp + q + 1) as f64, 0.0);
        }
    }
    Ok(total)
}

/// `2 e^2 ||C|| h / (K + 1)!`.
pub fn taylor_ic_bound(c_norm: f64, h: f64, k: usize) -> f64 {
    let factorial: f64 = (1..=k + 1).map(|j| j as f64).product();
    2.0 * E2 * c_norm * h / factorial
}

/// Operator with `I~_C` on the first `M` clock indices and `D / R` after,
/// normalized by `lambda = max(c h e^2, d / R)`.
pub fn build_clock_operator(p: &MatrixOdeProblem, m: usize, r: usize, k: usize) -> Result<ClockBlockOperator> {
    if m == 0 || r == 0 {
        return Err(Error::Precondition("M and R must both be at least 1".into()));
    }
    let h = p.t / m as f64;
    Ok(ClockBlockOperator {
        m,
        r,
        per_step_block: taylor_ic(p, h, k)?,
        padding_block: &p.d * C64::new(1.0 / r as f64, 0.0),
        lambda: (p.bounds.c * h * E2).max(p.bounds.d / r as f64),
    })
}

fn histories(p: &MatrixOdeProblem, m: usize, r: usize, k: usize, route: Route) -> Result<(HistoryState, HistoryState)> {
    match route {
        Route::LinearSystems => {
            let a = solve_history(&build_system(p, Side::A, m, r, k)?)?;
            let b = solve_history(&build_system(p, Side::B, m, r, k)?)?;
            Ok((a, b))
        }
        Route::Lchs => Ok((lchs_history(p, Side::A, m, r)?, lchs_history(p, Side::B, m, r)?)),
    }
}

/// Per-block distance between a prepared history and the exact one.
fn history_deviation(p: &MatrixOdeProblem, side: Side, m: usize, k: usize, route: Route) -> Result<f64> {
    let h = p.t / m as f64;
    match route {
        Route::LinearSystems => {
            let gen = p.generator(side);
            let (_, sup) = crate::matcore::sup_expm_norm(gen, p.t)?;
            let delta = taylor_remainder(p.bounds.norm(side) * h, k);
            let mf = m as f64;
            Ok(sup * delta * mf * (delta * mf).exp())
        }
        Route::Lchs => Ok(1e-13 * (m as f64 + 1.0) * (p.bounds.xi(side).max(0.0) * p.t).exp()),
    }
}

/// Estimate `<phi|X(t)|psi>` from the two history states and the clock operator.
pub fn estimate_entry(p: &MatrixOdeProblem, m: usize, r: usize, k: usize, route: Route) -> Result<EntryEstimate> {
    let op = build_clock_operator(p, m, r, k)?;
    let (phi_hist, psi_hist) = histories(p, m, r, k, route)?;
    let entry = op.contract(&phi_hist, &psi_hist)?;

    let h = p.t / m as f64;
    let trunc = taylor_ic_bound(spectral_norm(&p.c), h, k);
    let ic_error_bound: f64 = (0..m).map(|i| phi_hist.blocks[i].norm() * psi_hist.blocks[i].norm() * trunc).sum();
    let dev_a = history_deviation(p, Side::A, m, k, route)?;
    let dev_b = history_deviation(p, Side::B, m, k, route)?;
    let ic_norm = spectral_norm(&op.per_step_block) + trunc;
    let pad_norm = spectral_norm(&op.padding_block);
    let history_error_bound: f64 = (0..m + r)
        .map(|i| {
            let block = if i < m { ic_norm } else { pad_norm };
            block * (dev_a * psi_hist.blocks[i].norm() + dev_b * phi_hist.blocks[i].norm() + dev_a * dev_b)
        })
        .sum();
    Ok(EntryEstimate {
        entry,
        m,
        r,
        k,
        route,
        lambda: op.lambda,
        norm_sq_a: phi_hist.norm_sq,
        norm_sq_b: psi_hist.norm_sq,
        ic_error_bound,
        history_error_bound,
    })
}

/// The overlap with exponential histories and quadrature `I_C`; equal to the
/// exact entry up to `tol`-level errors.
pub fn exact_overlap_entry(p: &MatrixOdeProblem, m: usize, r: usize, tol: f64) -> Result<C64> {
    if m == 0 || r == 0 {
        return Err(Error::Precondition("M and R must both be at least 1".into()));
    }
    let h = p.t / m as f64;
    let op = ClockBlockOperator {
        m,
        r,
        per_step_block: exact_ic(p, h, tol)?,
        padding_block: &p.d * C64::new(1.0 / r as f64, 0.0),
        lambda: (p.bounds.c * h * E2).max(p.bounds.d / r as f64),
    };
    let history = |gen: &CMatrix, x: &CVector| -> Result<HistoryState> {
        let step = expm(&(gen * C64::new(h, 0.0)), 1e-14)?;
        let mut blocks = vec![x.clone()];
        for i in 1..m + r {
            let next = if i <= m { &step * &blocks[i - 1] } else { blocks[i - 1].clone() };
            blocks.push(next);
        }
        Ok(HistoryState::from_blocks(m, r, blocks, crate::histsolve::Ordering::Standard))
    };
    op.contract(&history(&p.a, &p.phi)?, &history(&p.b, &p.psi)?)
}

/// Equal thirds of `eps`, each divided by the normalization it is amplified by.
pub fn error_budget(p: &MatrixOdeProblem, m: usize, r: usize, f: &LFunctionals) -> ErrorBudget {
    let h = p.t / m.max(1) as f64;
    let lambda = (p.bounds.c * h * E2).max(p.bounds.d / r.max(1) as f64);
    let na = lchs_constant(p.t, p.bounds.xi_a, m, r);
    let nb = lchs_constant(p.t, p.bounds.xi_b, m, r);
    let third = p.eps / 3.0;
    ErrorBudget {
        eps_hist: third / (p.bounds.c * f.ltilde2),
        eps_ic: third / (m as f64 * f.max_exp * f.max_exp),
        eps_overlap: third / (lambda * (na * nb).sqrt()),
    }
}
