//! History states from the block-bidiagonal linear system
//!
//! ```text
//! [ I                ] [x_0]   [x_in]
//! [-V_1  I           ] [x_1]   [ 0  ]
//! [     ...  ...     ] [...] = [... ]
//! [      -V_M  I     ] [x_M]   [ 0  ]
//! [           -I  I  ] [...]   [ 0  ]
//! ```
//!
//! with `M` evolution steps of size `h = t / M` and `R` padding blocks that
//! repeat the final state. The module also provides the block inverse, its
//! closed form, condition-number certificates and log-norm preconditioning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{
    expm, identity, invert_dense, quad_integrate, solve_dense, spectral_norm, sup_expm_norm, CMatrix, CVector, C64,
};
use crate::problem::{MatrixOdeProblem, Side};

/// Largest assembled dimension `(M + R) N` handled by dense linear algebra.
pub const DENSE_CAP: usize = 4096;

/// Largest Taylor order accepted by the solvers.
pub const MAX_ORDER: usize = 40;

/// Clock ordering of the blocks of a history state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Block `m` holds the state after `min(m, M)` steps.
    Standard,
    /// Padding blocks come first and the evolution runs backwards in time.
    Reversed,
}

/// Clock-indexed vectors of a history state and their total squared norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub m: usize,
    pub r: usize,
    pub blocks: Vec<CVector>,
    pub norm_sq: f64,
    pub ordering: Ordering,
}

impl HistoryState {
    /// Wrap blocks in standard ordering, computing the squared norm.
    pub fn from_blocks(m: usize, r: usize, blocks: Vec<CVector>, ordering: Ordering) -> Self {
        let norm_sq = blocks.iter().map(|b| b.norm_squared()).sum();
        HistoryState { m, r, blocks, norm_sq, ordering }
    }

    /// Concatenation of all blocks.
    pub fn stacked(&self) -> CVector {
        let n = self.blocks.first().map_or(0, |b| b.len());
        CVector::from_iterator(self.blocks.len() * n, self.blocks.iter().flat_map(|b| b.iter().copied()))
    }
}

/// The assembled system together with its steppers.
#[derive(Debug, Clone)]
pub struct BlockLinearSystem {
    pub m: usize,
    pub r: usize,
    pub n: usize,
    pub h: f64,
    pub k: usize,
    /// A single shared stepper, or `V_1, ..., V_M`.
    pub steppers: Vec<CMatrix>,
    /// Dense matrix, present when `(M + R) N <= DENSE_CAP`.
    pub assembled: Option<CMatrix>,
    pub rhs: CVector,
}

/// Norm bounds and computed norms of the system matrix and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCertificate {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "normA")]
    pub norm_a: f64,
    #[serde(rename = "normAinv")]
    pub norm_ainv: f64,
    pub kappa: f64,
    #[serde(rename = "rowSumBound")]
    pub row_sum_bound: f64,
    #[serde(rename = "colSumBound")]
    pub col_sum_bound: f64,
    #[serde(rename = "paperBound")]
    pub inverse_bound: f64,
    pub pass: bool,
}

/// `sum_{k <= order} (hA)^k / k!`.
pub fn taylor_stepper(a: &CMatrix, h: f64, order: usize) -> CMatrix {
    let n = a.nrows();
    let eye = identity(n);
    let ha = a * C64::new(h, 0.0);
    let mut v = eye.clone();
    for k in (1..=order).rev() {
        v = &eye + (&ha * v) * C64::new(1.0 / k as f64, 0.0);
    }
    v
}

/// Default step and padding counts `M = max(1, ceil(t mu))` and
/// `R = max(1, ceil(mu d / c))`.
pub fn default_steps(p: &MatrixOdeProblem) -> (usize, usize) {
    let mu = p.mu();
    let m = ((p.t * mu).ceil() as usize).max(1);
    let r = ((mu * p.bounds.d / p.bounds.c).ceil() as usize).max(1);
    (m, r)
}

/// Smallest `K` with `2 e^2 c h / (K + 1)! <= eps / (10 (M + R))`, at most 40.
pub fn default_order(c: f64, h: f64, eps: f64, m: usize, r: usize) -> usize {
    let target = eps / (10.0 * (m + r) as f64);
    let mut value = 2.0 * std::f64::consts::E.powi(2) * c * h;
    let mut k = 0;
    while k < MAX_ORDER {
        value /= (k + 1) as f64;
        if value <= target {
            break;
        }
        k += 1;
    }
    k
}

/// Worst-case spectral distance between a stepper and its exponential given
/// `a h <= 1`, namely the Taylor remainder `e (ah)^{K+1} / (K+1)!`.
pub fn taylor_remainder(ah: f64, k: usize) -> f64 {
    let mut term = 1.0;
    for j in 1..=k + 1 {
        term *= ah / j as f64;
    }
    std::f64::consts::E * term
}

impl BlockLinearSystem {
    /// System with explicit steppers, where `steppers` is either one shared
    /// matrix or exactly `m` of them.
    pub fn from_steppers(steppers: Vec<CMatrix>, m: usize, r: usize, k: usize, h: f64, x_in: &CVector) -> Result<Self> {
        if m == 0 || r == 0 {
            return Err(Error::Precondition("M and R must both be at least 1".into()));
        }
        if steppers.len() != 1 && steppers.len() != m {
            return Err(Error::Dimension(format!("{} steppers for M = {m}", steppers.len())));
        }
        let n = x_in.len();
        if steppers.iter().any(|v| v.nrows() != n || v.ncols() != n) {
            return Err(Error::Dimension(format!("steppers must be {n}x{n}")));
        }
        let l = m + r;
        let mut rhs = CVector::zeros(l * n);
        rhs.rows_mut(0, n).copy_from(x_in);
        let mut sys = BlockLinearSystem { m, r, n, h, k, steppers, assembled: None, rhs };
        if l * n <= DENSE_CAP {
            sys.assembled = Some(sys.assemble());
        }
        Ok(sys)
    }

    /// Number of clock blocks `M + R`.
    pub fn blocks(&self) -> usize {
        self.m + self.r
    }

    /// `V_l` for `1 <= l <= M`.
    pub fn stepper(&self, l: usize) -> &CMatrix {
        if self.steppers.len() == 1 {
            &self.steppers[0]
        } else {
            &self.steppers[l - 1]
        }
    }

    fn assemble(&self) -> CMatrix {
        let (n, l) = (self.n, self.blocks());
        let mut a = identity(l * n);
        for row in 1..l {
            let block = if row <= self.m { -self.stepper(row) } else { -identity(n) };
            a.view_mut((row * n, (row - 1) * n), (n, n)).copy_from(&block);
        }
        a
    }

    /// `x_in`, read back from the right-hand side.
    pub fn input(&self) -> CVector {
        self.rhs.rows(0, self.n).into_owned()
    }

    /// Closed form of block `(row, col)` of the inverse:
    /// `V_{min(row, M)} ... V_{col + 1}` for `row >= col`, zero above the diagonal.
    pub fn closed_form_block(&self, row: usize, col: usize) -> CMatrix {
        let n = self.n;
        if row < col {
            return CMatrix::zeros(n, n);
        }
        let mut out = identity(n);
        for l in (col + 1)..=row.min(self.m) {
            out = self.stepper(l) * out;
        }
        out
    }
}

/// Assemble the system for one side of a static problem.
pub fn build_system(p: &MatrixOdeProblem, side: Side, m: usize, r: usize, k: usize) -> Result<BlockLinearSystem> {
    if m == 0 || r == 0 {
        return Err(Error::Precondition("M and R must both be at least 1".into()));
    }
    let h = p.t / m as f64;
    let norm = p.bounds.norm(side);
    if norm * h > 1.0 + 1e-12 {
        return Err(Error::Precondition(format!(
            "step rule violated: norm bound {norm} times h = {h} exceeds 1; use M >= {}",
            (p.t * norm).ceil()
        )));
    }
    let v = taylor_stepper(p.generator(side), h, k);
    BlockLinearSystem::from_steppers(vec![v], m, r, k, h, p.state(side))
}

/// Solve the system: dense elimination when assembled, forward substitution otherwise.
pub fn solve_history(sys: &BlockLinearSystem) -> Result<HistoryState> {
    let (n, l) = (sys.n, sys.blocks());
    let blocks = match &sys.assembled {
        Some(a) => {
            let x = solve_dense(a, &sys.rhs)?;
            (0..l).map(|i| x.rows(i * n, n).into_owned()).collect()
        }
        None => {
            let mut blocks = Vec::with_capacity(l);
            blocks.push(sys.input());
            for row in 1..l {
                let next = if row <= sys.m { sys.stepper(row) * &blocks[row - 1] } else { blocks[row - 1].clone() };
                blocks.push(next);
            }
            blocks
        }
    };
    Ok(HistoryState::from_blocks(sys.m, sys.r, blocks, Ordering::Standard))
}

/// All blocks of the inverse by dense inversion, as a row-major grid.
pub fn invert_blocks(sys: &BlockLinearSystem) -> Result<Vec<Vec<CMatrix>>> {
    let a = sys
        .assembled
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("dimension exceeds the dense cap {DENSE_CAP}")))?;
    let inv = invert_dense(a)?;
    let (n, l) = (sys.n, sys.blocks());
    Ok((0..l).map(|i| (0..l).map(|j| inv.view((i * n, j * n), (n, n)).into_owned()).collect()).collect())
}

fn block_norms(blocks: &[Vec<CMatrix>]) -> Vec<Vec<f64>> {
    blocks.par_iter().map(|row| row.iter().map(spectral_norm).collect()).collect()
}

/// Spectral norm of the assembled block matrix and of the matrix of block norms.
pub fn block_norm_bound(blocks: &[Vec<CMatrix>]) -> Result<(f64, f64)> {
    let rows = blocks.len();
    let cols = blocks.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || blocks.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension("block grid must be non-empty and rectangular".into()));
    }
    let heights: Vec<usize> = blocks.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = blocks[0].iter().map(|b| b.ncols()).collect();
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return Err(Error::Dimension(format!("block ({i}, {j}) is not conformal")));
            }
        }
    }
    let mut full = CMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in blocks.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            full.view_mut((r0, c0), (heights[i], widths[j])).copy_from(b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    let norms = block_norms(blocks);
    let compressed = CMatrix::from_fn(rows, cols, |i, j| C64::new(norms[i][j], 0.0));
    Ok((spectral_norm(&full), spectral_norm(&compressed)))
}

fn max_row_col_sums(norms: &[Vec<f64>]) -> (f64, f64) {
    let row = norms.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let cols = norms[0].len();
    let col = (0..cols).map(|j| norms.iter().map(|r| r[j]).sum::<f64>()).fold(0.0, f64::max);
    (row, col)
}

/// Certificate comparing the computed condition of the static system with
///
/// ```text
/// 1 + sum_{m=1}^M ||e^{hmA}|| + R max_s ||e^{sA}|| + (M + R) eps_trunc,
/// eps_trunc = max_s ||e^{sA}|| ||delta|| M e^{||delta|| M},  delta = V - e^{hA}.
/// ```
pub fn certify_condition(sys: &BlockLinearSystem, p: &MatrixOdeProblem, side: Side) -> Result<ConditionCertificate> {
    let a = sys
        .assembled
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("dimension exceeds the dense cap {DENSE_CAP}")))?;
    let gen = p.generator(side);
    let inverse = invert_blocks(sys)?;
    let norms = block_norms(&inverse);
    let (row_sum_bound, col_sum_bound) = max_row_col_sums(&norms);
    let l = sys.blocks();
    let n = sys.n;
    let mut inv = CMatrix::zeros(l * n, l * n);
    for (i, row) in inverse.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            inv.view_mut((i * n, j * n), (n, n)).copy_from(b);
        }
    }
    let norm_a = spectral_norm(a);
    let norm_ainv = spectral_norm(&inv);

    let step = expm(&(gen * C64::new(sys.h, 0.0)), 1e-14)?;
    let mut power = identity(n);
    let mut sum = 0.0;
    for _ in 1..=sys.m {
        power = &power * &step;
        sum += spectral_norm(&power);
    }
    let (_, max_exp) = sup_expm_norm(gen, p.t)?;
    let delta = spectral_norm(&(sys.stepper(1) - &step));
    let mf = sys.m as f64;
    let eps_trunc = max_exp * delta * mf * (delta * mf).exp();
    let inverse_bound = 1.0 + sum + sys.r as f64 * max_exp + l as f64 * eps_trunc;
    let pass = norm_ainv <= inverse_bound && norm_a <= 1.0 + std::f64::consts::E;
    Ok(ConditionCertificate {
        m: sys.m,
        r: sys.r,
        k: sys.k,
        norm_a,
        norm_ainv,
        kappa: norm_a * norm_ainv,
        row_sum_bound,
        col_sum_bound,
        inverse_bound,
        pass,
    })
}

/// Solve the system for `A - xi I` and return the shifted history together
/// with the weights `e^{h min(m, M) xi}` that map it back block by block.
pub fn precondition(
    p: &MatrixOdeProblem,
    side: Side,
    m: usize,
    r: usize,
    k: usize,
) -> Result<(HistoryState, Vec<f64>)> {
    let xi = p.bounds.xi(side);
    if !xi.is_finite() {
        return Err(Error::Domain("log-norm bound must be finite".into()));
    }
    if m == 0 || r == 0 {
        return Err(Error::Precondition("M and R must both be at least 1".into()));
    }
    let n = p.n;
    let h = p.t / m as f64;
    let shifted = p.generator(side) - identity(n) * C64::new(xi, 0.0);
    let v = taylor_stepper(&shifted, h, k);
    let sys = BlockLinearSystem::from_steppers(vec![v], m, r, k, h, p.state(side))?;
    let hist = solve_history(&sys)?;
    let weights = (0..m + r).map(|i| (h * i.min(m) as f64 * xi).exp()).collect();
    Ok((hist, weights))
}

/// Upper bound on the squared norm of a history state,
/// `(e^2 M / t) int_0^t ||e^{sA} x||^2 ds + R ||e^{tA} x||^2`.
pub fn history_norm_bound(gen: &CMatrix, x: &CVector, t: f64, m: usize, r: usize, tol: f64) -> Result<f64> {
    let x0 = x.norm_squared();
    if t == 0.0 {
        return Ok((m + r) as f64 * x0);
    }
    let integrand = |s: f64| {
        let v = expm(&(gen * C64::new(s, 0.0)), 1e-14).expect("fixed tolerance") * x;
        CMatrix::from_element(1, 1, C64::new(v.norm_squared(), 0.0))
    };
    let integral = quad_integrate(integrand, 0.0, t, tol)?[(0, 0)].re;
    let end = (expm(&(gen * C64::new(t, 0.0)), 1e-14)? * x).norm_squared();
    Ok(std::f64::consts::E.powi(2) * m as f64 / t * integral + r as f64 * end)
}
