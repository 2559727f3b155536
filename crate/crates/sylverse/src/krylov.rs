//! Classical Krylov baselines for single entries of `X(t)`.
//!
//! Both sides are projected onto Krylov subspaces `K_A(m)` seeded by `|j>`
//! and `K_B(m)` seeded by `|k>`, so that `e^{sA}|j> ~ V e^{s A~} V^H |j>`
//! with `A~ = V^H A V`, and the entry
//!
//! ```text
//! <j|X(t)|k> = <j|e^{tA^H} D e^{tB}|k> + int_0^t <j|e^{sA^H} C e^{sB}|k> ds
//! ```
//!
//! only involves `m x m` exponentials once `V^H C W` and `V^H D W` are formed.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{expm, gauss_legendre, CMatrix, CVector, C64};

const BREAKDOWN: f64 = 1e-12;
const SEED_ORDER: usize = 16;
const PAR_ROWS: usize = 4096;
const SMALL_EXPM_TOL: f64 = 1e-14;

/// Row-compressed complex sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub rows: Vec<Vec<(usize, C64)>>,
}

impl SparseMatrix {
    /// Validated matrix from per-row entries.
    pub fn new(n: usize, rows: Vec<Vec<(usize, C64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Dimension(format!("expected {n} rows, got {}", rows.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|&(c, _)| c >= n) {
                return Err(Error::Dimension(format!("row {i} has a column index outside 0..{n}")));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Dimension(format!("row {i} column indices are not strictly increasing")));
            }
        }
        Ok(SparseMatrix { n, rows })
    }

    pub fn zeros(n: usize) -> Self {
        SparseMatrix { n, rows: vec![Vec::new(); n] }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix { n, rows: (0..n).map(|i| vec![(i, C64::new(1.0, 0.0))]).collect() }
    }

    /// Nonzero pattern of a dense square matrix.
    pub fn from_dense(m: &CMatrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| (0..m.ncols()).filter(|&j| m[(i, j)] != C64::new(0.0, 0.0)).map(|j| (j, m[(i, j)])).collect())
            .collect();
        SparseMatrix { n: m.nrows(), rows }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Largest number of nonzeros in a row.
    pub fn sparsity(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `sqrt(||M||_1 ||M||_inf)`, an upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        let row_max = self.rows.iter().map(|r| r.iter().map(|e| e.1.norm()).sum::<f64>()).fold(0.0, f64::max);
        let mut cols = vec![0.0; self.n];
        for row in &self.rows {
            for &(j, v) in row {
                cols[j] += v.norm();
            }
        }
        (row_max * cols.into_iter().fold(0.0, f64::max)).sqrt()
    }

    /// `M x` without bookkeeping.
    pub fn apply(&self, x: &CVector) -> CVector {
        let row = |r: &Vec<(usize, C64)>| r.iter().map(|&(j, v)| v * x[j]).sum::<C64>();
        if self.n >= PAR_ROWS {
            CVector::from_vec(self.rows.par_iter().map(row).collect())
        } else {
            CVector::from_iterator(self.n, self.rows.iter().map(row))
        }
    }

    fn matvec(&self, x: &CVector, stats: &mut KrylovStats) -> CVector {
        stats.matvecs += 1;
        stats.matvec_flops += self.nnz();
        self.apply(x)
    }
}

/// Operation and memory counters of one Krylov computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KrylovStats {
    pub matvecs: usize,
    /// Nonzeros touched by all matrix-vector products.
    pub matvec_flops: usize,
    pub inner_products: usize,
    pub small_expms: usize,
    /// Largest number of length-`n` complex entries held at once.
    pub mem_highwater: usize,
    #[serde(skip)]
    live: usize,
}

impl KrylovStats {
    fn alloc(&mut self, entries: usize) {
        self.live += entries;
        self.mem_highwater = self.mem_highwater.max(self.live);
    }

    fn free(&mut self, entries: usize) {
        self.live -= entries;
    }

    fn dot(&mut self, x: &CVector, y: &CVector) -> C64 {
        self.inner_products += 1;
        x.dotc(y)
    }
}

/// Orthonormal basis of a Krylov subspace with the compressed operator.
#[derive(Debug, Clone)]
pub struct KrylovBasis {
    pub m: usize,
    pub columns: Vec<CVector>,
    pub projected: CMatrix,
    pub start_norm: f64,
}

impl KrylovBasis {
    /// `V y`.
    pub fn lift(&self, y: &CVector) -> CVector {
        let mut out = CVector::zeros(self.columns[0].len());
        for (c, yi) in self.columns.iter().zip(y.iter()) {
            out.axpy(*yi, c, C64::new(1.0, 0.0));
        }
        out
    }

    /// `V^H Op W` for another basis `W`.
    fn compress(&self, op: &SparseMatrix, other: &KrylovBasis, stats: &mut KrylovStats) -> CMatrix {
        let mut out = CMatrix::zeros(self.m, other.m);
        for (j, w) in other.columns.iter().enumerate() {
            stats.alloc(op.n);
            let ow = op.matvec(w, stats);
            for (i, v) in self.columns.iter().enumerate() {
                out[(i, j)] = stats.dot(v, &ow);
            }
            stats.free(op.n);
        }
        out
    }

    /// `e^{s P} e_1 ||start||` in subspace coordinates.
    fn evolve(&self, s: f64, stats: &mut KrylovStats) -> Result<CVector> {
        stats.small_expms += 1;
        let e = expm(&(&self.projected * C64::new(s, 0.0)), SMALL_EXPM_TOL)?;
        Ok(e.column(0) * C64::new(self.start_norm, 0.0))
    }
}

/// Arnoldi process with modified Gram-Schmidt and one reorthogonalization pass.
pub fn build_krylov(op: &SparseMatrix, start: &CVector, m: usize) -> Result<KrylovBasis> {
    build_krylov_counted(op, start, m, &mut KrylovStats::default())
}

fn build_krylov_counted(op: &SparseMatrix, start: &CVector, m: usize, stats: &mut KrylovStats) -> Result<KrylovBasis> {
    let n = op.n;
    if start.len() != n {
        return Err(Error::Dimension(format!("start vector has length {}, operator {n}", start.len())));
    }
    if m == 0 || m > n {
        return Err(Error::Precondition(format!("subspace dimension {m} must lie in 1..={n}")));
    }
    let start_norm = stats.dot(start, start).re.sqrt();
    if start_norm == 0.0 {
        return Err(Error::Domain("zero start vector".into()));
    }
    let mut h = CMatrix::zeros(m, m);
    stats.alloc(n);
    let mut columns = vec![start / C64::new(start_norm, 0.0)];
    for j in 0..m {
        stats.alloc(n);
        let mut w = op.matvec(&columns[j], stats);
        for _ in 0..2 {
            for (i, v) in columns.iter().enumerate() {
                let c = stats.dot(v, &w);
                h[(i, j)] += c;
                w.axpy(-c, v, C64::new(1.0, 0.0));
            }
        }
        if j + 1 == m {
            stats.free(n);
            break;
        }
        let nrm = stats.dot(&w, &w).re.sqrt();
        if nrm < BREAKDOWN * start_norm {
            stats.free(n);
            break;
        }
        h[(j + 1, j)] = C64::new(nrm, 0.0);
        columns.push(w / C64::new(nrm, 0.0));
    }
    let dim = columns.len();
    Ok(KrylovBasis { m: dim, columns, projected: h.view((0, 0), (dim, dim)).into_owned(), start_norm })
}

/// Entry estimate with the work that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrylovOutcome {
    pub entry: C64,
    pub stats: KrylovStats,
    /// Achieved subspace dimensions on the `A` and `B` sides.
    pub dims: (usize, usize),
}

/// Default quadrature size `ceil(t max(||A||, ||B||)) + 8`.
pub fn default_rquad(a: &SparseMatrix, b: &SparseMatrix, t: f64) -> usize {
    (t * a.norm_bound().max(b.norm_bound())).ceil() as usize + 8
}

fn unit(n: usize, i: usize) -> Result<CVector> {
    if i >= n {
        return Err(Error::Dimension(format!("index {i} outside 0..{n}")));
    }
    Ok(crate::matcore::basis(n, i))
}

fn check_shapes(ops: &[&SparseMatrix]) -> Result<usize> {
    let n = ops[0].n;
    if ops.iter().any(|o| o.n != n) {
        return Err(Error::Dimension("operators have different dimensions".into()));
    }
    Ok(n)
}

fn projected_integral(
    ka: &KrylovBasis,
    kb: &KrylovBasis,
    c_tilde: &CMatrix,
    t: f64,
    rquad: usize,
    stats: &mut KrylovStats,
) -> Result<C64> {
    let mut total = C64::new(0.0, 0.0);
    for (x, w) in gauss_legendre(rquad) {
        let s = 0.5 * t * (x + 1.0);
        let y = ka.evolve(s, stats)?;
        let z = kb.evolve(s, stats)?;
        total += y.dotc(&(c_tilde * z)) * (0.5 * t * w);
    }
    Ok(total)
}

/// Projected-Krylov estimate of `<j|X(t)|k>` with `rquad` Gauss-Legendre nodes.
#[allow(clippy::too_many_arguments)]
pub fn krylov_entry(
    pa: &SparseMatrix,
    pb: &SparseMatrix,
    c: &SparseMatrix,
    d: &SparseMatrix,
    j: usize,
    k: usize,
    t: f64,
    m: usize,
    rquad: usize,
) -> Result<KrylovOutcome> {
    let n = check_shapes(&[pa, pb, c, d])?;
    let mut stats = KrylovStats::default();
    let ka = build_krylov_counted(pa, &unit(n, j)?, m, &mut stats)?;
    let kb = build_krylov_counted(pb, &unit(n, k)?, m, &mut stats)?;
    let c_tilde = ka.compress(c, &kb, &mut stats);
    let d_tilde = ka.compress(d, &kb, &mut stats);
    let ya = ka.evolve(t, &mut stats)?;
    let zb = kb.evolve(t, &mut stats)?;
    let mut entry = ya.dotc(&(&d_tilde * zb));
    entry += projected_integral(&ka, &kb, &c_tilde, t, rquad, &mut stats)?;
    Ok(KrylovOutcome { entry, stats, dims: (ka.m, kb.m) })
}

/// `e^{r Op} x` by order-16 Taylor polynomials on sub-steps with `r ||Op|| <= 1`.
fn taylor_seed(op: &SparseMatrix, x: &CVector, r: f64, stats: &mut KrylovStats) -> CVector {
    let steps = ((r * op.norm_bound()).ceil() as usize).max(1);
    let dt = C64::new(r / steps as f64, 0.0);
    let n = op.n;
    let mut acc = x.clone();
    stats.alloc(2 * n);
    for _ in 0..steps {
        let mut term = acc.clone();
        for i in 1..=SEED_ORDER {
            term = op.matvec(&term, stats) * (dt / C64::new(i as f64, 0.0));
            acc += &term;
        }
    }
    stats.free(2 * n);
    acc
}

/// Integral term of `<j|X(t)|k>` split into `ceil(t/r)` segments, each with a
/// fresh Krylov subspace of dimension `m_prime` seeded by the evolved states.
#[allow(clippy::too_many_arguments)]
pub fn restarted_entry(
    pa: &SparseMatrix,
    pb: &SparseMatrix,
    c: &SparseMatrix,
    j: usize,
    k: usize,
    t: f64,
    m_prime: usize,
    r: f64,
) -> Result<KrylovOutcome> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Precondition(format!("segment length must be positive, got {r}")));
    }
    let n = check_shapes(&[pa, pb, c])?;
    let segments = ((t / r).ceil() as usize).max(1);
    let mu = pa.norm_bound().max(pb.norm_bound());
    let mut stats = KrylovStats::default();
    let mut u = unit(n, j)?;
    let mut v = unit(n, k)?;
    stats.alloc(2 * n);
    let mut entry = C64::new(0.0, 0.0);
    let mut dims = (usize::MAX, usize::MAX);
    for l in 0..segments {
        let len = if l + 1 == segments { t - r * l as f64 } else { r };
        stats.free(2 * n);
        let ka = build_krylov_counted(pa, &u, m_prime, &mut stats)?;
        let kb = build_krylov_counted(pb, &v, m_prime, &mut stats)?;
        dims = (dims.0.min(ka.m), dims.1.min(kb.m));
        let c_tilde = ka.compress(c, &kb, &mut stats);
        let rquad = (len * mu).ceil() as usize + 8;
        entry += projected_integral(&ka, &kb, &c_tilde, len, rquad, &mut stats)?;
        u = ka.columns[0].clone() * C64::new(ka.start_norm, 0.0);
        v = kb.columns[0].clone() * C64::new(kb.start_norm, 0.0);
        stats.free((ka.m - 1 + kb.m - 1) * n);
        drop((ka, kb));
        if l + 1 < segments {
            u = taylor_seed(pa, &u, len, &mut stats);
            v = taylor_seed(pb, &v, len, &mut stats);
        }
    }
    Ok(KrylovOutcome { entry, stats, dims })
}

/// Reference value of `<j|X(t)|k>` from dense exponentials and composite
/// 16-point Gauss-Legendre panels of length at most `1/max(||A||, ||B||)`.
pub fn dense_entry(
    pa: &SparseMatrix,
    pb: &SparseMatrix,
    c: &SparseMatrix,
    d: &SparseMatrix,
    j: usize,
    k: usize,
    t: f64,
) -> Result<C64> {
    let n = check_shapes(&[pa, pb, c, d])?;
    let (a, b) = (pa.to_dense(), pb.to_dense());
    let mu = pa.norm_bound().max(pb.norm_bound());
    let panels = ((t * mu).ceil() as usize).max(1);
    let h = t / panels as f64;
    let rule = gauss_legendre(16);
    let exp_at = |g: &CMatrix, s: f64| expm(&(g * C64::new(s, 0.0)), SMALL_EXPM_TOL);
    let offsets: Vec<f64> = rule.iter().map(|&(x, _)| 0.5 * h * (x + 1.0)).collect();
    let ea: Vec<CMatrix> = offsets.par_iter().map(|&s| exp_at(&a, s)).collect::<Result<_>>()?;
    let eb: Vec<CMatrix> = offsets.par_iter().map(|&s| exp_at(&b, s)).collect::<Result<_>>()?;
    let (step_a, step_b) = (exp_at(&a, h)?, exp_at(&b, h)?);
    let mut u = unit(n, j)?;
    let mut v = unit(n, k)?;
    let mut total = C64::new(0.0, 0.0);
    for _ in 0..panels {
        for (i, &(_, w)) in rule.iter().enumerate() {
            let us = &ea[i] * &u;
            let vs = &eb[i] * &v;
            total += us.dotc(&c.apply(&vs)) * (0.5 * h * w);
        }
        u = &step_a * u;
        v = &step_b * v;
    }
    Ok(total + u.dotc(&d.apply(&v)))
}

/// Spatial dimension of a hypercubic lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeDim {
    #[serde(rename = "1d")]
    One,
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl LatticeDim {
    pub fn dimension(self) -> usize {
        match self {
            LatticeDim::One => 1,
            LatticeDim::Two => 2,
            LatticeDim::Three => 3,
        }
    }

    /// Side length `L` with `L^D = n`.
    pub fn side_length(self, n: usize) -> Result<usize> {
        let dim = self.dimension() as u32;
        let side = (n as f64).powf(1.0 / dim as f64).round() as usize;
        if side == 0 || side.pow(dim) != n {
            return Err(Error::validation("n", format!("{n} sites do not form a {self} lattice")));
        }
        Ok(side)
    }
}

impl fmt::Display for LatticeDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}d", self.dimension())
    }
}

impl FromStr for LatticeDim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1d" => Ok(LatticeDim::One),
            "2d" => Ok(LatticeDim::Two),
            "3d" => Ok(LatticeDim::Three),
            other => Err(Error::validation("lattice", format!("unknown lattice {other:?}"))),
        }
    }
}

/// Nearest-neighbour lattice on `n` sites with open boundaries: `diag * I + hop * T`.
fn lattice(dim: LatticeDim, n: usize, diag: C64, hop: C64) -> Result<SparseMatrix> {
    let side = dim.side_length(n)?;
    let d = dim.dimension();
    let strides: Vec<usize> = (0..d).map(|k| side.pow(k as u32)).collect();
    let rows = (0..n)
        .map(|site| {
            let mut row = vec![(site, diag)];
            for &s in &strides {
                let coord = (site / s) % side;
                if coord > 0 {
                    row.push((site - s, hop));
                }
                if coord + 1 < side {
                    row.push((site + s, hop));
                }
            }
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    SparseMatrix::new(n, rows)
}

/// Lattice Laplacian `T - 2D I`.
pub fn lattice_laplacian(dim: LatticeDim, n: usize) -> Result<SparseMatrix> {
    lattice(dim, n, C64::new(-2.0 * dim.dimension() as f64, 0.0), C64::new(1.0, 0.0))
}

/// Hopping generator `i T - gamma I` with on-site dissipation `gamma >= 0`.
pub fn lattice_hopping(dim: LatticeDim, n: usize, gamma: f64) -> Result<SparseMatrix> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::validation("gamma", "dissipation must be nonnegative"));
    }
    lattice(dim, n, C64::new(-gamma, 0.0), C64::new(0.0, 1.0))
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    #[serde(rename = "D_lattice")]
    pub d_lattice: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub wall_ns: u128,
    pub matvecs: usize,
    pub inner_products: usize,
    pub mem_highwater: usize,
    pub abs_err: Option<f64>,
}

/// Benchmark settings on a lattice Laplacian with `A = B`, `C = I` and `D = 0`,
/// starting from the central site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub lattice: LatticeDim,
    pub n: usize,
    pub m: usize,
    pub m_prime: usize,
    pub restart_r: f64,
    pub t: f64,
}

/// Largest size for which the dense reference is evaluated.
pub const BENCH_DENSE_LIMIT: usize = 256;

/// Rows for the projected and restarted methods.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let a = lattice_laplacian(cfg.lattice, cfg.n)?;
    let c = SparseMatrix::identity(cfg.n);
    let d = SparseMatrix::zeros(cfg.n);
    let site = cfg.n / 2;
    let reference =
        if cfg.n <= BENCH_DENSE_LIMIT { Some(dense_entry(&a, &a, &c, &d, site, site, cfg.t)?) } else { None };
    let row = |method: &str, m: usize, l: usize, start: Instant, out: KrylovOutcome| BenchRow {
        method: method.to_string(),
        n: cfg.n,
        d_lattice: cfg.lattice.dimension(),
        m,
        l,
        wall_ns: start.elapsed().as_nanos(),
        matvecs: out.stats.matvecs,
        inner_products: out.stats.inner_products,
        mem_highwater: out.stats.mem_highwater,
        abs_err: reference.map(|r| (out.entry - r).norm()),
    };
    let start = Instant::now();
    let rquad = default_rquad(&a, &a, cfg.t);
    let full = krylov_entry(&a, &a, &c, &d, site, site, cfg.t, cfg.m.min(cfg.n), rquad)?;
    let first = row("krylov", cfg.m.min(cfg.n), 1, start, full);
    let start = Instant::now();
    let restarted = restarted_entry(&a, &a, &c, site, site, cfg.t, cfg.m_prime.min(cfg.n), cfg.restart_r)?;
    let segments = ((cfg.t / cfg.restart_r).ceil() as usize).max(1);
    let second = row("restarted", cfg.m_prime.min(cfg.n), segments, start, restarted);
    Ok(vec![first, second])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{hermitian_eigh, max_abs};

    fn laplacian(n: usize) -> SparseMatrix {
        lattice_laplacian(LatticeDim::One, n).unwrap()
    }

    fn check_basis(op: &SparseMatrix, basis: &KrylovBasis) {
        for (i, vi) in basis.columns.iter().enumerate() {
            for (j, vj) in basis.columns.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((vi.dotc(vj) - C64::new(expected, 0.0)).norm() < 1e-8);
            }
        }
        let dense = op.to_dense();
        for i in 0..basis.m {
            for j in 0..basis.m {
                let exact = basis.columns[i].dotc(&(&dense * &basis.columns[j]));
                assert!((exact - basis.projected[(i, j)]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn sparse_matrix_validates_rows() {
        let bad = SparseMatrix::new(2, vec![vec![(1, C64::new(1.0, 0.0)), (0, C64::new(1.0, 0.0))], vec![]]);
        assert!(bad.is_err());
        assert!(SparseMatrix::new(2, vec![vec![(2, C64::new(1.0, 0.0))], vec![]]).is_err());
        let lap = laplacian(5);
        assert_eq!(lap.sparsity(), 3);
        assert_eq!(lap.nnz(), 13);
        assert_eq!(SparseMatrix::from_dense(&lap.to_dense()), lap);
    }

    #[test]
    fn lattice_generators_have_expected_structure() {
        let sq = lattice_laplacian(LatticeDim::Two, 16).unwrap();
        assert_eq!(sq.sparsity(), 5);
        let dense = sq.to_dense();
        assert!(max_abs(&(dense.adjoint() - &dense)) == 0.0);
        let (evals, _) = hermitian_eigh(&dense);
        assert!(evals.iter().all(|&e| (-8.0..=0.0).contains(&e)));
        let hop = lattice_hopping(LatticeDim::Three, 27, 0.3).unwrap().to_dense();
        let herm = (&hop + hop.adjoint()) * C64::new(0.5, 0.0);
        assert!(max_abs(&(herm + crate::matcore::identity(27) * C64::new(0.3, 0.0))) < 1e-15);
        assert!(lattice_laplacian(LatticeDim::Two, 15).is_err());
        assert_eq!("3d".parse::<LatticeDim>().unwrap(), LatticeDim::Three);
    }

    #[test]
    fn identity_operator_breaks_down_after_one_vector() {
        let id = SparseMatrix::identity(6);
        let start = CVector::from_fn(6, |i, _| C64::new(i as f64 + 1.0, -0.5));
        let basis = build_krylov(&id, &start, 4).unwrap();
        assert_eq!(basis.m, 1);
        check_basis(&id, &basis);
    }

    #[test]
    fn zero_start_is_rejected() {
        assert!(matches!(build_krylov(&laplacian(4), &CVector::zeros(4), 2), Err(Error::Domain(_))));
    }

    #[test]
    fn laplacian_projection_is_tridiagonal_section() {
        let lap = laplacian(10);
        let basis = build_krylov(&lap, &crate::matcore::basis(10, 0), 3).unwrap();
        let section = lap.to_dense().view((0, 0), (3, 3)).into_owned();
        assert!(max_abs(&(&basis.projected - section)) < 1e-14);
        check_basis(&lap, &basis);
    }

    #[test]
    fn projected_eigenvalues_interlace() {
        let n = 16;
        let hop = lattice_laplacian(LatticeDim::Two, n).unwrap();
        let start = CVector::from_fn(n, |i, _| C64::new((i as f64).sin() + 1.1, 0.0));
        let (full, _) = hermitian_eigh(&hop.to_dense());
        for m in [2, 5, 8] {
            let basis = build_krylov(&hop, &start, m).unwrap();
            check_basis(&hop, &basis);
            let sym = (&basis.projected + basis.projected.adjoint()) * C64::new(0.5, 0.0);
            let (theta, _) = hermitian_eigh(&sym);
            for (i, th) in theta.iter().enumerate() {
                assert!(full[i] - 1e-10 <= *th && *th <= full[i + n - basis.m] + 1e-10);
            }
        }
    }

    #[test]
    fn zero_generators_are_exact_with_one_vector() {
        let n = 8;
        let zero = SparseMatrix::zeros(n);
        let c = lattice_hopping(LatticeDim::One, n, 0.7).unwrap();
        let d = laplacian(n);
        let out = krylov_entry(&zero, &zero, &c, &d, 3, 4, 2.5, 1, 4).unwrap();
        let expected = d.to_dense()[(3, 4)] + c.to_dense()[(3, 4)] * 2.5;
        assert!((out.entry - expected).norm() < 1e-14);
    }

    #[test]
    fn counters_match_closed_form() {
        let n = 40;
        let a = laplacian(n);
        let b = lattice_hopping(LatticeDim::One, n, 0.2).unwrap();
        let c = SparseMatrix::identity(n);
        let d = laplacian(n);
        let (m, rquad) = (6, 9);
        let out = krylov_entry(&a, &b, &c, &d, 20, 21, 1.0, m, rquad).unwrap();
        assert_eq!(out.dims, (m, m));
        let s = out.stats;
        assert_eq!(s.matvecs, 4 * m);
        assert_eq!(s.inner_products, 4 * m * m + 4 * m);
        assert_eq!(s.small_expms, 2 * (rquad + 1));
        assert_eq!(s.matvec_flops, m * (a.nnz() + b.nnz() + c.nnz() + d.nnz()));
        assert_eq!(s.mem_highwater, (2 * m + 1) * n);
    }

    #[test]
    fn lattice_entry_matches_dense_reference() {
        let n = 64;
        let a = laplacian(n);
        let c = SparseMatrix::identity(n);
        let d = laplacian(n);
        let t = 1.5;
        let exact = dense_entry(&a, &a, &c, &d, 30, 32, t).unwrap();
        let out = krylov_entry(&a, &a, &c, &d, 30, 32, t, 24, default_rquad(&a, &a, t)).unwrap();
        assert!((out.entry - exact).norm() < 1e-6, "{}", (out.entry - exact).norm());
    }

    #[test]
    fn error_decreases_with_subspace_dimension() {
        let n = 128;
        let a = laplacian(n);
        let c = SparseMatrix::identity(n);
        let d = SparseMatrix::identity(n);
        let t = 3.0;
        let exact = dense_entry(&a, &a, &c, &d, 64, 64, t).unwrap();
        let mut last = f64::INFINITY;
        for m in [4, 8, 16, 32] {
            let out = krylov_entry(&a, &a, &c, &d, 64, 64, t, m, default_rquad(&a, &a, t)).unwrap();
            let err = (out.entry - exact).norm();
            assert!(err <= last || err < 1e-12, "m {m}: {err} after {last}");
            last = err;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn single_segment_restart_equals_projection() {
        let n = 32;
        let a = lattice_hopping(LatticeDim::One, n, 0.4).unwrap();
        let b = laplacian(n);
        let c = laplacian(n);
        let t = 1.2;
        let restarted = restarted_entry(&a, &b, &c, 10, 12, t, 8, 2.0).unwrap();
        let plain = krylov_entry(&a, &b, &c, &SparseMatrix::zeros(n), 10, 12, t, 8, default_rquad(&a, &b, t)).unwrap();
        assert!((restarted.entry - plain.entry).norm() < 1e-12);
    }

    #[test]
    fn restarted_entry_matches_dense_reference_in_bounded_memory() {
        let n = 128;
        let a = laplacian(n);
        let c = SparseMatrix::identity(n);
        let (t, m_prime) = (4.0, 12);
        let exact = dense_entry(&a, &a, &c, &SparseMatrix::zeros(n), 64, 64, t).unwrap();
        let out = restarted_entry(&a, &a, &c, 64, 64, t, m_prime, 0.25).unwrap();
        assert!((out.entry - exact).norm() < 1e-5, "{}", (out.entry - exact).norm());
        assert!(out.stats.mem_highwater <= 3 * m_prime * n);
    }

    #[test]
    fn matvec_work_scales_linearly() {
        let work = |n: usize| {
            let a = laplacian(n);
            let c = SparseMatrix::identity(n);
            krylov_entry(&a, &a, &c, &SparseMatrix::zeros(n), n / 2, n / 2, 1.0, 12, 12).unwrap().stats.matvec_flops
                as f64
        };
        let (w64, w128, w256) = (work(64), work(128), work(256));
        assert!((w128 / w64 / 2.0 - 1.0).abs() < 0.05);
        assert!((w256 / w128 / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn benchmark_rows_carry_counters() {
        let cfg = BenchConfig { lattice: LatticeDim::One, n: 32, m: 12, m_prime: 6, restart_r: 0.25, t: 1.0 };
        let rows = run_benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].l, 4);
        assert!(rows.iter().all(|r| r.abs_err.unwrap() < 1e-6 && r.matvecs > 0));
    }
}
