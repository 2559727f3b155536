//! Transition matrices of time-dependent generators and the entry pipeline
//! built on them.
//!
//! `W(t, s)` solves `dW/dt = W A(t)` with `W(s, s) = I`, so that
//! `W(tau, s) W(t, tau) = W(t, s)` and
//!
//! ```text
//! X(t) = W_A(t,0)^H D W_B(t,0) + int_0^t W_A(t,s)^H C(s) W_B(t,s) ds.
//! ```
//!
//! On every interval where the generator is linear in time, the truncated
//! Dyson series is a matrix polynomial of degree `2K`. It is computed exactly
//! by Picard iteration on `2K + 2` Gauss-Legendre collocation nodes and kept
//! in Legendre form, so `W` can be evaluated anywhere on a segment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histsolve::{solve_history, BlockLinearSystem, ConditionCertificate, HistoryState, Ordering};
use crate::matcore::{gauss_legendre, identity, invert_dense, spectral_norm, CMatrix, C64};
use crate::problem::{Coefficients, Side, TimeDepProblem};

/// Default Dyson truncation order.
pub const DEFAULT_ORDER: usize = 16;

const MAX_RIEMANN_POINTS: usize = 1 << 20;
const L1_NODES: usize = 16;

fn legendre_all(x: f64, count: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(count);
    for k in 0..count {
        let v = match k {
            0 => 1.0,
            1 => x,
            _ => ((2 * k - 1) as f64 * x * p[k - 1] - (k - 1) as f64 * p[k - 2]) / k as f64,
        };
        p.push(v);
    }
    p
}

/// Collocation data on `[-1, 1]`: nodes, weights, Legendre values and the
/// matrix mapping node values of `f` to node values of `int_{-1}^x f`.
#[derive(Debug, Clone)]
struct Collocation {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    legendre: Vec<Vec<f64>>,
    integrate: Vec<Vec<f64>>,
}

impl Collocation {
    fn new(q: usize) -> Self {
        let rule = gauss_legendre(q);
        let nodes: Vec<f64> = rule.iter().map(|r| r.0).collect();
        let weights: Vec<f64> = rule.iter().map(|r| r.1).collect();
        let legendre: Vec<Vec<f64>> = nodes.iter().map(|&x| legendre_all(x, q + 1)).collect();
        let antiderivative = |i: usize, k: usize| -> f64 {
            let p = &legendre[i];
            if k == 0 {
                nodes[i] + 1.0
            } else {
                (p[k + 1] - p[k - 1]) / (2 * k + 1) as f64
            }
        };
        let integrate = (0..q)
            .map(|i| {
                (0..q)
                    .map(|j| {
                        (0..q)
                            .map(|k| antiderivative(i, k) * (2 * k + 1) as f64 / 2.0 * weights[j] * legendre[j][k])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Collocation { nodes, weights, legendre, integrate }
    }

    fn coefficients(&self, values: &[CMatrix]) -> Vec<CMatrix> {
        let q = self.nodes.len();
        let n = values[0].nrows();
        (0..q)
            .map(|k| {
                let mut c = CMatrix::zeros(n, n);
                for (i, v) in values.iter().enumerate() {
                    c += v * C64::new(self.weights[i] * self.legendre[i][k], 0.0);
                }
                c * C64::new((2 * k + 1) as f64 / 2.0, 0.0)
            })
            .collect()
    }
}

/// One interval of a dense segment: `W(tau, t0) = prefix * poly(tau)`.
#[derive(Debug, Clone)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub prefix: CMatrix,
    pub coeffs: Vec<CMatrix>,
}

impl Piece {
    fn poly(&self, tau: f64) -> CMatrix {
        let len = self.end - self.start;
        let x = if len > 0.0 { (2.0 * (tau - self.start) / len - 1.0).clamp(-1.0, 1.0) } else { -1.0 };
        let p = legendre_all(x, self.coeffs.len());
        let n = self.coeffs[0].nrows();
        let mut out = CMatrix::zeros(n, n);
        for (c, pk) in self.coeffs.iter().zip(p) {
            out += c * C64::new(pk, 0.0);
        }
        out
    }
}

/// `W(tau, t0)` for every `tau` in `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub t1: f64,
    pub n: usize,
    pub pieces: Vec<Piece>,
}

impl DenseSegment {
    /// `W(tau, t0)`; arguments outside the segment are clamped.
    pub fn eval(&self, tau: f64) -> CMatrix {
        if self.pieces.is_empty() || tau <= self.t0 {
            return identity(self.n);
        }
        let idx = self.pieces.partition_point(|p| p.end < tau).min(self.pieces.len() - 1);
        let piece = &self.pieces[idx];
        &piece.prefix * piece.poly(tau)
    }

    /// `W(t1, t0)`.
    pub fn end_value(&self) -> CMatrix {
        self.eval(self.t1)
    }
}

/// Truncated-Dyson transition matrices of one side of a time-dependent problem.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    pub problem: &'a TimeDepProblem,
    pub side: Side,
    pub k: usize,
    pub inner_grid: usize,
    colloc: Collocation,
}

impl<'a> Propagator<'a> {
    /// Propagator with Dyson order `k` and `2k + 2` collocation nodes.
    pub fn new(problem: &'a TimeDepProblem, side: Side, k: usize) -> Self {
        let inner_grid = 2 * k + 2;
        Propagator { problem, side, k, inner_grid, colloc: Collocation::new(inner_grid) }
    }

    fn norm_bound(&self) -> f64 {
        self.problem.bounds.norm(self.side)
    }

    fn piece_bounds(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let mut breaks = vec![t0];
        breaks.extend(self.problem.breakpoints(t0, t1));
        breaks.push(t1);
        let a = self.norm_bound();
        let mut out = Vec::new();
        for w in breaks.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let parts = ((len * a).ceil() as usize).max(1);
            for i in 0..parts {
                let s = w[0] + len * i as f64 / parts as f64;
                let e = if i + 1 == parts { w[1] } else { w[0] + len * (i + 1) as f64 / parts as f64 };
                out.push((s, e));
            }
        }
        out
    }

    fn piece_coeffs(&self, start: f64, end: f64) -> Vec<CMatrix> {
        let n = self.problem.n;
        let half = 0.5 * (end - start);
        let col = &self.colloc;
        let gens: Vec<CMatrix> =
            col.nodes.iter().map(|&x| self.problem.generator_at(self.side, start + (x + 1.0) * half)).collect();
        let q = col.nodes.len();
        let mut term = vec![identity(n); q];
        let mut total = term.clone();
        for _ in 0..self.k {
            let z: Vec<CMatrix> = term.iter().zip(&gens).map(|(t, y)| t * y).collect();
            term = (0..q)
                .map(|i| {
                    let mut acc = CMatrix::zeros(n, n);
                    for (j, zj) in z.iter().enumerate() {
                        acc += zj * C64::new(half * col.integrate[i][j], 0.0);
                    }
                    acc
                })
                .collect();
            for (w, t) in total.iter_mut().zip(&term) {
                *w += t;
            }
        }
        col.coefficients(&total)
    }

    /// Dense representation of `W(tau, t0)` on `[t0, t1]`.
    pub fn segment(&self, t0: f64, t1: f64) -> Result<DenseSegment> {
        let horizon = self.problem.t;
        if !(0.0 <= t0 && t0 <= t1 && t1 <= horizon * (1.0 + 1e-14)) {
            return Err(Error::Domain(format!("interval [{t0}, {t1}] not inside [0, {horizon}]")));
        }
        let bounds = self.piece_bounds(t0, t1);
        let coeffs: Vec<Vec<CMatrix>> = bounds.par_iter().map(|&(s, e)| self.piece_coeffs(s, e)).collect();
        let mut prefix = identity(self.problem.n);
        let mut pieces = Vec::with_capacity(bounds.len());
        for (&(start, end), coeffs) in bounds.iter().zip(coeffs) {
            let piece = Piece { start, end, prefix: prefix.clone(), coeffs };
            prefix = &prefix * piece.poly(end);
            pieces.push(piece);
        }
        Ok(DenseSegment { t0, t1, n: self.problem.n, pieces })
    }

    /// `W(t1, t0)` for `0 <= t0 <= t1 <= t`.
    pub fn propagate(&self, t1: f64, t0: f64) -> Result<CMatrix> {
        Ok(self.segment(t0, t1)?.end_value())
    }

    /// Bound on the distance between the truncated and exact `W(t1, t0)`.
    pub fn remainder_bound(&self, t0: f64, t1: f64) -> f64 {
        let a = self.norm_bound();
        let mut approx = 1.0;
        for (s, e) in self.piece_bounds(t0, t1) {
            let al = a * (e - s);
            approx *= al.exp() + crate::histsolve::taylor_remainder(al, self.k);
        }
        approx - (a * (t1 - t0)).exp()
    }
}

/// Default `M = max(1, ceil(t mu))` and `R = max(1, ceil(mu d / c))`.
pub fn default_steps(p: &TimeDepProblem) -> (usize, usize) {
    let mu = p.bounds.mu();
    let m = ((p.t * mu).ceil() as usize).max(1);
    let r = ((mu * p.bounds.d / p.bounds.c).ceil() as usize).max(1);
    (m, r)
}

fn check_steps(p: &TimeDepProblem, side: Side, m: usize, r: usize) -> Result<f64> {
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
    Ok(h)
}

/// Per-step propagators `W(t_{j+1}, t_j)` and their dense segments.
fn step_segments(prop: &Propagator<'_>, m: usize) -> Result<Vec<DenseSegment>> {
    let h = prop.problem.t / m as f64;
    (0..m)
        .into_par_iter()
        .map(|j| {
            let t1 = if j + 1 == m { prop.problem.t } else { h * (j + 1) as f64 };
            prop.segment(h * j as f64, t1)
        })
        .collect()
}

/// Block system with steppers `V_l = W(t_{M-l+1}, t_{M-l})`, whose solution
/// in standard order holds `W(t, t_{M-n}) x` in block `n`.
pub fn build_system_timedep(p: &TimeDepProblem, side: Side, m: usize, r: usize, k: usize) -> Result<BlockLinearSystem> {
    let h = check_steps(p, side, m, r)?;
    let prop = Propagator::new(p, side, k);
    let steps = step_segments(&prop, m)?;
    let steppers: Vec<CMatrix> = (1..=m).map(|l| steps[m - l].end_value()).collect();
    BlockLinearSystem::from_steppers(steppers, m, r, k, h, p.state(side))
}

/// Index reversal of a standard-order history: blocks `0..R` hold
/// `W(t, 0) x` and block `R + k` holds `W(t, t_{k+1}) x`.
pub fn reverse_history(hist: &HistoryState) -> HistoryState {
    let mut blocks = hist.blocks.clone();
    blocks.reverse();
    HistoryState {
        m: hist.m,
        r: hist.r,
        blocks,
        norm_sq: hist.norm_sq,
        ordering: match hist.ordering {
            Ordering::Standard => Ordering::Reversed,
            Ordering::Reversed => Ordering::Standard,
        },
    }
}

/// Entry estimate of a time-dependent instance with its error accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDepEstimate {
    pub entry: C64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Riemann points per step.
    #[serde(rename = "G")]
    pub g: usize,
    /// Bound on the error of the per-step integrals, weighted by the history norms.
    #[serde(rename = "riemannBound")]
    pub riemann_bound: f64,
    /// Largest per-step Dyson remainder bound over both sides.
    #[serde(rename = "dysonBound")]
    pub dyson_bound: f64,
}

/// `W(t_{m+1}, s) = W(s, t_m)^{-1} W(t_{m+1}, t_m)`.
fn backward(seg: &DenseSegment, s: f64, end: &CMatrix) -> Result<CMatrix> {
    seg.eval(s).lu().solve(end).ok_or(Error::Singular { pivot: 0 })
}

/// Per-step integral `int_0^h W_A(t_{m+1}, t_m + tau)^H C(t_m + tau) W_B(t_{m+1}, t_m + tau) dtau`
/// by the trapezoid rule on `g + 1` equidistant points.
pub fn riemann_ic(p: &TimeDepProblem, seg_a: &DenseSegment, seg_b: &DenseSegment, g: usize) -> Result<CMatrix> {
    let (t0, t1) = (seg_a.t0, seg_a.t1);
    let end_a = seg_a.end_value();
    let end_b = seg_b.end_value();
    let dt = (t1 - t0) / g as f64;
    let values: Vec<CMatrix> = (0..=g)
        .into_par_iter()
        .map(|i| {
            let s = if i == g { t1 } else { t0 + dt * i as f64 };
            let wa = backward(seg_a, s, &end_a)?;
            let wb = backward(seg_b, s, &end_b)?;
            let w = if i == 0 || i == g { 0.5 } else { 1.0 };
            Ok(wa.ad_mul(&(p.c_at(s).into_owned() * wb)) * C64::new(w * dt, 0.0))
        })
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(CMatrix::zeros(p.n, p.n), |acc, v| acc + v))
}

/// Number of Riemann points `ceil(h^2 D / eps_be)` with
/// `D = e^{(a+b)h} ((a+b)c + c')`.
pub fn riemann_points(p: &TimeDepProblem, h: f64, eps_be: f64) -> usize {
    let ab = p.bounds.a + p.bounds.b;
    let deriv = (ab * h).exp() * (ab * p.bounds.c + p.derivs.c);
    ((h * h * deriv / eps_be).ceil() as usize).max(1)
}

/// Estimate `<phi|X(t)|psi>` from reverse-order histories and per-step integrals.
pub fn solve_timedep_entry(p: &TimeDepProblem, m: usize, r: usize, k: usize) -> Result<TimeDepEstimate> {
    let h = check_steps(p, Side::A, m, r)?;
    check_steps(p, Side::B, m, r)?;
    let prop_a = Propagator::new(p, Side::A, k);
    let prop_b = Propagator::new(p, Side::B, k);
    let steps_a = step_segments(&prop_a, m)?;
    let steps_b = step_segments(&prop_b, m)?;
    let history = |steps: &[DenseSegment], side: Side| -> Result<HistoryState> {
        let steppers = (1..=m).map(|l| steps[m - l].end_value()).collect();
        let sys = BlockLinearSystem::from_steppers(steppers, m, r, k, h, p.state(side))?;
        Ok(reverse_history(&solve_history(&sys)?))
    };
    let hist_a = history(&steps_a, Side::A)?;
    let hist_b = history(&steps_b, Side::B)?;

    let max_norm = |h: &HistoryState| h.blocks.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let (na, nb) = (max_norm(&hist_a), max_norm(&hist_b));
    let eps_be = p.eps / (2.0 * m as f64 * na.max(1e-300) * nb.max(1e-300));
    let g = riemann_points(p, h, eps_be);
    if g > MAX_RIEMANN_POINTS {
        return Err(Error::Accuracy { estimate: h * h * eps_be * g as f64 / (2.0 * MAX_RIEMANN_POINTS as f64) });
    }
    let ics: Vec<CMatrix> =
        steps_a.iter().zip(&steps_b).map(|(sa, sb)| riemann_ic(p, sa, sb, g)).collect::<Result<_>>()?;

    let pad = &p.d * C64::new(1.0 / r as f64, 0.0);
    let mut entry = C64::new(0.0, 0.0);
    for i in 0..r {
        entry += hist_a.blocks[i].dotc(&(&pad * &hist_b.blocks[i]));
    }
    for (kk, ic) in ics.iter().enumerate() {
        entry += hist_a.blocks[r + kk].dotc(&(ic * &hist_b.blocks[r + kk]));
    }

    let ab = p.bounds.a + p.bounds.b;
    let deriv = (ab * h).exp() * (ab * p.bounds.c + p.derivs.c);
    let per_step = h * h * deriv / (2.0 * g as f64);
    let riemann_bound = (0..m).map(|kk| per_step * hist_a.blocks[r + kk].norm() * hist_b.blocks[r + kk].norm()).sum();
    let dyson_bound = (0..m)
        .map(|j| {
            let (s, e) = (h * j as f64, if j + 1 == m { p.t } else { h * (j + 1) as f64 });
            prop_a.remainder_bound(s, e).max(prop_b.remainder_bound(s, e))
        })
        .fold(0.0, f64::max);
    Ok(TimeDepEstimate { entry, m, r, k, g, riemann_bound, dyson_bound })
}

/// Certificate for the time-dependent system of one side, compared with
///
/// ```text
/// 1 + e^{ah} (M/t) ||W||_{L1} + R max(1, max_j ||W(t_j, 0)||) + (M + R) eps_trunc,
/// ```
///
/// where the `L1` functional is maximized over the clock grid.
pub fn certify_condition_timedep(
    p: &TimeDepProblem,
    side: Side,
    m: usize,
    r: usize,
    k: usize,
) -> Result<ConditionCertificate> {
    let sys = build_system_timedep(p, side, m, r, k)?;
    let assembled =
        sys.assembled.as_ref().ok_or_else(|| Error::Precondition("dimension exceeds the dense cap".into()))?;
    let inv = invert_dense(assembled)?;
    let (n, l) = (sys.n, sys.blocks());
    let norms: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| (0..l).map(|j| spectral_norm(&inv.view((i * n, j * n), (n, n)).into_owned())).collect())
        .collect();
    let row_sum_bound = norms.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let col_sum_bound = (0..l).map(|j| norms.iter().map(|r| r[j]).sum::<f64>()).fold(0.0, f64::max);
    let norm_a = spectral_norm(assembled);
    let norm_ainv = spectral_norm(&inv);

    let h = sys.h;
    let prop = Propagator::new(p, side, k);
    let seg = prop.segment(0.0, p.t)?;
    let grid: Vec<f64> = (0..=m).map(|j| if j == m { p.t } else { h * j as f64 }).collect();
    let w_grid: Vec<CMatrix> = grid.iter().map(|&s| seg.eval(s)).collect();
    let w_grid_inv: Vec<CMatrix> = w_grid.iter().map(invert_dense).collect::<Result<_>>()?;

    let rule = gauss_legendre(L1_NODES);
    let nodes: Vec<(usize, f64, f64)> = (0..m)
        .flat_map(|j| {
            let (a, b) = (grid[j], grid[j + 1]);
            rule.iter()
                .map(move |&(x, w)| (j, 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w))
                .collect::<Vec<_>>()
        })
        .collect();
    let w_nodes: Vec<CMatrix> = nodes.par_iter().map(|&(_, s, _)| seg.eval(s)).collect();
    let w_nodes_inv: Vec<CMatrix> = w_nodes.iter().map(invert_dense).collect::<Result<_>>()?;

    let mut l1 = 0.0f64;
    for j in 0..=m {
        let mut before = 0.0;
        let mut after = 0.0;
        for (idx, &(cell, _, w)) in nodes.iter().enumerate() {
            if cell < j {
                before += w * spectral_norm(&(&w_nodes_inv[idx] * &w_grid[j]));
            } else {
                after += w * spectral_norm(&(&w_grid_inv[j] * &w_nodes[idx]));
            }
        }
        l1 = l1.max(before).max(after);
    }
    let max_from_zero = w_grid.iter().map(spectral_norm).fold(1.0, f64::max);
    let mut max_pair = 1.0f64;
    for (i, inv_i) in w_grid_inv.iter().enumerate() {
        for w_j in &w_grid[i..] {
            max_pair = max_pair.max(spectral_norm(&(inv_i * w_j)));
        }
    }
    let a = p.bounds.norm(side);
    let delta = (0..m).map(|j| prop.remainder_bound(grid[j], grid[j + 1])).fold(0.0, f64::max);
    let mf = m as f64;
    let eps_trunc = max_pair * delta * mf * (delta * mf).exp();
    let inverse_bound = 1.0 + (a * h).exp() * mf / p.t * l1 + r as f64 * max_from_zero + l as f64 * eps_trunc;
    let pass = norm_ainv <= inverse_bound && norm_a <= 1.0 + std::f64::consts::E + delta;
    Ok(ConditionCertificate {
        m,
        r,
        k,
        norm_a,
        norm_ainv,
        kappa: norm_a * norm_ainv,
        row_sum_bound,
        col_sum_bound,
        inverse_bound,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histsolve::default_order;
    use crate::matcore::{expm, max_abs};
    use crate::oracle::solve_ode;
    use crate::overlap::{estimate_entry, Route};
    use crate::problem::{make_envelope_instance, make_random_instance, LogNormSign};

    fn scalar_envelope(n: usize, seed: u64, j: usize, t: f64) -> (TimeDepProblem, CMatrix, Vec<f64>) {
        let base = make_random_instance(n, seed, LogNormSign::Positive).unwrap().with_time(t);
        let mut p = TimeDepProblem::from_static(&base, j).unwrap();
        let f: Vec<f64> = (0..j).map(|i| 0.5 + 0.5 * (3.0 * i as f64 / j as f64).sin().abs()).collect();
        p.a_seq = f.iter().map(|&x| &base.a * C64::new(x, 0.0)).collect();
        p.xi_a_fun = f.iter().map(|&x| crate::problem::round_up_3sig(x * base.bounds.xi_a)).collect();
        p.validate().unwrap();
        (p, base.a, f)
    }

    #[test]
    fn legendre_integration_matrix_is_exact_for_polynomials() {
        let col = Collocation::new(6);
        for deg in 0..6 {
            for (i, &x) in col.nodes.iter().enumerate() {
                let approx: f64 = (0..6).map(|j| col.integrate[i][j] * col.nodes[j].powi(deg)).sum();
                let exact = (x.powi(deg + 1) - (-1f64).powi(deg + 1)) / (deg + 1) as f64;
                assert!((approx - exact).abs() < 1e-13, "deg {deg}");
            }
        }
    }

    #[test]
    fn coincident_times_give_identity() {
        let p = make_envelope_instance(3, 1, 5, 2.0).unwrap();
        let prop = Propagator::new(&p, Side::A, 8);
        for s in [0.0, 0.7, 2.0] {
            assert!(max_abs(&(prop.propagate(s, s).unwrap() - identity(3))) < 1e-12);
        }
        let seg = prop.segment(0.3, 1.4).unwrap();
        assert!(max_abs(&(seg.eval(0.3) - identity(3))) < 1e-12);
    }

    #[test]
    fn constant_generator_reduces_to_expm() {
        let base = make_random_instance(4, 2, LogNormSign::Positive).unwrap().with_time(3.0);
        let p = TimeDepProblem::from_static(&base, 4).unwrap();
        for k in [6, 10, 16] {
            let prop = Propagator::new(&p, Side::B, k);
            let w = prop.propagate(2.5, 0.25).unwrap();
            let e = expm(&(&base.b * C64::new(2.25, 0.0)), 1e-14).unwrap();
            let gap = spectral_norm(&(w - e));
            assert!(gap <= prop.remainder_bound(0.25, 2.5) + 1e-12, "K {k}: {gap}");
        }
    }

    #[test]
    fn commuting_envelope_matches_integral() {
        let (p, a0, f) = scalar_envelope(3, 4, 7, 2.0);
        let dt = p.t / (p.grid_j - 1) as f64;
        let integral: f64 = f.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
        let prop = Propagator::new(&p, Side::A, DEFAULT_ORDER);
        let w = prop.propagate(p.t, 0.0).unwrap();
        let e = expm(&(a0 * C64::new(integral, 0.0)), 1e-14).unwrap();
        assert!(max_abs(&(w - e)) < 1e-11);
    }

    #[test]
    fn composition_rule() {
        for seed in 0..4u64 {
            let p = make_envelope_instance(4, seed, 6, 3.0).unwrap();
            let prop = Propagator::new(&p, Side::A, DEFAULT_ORDER);
            let (s, tau, t) = (0.2, 1.35, 2.9);
            let lhs = prop.propagate(tau, s).unwrap() * prop.propagate(t, tau).unwrap();
            let rhs = prop.propagate(t, s).unwrap();
            assert!(max_abs(&(lhs - rhs)) < 1e-7);
        }
    }

    #[test]
    fn satisfies_right_multiplication_ode() {
        let p = make_envelope_instance(4, 9, 5, 2.0).unwrap();
        let prop = Propagator::new(&p, Side::B, DEFAULT_ORDER);
        let seg = prop.segment(0.1, 1.9).unwrap();
        let step = 1e-5;
        for t1 in [0.33, 0.77, 1.61] {
            let fd = (seg.eval(t1 + step) - seg.eval(t1 - step)) * C64::new(0.5 / step, 0.0);
            let w = seg.eval(t1);
            let exact = &w * p.generator_at(Side::B, t1);
            assert!(max_abs(&(fd - exact)) <= 1e-4 * p.bounds.b * spectral_norm(&w));
        }
    }

    #[test]
    fn reverse_history_holds_backward_propagators() {
        let p = make_envelope_instance(3, 5, 5, 2.0).unwrap();
        let (m, r) = default_steps(&p);
        let sys = build_system_timedep(&p, Side::A, m, r, DEFAULT_ORDER).unwrap();
        let hist = reverse_history(&solve_history(&sys).unwrap());
        assert_eq!(hist.ordering, Ordering::Reversed);
        let prop = Propagator::new(&p, Side::A, DEFAULT_ORDER);
        let h = p.t / m as f64;
        for i in 0..r {
            let exact = prop.propagate(p.t, 0.0).unwrap() * &p.phi;
            assert!((&hist.blocks[i] - exact).norm() < 1e-10);
        }
        for kk in 0..m {
            let exact = prop.propagate(p.t, h * (kk + 1) as f64).unwrap() * &p.phi;
            assert!((&hist.blocks[r + kk] - exact).norm() < 1e-10);
        }
    }

    #[test]
    fn riemann_rule_meets_its_share() {
        let p = make_envelope_instance(3, 6, 5, 2.0).unwrap();
        let (m, _) = default_steps(&p);
        let h = p.t / m as f64;
        let pa = Propagator::new(&p, Side::A, DEFAULT_ORDER);
        let pb = Propagator::new(&p, Side::B, DEFAULT_ORDER);
        let (sa, sb) = (pa.segment(h, 2.0 * h).unwrap(), pb.segment(h, 2.0 * h).unwrap());
        let eps_be = 1e-4;
        let g = riemann_points(&p, h, eps_be);
        let approx = riemann_ic(&p, &sa, &sb, g).unwrap();
        let (ea, eb) = (sa.end_value(), sb.end_value());
        let reference = crate::matcore::quad_integrate(
            |s| {
                let wa = backward(&sa, s, &ea).unwrap();
                let wb = backward(&sb, s, &eb).unwrap();
                wa.ad_mul(&(p.c_at(s).into_owned() * wb))
            },
            h,
            2.0 * h,
            1e-12,
        )
        .unwrap();
        assert!(spectral_norm(&(approx - reference)) <= eps_be / 2.0);
    }

    #[test]
    fn zero_generators_and_identity_initial_state() {
        let mut p = make_envelope_instance(3, 7, 4, 1.0).unwrap();
        for seq in [&mut p.a_seq, &mut p.b_seq, &mut p.c_seq] {
            for m in seq.iter_mut() {
                *m = CMatrix::zeros(3, 3);
            }
        }
        p.d = identity(3);
        p.bounds.d = 1.0;
        let est = solve_timedep_entry(&p, 2, 1, 8).unwrap();
        assert!((est.entry - p.phi.dotc(&p.psi)).norm() < 1e-13);
    }

    #[test]
    fn time_independent_samples_match_static_pipeline() {
        let mut base = make_random_instance(3, 11, LogNormSign::Negative).unwrap().with_time(2.0);
        base.eps = 1e-3;
        let mut p = TimeDepProblem::from_static(&base, 3).unwrap();
        p.eps = 1e-3;
        let (m, r) = default_steps(&p);
        let k = default_order(base.bounds.c, base.t / m as f64, 1e-12, m, r);
        let td = solve_timedep_entry(&p, m, r, DEFAULT_ORDER).unwrap();
        let st = estimate_entry(&base, m, r, k, Route::Lchs).unwrap();
        assert!((td.entry - st.entry).norm() < 1e-7, "{}", (td.entry - st.entry).norm());
    }

    #[test]
    fn envelope_entry_matches_ode() {
        for seed in 0..3u64 {
            let p = make_envelope_instance(4, 20 + seed, 6, 2.0).unwrap();
            let (m, r) = default_steps(&p);
            let est = solve_timedep_entry(&p, m, r, DEFAULT_ORDER).unwrap();
            let truth = solve_ode(&p, 1e-11).unwrap().entry;
            let err = (est.entry - truth).norm();
            assert!(err <= p.eps, "seed {seed}: {err}");
            assert!(err <= est.riemann_bound + 1e-8);
        }
    }

    #[test]
    fn certificates_pass_on_envelopes() {
        for seed in 0..3u64 {
            let p = make_envelope_instance(3, 30 + seed, 5, 2.0).unwrap();
            let (m, r) = default_steps(&p);
            for side in [Side::A, Side::B] {
                let cert = certify_condition_timedep(&p, side, m, r, DEFAULT_ORDER).unwrap();
                assert!(cert.pass, "seed {seed} {side:?}: {cert:?}");
                assert!(cert.norm_ainv <= (cert.row_sum_bound * cert.col_sum_bound).sqrt() + 1e-9);
            }
        }
    }

    #[test]
    fn step_rule_is_enforced() {
        let p = make_envelope_instance(3, 1, 5, 4.0).unwrap();
        assert!(matches!(solve_timedep_entry(&p, 1, 1, 8), Err(Error::Precondition(_))));
    }
}
