//! Problem instances of the matrix differential equation, instance
//! generators and the JSON interchange format.

use std::borrow::Cow;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{basis, identity, log_norm, spectral_norm, CMatrix, CVector, C64};

const NORM_SLACK: f64 = 1e-10;

/// Which generator/state pair of the problem a construction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// The pair `(A, phi)`.
    A,
    /// The pair `(B, psi)`.
    B,
}

/// Norm and log-norm upper bounds supplied with an instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    #[serde(rename = "xiA")]
    pub xi_a: f64,
    #[serde(rename = "xiB")]
    pub xi_b: f64,
}

impl Bounds {
    /// Norm bound of the generator on `side`.
    pub fn norm(&self, side: Side) -> f64 {
        match side {
            Side::A => self.a,
            Side::B => self.b,
        }
    }

    /// Log-norm bound of the generator on `side`.
    pub fn xi(&self, side: Side) -> f64 {
        match side {
            Side::A => self.xi_a,
            Side::B => self.xi_b,
        }
    }

    /// `max(a, b)`.
    pub fn mu(&self) -> f64 {
        self.a.max(self.b)
    }

    fn validate_scalars(&self) -> Result<()> {
        for (field, v) in [("bounds.a", self.a), ("bounds.b", self.b), ("bounds.c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::validation("bounds.d", format!("must be nonnegative, got {}", self.d)));
        }
        for (field, v) in [("bounds.xiA", self.xi_a), ("bounds.xiB", self.xi_b)] {
            if !v.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Upper bounds on the time derivatives of the time-dependent coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivs {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Sign class of the log-norm for random instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogNormSign {
    Negative,
    Zero,
    Positive,
}

impl LogNormSign {
    pub const ALL: [LogNormSign; 3] = [LogNormSign::Negative, LogNormSign::Zero, LogNormSign::Positive];
}

/// One time-independent instance: evolve `X(0) = D` under
/// `dX/dt = A^H X + X B + C` up to time `t` and report `<phi|X(t)|psi>`
/// within `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOdeProblem {
    pub n: usize,
    pub a: CMatrix,
    pub b: CMatrix,
    pub c: CMatrix,
    pub d: CMatrix,
    pub t: f64,
    pub eps: f64,
    pub phi: CVector,
    pub psi: CVector,
    pub bounds: Bounds,
}

/// One time-dependent instance given by uniform samples of `A(s)`, `B(s)` and
/// `C(s)` on `tau_j = j t / (J - 1)`, interpolated piecewise linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDepProblem {
    pub n: usize,
    pub grid_j: usize,
    pub a_seq: Vec<CMatrix>,
    pub b_seq: Vec<CMatrix>,
    pub c_seq: Vec<CMatrix>,
    pub d: CMatrix,
    pub t: f64,
    pub eps: f64,
    pub phi: CVector,
    pub psi: CVector,
    pub bounds: Bounds,
    pub xi_a_fun: Vec<f64>,
    pub xi_b_fun: Vec<f64>,
    pub derivs: Derivs,
}

/// Either kind of instance, as read from a problem file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyProblem {
    Static(MatrixOdeProblem),
    TimeDep(TimeDepProblem),
}

/// Coefficient access shared by the static and time-dependent models.
pub trait Coefficients: Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn a_at(&self, s: f64) -> Cow<'_, CMatrix>;
    fn b_at(&self, s: f64) -> Cow<'_, CMatrix>;
    fn c_at(&self, s: f64) -> Cow<'_, CMatrix>;
    fn initial(&self) -> &CMatrix;
    fn phi(&self) -> &CVector;
    fn psi(&self) -> &CVector;
    /// Times in `(0, horizon)` where the coefficients lose smoothness.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

fn check_square(m: &CMatrix, n: usize, field: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::validation(field, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    if !crate::matcore::all_finite(m) {
        return Err(Error::validation(field, "contains non-finite entries"));
    }
    Ok(())
}

fn check_norm(m: &CMatrix, bound: f64, field: &str) -> Result<()> {
    let v = spectral_norm(m);
    if v > bound * (1.0 + NORM_SLACK) + 1e-14 {
        return Err(Error::validation(field, format!("norm {v} exceeds its bound {bound}")));
    }
    Ok(())
}

fn check_log_norm(m: &CMatrix, bound: f64, field: &str) -> Result<()> {
    let v = log_norm(m);
    if v > bound + NORM_SLACK * (1.0 + bound.abs()) {
        return Err(Error::validation(field, format!("log-norm {v} exceeds its bound {bound}")));
    }
    Ok(())
}

fn check_unit(v: &CVector, n: usize, field: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::validation(field, format!("expected length {n}, got {}", v.len())));
    }
    if (v.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::validation(field, format!("must be a unit vector, norm is {}", v.norm())));
    }
    Ok(())
}

fn check_scalars(t: f64, eps: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::validation("t", format!("must be nonnegative and finite, got {t}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::validation("eps", format!("must be positive, got {eps}")));
    }
    Ok(())
}

/// Round `x` up to three significant figures.
pub fn round_up_3sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let unit = 10f64.powi(x.abs().log10().floor() as i32 - 2);
    let r = (x / unit).ceil() * unit;
    if r < x {
        r + unit
    } else {
        r
    }
}

impl MatrixOdeProblem {
    /// Check every documented invariant; bounds are re-verified rather than trusted.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("n", "must be positive"));
        }
        check_scalars(self.t, self.eps)?;
        self.bounds.validate_scalars()?;
        for (m, field) in [(&self.a, "A"), (&self.b, "B"), (&self.c, "C"), (&self.d, "D")] {
            check_square(m, self.n, field)?;
        }
        check_norm(&self.a, self.bounds.a, "A")?;
        check_norm(&self.b, self.bounds.b, "B")?;
        check_norm(&self.c, self.bounds.c, "C")?;
        check_norm(&self.d, self.bounds.d, "D")?;
        check_log_norm(&self.a, self.bounds.xi_a, "A")?;
        check_log_norm(&self.b, self.bounds.xi_b, "B")?;
        check_unit(&self.phi, self.n, "phi")?;
        check_unit(&self.psi, self.n, "psi")?;
        Ok(())
    }

    /// The generator on `side`.
    pub fn generator(&self, side: Side) -> &CMatrix {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    /// The state on `side`.
    pub fn state(&self, side: Side) -> &CVector {
        match side {
            Side::A => &self.phi,
            Side::B => &self.psi,
        }
    }

    /// `max(a, b)`.
    pub fn mu(&self) -> f64 {
        self.bounds.mu()
    }

    /// Same instance with a different evolution time.
    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Same instance with a different error target.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }
}

impl Coefficients for MatrixOdeProblem {
    fn dim(&self) -> usize {
        self.n
    }
    fn horizon(&self) -> f64 {
        self.t
    }
    fn a_at(&self, _s: f64) -> Cow<'_, CMatrix> {
        Cow::Borrowed(&self.a)
    }
    fn b_at(&self, _s: f64) -> Cow<'_, CMatrix> {
        Cow::Borrowed(&self.b)
    }
    fn c_at(&self, _s: f64) -> Cow<'_, CMatrix> {
        Cow::Borrowed(&self.c)
    }
    fn initial(&self) -> &CMatrix {
        &self.d
    }
    fn phi(&self) -> &CVector {
        &self.phi
    }
    fn psi(&self) -> &CVector {
        &self.psi
    }
}

impl TimeDepProblem {
    /// Check every documented invariant at every grid sample.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("n", "must be positive"));
        }
        if self.grid_j < 2 {
            return Err(Error::validation("gridJ", "must be at least 2"));
        }
        check_scalars(self.t, self.eps)?;
        self.bounds.validate_scalars()?;
        for (seq, field) in [(&self.a_seq, "Aseq"), (&self.b_seq, "Bseq"), (&self.c_seq, "Cseq")] {
            if seq.len() != self.grid_j {
                return Err(Error::validation(field, format!("expected {} samples, got {}", self.grid_j, seq.len())));
            }
        }
        for (fun, field) in [(&self.xi_a_fun, "xiAfun"), (&self.xi_b_fun, "xiBfun")] {
            if fun.len() != self.grid_j {
                return Err(Error::validation(field, format!("expected {} values, got {}", self.grid_j, fun.len())));
            }
        }
        for j in 0..self.grid_j {
            check_square(&self.a_seq[j], self.n, "Aseq")?;
            check_square(&self.b_seq[j], self.n, "Bseq")?;
            check_square(&self.c_seq[j], self.n, "Cseq")?;
            check_norm(&self.a_seq[j], self.bounds.a, "Aseq")?;
            check_norm(&self.b_seq[j], self.bounds.b, "Bseq")?;
            check_norm(&self.c_seq[j], self.bounds.c, "Cseq")?;
            check_log_norm(&self.a_seq[j], self.xi_a_fun[j], "xiAfun")?;
            check_log_norm(&self.b_seq[j], self.xi_b_fun[j], "xiBfun")?;
        }
        check_square(&self.d, self.n, "D")?;
        check_norm(&self.d, self.bounds.d, "D")?;
        for (v, field) in [(self.derivs.a, "derivs.A"), (self.derivs.b, "derivs.B"), (self.derivs.c, "derivs.C")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(field, "must be nonnegative and finite"));
            }
        }
        check_unit(&self.phi, self.n, "phi")?;
        check_unit(&self.psi, self.n, "psi")?;
        Ok(())
    }

    /// Grid time `tau_j`.
    pub fn grid_time(&self, j: usize) -> f64 {
        self.t * j as f64 / (self.grid_j - 1) as f64
    }

    /// Grid times strictly inside `(t0, t1)`.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        (0..self.grid_j).map(|j| self.grid_time(j)).filter(|&s| s > t0 && s < t1).collect()
    }

    fn interpolate(&self, seq: &[CMatrix], s: f64) -> CMatrix {
        if self.t == 0.0 {
            return seq[0].clone();
        }
        let x = (s / self.t).clamp(0.0, 1.0) * (self.grid_j - 1) as f64;
        let j = (x.floor() as usize).min(self.grid_j - 2);
        let w = x - j as f64;
        &seq[j] * C64::new(1.0 - w, 0.0) + &seq[j + 1] * C64::new(w, 0.0)
    }

    /// Generator sequence on `side`.
    pub fn sequence(&self, side: Side) -> &[CMatrix] {
        match side {
            Side::A => &self.a_seq,
            Side::B => &self.b_seq,
        }
    }

    /// Interpolated generator on `side` at time `s`.
    pub fn generator_at(&self, side: Side, s: f64) -> CMatrix {
        self.interpolate(self.sequence(side), s)
    }

    /// Derivative bound of the generator on `side`.
    pub fn deriv(&self, side: Side) -> f64 {
        match side {
            Side::A => self.derivs.a,
            Side::B => self.derivs.b,
        }
    }

    /// State on `side`.
    pub fn state(&self, side: Side) -> &CVector {
        match side {
            Side::A => &self.phi,
            Side::B => &self.psi,
        }
    }

    /// Time-dependent instance whose samples are all equal to a static one.
    pub fn from_static(p: &MatrixOdeProblem, grid_j: usize) -> Result<Self> {
        let out = TimeDepProblem {
            n: p.n,
            grid_j,
            a_seq: vec![p.a.clone(); grid_j],
            b_seq: vec![p.b.clone(); grid_j],
            c_seq: vec![p.c.clone(); grid_j],
            d: p.d.clone(),
            t: p.t,
            eps: p.eps,
            phi: p.phi.clone(),
            psi: p.psi.clone(),
            bounds: p.bounds,
            xi_a_fun: vec![p.bounds.xi_a; grid_j],
            xi_b_fun: vec![p.bounds.xi_b; grid_j],
            derivs: Derivs { a: 0.0, b: 0.0, c: 0.0 },
        };
        out.validate()?;
        Ok(out)
    }
}

impl Coefficients for TimeDepProblem {
    fn dim(&self) -> usize {
        self.n
    }
    fn horizon(&self) -> f64 {
        self.t
    }
    fn a_at(&self, s: f64) -> Cow<'_, CMatrix> {
        Cow::Owned(self.interpolate(&self.a_seq, s))
    }
    fn b_at(&self, s: f64) -> Cow<'_, CMatrix> {
        Cow::Owned(self.interpolate(&self.b_seq, s))
    }
    fn c_at(&self, s: f64) -> Cow<'_, CMatrix> {
        Cow::Owned(self.interpolate(&self.c_seq, s))
    }
    fn initial(&self) -> &CMatrix {
        &self.d
    }
    fn phi(&self) -> &CVector {
        &self.phi
    }
    fn psi(&self) -> &CVector {
        &self.psi
    }
    fn kinks(&self) -> Vec<f64> {
        self.breakpoints(0.0, self.t)
    }
}

/// Instance family `A = -sin(theta)|0><0| - sum_{n>0} |n><n|`, `B = D = 0`,
/// `C = I`, `phi = psi = |0>`.
pub fn make_lower_bound_instance(n: usize, theta: f64, t: f64) -> Result<MatrixOdeProblem> {
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if !(theta > 0.0 && theta <= FRAC_PI_2) {
        return Err(Error::Domain(format!("theta = {theta} not in (0, pi/2]")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    let s = theta.sin();
    let mut a = -identity(n);
    a[(0, 0)] = C64::new(-s, 0.0);
    let p = MatrixOdeProblem {
        n,
        a,
        b: CMatrix::zeros(n, n),
        c: identity(n),
        d: CMatrix::zeros(n, n),
        t,
        eps: 1e-8,
        phi: basis(n, 0),
        psi: basis(n, 0),
        bounds: Bounds { a: 1.0, b: 1.0, c: 1.0, d: 0.0, xi_a: -s, xi_b: 0.0 },
    };
    p.validate()?;
    Ok(p)
}

fn ginibre(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    let sd = scale / (2.0 * n as f64).sqrt();
    CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * sd, im * sd)
    })
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    let v = CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

fn shaped_generator(rng: &mut ChaCha8Rng, n: usize, sign: LogNormSign) -> CMatrix {
    let g = ginibre(rng, n, 1.0);
    match sign {
        LogNormSign::Zero => (&g - g.adjoint()) * C64::new(0.5, 0.0),
        LogNormSign::Negative => {
            let shift = log_norm(&g) + 0.25;
            g - identity(n) * C64::new(shift, 0.0)
        }
        LogNormSign::Positive => {
            let shift = log_norm(&g) - 0.25;
            g - identity(n) * C64::new(shift, 0.0)
        }
    }
}

/// Seeded random instance with `t = 1` and `eps = 1e-6`.
///
/// The generators have log-norm `-1/4`, `0` or `+1/4` according to `sign`
/// and all bounds are the measured quantities rounded up to three
/// significant figures.
pub fn make_random_instance(n: usize, seed: u64, sign: LogNormSign) -> Result<MatrixOdeProblem> {
    if n == 0 || n > 256 {
        return Err(Error::Domain(format!("dimension {n} not in 1..=256")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = shaped_generator(&mut rng, n, sign);
    let b = shaped_generator(&mut rng, n, sign);
    let c = ginibre(&mut rng, n, 1.0);
    let d = ginibre(&mut rng, n, 1.0);
    let phi = unit_vector(&mut rng, n);
    let psi = unit_vector(&mut rng, n);
    let xi = |m: &CMatrix| match sign {
        LogNormSign::Zero => 0.0,
        _ => round_up_3sig(log_norm(m)),
    };
    let bounds = Bounds {
        a: round_up_3sig(spectral_norm(&a)),
        b: round_up_3sig(spectral_norm(&b)),
        c: round_up_3sig(spectral_norm(&c)),
        d: round_up_3sig(spectral_norm(&d)),
        xi_a: xi(&a),
        xi_b: xi(&b),
    };
    let p = MatrixOdeProblem { n, a, b, c, d, t: 1.0, eps: 1e-6, phi, psi, bounds };
    p.validate()?;
    Ok(p)
}

/// Seeded time-dependent instance `A(s) = A_0 + sin(2 pi s / t) A_1`,
/// `B(s) = B_0 + sin(2 pi s / t + 1) B_1`, `C(s) = C_0 + cos(2 pi s / t) C_1`
/// sampled on `grid_j` points, with contractive `A_0`, `B_0` and bounds
/// measured per sample and rounded up to three significant figures.
pub fn make_envelope_instance(n: usize, seed: u64, grid_j: usize, t: f64) -> Result<TimeDepProblem> {
    if n == 0 || n > 256 {
        return Err(Error::Domain(format!("dimension {n} not in 1..=256")));
    }
    if grid_j < 2 || !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain("need gridJ >= 2 and t > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a0 = shaped_generator(&mut rng, n, LogNormSign::Negative);
    let a1 = ginibre(&mut rng, n, 0.5);
    let b0 = shaped_generator(&mut rng, n, LogNormSign::Negative);
    let b1 = ginibre(&mut rng, n, 0.5);
    let c0 = ginibre(&mut rng, n, 1.0);
    let c1 = ginibre(&mut rng, n, 0.5);
    let d = ginibre(&mut rng, n, 1.0);
    let phi = unit_vector(&mut rng, n);
    let psi = unit_vector(&mut rng, n);
    let omega = 2.0 * std::f64::consts::PI / t;
    let times: Vec<f64> = (0..grid_j).map(|j| t * j as f64 / (grid_j - 1) as f64).collect();
    let sample = |m0: &CMatrix, m1: &CMatrix, f: &dyn Fn(f64) -> f64| -> Vec<CMatrix> {
        times.iter().map(|&s| m0 + m1 * C64::new(f(s), 0.0)).collect()
    };
    let a_seq = sample(&a0, &a1, &|s| (omega * s).sin());
    let b_seq = sample(&b0, &b1, &|s| (omega * s + 1.0).sin());
    let c_seq = sample(&c0, &c1, &|s| (omega * s).cos());
    let max_norm = |seq: &[CMatrix]| round_up_3sig(seq.iter().map(spectral_norm).fold(0.0, f64::max));
    let slope = |seq: &[CMatrix]| {
        let dt = t / (grid_j - 1) as f64;
        round_up_3sig(seq.windows(2).map(|w| spectral_norm(&(&w[1] - &w[0])) / dt).fold(0.0, f64::max))
    };
    let xi_fun = |seq: &[CMatrix]| -> Vec<f64> { seq.iter().map(|m| round_up_3sig(log_norm(m))).collect() };
    let xi_a_fun = xi_fun(&a_seq);
    let xi_b_fun = xi_fun(&b_seq);
    let bounds = Bounds {
        a: max_norm(&a_seq),
        b: max_norm(&b_seq),
        c: max_norm(&c_seq),
        d: round_up_3sig(spectral_norm(&d)),
        xi_a: xi_a_fun.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        xi_b: xi_b_fun.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let derivs = Derivs { a: slope(&a_seq), b: slope(&b_seq), c: slope(&c_seq) };
    let p = TimeDepProblem {
        n,
        grid_j,
        a_seq,
        b_seq,
        c_seq,
        d,
        t,
        eps: 1e-3,
        phi,
        psi,
        bounds,
        xi_a_fun,
        xi_b_fun,
        derivs,
    };
    p.validate()?;
    Ok(p)
}

type JsonMatrix = Vec<Vec<[f64; 2]>>;
type JsonVector = Vec<[f64; 2]>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Static,
    Timedep,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    kind: Kind,
    n: usize,
    t: f64,
    eps: f64,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<JsonMatrix>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<JsonMatrix>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    c: Option<JsonMatrix>,
    #[serde(rename = "D")]
    d: JsonMatrix,
    phi: JsonVector,
    psi: JsonVector,
    bounds: Bounds,
    #[serde(rename = "gridJ", default, skip_serializing_if = "Option::is_none")]
    grid_j: Option<usize>,
    #[serde(rename = "Aseq", default, skip_serializing_if = "Option::is_none")]
    a_seq: Option<Vec<JsonMatrix>>,
    #[serde(rename = "Bseq", default, skip_serializing_if = "Option::is_none")]
    b_seq: Option<Vec<JsonMatrix>>,
    #[serde(rename = "Cseq", default, skip_serializing_if = "Option::is_none")]
    c_seq: Option<Vec<JsonMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    derivs: Option<Derivs>,
    #[serde(rename = "xiAfun", default, skip_serializing_if = "Option::is_none")]
    xi_a_fun: Option<Vec<f64>>,
    #[serde(rename = "xiBfun", default, skip_serializing_if = "Option::is_none")]
    xi_b_fun: Option<Vec<f64>>,
}

fn matrix_to_json(m: &CMatrix) -> JsonMatrix {
    m.row_iter().map(|row| row.iter().map(|z| [z.re, z.im]).collect()).collect()
}

fn vector_to_json(v: &CVector) -> JsonVector {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn matrix_from_json(rows: &JsonMatrix, n: usize, field: &str) -> Result<CMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::validation(field, format!("expected a {n}x{n} nested array")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

fn vector_from_json(v: &JsonVector, n: usize, field: &str) -> Result<CVector> {
    if v.len() != n {
        return Err(Error::validation(field, format!("expected length {n}, got {}", v.len())));
    }
    Ok(CVector::from_fn(n, |i, _| C64::new(v[i][0], v[i][1])))
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::validation(field, "missing"))
}

fn sequence_from_json(seq: Option<Vec<JsonMatrix>>, n: usize, field: &str) -> Result<Vec<CMatrix>> {
    required(seq, field)?.iter().map(|m| matrix_from_json(m, n, field)).collect()
}

impl AnyProblem {
    /// Serialize to the JSON interchange format.
    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            AnyProblem::Static(p) => ProblemFile {
                kind: Kind::Static,
                n: p.n,
                t: p.t,
                eps: p.eps,
                a: Some(matrix_to_json(&p.a)),
                b: Some(matrix_to_json(&p.b)),
                c: Some(matrix_to_json(&p.c)),
                d: matrix_to_json(&p.d),
                phi: vector_to_json(&p.phi),
                psi: vector_to_json(&p.psi),
                bounds: p.bounds,
                grid_j: None,
                a_seq: None,
                b_seq: None,
                c_seq: None,
                derivs: None,
                xi_a_fun: None,
                xi_b_fun: None,
            },
            AnyProblem::TimeDep(p) => ProblemFile {
                kind: Kind::Timedep,
                n: p.n,
                t: p.t,
                eps: p.eps,
                a: None,
                b: None,
                c: None,
                d: matrix_to_json(&p.d),
                phi: vector_to_json(&p.phi),
                psi: vector_to_json(&p.psi),
                bounds: p.bounds,
                grid_j: Some(p.grid_j),
                a_seq: Some(p.a_seq.iter().map(matrix_to_json).collect()),
                b_seq: Some(p.b_seq.iter().map(matrix_to_json).collect()),
                c_seq: Some(p.c_seq.iter().map(matrix_to_json).collect()),
                derivs: Some(p.derivs),
                xi_a_fun: Some(p.xi_a_fun.clone()),
                xi_b_fun: Some(p.xi_b_fun.clone()),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parse and validate the JSON interchange format.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProblemFile = serde_json::from_str(text)?;
        let n = f.n;
        if n == 0 {
            return Err(Error::validation("n", "must be positive"));
        }
        let d = matrix_from_json(&f.d, n, "D")?;
        let phi = vector_from_json(&f.phi, n, "phi")?;
        let psi = vector_from_json(&f.psi, n, "psi")?;
        match f.kind {
            Kind::Static => {
                let p = MatrixOdeProblem {
                    n,
                    a: matrix_from_json(&required(f.a, "A")?, n, "A")?,
                    b: matrix_from_json(&required(f.b, "B")?, n, "B")?,
                    c: matrix_from_json(&required(f.c, "C")?, n, "C")?,
                    d,
                    t: f.t,
                    eps: f.eps,
                    phi,
                    psi,
                    bounds: f.bounds,
                };
                p.validate()?;
                Ok(AnyProblem::Static(p))
            }
            Kind::Timedep => {
                let grid_j = required(f.grid_j, "gridJ")?;
                let p = TimeDepProblem {
                    n,
                    grid_j,
                    a_seq: sequence_from_json(f.a_seq, n, "Aseq")?,
                    b_seq: sequence_from_json(f.b_seq, n, "Bseq")?,
                    c_seq: sequence_from_json(f.c_seq, n, "Cseq")?,
                    d,
                    t: f.t,
                    eps: f.eps,
                    phi,
                    psi,
                    bounds: f.bounds,
                    xi_a_fun: f.xi_a_fun.unwrap_or_else(|| vec![f.bounds.xi_a; grid_j]),
                    xi_b_fun: f.xi_b_fun.unwrap_or_else(|| vec![f.bounds.xi_b; grid_j]),
                    derivs: required(f.derivs, "derivs")?,
                };
                p.validate()?;
                Ok(AnyProblem::TimeDep(p))
            }
        }
    }
}

/// Read and validate a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<AnyProblem> {
    AnyProblem::from_json(&std::fs::read_to_string(path)?)
}

/// Write a problem file.
pub fn save_problem(problem: &AnyProblem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, problem.to_json()?)?;
    Ok(())
}
