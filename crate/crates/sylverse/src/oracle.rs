//! Reference solutions of the matrix differential equation: the closed-form
//! integral evaluated by quadrature and an adaptive Dormand-Prince integrator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{expm, max_abs, quad_integrate, spectral_norm, CMatrix, CVector, C64};
use crate::problem::{Coefficients, MatrixOdeProblem};

const MAX_STEPS: usize = 1_000_000;

/// How a reference solution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    OdeVectorized,
    Dyson,
}

/// The solution matrix at one time together with the requested entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSample {
    pub t: f64,
    pub x: CMatrix,
    pub entry: C64,
    pub method: Method,
}

/// `phi^H X psi`.
pub fn entry_of(x: &CMatrix, phi: &CVector, psi: &CVector) -> C64 {
    phi.dotc(&(x * psi))
}

/// Evaluate `X(t) = e^{tA^H} D e^{tB} + int_0^t e^{sA^H} C e^{sB} ds` with
/// adaptive quadrature at `tol` and exponentials at `tol / 10`.
pub fn solve_quadrature(p: &MatrixOdeProblem, tol: f64) -> Result<SolutionSample> {
    let etol = (tol / 10.0).clamp(2e-15, 1e-3);
    let ah = p.a.adjoint();
    let integrand = |s: f64| -> CMatrix {
        let ea = expm(&(&ah * C64::new(s, 0.0)), etol).expect("validated tolerance");
        let eb = expm(&(&p.b * C64::new(s, 0.0)), etol).expect("validated tolerance");
        ea * &p.c * eb
    };
    let integral = quad_integrate(integrand, 0.0, p.t, tol)?;
    let ea = expm(&(&ah * C64::new(p.t, 0.0)), etol)?;
    let eb = expm(&(&p.b * C64::new(p.t, 0.0)), etol)?;
    let x = ea * &p.d * eb + integral;
    Ok(SolutionSample { t: p.t, entry: entry_of(&x, &p.phi, &p.psi), x, method: Method::Quadrature })
}

fn rhs<P: Coefficients + ?Sized>(p: &P, s: f64, x: &CMatrix) -> CMatrix {
    let a = p.a_at(s);
    let b = p.b_at(s);
    let c = p.c_at(s);
    a.ad_mul(x) + x * b.as_ref() + c.as_ref()
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

fn combo(base: &CMatrix, h: f64, terms: &[(f64, &CMatrix)]) -> CMatrix {
    let mut out = base.clone();
    for &(w, k) in terms {
        if w != 0.0 {
            out += k * C64::new(h * w, 0.0);
        }
    }
    out
}

struct Integrator<'a, P: Coefficients + ?Sized> {
    p: &'a P,
    tol: f64,
    s: f64,
    x: CMatrix,
    k1: CMatrix,
    h: f64,
    steps: usize,
}

impl<'a, P: Coefficients + ?Sized> Integrator<'a, P> {
    fn new(p: &'a P, tol: f64) -> Self {
        let x = p.initial().clone();
        let k1 = rhs(p, 0.0, &x);
        let scale = max_abs(&k1) / (1.0 + max_abs(&x));
        let h = 0.1 * tol.powf(0.2) / (1.0 + scale);
        Integrator { p, tol, s: 0.0, x, k1, h, steps: 0 }
    }

    fn advance_to(&mut self, target: f64) -> Result<()> {
        let floor = 1e-14 * target.abs().max(1.0);
        while target - self.s > floor {
            let h = self.h.min(target - self.s);
            if h < floor {
                return Err(Error::Stiffness { t: self.s });
            }
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::Stiffness { t: self.s });
            }
            let (s, x, k1) = (self.s, &self.x, &self.k1);
            let k2 = rhs(self.p, s + C2 * h, &combo(x, h, &[(A21, k1)]));
            let k3 = rhs(self.p, s + C3 * h, &combo(x, h, &[(A31, k1), (A32, &k2)]));
            let k4 = rhs(self.p, s + C4 * h, &combo(x, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
            let k5 = rhs(self.p, s + C5 * h, &combo(x, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
            let k6 = rhs(self.p, s + h, &combo(x, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
            let next = combo(x, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = rhs(self.p, s + h, &next);
            let err = combo(
                &CMatrix::zeros(x.nrows(), x.ncols()),
                h,
                &[(E1, k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
            );
            let ratio = err
                .iter()
                .zip(next.iter().zip(x.iter()))
                .map(|(e, (y1, y0))| e.norm() / (self.tol * (1.0 + y1.norm().max(y0.norm()))))
                .fold(0.0f64, f64::max);
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            if ratio <= 1.0 {
                self.s = if target - (s + h) <= floor { target } else { s + h };
                self.x = next;
                self.k1 = k7;
                self.h = h * factor;
            } else {
                self.h = h * factor.min(1.0);
                if self.h < floor {
                    return Err(Error::Stiffness { t: self.s });
                }
            }
        }
        self.s = target;
        Ok(())
    }
}

/// Integrate the equation with an embedded 5(4) Runge-Kutta pair and report
/// the solution at every requested time (nondecreasing, within `[0, t]`).
///
/// Integration stops exactly at every coefficient kink so that each step
/// sees smooth coefficients.
pub fn solve_ode_at<P: Coefficients + ?Sized>(p: &P, times: &[f64], tol: f64) -> Result<Vec<SolutionSample>> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Domain(format!("ODE tolerance {tol} not in (0, 1)")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&s| !(0.0..=p.horizon()).contains(&s)) {
        return Err(Error::Domain("output times must be sorted and inside [0, t]".into()));
    }
    let kinks = p.kinks();
    let mut integ = Integrator::new(p, tol);
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        let start = integ.s;
        for &k in kinks.iter().filter(|&&k| k > start && k < target) {
            integ.advance_to(k)?;
        }
        integ.advance_to(target)?;
        out.push(SolutionSample {
            t: target,
            entry: entry_of(&integ.x, p.phi(), p.psi()),
            x: integ.x.clone(),
            method: Method::OdeVectorized,
        });
    }
    Ok(out)
}

/// Integrate the equation up to the horizon of `p`.
pub fn solve_ode<P: Coefficients + ?Sized>(p: &P, tol: f64) -> Result<SolutionSample> {
    let mut samples = solve_ode_at(p, &[p.horizon()], tol)?;
    Ok(samples.pop().expect("one requested time"))
}

/// Spectral norm of the stationary residual `A^H X + X B + C`.
pub fn fixed_point_residual(p: &MatrixOdeProblem, x: &CMatrix) -> f64 {
    spectral_norm(&(p.a.ad_mul(x) + x * &p.b + &p.c))
}
