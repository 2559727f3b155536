use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sylverse::costmodel::{evaluate_costs, lower_bound_ratio_table, verify_lower_bound_gap, GapRow, Regime};
use sylverse::fermion::{chain_model, relax, to_ode_problem, trajectory_rows, Dissipation};
use sylverse::histsolve::{
    block_norm_bound, build_system, certify_condition, default_order, default_steps, history_norm_bound, invert_blocks,
    solve_history, taylor_stepper,
};
use sylverse::krylov::{dense_entry, krylov_entry, lattice_laplacian, restarted_entry, LatticeDim, SparseMatrix};
use sylverse::lchsmodel::{lchs_constant, lchs_constant_bound};
use sylverse::matcore::{expm, identity, max_abs, spectral_norm, sup_expm_norm, CMatrix, C64};
use sylverse::oracle::{fixed_point_residual, solve_ode, solve_quadrature};
use sylverse::overlap::{estimate_entry, exact_ic, taylor_ic, taylor_ic_bound, Route};
use sylverse::problem::{
    make_envelope_instance, make_lower_bound_instance, make_random_instance, LogNormSign, MatrixOdeProblem, Side,
    TimeDepProblem,
};
use sylverse::timedep::{self, Propagator, DEFAULT_ORDER};
use sylverse::Result;

const SIZES: [usize; 4] = [2, 4, 8, 16];
const TIMES: [f64; 3] = [0.5, 2.0, 8.0];

type Criterion = (&'static str, fn() -> Result<Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn defaults(p: &MatrixOdeProblem) -> (usize, usize, usize) {
    let (m, r) = default_steps(p);
    (m, r, default_order(p.bounds.c, p.t / m as f64, p.eps, m, r))
}

fn suite_instances() -> Result<Vec<MatrixOdeProblem>> {
    let mut out = Vec::with_capacity(60);
    for (ni, &n) in SIZES.iter().enumerate() {
        for (si, sign) in LogNormSign::ALL.into_iter().enumerate() {
            for seed in 0..5u64 {
                let s = 100 * ni as u64 + 10 * si as u64 + seed;
                out.push(make_random_instance(n, s, sign)?.with_time(TIMES[seed as usize % 3]));
            }
        }
    }
    Ok(out)
}

fn overlap_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let instances = suite_instances()?;
    for p in &instances {
        let truth = solve_quadrature(p, 1e-12)?.entry;
        let (m, r, k) = defaults(p);
        for route in [Route::LinearSystems, Route::Lchs] {
            let err = (estimate_entry(p, m, r, k, route)?.entry - truth).norm();
            worst = worst.max(err);
            if err > p.eps.max(1e-7) {
                failures += 1;
            }
        }
    }
    Ok(Outcome::new(failures == 0, format!("{} instances, both routes, max error {worst:.2e}", instances.len())))
}

fn closed_form_reproduction() -> Result<Outcome> {
    let deltas = [PI / 16.0, PI / 32.0, PI / 64.0];
    let times = [6.0, 12.0, 24.0];
    let mut worst: f64 = 0.0;
    for &delta in &deltas {
        for &t in &times {
            let mut p = make_lower_bound_instance(3, delta, t)?;
            p.eps = 1e-9;
            let (m, r, k) = defaults(&p);
            let s = delta.sin();
            let closed = -(-t * s).exp_m1() / s;
            for route in [Route::LinearSystems, Route::Lchs] {
                worst = worst.max((estimate_entry(&p, m, r, k, route)?.entry - C64::new(closed, 0.0)).norm());
            }
        }
    }
    let rows = verify_lower_bound_gap(&times, &deltas)?;
    let gaps = rows.iter().all(GapRow::pass);
    Ok(Outcome::new(
        worst <= 1e-8 && gaps,
        format!(
            "max error {worst:.2e}, gap holds at {}/{} points",
            rows.iter().filter(|r| r.pass()).count(),
            rows.len()
        ),
    ))
}

fn certificate_suite() -> Result<Outcome> {
    let mut count = 0;
    let mut worst_block: f64 = 0.0;
    let mut certs_ok = true;
    let mut seed = 0u64;
    while count < 30 {
        let n = [2, 4, 8][seed as usize % 3];
        let sign = LogNormSign::ALL[(seed / 3) as usize % 3];
        let t = [0.5, 1.0, 2.0, 4.0][(seed / 9) as usize % 4];
        seed += 1;
        let p = make_random_instance(n, 500 + seed, sign)?.with_time(t);
        let (m, r, k) = defaults(&p);
        if (m + r) * n > 1024 {
            continue;
        }
        for side in [Side::A, Side::B] {
            let sys = build_system(&p, side, m, r, k)?;
            certs_ok &= certify_condition(&sys, &p, side)?.pass;
            for (i, row) in invert_blocks(&sys)?.iter().enumerate() {
                for (j, block) in row.iter().enumerate() {
                    worst_block = worst_block.max(max_abs(&(block - sys.closed_form_block(i, j))));
                }
            }
        }
        count += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lemma_ok = true;
    for _ in 0..100 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(1..5);
        let heights: Vec<usize> = (0..rows).map(|_| rng.random_range(1..4)).collect();
        let widths: Vec<usize> = (0..cols).map(|_| rng.random_range(1..4)).collect();
        let blocks: Vec<Vec<CMatrix>> = heights
            .iter()
            .map(|&h| {
                widths
                    .iter()
                    .map(|&w| {
                        CMatrix::from_fn(h, w, |_, _| {
                            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        })
                    })
                    .collect()
            })
            .collect();
        let (full, compressed) = block_norm_bound(&blocks)?;
        lemma_ok &= full <= compressed * (1.0 + 1e-12);
    }
    Ok(Outcome::new(
        certs_ok && worst_block <= 1e-8 && lemma_ok,
        format!("{count} instances, max inverse-block deviation {worst_block:.2e}, block-norm lemma on 100 matrices: {lemma_ok}"),
    ))
}

fn truncation_bounds() -> Result<Outcome> {
    let mut ic_ok = true;
    let mut seq_ok = true;
    for seed in 0..20u64 {
        let n = [2, 4, 8][seed as usize % 3];
        let p = make_random_instance(n, 700 + seed, LogNormSign::ALL[seed as usize % 3])?.with_time(2.0);
        let h = 1.0 / p.mu();
        let exact = exact_ic(&p, h, 1e-14)?;
        let c_norm = spectral_norm(&p.c);
        for k in 2..=12 {
            let gap = spectral_norm(&(&exact - taylor_ic(&p, h, k)?));
            ic_ok &= gap <= taylor_ic_bound(c_norm, h, k) + 1e-13;
        }
        let (m, _, k) = defaults(&p);
        let step_h = p.t / m as f64;
        for k in [3, k] {
            let v = taylor_stepper(&p.a, step_h, k);
            let e = expm(&(&p.a * C64::new(step_h, 0.0)), 1e-14)?;
            let delta = spectral_norm(&(&v - &e));
            let (_, max_exp) = sup_expm_norm(&p.a, p.t)?;
            let (mut vm, mut em) = (identity(n), identity(n));
            for step in 1..=m {
                vm = &vm * &v;
                em = &em * &e;
                let mf = step as f64;
                seq_ok &= spectral_norm(&(&vm - &em)) <= max_exp * delta * mf * (delta * mf).exp() + 1e-13;
            }
        }
    }
    Ok(Outcome::new(ic_ok && seq_ok, format!("20 instances, I_C bound for K in 2..=12: {ic_ok}, V^m bound: {seq_ok}")))
}

fn norm_bounds() -> Result<Outcome> {
    let mut hist_ok = true;
    let mut lchs_ok = true;
    let mut checked = 0;
    for p in suite_instances()? {
        let (m, r, k) = defaults(&p);
        for side in [Side::A, Side::B] {
            let hist = solve_history(&build_system(&p, side, m, r, k)?)?;
            let bound = history_norm_bound(p.generator(side), p.state(side), p.t, m, r, 1e-9)?;
            hist_ok &= hist.norm_sq <= bound * (1.0 + 1e-8);
            let xi = p.bounds.xi(side);
            lchs_ok &= lchs_constant(p.t, xi, m, r) <= lchs_constant_bound(p.t, xi, m, r) * (1.0 + 1e-12);
            checked += 1;
        }
    }
    Ok(Outcome::new(
        hist_ok && lchs_ok,
        format!("{checked} history states, history bound: {hist_ok}, LCHS bound: {lchs_ok}"),
    ))
}

fn fermion_suite() -> Result<Outcome> {
    let mut residual: f64 = 0.0;
    let mut spectrum_ok = true;
    let mut contraction_ok = true;
    let mut entry_err: f64 = 0.0;
    let mut entry_ok = true;
    for (ns, gamma, beta, dissipation) in
        [(4, 0.5, 1.0, Dissipation::Uniform), (6, 0.3, 2.0, Dissipation::Uniform), (5, 0.4, 0.5, Dissipation::Boundary)]
    {
        let model = chain_model(ns, gamma, beta, dissipation)?;
        residual = residual.max(fixed_point_residual(&to_ode_problem(&model, 1.0, 1e-3)?, &model.x_beta));
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 * 8.0 / (16.0 * gamma)).collect();
        let rows = trajectory_rows(&model, &relax(&model, &grid, 1e-7)?);
        spectrum_ok &= rows.iter().all(|r| r.min_eig >= -1e-7 && r.max_eig <= 1.0 + 1e-7);
        if dissipation == Dissipation::Uniform {
            let rate = model.gamma_min();
            let times: Vec<f64> = [1.0, 4.0, 8.0].iter().map(|k| k / gamma).collect();
            let start = spectral_norm(&(&model.x0 - &model.x_beta));
            for (row, t) in trajectory_rows(&model, &relax(&model, &times, 1e-9)?).iter().zip(&times) {
                contraction_ok &= row.dist_to_fixed_point <= start * (-2.0 * rate * t).exp() + 1e-6;
            }
        }
        let t = 4.0 / gamma;
        let p = to_ode_problem(&model, t, 1e-4)?;
        let truth = relax(&model, &[t], 1e-9)?[0].entry;
        let (m, r, k) = defaults(&p);
        for route in [Route::LinearSystems, Route::Lchs] {
            let err = (estimate_entry(&p, m, r, k, route)?.entry - truth).norm();
            entry_err = entry_err.max(err);
            entry_ok &= err <= p.eps;
        }
    }
    Ok(Outcome::new(
        residual <= 1e-9 && spectrum_ok && contraction_ok && entry_ok,
        format!(
            "stationary residual {residual:.2e}, spectrum in range: {spectrum_ok}, contraction: {contraction_ok}, entry error {entry_err:.2e}"
        ),
    ))
}

fn constant_envelope(seed: u64) -> Result<(TimeDepProblem, MatrixOdeProblem)> {
    let base = make_random_instance(4, seed, LogNormSign::Positive)?.with_time(3.0);
    Ok((TimeDepProblem::from_static(&base, 4)?, base))
}

fn timedep_suite() -> Result<Outcome> {
    let mut composition: f64 = 0.0;
    for seed in 0..4u64 {
        let p = make_envelope_instance(4, 900 + seed, 6, 3.0)?;
        for side in [Side::A, Side::B] {
            let prop = Propagator::new(&p, side, DEFAULT_ORDER);
            let (s, tau, t) = (0.2, 1.35, 2.9);
            let lhs = prop.propagate(tau, s)? * prop.propagate(t, tau)?;
            composition = composition.max(max_abs(&(lhs - prop.propagate(t, s)?)));
        }
    }
    let mut reduction_ok = true;
    for seed in 0..3u64 {
        let (p, base) = constant_envelope(910 + seed)?;
        for k in [6, 10, 16] {
            let prop = Propagator::new(&p, Side::A, k);
            let w = prop.propagate(2.5, 0.25)?;
            let e = expm(&(&base.a * C64::new(2.25, 0.0)), 1e-14)?;
            reduction_ok &= spectral_norm(&(w - e)) <= prop.remainder_bound(0.25, 2.5) + 1e-12;
        }
    }
    let mut ode_err: f64 = 0.0;
    let mut ode_ok = true;
    for seed in 0..3u64 {
        let p = make_envelope_instance(4, 920 + seed, 6, 2.0)?;
        let (m, r) = timedep::default_steps(&p);
        let est = timedep::solve_timedep_entry(&p, m, r, DEFAULT_ORDER)?;
        let err = (est.entry - solve_ode(&p, 1e-11)?.entry).norm();
        ode_err = ode_err.max(err);
        ode_ok &= err <= p.eps;
    }
    Ok(Outcome::new(
        composition <= 1e-7 && reduction_ok && ode_ok,
        format!("composition defect {composition:.2e}, constant reduction: {reduction_ok}, envelope entry error {ode_err:.2e}"),
    ))
}

fn krylov_suite() -> Result<Outcome> {
    let n = 128;
    let t = 4.0;
    let a = lattice_laplacian(LatticeDim::One, n)?;
    let c = SparseMatrix::identity(n);
    let d = SparseMatrix::zeros(n);
    let site = n / 2;
    let truth = dense_entry(&a, &a, &c, &d, site, site, t)?;
    let full = krylov_entry(&a, &a, &c, &d, site, site, t, 24, 40)?;
    let m_prime = 12;
    let restarted = restarted_entry(&a, &a, &c, site, site, t, m_prime, 0.25)?;
    let full_err = (full.entry - truth).norm();
    let restart_err = (restarted.entry - truth).norm();
    let memory_ok = restarted.stats.mem_highwater <= 3 * m_prime * n;
    let per_site: Vec<f64> = [64, 128, 256]
        .into_iter()
        .map(|size| {
            let op = lattice_laplacian(LatticeDim::One, size)?;
            let out = krylov_entry(
                &op,
                &op,
                &SparseMatrix::identity(size),
                &SparseMatrix::zeros(size),
                size / 2,
                size / 2,
                t,
                24,
                40,
            )?;
            Ok(out.stats.matvec_flops as f64 / size as f64)
        })
        .collect::<Result<_>>()?;
    let spread =
        per_site.iter().copied().fold(0.0, f64::max) / per_site.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    Ok(Outcome::new(
        full_err <= 1e-5 && restart_err <= 1e-5 && memory_ok && spread <= 0.05,
        format!(
            "m=24 error {full_err:.2e}, restarted error {restart_err:.2e}, memory {} of {}, work spread {:.2}%",
            restarted.stats.mem_highwater,
            3 * m_prime * n,
            100.0 * spread
        ),
    ))
}

fn cost_consistency() -> Result<Outcome> {
    let queries = |gamma: f64| -> Result<_> {
        let model = chain_model(4, gamma, 1.0, Dissipation::Uniform)?;
        let p = to_ode_problem(&model, 4.0 / gamma, 1e-3)?;
        evaluate_costs(&p, Route::Lchs, Regime::Static)
    };
    let (full, half) = (queries(0.2)?, queries(0.1)?);
    let leading = half.queries_ab_leading / full.queries_ab_leading;
    let with_logs = half.queries_ab / full.queries_ab;
    let times = [6.0, 60.0, 600.0];
    let rows = lower_bound_ratio_table(3, PI / 32.0, &times)?;
    println!("    t        upper          lower          ratio");
    for row in &rows {
        println!("    {:<8} {:<14.6e} {:<14.6e} {:.6e}", row.t, row.upper, row.lower, row.ratio);
    }
    let growth = rows[2].ratio / rows[0].ratio;
    let limit = (600f64.log2() / 6f64.log2()).powi(3);
    Ok(Outcome::new(
        (leading - 2.0).abs() < 0.1 && (with_logs - 2.0).abs() < 0.2 && growth <= limit,
        format!("A-query ratio {leading:.4} (with logs {with_logs:.4}), ratio growth {growth:.3} <= {limit:.3}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("overlap identity", overlap_identity),
        ("closed-form reproduction", closed_form_reproduction),
        ("certificates", certificate_suite),
        ("truncation bounds", truncation_bounds),
        ("history norms", norm_bounds),
        ("fermion relaxation", fermion_suite),
        ("time-dependent propagation", timedep_suite),
        ("krylov", krylov_suite),
        ("cost model", cost_consistency),
    ];
    let mut all = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        all &= outcome.pass;
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {} {name}: {} ({:.1}s)", i + 1, outcome.detail, start.elapsed().as_secs_f64());
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
