//! Acceptance suite: one pass/fail line per criterion, with pinned tolerances and time
//! budgets. Runs as a plain binary so the lines are always printed.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hjb_core::expect::{
    consistency_study, estimate_d1_upwind, estimate_d2_poly, ConsistencySetup, EstimatorKind, EulerStepper,
    TestFunction,
};
use hjb_core::gridsolve::convergence_study;
use hjb_core::maxplus::{bootstrap, distribute_check, TargetMode, NSD_TOL};
use hjb_core::schemes::{check_monotone, check_subhomogeneous, kappa_consistency, DeltaMode};
use hjb_core::weights::{poly2_eval, poly2_lower_bound, upwind1_eval};
use hjb_core::{
    registry, solve_grid, solve_maxplus, ControlProblem, Decomposition, Engine, GridSpec, SamplePlan, Scheme,
    SchemeConfig, Variant,
};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn scheme_for(prob: &ControlProblem, variant: Variant, k: u32, h: f64, engine: &Engine) -> Result<Scheme, String> {
    let d = Decomposition::from_problem(prob).map_err(e)?;
    Scheme::new(prob, &d, SchemeConfig::new(variant, k, h), engine).map_err(e)
}

fn lq1d_exact(t: f64, x: f64) -> f64 {
    -x * x - (1.0 - t)
}

// 1: weight laws
fn weight_laws() -> Outcome {
    const MEAN_TOL: f64 = 1e-10;
    const DRAWS: usize = 100_000;
    let mut r = rng(101);
    let mut worst_mean: f64 = 0.0;
    for d in 1..=3 {
        let measure = Engine::Quadrature { nodes_per_dim: 8, split: true }.measure(d).map_err(e)?;
        for cols in 1..=3 {
            for k in 0..=2u32 {
                let sigma = random_matrix(&mut r, d, cols);
                let m = measure.expect(|w| poly2_eval(&sigma, k, w).unwrap()).map_err(e)?.value;
                worst_mean = worst_mean.max(m.abs() / sigma.norm_squared());
            }
        }
    }
    ensure(worst_mean <= MEAN_TOL, || format!("|E P2| / tr = {worst_mean:e}"))?;

    let mut violations = 0usize;
    for i in 0..DRAWS {
        let d = 1 + i % 3;
        let cols = 1 + (i / 3) % 3;
        let k = ((i / 9) % 3) as u32;
        let sigma = random_matrix(&mut r, d, cols);
        let g: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..d).map(|_| 3.0 * normal(&mut r)).collect();
        if upwind1_eval(&g, &w) < 0.0 {
            violations += 1;
        }
        let bound = poly2_lower_bound(&sigma, k);
        if poly2_eval(&sigma, k, &w).map_err(e)? < bound - 1e-12 * bound.abs() {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} sign violations"))?;
    Ok(format!("max |E P2|/tr = {worst_mean:.2e}, {DRAWS} draws, 0 violations"))
}

// 2: exactness on polynomials
fn exactness() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut r = rng(202);
    let engine = Engine::quadrature();
    let mut worst2: f64 = 0.0;
    let mut worst1: f64 = 0.0;
    for trial in 0..60 {
        let d = 1 + trial % 2;
        let measure = engine.measure(d).map_err(e)?;
        let su = random_matrix(&mut r, d, d) + DMatrix::identity(d, d) * 1.5;
        let stepper = EulerStepper::driftless(su.clone());
        let sigma = random_matrix(&mut r, d, 1 + trial % 3);
        let a = {
            let m = random_matrix(&mut r, d, d);
            &m + m.transpose()
        };
        let b: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let h = r.random_range(0.01..0.5);
        let k = (trial % 3) as u32;
        let quad = |y: &[f64]| {
            let mut v = 0.3;
            for i in 0..d {
                v += b[i] * y[i];
                for j in 0..d {
                    v += 0.5 * a[(i, j)] * y[i] * y[j];
                }
            }
            v
        };
        let est = estimate_d2_poly(&measure, &stepper, &sigma, k, &x, h, quad).map_err(e)?.value;
        let s = &su * &sigma;
        let target = 0.5 * (&s * s.transpose() * &a).trace();
        worst2 = worst2.max((est - target).abs());

        let g: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let lin = |y: &[f64]| 0.7 + b.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let est = estimate_d1_upwind(&measure, &stepper, &g, &x, h, lin, lin(&x)).map_err(e)?.value;
        let sg = &su * DMatrix::from_column_slice(d, 1, &g);
        let target: f64 = (0..d).map(|i| sg[(i, 0)] * b[i]).sum();
        worst1 = worst1.max((est - target).abs());
    }
    ensure(worst2 <= TOL && worst1 <= TOL, || format!("second order {worst2:e}, first order {worst1:e}"))?;
    Ok(format!("second order {worst2:.1e}, first order {worst1:.1e} (tol {TOL:.0e})"))
}

// 3: consistency orders
fn consistency_orders() -> Outcome {
    let hs: Vec<f64> = (2..=6).map(|i| 0.4 * 0.5f64.powi(i)).collect();
    let engine = Engine::quadrature();
    let setup = ConsistencySetup::standard(1);
    let d2 = consistency_study(EstimatorKind::D2, &setup, TestFunction::SinExp, &engine, &hs).map_err(e)?;
    let d1 = consistency_study(EstimatorKind::D1, &setup, TestFunction::SinExp, &engine, &hs).map_err(e)?;
    let prob = registry::builtin("lq1d").map_err(e)?;
    let dec = Decomposition::from_problem(&prob).map_err(e)?;
    let g_nonzero = prob.controls().iter().any(|u| dec.drift_residual(0, &[0.0], u).iter().any(|v| *v != 0.0));
    let pts: Vec<Vec<f64>> = (0..17).map(|i| vec![-2.0 + 0.25 * i as f64]).collect();
    let kappa = kappa_consistency(
        &prob,
        &dec,
        &SchemeConfig::new(Variant::NewUpwind, dec.min_k(), 0.1),
        &engine,
        TestFunction::SinExp,
        0.2,
        &pts,
        &hs,
    )
    .map_err(e)?;
    let line = format!("p_hat d2 {:.3} (>= 0.8), d1 {:.3} (>= 0.4), K {:.3} (>= 0.4)", d2.p_hat, d1.p_hat, kappa.p_hat);
    ensure(g_nonzero, || "lq1d has no first-order residual".into())?;
    ensure(d2.p_hat >= 0.8 && d1.p_hat >= 0.4 && kappa.p_hat >= 0.4, || line.clone())?;
    Ok(line)
}

// 4: monotonicity
fn monotonicity() -> Outcome {
    const TRIALS: usize = 10_000;
    const H: f64 = 0.05;
    let engine = Engine::quadrature();
    let mut parts = Vec::new();
    for name in ["lq1d", "degenerate2d"] {
        let prob = registry::builtin(name).map_err(e)?;
        let dec = Decomposition::from_problem(&prob).map_err(e)?;
        let k = dec.min_k();
        ensure(dec.a_bar() <= (4 * k + 2) as f64, || format!("{name}: a_bar {} > 4k+2", dec.a_bar()))?;
        if name == "degenerate2d" {
            let d = prob.dim();
            ensure((0..dec.num_modes()).any(|m| dec.rank(m) < d), || "residual diffusion has full rank".into())?;
        }
        let s = scheme_for(&prob, Variant::NewUpwind, k, H, &engine)?;
        ensure(H <= s.h0(), || format!("{name}: h {H} > h0 {}", s.h0()))?;
        let rep = check_monotone(&s, TRIALS, 4).map_err(e)?;
        ensure(rep.guaranteed && rep.total_violations() == 0, || format!("{name}: {rep:?}"))?;
        parts.push(format!("{name} 0/{}", rep.trials + rep.probe_trials));
    }
    let ftw = registry::builtin("ftw_critical").map_err(e)?;
    let s = scheme_for(&ftw, Variant::FtwBaseline, 0, H, &engine)?;
    let rep = check_monotone(&s, 200, 5).map_err(e)?;
    ensure(rep.total_violations() >= 1, || format!("no FTW violation exhibited: {rep:?}"))?;
    let degen = registry::builtin("degenerate2d").map_err(e)?;
    let degen_ftw = scheme_for(&degen, Variant::FtwBaseline, 0, H, &engine)?;
    let degen_rep = check_monotone(&degen_ftw, 200, 6).map_err(e)?;
    parts.push(format!(
        "ftw_critical baseline {} violations (min weight {:.3}); degenerate2d baseline min weight {:.3}",
        rep.total_violations(),
        rep.min_node_weight,
        degen_rep.min_node_weight
    ));
    Ok(parts.join(", "))
}

// 5: subhomogeneity
fn subhomogeneity() -> Outcome {
    const TRIALS: usize = 10_000;
    let engine = Engine::quadrature();
    let lq = registry::builtin("lq1d").map_err(e)?;
    let r = check_subhomogeneous(&scheme_for(&lq, Variant::NewUpwind, 0, 0.1, &engine)?, TRIALS, 7).map_err(e)?;
    ensure(r.passthrough_checked && r.violations == 0 && r.passthrough_violations == 0, || format!("lq1d {r:?}"))?;
    let mut out = vec![format!("lq1d pass-through 0/{TRIALS}")];
    let prob = registry::builtin("bounded1d").map_err(e)?;
    let dec = Decomposition::from_problem(&prob).map_err(e)?;
    for mode in [DeltaMode::LowerBounded, DeltaMode::GeneralSign] {
        let cfg = SchemeConfig {
            delta_mode: mode,
            ..SchemeConfig::new(Variant::NewUpwind, dec.min_k(), 0.1)
        };
        let s = Scheme::new(&prob, &dec, cfg, &engine).map_err(e)?;
        let r = check_subhomogeneous(&s, TRIALS, 8).map_err(e)?;
        ensure(r.violations == 0, || format!("bounded1d {mode}: {r:?}"))?;
        out.push(format!("bounded1d {mode} alpha {:.4} 0/{TRIALS}", r.alpha));
    }
    Ok(out.join(", "))
}

fn random_quadratic(r: &mut ChaCha8Rng, d: usize) -> (DMatrix<f64>, Vec<f64>, f64) {
    let m = random_matrix(r, d, d);
    let b = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    (&m + m.transpose(), b, r.random_range(-1.0..1.0))
}

fn eval_quadratic(q: &(DMatrix<f64>, Vec<f64>, f64), y: &[f64]) -> f64 {
    let (a, b, c) = q;
    let mut v = *c;
    for i in 0..y.len() {
        v += b[i] * y[i] + (0..y.len()).map(|j| 0.5 * a[(i, j)] * y[i] * y[j]).sum::<f64>();
    }
    v
}

// 6: scheme equivalences
fn equivalences() -> Outcome {
    const EVALS: usize = 1000;
    let engine = Engine::quadrature();
    // σ² = 2 over σ̲ = 1: Σ = 1; B = 0 and δ = 0 make g and the discount vanish
    let plain: ControlProblem = ControlProblem::from_json(
        r#"{"name": "plain", "d": 1, "T": 1.0,
            "modes": [{"id": "m", "B": [0.0], "sigma": [1.4142135623730951], "l0": 0.3}],
            "controls": [{"min": 0.0, "max": 0.0, "count": 1}],
            "terminal_forms": [{"Q": [-1.0], "b": [0.0], "c": 0.0}],
            "underlying": {"sigma": [1.0]}}"#,
    )
    .map_err(e)?;
    let a = scheme_for(&plain, Variant::NewUpwind, 0, 0.1, &engine)?;
    let b = scheme_for(&plain, Variant::PriorFodjo2, 0, 0.1, &engine)?;
    let lq2 = registry::builtin("lq2d").map_err(e)?;
    let c = scheme_for(&lq2, Variant::PriorFodjo2, 0, 0.05, &engine)?;
    let f = scheme_for(&lq2, Variant::FtwBaseline, 0, 0.05, &engine)?;
    let mut r = rng(606);
    let (mut w1, mut w2): (f64, f64) = (0.0, 0.0);
    for _ in 0..EVALS {
        let x = [r.random_range(-2.0..2.0)];
        let q = random_quadratic(&mut r, 1);
        let phi = |y: &[f64]| eval_quadratic(&q, y) + (2.0 * y[0]).sin();
        w1 = w1.max((a.apply_t(&x, &phi).map_err(e)?.0 - b.apply_t(&x, &phi).map_err(e)?.0).abs());

        let x = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let q = random_quadratic(&mut r, 2);
        let phi = |y: &[f64]| eval_quadratic(&q, y);
        w2 = w2.max((c.apply_t(&x, &phi).map_err(e)?.0 - f.apply_t(&x, &phi).map_err(e)?.0).abs());
    }
    let line = format!("new vs prior {w1:.1e} (tol 1e-12), prior vs ftw {w2:.1e} (tol 1e-10), {EVALS} evals each");
    ensure(w1 <= 1e-12 && w2 <= 1e-10, || line.clone())?;
    Ok(line)
}

// 7: Kushner equivalence
fn kushner() -> Outcome {
    const TOL: f64 = 1e-14;
    let measure = Engine::Rademacher.measure(1).map_err(e)?;
    let mut r = rng(707);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = r.random_range(0.2..2.0);
        let g = r.random_range(-3.0..3.0);
        let h = r.random_range(0.001..0.5);
        let x = r.random_range(-2.0..2.0);
        let (a0, a1, a2, a3) = (normal(&mut r), normal(&mut r), normal(&mut r), r.random_range(0.5..3.0));
        let v = |y: f64| a0 + a1 * y + a2 * (a3 * y).sin();
        let stepper = EulerStepper::driftless(DMatrix::from_element(1, 1, s));
        let est = estimate_d1_upwind(&measure, &stepper, &[g], &[x], h, |y: &[f64]| v(y[0]), v(x))
            .map_err(e)?
            .value;
        // upwind differences with spacing Δ = σ√h on the drift σg
        let dx = s * h.sqrt();
        let fd = s * g.max(0.0) * (v(x + dx) - v(x)) / dx + s * (-g).max(0.0) * (v(x - dx) - v(x)) / dx;
        let scale = 1.0 + est.abs();
        worst = worst.max((est - fd).abs() / scale);
    }
    ensure(worst <= TOL, || format!("max relative gap {worst:e}"))?;
    Ok(format!("max relative gap {worst:.1e} over 1000 draws (tol {TOL:.0e})"))
}

// 8: LQ grid convergence
fn lq_convergence() -> Outcome {
    let prob = registry::builtin("lq1d").map_err(e)?;
    let dec = Decomposition::from_problem(&prob).map_err(e)?;
    let hs = [0.2, 0.1, 0.05, 0.025];
    let rep = convergence_study(
        &prob,
        &dec,
        &SchemeConfig::new(Variant::NewUpwind, dec.min_k(), 0.1),
        &Engine::quadrature(),
        (-2.0, 2.0),
        1.0,
        &hs,
    )
    .map_err(e)?;
    let errs: Vec<String> = rep.rows.iter().map(|r| format!("{:.4}", r.sup_error)).collect();
    // C in err ≈ C h^p, geometric mean over the rows
    let log_c = rep.rows.iter().map(|r| (r.sup_error / r.h.powf(rep.p_hat)).ln()).sum::<f64>() / rep.rows.len() as f64;
    let line = format!("sup errors [{}], p_hat {:.3}, C {:.3}", errs.join(", "), rep.p_hat, log_c.exp());
    ensure(rep.strictly_decreasing() && rep.p_hat > 0.0, || line.clone())?;
    Ok(line)
}

// 9: distributivity
fn distributivity() -> Outcome {
    const TOL: f64 = 1e-12;
    let prob = registry::builtin("lq1d").map_err(e)?;
    let mut r = rng(909);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let (n_w, report) = if inst % 2 == 0 {
            let engine = if inst % 4 == 0 {
                Engine::Rademacher
            } else {
                Engine::Quadrature { nodes_per_dim: 2, split: true }
            };
            let s = scheme_for(&prob, Variant::NewUpwind, 0, 0.1, &engine)?;
            let x = [r.random_range(-2.0..2.0)];
            let n_w = s.measure().len();
            let nz = r.random_range(1..=((1e4f64).powf(1.0 / n_w as f64).floor() as usize).min(6));
            let succ = s.successor_points(0, &x);
            let phi: Vec<Vec<f64>> = (0..nz)
                .map(|_| {
                    let q = random_quadratic(&mut r, 1);
                    succ.iter().map(|y| eval_quadratic(&q, y)).collect()
                })
                .collect();
            (n_w, distribute_check(|v: &[f64]| s.g_operator(0, &x, s.measure(), v).unwrap().0, &phi).map_err(e)?)
        } else {
            // max of nonnegative affine functionals: monotone, not linear
            let n_w = r.random_range(2..=6);
            let nz = r.random_range(1..=((1e4f64).powf(1.0 / n_w as f64).floor() as usize).min(5));
            let rows: Vec<(Vec<f64>, f64)> = (0..3)
                .map(|_| ((0..n_w).map(|_| r.random_range(0.0..1.0)).collect(), r.random_range(-1.0..1.0)))
                .collect();
            let g = |v: &[f64]| {
                rows.iter()
                    .map(|(a, c)| a.iter().zip(v).map(|(p, q)| p * q).sum::<f64>() + c)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let phi: Vec<Vec<f64>> = (0..nz).map(|_| (0..n_w).map(|_| normal(&mut r)).collect()).collect();
            (n_w, distribute_check(g, &phi).map_err(e)?)
        };
        ensure(report.brute_force, || format!("instance {inst} with |W| = {n_w} was not brute forced"))?;
        worst = worst.max((report.g_of_max - report.best_selection).abs());
    }
    ensure(worst <= TOL, || format!("max gap {worst:e}"))?;
    Ok(format!("100 brute-forced instances, max gap {worst:.1e} (tol {TOL:.0e})"))
}

// 10: max-plus end to end
fn maxplus_end_to_end() -> Outcome {
    const H: f64 = 0.1;
    const REPLICATES: usize = 5;
    let prob = registry::builtin("lq1d").map_err(e)?;
    let s = scheme_for(&prob, Variant::NewUpwind, 0, H, &Engine::quadrature())?;
    let plan = SamplePlan {
        target: TargetMode::Quadrature,
        ..SamplePlan::new(500, 25, 25, 2024)
    };
    let pts: Vec<f64> = (0..=40).map(|i| -1.0 + 0.05 * i as f64).collect();
    let sup_err = |f: &dyn Fn(f64) -> hjb_core::Result<f64>| -> hjb_core::Result<f64> {
        pts.iter().try_fold(0.0f64, |m, &x| Ok(m.max((f(x)? - lq1d_exact(0.0, x)).abs())))
    };

    let v = solve_maxplus(&s, &plan).map_err(e)?;
    for layer in &v.layers {
        ensure(layer.forms.len() <= plan.n_in, || format!("{} forms at t {}", layer.forms.len(), layer.t))?;
        ensure(layer.forms.iter().all(|f| f.largest_eigenvalue() <= NSD_TOL), || format!("non-NSD form at t {}", layer.t))?;
    }
    let again = solve_maxplus(&s, &plan).map_err(e)?;
    ensure(v.to_json().map_err(e)? == again.to_json().map_err(e)?, || "reruns differ".into())?;
    let mp_err = sup_err(&|x| v.eval(0.0, &[x])).map_err(e)?;
    let boot = bootstrap(&s, &plan, REPLICATES, |val| sup_err(&|x| val.eval(0.0, &[x]))).map_err(e)?;

    let n = (4.0 / H).round() as usize + 1;
    let grid = solve_grid(&s, &GridSpec::cube(1, -2.0, 2.0, n)).map_err(e)?;
    let grid_err = sup_err(&|x| grid.eval(0.0, &[x])).map_err(e)?;

    let max_forms = v.layers.iter().map(|l| l.forms.len()).max().unwrap_or(0);
    let line = format!(
        "sup error {mp_err:.4} vs grid {grid_err:.4} + 3 x SE {:.4}; max |Z_t| {max_forms}; reruns bit-identical",
        boot.std_err
    );
    ensure(mp_err <= grid_err + 3.0 * boot.std_err, || line.clone())?;
    Ok(line)
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "weight laws", budget: Duration::from_secs(10), run: weight_laws },
        Criterion { id: 2, name: "polynomial exactness", budget: Duration::from_secs(5), run: exactness },
        Criterion { id: 3, name: "consistency orders", budget: Duration::from_secs(30), run: consistency_orders },
        Criterion { id: 4, name: "monotonicity", budget: Duration::from_secs(60), run: monotonicity },
        Criterion { id: 5, name: "subhomogeneity", budget: Duration::from_secs(30), run: subhomogeneity },
        Criterion { id: 6, name: "scheme equivalences", budget: Duration::from_secs(20), run: equivalences },
        Criterion { id: 7, name: "Kushner equivalence", budget: Duration::from_secs(5), run: kushner },
        Criterion { id: 8, name: "LQ grid convergence", budget: Duration::from_secs(120), run: lq_convergence },
        Criterion { id: 9, name: "distributivity", budget: Duration::from_secs(10), run: distributivity },
        Criterion { id: 10, name: "max-plus end to end", budget: Duration::from_secs(300), run: maxplus_end_to_end },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<22} {} [{:.2}s] {}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
