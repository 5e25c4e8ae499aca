//! Randomized audits of monotonicity and subhomogeneity, and the consistency of `𝒦`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Scheme, SchemeConfig};
use crate::decomp::Decomposition;
use crate::error::{HjbError, Result};
use crate::expect::{ConsistencyReport, ConsistencyRow, Engine, TestFunction};
use crate::problem::{ControlProblem, HamiltonianPoint};

/// Tolerance of the ordering comparisons.
const ORDER_TOL: f64 = 1e-10;

/// Bounded piecewise-quadratic function `c + Σ_i a_i max(0, 1 − |y − c_i|² / r_i²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpField {
    pub offset: f64,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub amps: Vec<f64>,
}

impl BumpField {
    pub fn constant(c: f64) -> Self {
        Self {
            offset: c,
            centers: Vec::new(),
            radii: Vec::new(),
            amps: Vec::new(),
        }
    }

    /// `n` bumps centered uniformly in the box `center ± spread`, radii in
    /// `[0.1, 1] · spread` and amplitudes uniform in `[amp_lo, amp_hi]`.
    pub fn random<R: Rng>(rng: &mut R, center: &[f64], spread: f64, n: usize, amp_lo: f64, amp_hi: f64) -> Self {
        let mut f = Self::constant(0.0);
        for _ in 0..n {
            f.centers.push(center.iter().map(|c| c + spread * rng.random_range(-1.0..1.0)).collect());
            f.radii.push(spread * rng.random_range(0.1..1.0));
            f.amps.push(rng.random_range(amp_lo..=amp_hi));
        }
        f
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut v = self.offset;
        for ((c, r), a) in self.centers.iter().zip(&self.radii).zip(&self.amps) {
            let d2: f64 = c.iter().zip(y).map(|(ci, yi)| (ci - yi).powi(2)).sum();
            let s = 1.0 - d2 / (r * r);
            if s > 0.0 {
                v += a * s;
            }
        }
        v
    }

    /// Pointwise sum.
    pub fn plus(&self, other: &BumpField) -> Self {
        let mut f = self.clone();
        f.offset += other.offset;
        f.centers.extend(other.centers.iter().cloned());
        f.radii.extend(&other.radii);
        f.amps.extend(&other.amps);
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneReport {
    pub variant: String,
    pub trials: usize,
    pub violations: usize,
    /// Pairs built to differ only near the successor with the most negative multiplier.
    pub probe_trials: usize,
    pub probe_violations: usize,
    /// Smallest `T(ψ) − T(φ)` observed over all pairs.
    pub worst_margin: f64,
    /// Smallest payoff multiplier over nodes, branches and sampled states.
    pub min_node_weight: f64,
    /// Whether the configuration satisfies the monotonicity conditions of the new scheme.
    pub guaranteed: bool,
    /// State of the first violating pair, if any.
    pub first_violation: Option<Vec<f64>>,
}

impl MonotoneReport {
    pub fn total_violations(&self) -> usize {
        self.violations + self.probe_violations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubhomogeneityReport {
    pub trials: usize,
    /// `α_h = 1 + 2λh`
    pub alpha: f64,
    pub violations: usize,
    /// Largest `T(φ + c) − T(φ) − α c` observed.
    pub worst_excess: f64,
    /// Whether the exact pass-through `T(φ + c) − T(φ) ≤ c` was checked (all `δ ≥ 0`).
    pub passthrough_checked: bool,
    pub passthrough_violations: usize,
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn random_state<R: Rng>(rng: &mut R, prob: &ControlProblem) -> Vec<f64> {
    let w = prob.audit_window();
    (0..prob.dim()).map(|_| rng.random_range(w.lo..=w.hi)).collect()
}

/// Half-width of a box around `x` containing most successors of every mode.
fn reach(scheme: &Scheme, x: &[f64]) -> f64 {
    let h = scheme.h();
    (0..scheme.decomposition().num_modes())
        .map(|m| {
            let st = scheme.stepper(m);
            let row = (0..x.len())
                .map(|i| st.sigma.row(i).norm())
                .fold(0.0, f64::max);
            let mean = st.mean(x, h);
            let shift = mean.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            4.0 * h.sqrt() * row + shift
        })
        .fold(0.0, f64::max)
        .max(1e-3)
}

struct MonotoneTrial {
    margin: f64,
    probed: bool,
    probe_margin: f64,
    min_weight: f64,
    x: Vec<f64>,
}

/// Samples pairs `φ ≤ ψ` of random bump fields and compares `T(φ)(x)` with `T(ψ)(x)`.
/// Each trial also builds a probe pair differing only near the successor whose payoff
/// multiplier is most negative in the maximizing simulation class.
pub fn check_monotone(scheme: &Scheme, trials: usize, seed: u64) -> Result<MonotoneReport> {
    let prob = scheme.problem();
    let outcomes: Vec<MonotoneTrial> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let x = random_state(&mut rng, prob);
            let spread = reach(scheme, &x);
            let mut phi = BumpField::random(&mut rng, &x, spread, 6, -1.0, 1.0);
            phi.offset = rng.random_range(-1.0..1.0);
            let mut extra = BumpField::random(&mut rng, &x, spread, 3, 0.0, 1.0);
            extra.offset = rng.random_range(0.0..0.1);
            let psi = phi.plus(&extra);
            let (t_phi, arg) = scheme.apply_t(&x, &|y: &[f64]| phi.eval(y))?;
            let (t_psi, _) = scheme.apply_t(&x, &|y: &[f64]| psi.eval(y))?;
            let (probed, probe_margin, min_weight) = probe(scheme, &x, &phi, t_phi, arg.mode)?;
            Ok(MonotoneTrial {
                margin: t_psi - t_phi,
                probed,
                probe_margin,
                min_weight,
                x,
            })
        })
        .collect::<Result<_>>()?;
    let mut report = MonotoneReport {
        variant: scheme.config().variant.to_string(),
        trials,
        violations: 0,
        probe_trials: 0,
        probe_violations: 0,
        worst_margin: f64::INFINITY,
        min_node_weight: f64::INFINITY,
        guaranteed: scheme.monotone_guaranteed(),
        first_violation: None,
    };
    for o in outcomes {
        report.worst_margin = report.worst_margin.min(o.margin);
        report.min_node_weight = report.min_node_weight.min(o.min_weight);
        let mut bad = o.margin < -ORDER_TOL;
        if bad {
            report.violations += 1;
        }
        if o.probed {
            report.probe_trials += 1;
            report.worst_margin = report.worst_margin.min(o.probe_margin);
            if o.probe_margin < -ORDER_TOL {
                report.probe_violations += 1;
                bad = true;
            }
        }
        if bad && report.first_violation.is_none() {
            report.first_violation = Some(o.x);
        }
    }
    Ok(report)
}

/// Returns (probe built, `T(ψ) − T(φ)` of the probe pair, smallest multiplier at `x`).
fn probe(scheme: &Scheme, x: &[f64], phi: &BumpField, t_phi: f64, arg_mode: usize) -> Result<(bool, f64, f64)> {
    let decomp = scheme.decomposition();
    let proj = decomp.projection();
    let nu = scheme.problem().controls().len();
    let n = scheme.measure().len();
    let mut min_weight = f64::INFINITY;
    let mut best_mult = vec![f64::NEG_INFINITY; n];
    for m in 0..decomp.num_modes() {
        for ui in 0..nu {
            let mult = scheme.node_multipliers(m, ui, x)?;
            for (j, v) in mult.iter().enumerate() {
                min_weight = min_weight.min(*v);
                if proj[m] == proj[arg_mode] {
                    best_mult[j] = best_mult[j].max(*v);
                }
            }
        }
    }
    let (jstar, _) = best_mult
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, v)| if *v < acc.1 { (j, *v) } else { acc });
    let target = scheme.successor_points(arg_mode, x)[jstar].clone();
    let mut rho2 = f64::INFINITY;
    for m in 0..decomp.num_modes() {
        for (j, y) in scheme.successor_points(m, x).iter().enumerate() {
            if proj[m] == proj[arg_mode] && j == jstar {
                continue;
            }
            let d2: f64 = y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            rho2 = rho2.min(d2);
        }
    }
    if !(rho2 > 0.0 && rho2.is_finite()) {
        return Ok((false, 0.0, min_weight));
    }
    let bump = BumpField {
        offset: 0.0,
        centers: vec![target],
        radii: vec![0.5 * rho2.sqrt()],
        amps: vec![1.0],
    };
    let psi = phi.plus(&bump);
    let (t_psi, _) = scheme.apply_t(x, &|y: &[f64]| psi.eval(y))?;
    Ok((true, t_psi - t_phi, min_weight))
}

/// Checks `T(φ + c) ≤ T(φ) + α_h c` for random bump fields `φ` and shifts `c ∈ [0, 5]`,
/// and the exact pass-through `T(φ + c) ≤ T(φ) + c` when every discount is nonnegative.
pub fn check_subhomogeneous(scheme: &Scheme, trials: usize, seed: u64) -> Result<SubhomogeneityReport> {
    let prob = scheme.problem();
    let alpha = 1.0 + 2.0 * scheme.lambda() * scheme.h();
    let passthrough = prob.delta_lower() >= 0.0;
    let rows: Vec<(f64, f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let x = random_state(&mut rng, prob);
            let spread = reach(scheme, &x);
            let mut phi = BumpField::random(&mut rng, &x, spread, 6, -1.0, 1.0);
            phi.offset = rng.random_range(-1.0..1.0);
            let c = rng.random_range(0.0..5.0);
            let shifted = phi.plus(&BumpField::constant(c));
            let (a, _) = scheme.apply_t(&x, &|y: &[f64]| phi.eval(y))?;
            let (b, _) = scheme.apply_t(&x, &|y: &[f64]| shifted.eval(y))?;
            Ok((b - a, c, ORDER_TOL * (1.0 + a.abs() + c)))
        })
        .collect::<Result<_>>()?;
    let mut report = SubhomogeneityReport {
        trials,
        alpha,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        passthrough_checked: passthrough,
        passthrough_violations: 0,
    };
    for (diff, c, tol) in rows {
        let excess = diff - alpha * c;
        report.worst_excess = report.worst_excess.max(excess);
        if excess > tol {
            report.violations += 1;
        }
        if passthrough && diff - c > tol {
            report.passthrough_violations += 1;
        }
    }
    Ok(report)
}

/// Sup over `points` of `|𝒦(x, v(t,x), v(t+h,·)) + ∂_t v + ℋ(x, v, Dv, D²v)|` along
/// `h_list` for a smooth test function, with `ℋ` maximized over the same control grid as the
/// scheme. Each row reports target and estimate at the worst point.
#[allow(clippy::too_many_arguments)]
pub fn kappa_consistency(
    prob: &ControlProblem,
    decomp: &Decomposition,
    template: &SchemeConfig,
    engine: &Engine,
    testfn: TestFunction,
    t: f64,
    points: &[Vec<f64>],
    h_list: &[f64],
) -> Result<ConsistencyReport> {
    if h_list.len() < 3 {
        return Err(HjbError::Report(format!("an order fit needs at least 3 step sizes, got {}", h_list.len())));
    }
    if points.is_empty() {
        return Err(HjbError::Report("no evaluation points".into()));
    }
    let mut targets = Vec::with_capacity(points.len());
    for x in points {
        let pt = HamiltonianPoint::new(x.clone(), testfn.value(t, x), testfn.grad(t, x), testfn.hess(t, x))?;
        let (ham, _) = prob.hamiltonian(&pt)?;
        targets.push((pt.r, -(testfn.dt(t, x) + ham)));
    }
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let cfg = SchemeConfig { h, ..template.clone() };
        let scheme = Scheme::new(prob, decomp, cfg, engine)?;
        let phi = |y: &[f64]| testfn.value(t + h, y);
        let mut worst = ConsistencyRow {
            h,
            error: -1.0,
            target: 0.0,
            estimate: 0.0,
        };
        for (x, &(r, target)) in points.iter().zip(&targets) {
            let k = scheme.apply_k(x, r, &phi)?;
            if (k - target).abs() > worst.error {
                worst = ConsistencyRow {
                    h,
                    error: (k - target).abs(),
                    target,
                    estimate: k,
                };
            }
        }
        rows.push(worst);
    }
    ConsistencyReport::new("k".into(), testfn.name().into(), engine.name(), rows)
}
