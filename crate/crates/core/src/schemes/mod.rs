//! One-step scheme operators built on a decomposition and an expectation engine.
//!
//! Every (mode, control) branch of a scheme is written as a ratio `T^N / T^D`, where `T^N`
//! is linear in the payoff `φ` and `T^D > 0` does not depend on it. Variants without a
//! denominator use `T^D = 1`. The one-step operator is `T(φ)(x) = max T^N / T^D` and the
//! discretized HJB operator is `𝒦(x, r, φ) = −max h⁻¹ (T^N − T^D r)`.

mod checks;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

pub use checks::{
    check_monotone, check_subhomogeneous, kappa_consistency, BumpField, MonotoneReport, SubhomogeneityReport,
};

use crate::decomp::Decomposition;
use crate::error::{HjbError, Result};
use crate::expect::{Engine, EulerStepper, Measure};
use crate::linalg;
use crate::problem::{Argmax, ControlProblem};
use crate::weights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Upwind first-order weight with a denominator, monotone for `a_bar ≤ 4k+2`.
    NewUpwind,
    /// Centered first-order weight, second-order polynomial weight, no denominator.
    PriorFodjo2,
    /// Classical derivative weights plugged into the remainder Hamiltonian.
    FtwBaseline,
}

impl FromStr for Variant {
    type Err = HjbError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "new_upwind" => Variant::NewUpwind,
            "prior_fodjo2" => Variant::PriorFodjo2,
            "ftw_baseline" => Variant::FtwBaseline,
            other => return Err(HjbError::Config(format!("unknown scheme variant '{other}'"))),
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::NewUpwind => "new_upwind",
            Variant::PriorFodjo2 => "prior_fodjo2",
            Variant::FtwBaseline => "ftw_baseline",
        })
    }
}

/// Treatment of the discount `δ` in the new scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DeltaMode {
    /// Requires `δ ≥ 0`; `T^D = 1 + hδ + …`.
    Nonnegative,
    /// `T^D = 1 + hδ + …`, kept positive through `h ≤ h0`.
    #[default]
    LowerBounded,
    /// `δ₋` moves to the numerator and only `δ₊` stays in `T^D`.
    GeneralSign,
}

impl FromStr for DeltaMode {
    type Err = HjbError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nonnegative" => DeltaMode::Nonnegative,
            "lower_bounded" => DeltaMode::LowerBounded,
            "general_sign" => DeltaMode::GeneralSign,
            other => return Err(HjbError::Config(format!("unknown delta mode '{other}'"))),
        })
    }
}

impl fmt::Display for DeltaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaMode::Nonnegative => "nonnegative",
            DeltaMode::LowerBounded => "lower_bounded",
            DeltaMode::GeneralSign => "general_sign",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub variant: Variant,
    /// Exponent index of the second-order weight.
    pub k: u32,
    pub h: f64,
    /// User cap on the step; the effective threshold is `min(h0, 1/(2λ))`.
    pub h0: Option<f64>,
    pub delta_mode: DeltaMode,
}

impl SchemeConfig {
    pub fn new(variant: Variant, k: u32, h: f64) -> Self {
        Self {
            variant,
            k,
            h,
            h0: None,
            delta_mode: DeltaMode::default(),
        }
    }
}

/// Weighted moments of successor values `v_j = φ(S(x, √h z_j))`.
#[derive(Clone, Debug)]
struct Moments {
    d0: f64,
    plus: Vec<f64>,
    minus: Vec<f64>,
    first: Vec<f64>,
    second: Option<DMatrix<f64>>,
}

impl Moments {
    fn new(measure: &Measure, vals: &[f64], with_second: bool) -> Self {
        let d = measure.dim();
        let mut m = Moments {
            d0: 0.0,
            plus: vec![0.0; d],
            minus: vec![0.0; d],
            first: vec![0.0; d],
            second: with_second.then(|| DMatrix::zeros(d, d)),
        };
        for (j, &v) in vals.iter().enumerate() {
            let wv = measure.weight(j) * v;
            let z = measure.node(j);
            m.d0 += wv;
            for i in 0..d {
                m.first[i] += wv * z[i];
                if z[i] > 0.0 {
                    m.plus[i] += wv * z[i];
                } else {
                    m.minus[i] -= wv * z[i];
                }
            }
            if let Some(s) = m.second.as_mut() {
                for a in 0..d {
                    for b in 0..d {
                        let e = z[a] * z[b] - if a == b { 1.0 } else { 0.0 };
                        s[(a, b)] += wv * e;
                    }
                }
            }
        }
        m
    }
}

/// A scheme bound to a problem, its decomposition and an expectation measure.
#[derive(Clone, Debug)]
pub struct Scheme {
    prob: ControlProblem,
    decomp: Decomposition,
    cfg: SchemeConfig,
    engine: Engine,
    measure: Measure,
    steppers: Vec<EulerStepper>,
    /// `𝒫²_{Σ^m,k}(z_j)` per mode and node.
    poly2_nodes: Vec<Vec<f64>>,
    /// `Σ^m Σ^mᵀ`
    residual_gram: Vec<DMatrix<f64>>,
    lambda: f64,
    h0: f64,
}

impl Scheme {
    pub fn new(prob: &ControlProblem, decomp: &Decomposition, cfg: SchemeConfig, engine: &Engine) -> Result<Self> {
        let h = cfg.h;
        if !(h > 0.0) || !h.is_finite() {
            return Err(HjbError::StepSize { h, reason: "must be positive and finite".into() });
        }
        if decomp.dim() != prob.dim() || decomp.num_modes() != prob.modes().len() {
            return Err(HjbError::Dimension("decomposition does not match the problem".into()));
        }
        if prob.controls().is_empty() {
            return Err(HjbError::Config("empty control grid".into()));
        }
        let delta_low = prob.delta_lower();
        if cfg.delta_mode == DeltaMode::Nonnegative && delta_low < 0.0 {
            return Err(HjbError::Config(format!(
                "delta mode 'nonnegative' needs delta >= 0, smallest delta is {delta_low}"
            )));
        }
        let lambda = (-delta_low).max(0.0);
        let mut h0 = cfg.h0.unwrap_or(f64::INFINITY);
        if lambda > 0.0 {
            h0 = h0.min(0.5 / lambda);
        }
        if h > h0 {
            return Err(HjbError::StepSize {
                h,
                reason: format!("exceeds the validity threshold h0 = {h0}"),
            });
        }
        let (ck, dk) = weights::ck_dk(cfg.k)?;
        let deg = 4 * cfg.k as i32 + 2;
        let measure = engine.measure(prob.dim())?;
        let nm = decomp.num_modes();
        let steppers = (0..nm).map(|m| EulerStepper::new(decomp.underlying(m))).collect();
        let poly2_nodes = (0..nm)
            .map(|m| {
                let s = decomp.residual_factor(m);
                (0..measure.len()).map(|j| weights::poly2_eval_with(s, ck, dk, deg, measure.node(j))).collect()
            })
            .collect();
        let residual_gram = (0..nm)
            .map(|m| {
                let s = decomp.residual_factor(m);
                s * s.transpose()
            })
            .collect();
        Ok(Self {
            prob: prob.clone(),
            decomp: decomp.clone(),
            cfg,
            engine: engine.clone(),
            measure,
            steppers,
            poly2_nodes,
            residual_gram,
            lambda,
            h0,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn problem(&self) -> &ControlProblem {
        &self.prob
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomp
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn h(&self) -> f64 {
        self.cfg.h
    }

    /// Effective step threshold.
    pub fn h0(&self) -> f64 {
        self.h0
    }

    /// `λ = max(0, −inf δ)`
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn stepper(&self, m: usize) -> &EulerStepper {
        &self.steppers[m]
    }

    /// True when the new scheme's monotonicity conditions hold.
    pub fn monotone_guaranteed(&self) -> bool {
        self.cfg.variant == Variant::NewUpwind
            && self.decomp.a_bar() <= (4 * self.cfg.k + 2) as f64
            && self.cfg.h <= self.h0
            && self.measure.weights().iter().all(|w| *w >= 0.0)
    }

    /// Successor states `S^m(x, √h z_j)` in node order.
    pub fn successor_points(&self, m: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let st = &self.steppers[m];
        let mean = st.mean(x, self.cfg.h);
        let s = self.cfg.h.sqrt();
        (0..self.measure.len())
            .map(|j| {
                let mut y = vec![0.0; x.len()];
                st.step_from_mean(&mean, s, self.measure.node(j), &mut y);
                y
            })
            .collect()
    }

    /// `φ` at the successors of mode `m`, evaluated sequentially.
    pub fn successor_values<F>(&self, m: usize, x: &[f64], phi: &F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.check_x(x)?;
        let st = &self.steppers[m];
        let mean = st.mean(x, self.cfg.h);
        let s = self.cfg.h.sqrt();
        let mut y = vec![0.0; x.len()];
        let mut out = Vec::with_capacity(self.measure.len());
        for j in 0..self.measure.len() {
            st.step_from_mean(&mean, s, self.measure.node(j), &mut y);
            let v = phi(&y);
            if !v.is_finite() {
                return Err(HjbError::NonFinite { location: y });
            }
            out.push(v);
        }
        Ok(out)
    }

    /// `T^N_{m,u}(φ)(x)` for control index `ui`.
    pub fn apply_tn<F>(&self, m: usize, ui: usize, x: &[f64], phi: &F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.check_branch(m, ui)?;
        let vals = self.successor_values(m, x, phi)?;
        let mom = Moments::new(&self.measure, &vals, self.needs_second());
        let p2 = self.poly2_moment(m, &vals);
        let gx = self.decomp.drift_residual_x(m, x);
        Ok(self.branch(m, ui, x, &gx, &mom, p2)?.0)
    }

    /// `T^D_{m,u}(x)` in closed form.
    pub fn apply_td(&self, m: usize, ui: usize, x: &[f64]) -> Result<f64> {
        self.check_branch(m, ui)?;
        self.check_x(x)?;
        let g = self.decomp.drift_residual(m, x, &self.prob.controls()[ui]);
        self.denominator(m, &g)
    }

    /// `T(φ)(x) = max_{m,u} T^N / T^D` with the maximizing branch.
    pub fn apply_t<F>(&self, x: &[f64], phi: &F) -> Result<(f64, Argmax)>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.maximize(x, phi, None)
    }

    /// `𝒦(x, r, φ) = −max_{m,u} h⁻¹ (T^N(φ)(x) − T^D(x) r)`
    pub fn apply_k<F>(&self, x: &[f64], r: f64, phi: &F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        Ok(-self.maximize(x, phi, Some(r))?.0)
    }

    /// `max_u T^N / T^D` for one mode, with expectations taken over an arbitrary measure on
    /// standardized increments and `vals[j]` the payoff attached to node `j`.
    pub fn g_operator(&self, m: usize, x: &[f64], measure: &Measure, vals: &[f64]) -> Result<(f64, usize)> {
        self.check_x(x)?;
        if measure.dim() != x.len() || vals.len() != measure.len() {
            return Err(HjbError::Dimension(format!(
                "{} values for a {}-node measure of dimension {}",
                vals.len(),
                measure.len(),
                measure.dim()
            )));
        }
        let mom = Moments::new(measure, vals, self.needs_second());
        let (ck, dk) = weights::ck_dk(self.cfg.k)?;
        let deg = 4 * self.cfg.k as i32 + 2;
        let s = self.decomp.residual_factor(m);
        let p2: f64 = (0..measure.len())
            .map(|j| measure.weight(j) * vals[j] * weights::poly2_eval_with(s, ck, dk, deg, measure.node(j)))
            .sum();
        let gx = self.decomp.drift_residual_x(m, x);
        let mut best = (f64::NEG_INFINITY, 0);
        for ui in 0..self.prob.controls().len() {
            let (tn, td) = self.branch(m, ui, x, &gx, &mom, p2)?;
            let v = tn / td;
            if v > best.0 {
                best = (v, ui);
            }
        }
        Ok(best)
    }

    /// Multipliers of `φ(S(x, √h z_j))` in `T^N_{m,u}` divided by the node weight, so that
    /// `T^N = hℓ + Σ_j w_j mult_j φ_j` (up to `h ℓ` terms). Monotonicity of the branch is
    /// equivalent to all multipliers being nonnegative.
    pub fn node_multipliers(&self, m: usize, ui: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_branch(m, ui)?;
        self.check_x(x)?;
        let h = self.cfg.h;
        let sh = h.sqrt();
        let mode = self.prob.mode(m);
        let g = self.decomp.drift_residual(m, x, &self.prob.controls()[ui]);
        let gram = &self.residual_gram[m];
        let d = x.len();
        let out = (0..self.measure.len())
            .map(|j| {
                let z = self.measure.node(j);
                match self.cfg.variant {
                    Variant::NewUpwind => {
                        let zs: Vec<f64> = z.iter().map(|v| v / sh).collect();
                        let dn = match self.cfg.delta_mode {
                            DeltaMode::GeneralSign => (-mode.delta).max(0.0),
                            _ => 0.0,
                        };
                        1.0 + h * weights::upwind1_eval(&g, &zs) + self.poly2_nodes[m][j] + h * dn
                    }
                    Variant::PriorFodjo2 => 1.0 - mode.delta * h + sh * linalg::dot(&g, z) + self.poly2_nodes[m][j],
                    Variant::FtwBaseline => {
                        let mut tr = 0.0;
                        for a in 0..d {
                            for b in 0..d {
                                tr += gram[(a, b)] * (z[a] * z[b] - if a == b { 1.0 } else { 0.0 });
                            }
                        }
                        1.0 - mode.delta * h + sh * linalg::dot(&g, z) + 0.5 * tr
                    }
                }
            })
            .collect();
        Ok(out)
    }

    fn maximize<F>(&self, x: &[f64], phi: &F, r: Option<f64>) -> Result<(f64, Argmax)>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        self.check_x(x)?;
        let h = self.cfg.h;
        let second = self.needs_second();
        let proj = self.decomp.projection();
        let mut cache: Vec<Option<(Vec<f64>, Moments)>> = vec![None; self.decomp.classes().iter().max().map_or(0, |c| c + 1)];
        let mut best = (f64::NEG_INFINITY, Argmax { mode: 0, control: 0 });
        for m in 0..self.decomp.num_modes() {
            let c = proj[m];
            if cache[c].is_none() {
                let vals = self.successor_values(m, x, phi)?;
                let mom = Moments::new(&self.measure, &vals, second);
                cache[c] = Some((vals, mom));
            }
            let (vals, mom) = cache[c].as_ref().expect("class moments computed above");
            let p2 = self.poly2_moment(m, vals);
            let gx = self.decomp.drift_residual_x(m, x);
            for ui in 0..self.prob.controls().len() {
                let (tn, td) = self.branch(m, ui, x, &gx, mom, p2)?;
                let v = match r {
                    None => tn / td,
                    Some(r) => (tn - td * r) / h,
                };
                if v > best.0 {
                    best = (v, Argmax { mode: m, control: ui });
                }
            }
        }
        Ok(best)
    }

    fn needs_second(&self) -> bool {
        self.cfg.variant == Variant::FtwBaseline
    }

    fn poly2_moment(&self, m: usize, vals: &[f64]) -> f64 {
        let p = &self.poly2_nodes[m];
        vals.iter().enumerate().map(|(j, v)| self.measure.weight(j) * v * p[j]).sum()
    }

    fn denominator(&self, m: usize, g: &[f64]) -> Result<f64> {
        if self.cfg.variant != Variant::NewUpwind {
            return Ok(1.0);
        }
        let h = self.cfg.h;
        let delta = self.prob.mode(m).delta;
        let dd = match self.cfg.delta_mode {
            DeltaMode::GeneralSign => delta.max(0.0),
            _ => delta,
        };
        let td = 1.0 + h * dd + h * weights::upwind1_mean(g, h);
        if !(td > 0.0) {
            return Err(HjbError::StepSize {
                h,
                reason: format!("denominator {td} is not positive in mode {m}"),
            });
        }
        Ok(td)
    }

    /// `(T^N, T^D)` of one branch from precomputed moments.
    fn branch(&self, m: usize, ui: usize, x: &[f64], gx: &[f64], mom: &Moments, p2: f64) -> Result<(f64, f64)> {
        let h = self.cfg.h;
        let sh = h.sqrt();
        let mode = self.prob.mode(m);
        let u = &self.prob.controls()[ui];
        let mut g = gx.to_vec();
        let gain = self.decomp.drift_residual_gain(m);
        for (i, gi) in g.iter_mut().enumerate() {
            for (l, ul) in u.iter().enumerate() {
                *gi += gain[(i, l)] * ul;
            }
        }
        let ell = mode.running_reward(x, u);
        let delta = mode.delta;
        let (tn, td) = match self.cfg.variant {
            Variant::NewUpwind => {
                let mut up = 0.0;
                for (i, gi) in g.iter().enumerate() {
                    up += gi.max(0.0) * mom.plus[i] + (-gi).max(0.0) * mom.minus[i];
                }
                let dn = match self.cfg.delta_mode {
                    DeltaMode::GeneralSign => (-delta).max(0.0),
                    _ => 0.0,
                };
                let tn = mom.d0 + h * ell + 2.0 * sh * up + p2 + h * dn * mom.d0;
                (tn, self.denominator(m, &g)?)
            }
            Variant::PriorFodjo2 => (mom.d0 * (1.0 - delta * h) + h * ell + sh * linalg::dot(&g, &mom.first) + p2, 1.0),
            Variant::FtwBaseline => {
                let second = mom.second.as_ref().expect("second moments requested for this variant");
                let tr = (&self.residual_gram[m] * second).trace();
                (mom.d0 * (1.0 - delta * h) + h * ell + sh * linalg::dot(&g, &mom.first) + 0.5 * tr, 1.0)
            }
        };
        if !tn.is_finite() {
            return Err(HjbError::Domain {
                mode: m,
                control: ui,
                x: x.to_vec(),
            });
        }
        Ok((tn, td))
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.prob.dim() {
            return Err(HjbError::Dimension(format!("x has {} entries, expected {}", x.len(), self.prob.dim())));
        }
        Ok(())
    }

    fn check_branch(&self, m: usize, ui: usize) -> Result<()> {
        if m >= self.decomp.num_modes() || ui >= self.prob.controls().len() {
            return Err(HjbError::Config(format!("no branch (mode {m}, control {ui})")));
        }
        Ok(())
    }
}
