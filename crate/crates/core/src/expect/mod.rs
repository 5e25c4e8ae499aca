//! Expectations over the Brownian increment and the derivative estimators built on them.
//!
//! Every engine produces a discrete [`Measure`] on the standardized increment
//! `z = h^{−1/2} W`, so that `W = √h z`. Quadrature measures are exact for polynomials up to
//! a known degree; the split rule is also exact for integrands with a kink at each
//! coordinate hyperplane. Monte Carlo measures come from a pre-drawn table and additionally
//! report standard errors.

mod consistency;
pub mod quadrature;
mod testfn;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use consistency::{fit_order, fmt17, consistency_study, ConsistencyReport, ConsistencyRow, ConsistencySetup, EstimatorKind};
pub use testfn::{TestFunction, TEST_FUNCTION_NAMES};

use crate::decomp::Underlying;
use crate::error::{HjbError, Result};
use crate::linalg;
use crate::weights;

/// Nodes per half-axis of the high-order rule used by [`Engine::Analytic`].
pub const ANALYTIC_NODES: usize = 20;

/// Value of an expectation, with a standard error for sampled measures (zero otherwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    /// Tensor Gauss rule; with `split` each axis uses `nodes_per_dim` half-normal nodes on
    /// each side of zero.
    Quadrature { nodes_per_dim: usize, split: bool },
    /// Pre-drawn standard normal table of `samples` rows from a ChaCha stream.
    MonteCarlo { samples: usize, seed: u64 },
    /// High-order split rule; exact for every piecewise polynomial weight used here.
    Analytic,
    /// Symmetric ±1 increments on each axis.
    Rademacher,
}

impl Engine {
    /// Default quadrature: 7 nodes per half-axis, split at zero.
    pub fn quadrature() -> Self {
        Engine::Quadrature {
            nodes_per_dim: 7,
            split: true,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Engine::Quadrature { nodes_per_dim, split } => {
                format!("quad(n={nodes_per_dim}{})", if *split { ",split" } else { "" })
            }
            Engine::MonteCarlo { samples, seed } => format!("mc(n={samples},seed={seed})"),
            Engine::Analytic => "analytic".into(),
            Engine::Rademacher => "rademacher".into(),
        }
    }

    pub fn measure(&self, d: usize) -> Result<Measure> {
        match *self {
            Engine::Quadrature { nodes_per_dim, split } => {
                let rule = if split {
                    quadrature::split_normal(nodes_per_dim)?
                } else {
                    quadrature::hermite(nodes_per_dim)?
                };
                Measure::tensor(&rule, d)
            }
            Engine::Analytic => Measure::tensor(&quadrature::split_normal(ANALYTIC_NODES)?, d),
            Engine::Rademacher => Measure::tensor(
                &quadrature::Rule {
                    nodes: vec![-1.0, 1.0],
                    weights: vec![0.5, 0.5],
                },
                d,
            ),
            Engine::MonteCarlo { samples, seed } => {
                if samples < 2 {
                    return Err(HjbError::Config("Monte Carlo needs at least 2 samples".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z: Vec<f64> = (0..samples * d).map(|_| StandardNormal.sample(&mut rng)).collect();
                Measure::samples(z, d)
            }
        }
    }
}

/// Finite measure on standardized increments.
#[derive(Clone, Debug)]
pub struct Measure {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    sampled: bool,
}

impl Measure {
    /// Tensor product of a one-dimensional rule, first axis slowest.
    pub fn tensor(rule: &quadrature::Rule, d: usize) -> Result<Self> {
        let n1 = rule.nodes.len();
        let total = n1.checked_pow(d as u32).filter(|&n| n <= 50_000_000).ok_or_else(|| {
            HjbError::Config(format!("tensor rule with {n1}^{d} nodes is too large"))
        })?;
        let mut nodes = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for &i in &idx {
                nodes.push(rule.nodes[i]);
                w *= rule.weights[i];
            }
            weights.push(w);
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < n1 {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self {
            dim: d,
            nodes,
            weights,
            sampled: false,
        })
    }

    /// Equally weighted sample of standardized increments, stored row by row.
    pub fn samples(z: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 || !z.len().is_multiple_of(d) || z.is_empty() {
            return Err(HjbError::Dimension(format!("{} sample entries do not form rows of length {d}", z.len())));
        }
        let n = z.len() / d;
        Ok(Self {
            dim: d,
            nodes: z,
            weights: vec![1.0 / n as f64; n],
            sampled: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_sampled(&self) -> bool {
        self.sampled
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest coordinate magnitude over the nodes.
    pub fn max_abs_node(&self) -> f64 {
        self.nodes.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `Σ_j w_j y_j`, with the sample standard error for sampled measures.
    pub fn combine(&self, y: &[f64]) -> Estimate {
        let value: f64 = self.weights.iter().zip(y).map(|(w, v)| w * v).sum();
        let std_err = if self.sampled {
            let n = y.len() as f64;
            let var = y.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Estimate { value, std_err }
    }

    /// `E[f(z)]`, evaluated in parallel and reduced in node order.
    pub fn expect<F>(&self, f: F) -> Result<Estimate>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let y: Vec<f64> = (0..self.len()).into_par_iter().map(|i| f(self.node(i))).collect();
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(HjbError::NonFinite {
                location: self.node(i).to_vec(),
            });
        }
        Ok(self.combine(&y))
    }
}

/// Euler step `S(x, W) = x + f̲(x) h + σ̲ W` of an uncontrolled linear diffusion.
#[derive(Clone, Debug)]
pub struct EulerStepper {
    pub a: DMatrix<f64>,
    pub f0: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl EulerStepper {
    pub fn new(under: &Underlying) -> Self {
        Self {
            a: under.a.clone(),
            f0: under.f0.clone(),
            sigma: under.sigma.clone(),
        }
    }

    pub fn driftless(sigma: DMatrix<f64>) -> Self {
        Self::new(&Underlying::driftless(sigma))
    }

    pub fn dim(&self) -> usize {
        self.f0.len()
    }

    /// Deterministic part `x + f̲(x) h` of the step.
    pub fn mean(&self, x: &[f64], h: f64) -> Vec<f64> {
        let mut out = linalg::matvec(&self.a, x);
        for i in 0..out.len() {
            out[i] = x[i] + (out[i] + self.f0[i]) * h;
        }
        out
    }

    /// `S(x, √h z)` written into `out`, given `mean = x + f̲(x) h`.
    pub fn step_from_mean(&self, mean: &[f64], sqrt_h: f64, z: &[f64], out: &mut [f64]) {
        let d = mean.len();
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.sigma[(i, j)] * z[j];
            }
            out[i] = mean[i] + sqrt_h * s;
        }
    }

    /// `S(x, W)` with `W = √h z`.
    pub fn step(&self, x: &[f64], h: f64, z: &[f64]) -> Vec<f64> {
        let mean = self.mean(x, h);
        let mut out = vec![0.0; x.len()];
        self.step_from_mean(&mean, h.sqrt(), z, &mut out);
        out
    }
}

/// `φ(S(x, √h z_j))` for every node of the measure.
pub fn successor_values<F>(measure: &Measure, stepper: &EulerStepper, x: &[f64], h: f64, phi: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_dims(measure, stepper, x)?;
    let mean = stepper.mean(x, h);
    let s = h.sqrt();
    let vals: Vec<(f64, Option<Vec<f64>>)> = (0..measure.len())
        .into_par_iter()
        .map(|j| {
            let mut y = vec![0.0; x.len()];
            stepper.step_from_mean(&mean, s, measure.node(j), &mut y);
            let v = phi(&y);
            if v.is_finite() {
                (v, None)
            } else {
                (v, Some(y))
            }
        })
        .collect();
    let mut out = Vec::with_capacity(vals.len());
    for (v, bad) in vals {
        if let Some(location) = bad {
            return Err(HjbError::NonFinite { location });
        }
        out.push(v);
    }
    Ok(out)
}

fn check_dims(measure: &Measure, stepper: &EulerStepper, x: &[f64]) -> Result<()> {
    if measure.dim() != x.len() || stepper.dim() != x.len() {
        return Err(HjbError::Dimension(format!(
            "measure is {}-dimensional, stepper {}-dimensional, x has {} entries",
            measure.dim(),
            stepper.dim(),
            x.len()
        )));
    }
    Ok(())
}

fn weighted<M>(measure: &Measure, vals: &[f64], mult: M) -> Estimate
where
    M: Fn(&[f64], f64) -> f64,
{
    let y: Vec<f64> = vals.iter().enumerate().map(|(j, v)| mult(measure.node(j), *v)).collect();
    measure.combine(&y)
}

/// `𝒟⁰ = E[φ(S(x, W))]`
pub fn estimate_d0<F>(measure: &Measure, stepper: &EulerStepper, x: &[f64], h: f64, phi: F) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let vals = successor_values(measure, stepper, x, h, phi)?;
    Ok(measure.combine(&vals))
}

/// `𝒟¹ = E[(φ(S(x, W)) − r) 𝒫¹_g(W / h)]`
pub fn estimate_d1_upwind<F>(
    measure: &Measure,
    stepper: &EulerStepper,
    g: &[f64],
    x: &[f64],
    h: f64,
    phi: F,
    r: f64,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if g.len() != x.len() {
        return Err(HjbError::Dimension(format!("g has {} entries, x has {}", g.len(), x.len())));
    }
    let vals = successor_values(measure, stepper, x, h, phi)?;
    let inv = 1.0 / h.sqrt();
    Ok(weighted(measure, &vals, |z, v| {
        let w: Vec<f64> = z.iter().map(|zi| zi * inv).collect();
        (v - r) * weights::upwind1_eval(g, &w)
    }))
}

/// `𝒟² = h⁻¹ E[φ(S(x, W)) 𝒫²_{Σ,k}(W / √h)]`
pub fn estimate_d2_poly<F>(
    measure: &Measure,
    stepper: &EulerStepper,
    sigma_res: &DMatrix<f64>,
    k: u32,
    x: &[f64],
    h: f64,
    phi: F,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if sigma_res.nrows() != x.len() {
        return Err(HjbError::Dimension(format!("Sigma has {} rows, x has {} entries", sigma_res.nrows(), x.len())));
    }
    let (ck, dk) = weights::ck_dk(k)?;
    let deg = 4 * k as i32 + 2;
    let vals = successor_values(measure, stepper, x, h, phi)?;
    let e = weighted(measure, &vals, |z, v| v * weights::poly2_eval_with(sigma_res, ck, dk, deg, z));
    Ok(Estimate {
        value: e.value / h,
        std_err: e.std_err / h,
    })
}

/// Vector or matrix estimate with entrywise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixEstimate {
    pub value: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
}

/// Gradient estimate `E[φ(S) (σ̲ᵀ)⁻¹ W / h]`, returned as a `d × 1` matrix.
pub fn estimate_d1_ftw<F>(measure: &Measure, stepper: &EulerStepper, x: &[f64], h: f64, phi: F) -> Result<MatrixEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let inv_t = linalg::inverse(&stepper.sigma.transpose())?;
    let vals = successor_values(measure, stepper, x, h, phi)?;
    let d = x.len();
    let s = h.sqrt();
    let mut value = DMatrix::zeros(d, 1);
    let mut std_err = DMatrix::zeros(d, 1);
    for i in 0..d {
        let e = weighted(measure, &vals, |z, v| {
            let row: f64 = (0..d).map(|j| inv_t[(i, j)] * z[j]).sum();
            v * row / s
        });
        value[(i, 0)] = e.value;
        std_err[(i, 0)] = e.std_err;
    }
    Ok(MatrixEstimate { value, std_err })
}

/// Hessian estimate `E[φ(S) (σ̲ᵀ)⁻¹ (WWᵀ − hI) σ̲⁻¹] / h²`.
pub fn estimate_d2_ftw<F>(measure: &Measure, stepper: &EulerStepper, x: &[f64], h: f64, phi: F) -> Result<MatrixEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let inv = linalg::inverse(&stepper.sigma)?;
    let vals = successor_values(measure, stepper, x, h, phi)?;
    let d = x.len();
    let mut value = DMatrix::zeros(d, d);
    let mut std_err = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            // [σ̲⁻ᵀ (zzᵀ − I) σ̲⁻¹]_{ab} = (σ̲⁻ᵀz)_a (σ̲⁻ᵀz)_b − (σ̲⁻ᵀσ̲⁻¹)_{ab}
            let e = weighted(measure, &vals, |z, v| {
                let ya: f64 = (0..d).map(|j| inv[(j, a)] * z[j]).sum();
                let yb: f64 = (0..d).map(|j| inv[(j, b)] * z[j]).sum();
                let c: f64 = (0..d).map(|j| inv[(j, a)] * inv[(j, b)]).sum();
                v * (ya * yb - c) / h
            });
            value[(a, b)] = e.value;
            std_err[(a, b)] = e.std_err;
        }
    }
    Ok(MatrixEstimate { value, std_err })
}
