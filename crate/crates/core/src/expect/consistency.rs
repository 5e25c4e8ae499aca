//! Empirical convergence orders of the estimators on smooth test functions.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::{
    estimate_d0, estimate_d1_ftw, estimate_d1_upwind, estimate_d2_ftw, estimate_d2_poly, Engine, EulerStepper,
    TestFunction,
};
use crate::error::{HjbError, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    D0,
    D1,
    D2,
    Ftw1,
    Ftw2,
}

impl EstimatorKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "d0" => Self::D0,
            "d1" => Self::D1,
            "d2" => Self::D2,
            "ftw1" => Self::Ftw1,
            "ftw2" => Self::Ftw2,
            other => return Err(HjbError::Config(format!("unknown estimator '{other}'"))),
        })
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::D0 => "d0",
            Self::D1 => "d1",
            Self::D2 => "d2",
            Self::Ftw1 => "ftw1",
            Self::Ftw2 => "ftw2",
        })
    }
}

/// Coefficients and evaluation point of a consistency study. The underlying drift is the
/// constant `drift`.
#[derive(Clone, Debug)]
pub struct ConsistencySetup {
    pub sigma_under: DMatrix<f64>,
    pub drift: Vec<f64>,
    pub g: Vec<f64>,
    pub sigma_res: DMatrix<f64>,
    pub k: u32,
    pub x: Vec<f64>,
    pub t: f64,
}

impl ConsistencySetup {
    /// `σ̲ = I`, drift `½`, `g = 1`, `Σ = 0.8 I`, `k = 0`, at `x = 1`, `t = 0.2`.
    pub fn standard(d: usize) -> Self {
        Self {
            sigma_under: DMatrix::identity(d, d),
            drift: vec![0.5; d],
            g: vec![1.0; d],
            sigma_res: DMatrix::identity(d, d) * 0.8,
            k: 0,
            x: vec![1.0; d],
            t: 0.2,
        }
    }

    fn stepper(&self) -> EulerStepper {
        let d = self.x.len();
        EulerStepper {
            a: DMatrix::zeros(d, d),
            f0: DVector::from_column_slice(&self.drift),
            sigma: self.sigma_under.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.x.len();
        if self.sigma_under.shape() != (d, d) || self.drift.len() != d || self.g.len() != d || self.sigma_res.nrows() != d {
            return Err(HjbError::Dimension(format!("consistency setup is not {d}-dimensional")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub h: f64,
    pub error: f64,
    pub target: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub estimator: String,
    pub test_function: String,
    pub engine: String,
    pub rows: Vec<ConsistencyRow>,
    /// Least-squares slope of `log error` against `log h`.
    pub p_hat: f64,
}

impl ConsistencyReport {
    pub fn new(estimator: String, test_function: String, engine: String, rows: Vec<ConsistencyRow>) -> Result<Self> {
        if rows.len() < 3 {
            return Err(HjbError::Report(format!(
                "an order fit needs at least 3 step sizes, got {}",
                rows.len()
            )));
        }
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let p_hat = fit_order(&hs, &es)?;
        Ok(Self {
            estimator,
            test_function,
            engine,
            rows,
            p_hat,
        })
    }

    /// CSV with columns `h,error,target,estimate,p_hat`; `p_hat` is filled on the last row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,error,target,estimate,p_hat\n");
        for (i, r) in self.rows.iter().enumerate() {
            let p = if i + 1 == self.rows.len() { fmt17(self.p_hat) } else { String::new() };
            s.push_str(&format!("{},{},{},{},{}\n", fmt17(r.h), fmt17(r.error), fmt17(r.target), fmt17(r.estimate), p));
        }
        s
    }
}

/// Round-trip exact decimal representation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Least-squares slope of `ln e` against `ln h`. Zero errors are floored at the smallest
/// normal double.
pub fn fit_order(h: &[f64], err: &[f64]) -> Result<f64> {
    if h.len() != err.len() || h.len() < 3 {
        return Err(HjbError::Report(format!("an order fit needs at least 3 points, got {}", h.len())));
    }
    if h.iter().any(|v| !(*v > 0.0)) || err.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(HjbError::Report("order fit needs positive steps and finite nonnegative errors".into()));
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HjbError::Report("order fit needs distinct step sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Measures `|estimate − target|` for each `h`:
///
/// * `d0`: `(𝒟⁰ − v(t,x)) / h` against `∂_t v + f̲·Dv + ½ tr(a D²v)`,
/// * `d1`: `𝒟¹` with anchor `v(t,x)` against `(σ̲g)·Dv`,
/// * `d2`: `𝒟²` against `½ tr(σ̲ΣΣᵀσ̲ᵀ D²v)`,
/// * `ftw1`, `ftw2`: sup-norm distance of the gradient and Hessian estimates to `Dv`, `D²v`.
pub fn consistency_study(
    kind: EstimatorKind,
    setup: &ConsistencySetup,
    testfn: TestFunction,
    engine: &Engine,
    h_list: &[f64],
) -> Result<ConsistencyReport> {
    setup.validate()?;
    if h_list.len() < 3 {
        return Err(HjbError::Report(format!("an order fit needs at least 3 step sizes, got {}", h_list.len())));
    }
    let d = setup.x.len();
    let measure = engine.measure(d)?;
    let stepper = setup.stepper();
    let (t, x) = (setup.t, setup.x.as_slice());
    let grad = testfn.grad(t, x);
    let hess = testfn.hess(t, x);
    let a = &setup.sigma_under * setup.sigma_under.transpose();
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        if !(h > 0.0) {
            return Err(HjbError::StepSize { h, reason: "must be positive".into() });
        }
        let phi = |y: &[f64]| testfn.value(t + h, y);
        let (estimate, target) = match kind {
            EstimatorKind::D0 => {
                let e = estimate_d0(&measure, &stepper, x, h, phi)?.value;
                let target = testfn.dt(t, x) + linalg::dot(&setup.drift, &grad) + 0.5 * (&a * &hess).trace();
                ((e - testfn.value(t, x)) / h, target)
            }
            EstimatorKind::D1 => {
                let r = testfn.value(t, x);
                let e = estimate_d1_upwind(&measure, &stepper, &setup.g, x, h, phi, r)?.value;
                let sg = linalg::matvec(&setup.sigma_under, &setup.g);
                (e, linalg::dot(&sg, &grad))
            }
            EstimatorKind::D2 => {
                let e = estimate_d2_poly(&measure, &stepper, &setup.sigma_res, setup.k, x, h, phi)?.value;
                let s = &setup.sigma_under * &setup.sigma_res;
                (e, 0.5 * (&s * s.transpose() * &hess).trace())
            }
            EstimatorKind::Ftw1 => {
                let e = estimate_d1_ftw(&measure, &stepper, x, h, phi)?.value;
                let diff = (0..d).map(|i| (e[(i, 0)] - grad[i]).abs()).fold(0.0, f64::max);
                rows.push(ConsistencyRow {
                    h,
                    error: diff,
                    target: grad[0],
                    estimate: e[(0, 0)],
                });
                continue;
            }
            EstimatorKind::Ftw2 => {
                let e = estimate_d2_ftw(&measure, &stepper, x, h, phi)?.value;
                let diff = (&e - &hess).amax();
                rows.push(ConsistencyRow {
                    h,
                    error: diff,
                    target: hess[(0, 0)],
                    estimate: e[(0, 0)],
                });
                continue;
            }
        };
        rows.push(ConsistencyRow {
            h,
            error: (estimate - target).abs(),
            target,
            estimate,
        });
    }
    ConsistencyReport::new(kind.to_string(), testfn.name().into(), engine.name(), rows)
}
