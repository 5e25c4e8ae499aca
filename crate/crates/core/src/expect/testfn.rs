//! Smooth test functions `v(t, x)` with analytic time and space derivatives.

use nalgebra::DMatrix;

use crate::error::{HjbError, Result};

pub const TEST_FUNCTION_NAMES: &[&str] = &["linear", "quadratic", "sin_exp", "bump"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFunction {
    /// `Σ_i c_i x_i + ½` with `c_i = 1 + i/2`, time independent.
    Linear,
    /// `|x|²`, time independent.
    Quadratic,
    /// `e^{−t} sin(Σ_i x_i)`
    SinExp,
    /// `e^{−t} exp(−|x|²/2)`
    Bump,
}

impl TestFunction {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "linear" => Self::Linear,
            "quadratic" => Self::Quadratic,
            "sin_exp" => Self::SinExp,
            "bump" => Self::Bump,
            other => {
                return Err(HjbError::Config(format!(
                    "unknown test function '{other}' (expected one of {})",
                    TEST_FUNCTION_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::SinExp => "sin_exp",
            Self::Bump => "bump",
        }
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Self::Linear => 0.5 + x.iter().enumerate().map(|(i, v)| lin_coef(i) * v).sum::<f64>(),
            Self::Quadratic => x.iter().map(|v| v * v).sum(),
            Self::SinExp => (-t).exp() * x.iter().sum::<f64>().sin(),
            Self::Bump => (-t - 0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
        }
    }

    pub fn dt(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Self::Linear | Self::Quadratic => 0.0,
            Self::SinExp | Self::Bump => -self.value(t, x),
        }
    }

    pub fn grad(&self, t: f64, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Linear => (0..x.len()).map(lin_coef).collect(),
            Self::Quadratic => x.iter().map(|v| 2.0 * v).collect(),
            Self::SinExp => {
                let c = (-t).exp() * x.iter().sum::<f64>().cos();
                vec![c; x.len()]
            }
            Self::Bump => {
                let v = self.value(t, x);
                x.iter().map(|xi| -xi * v).collect()
            }
        }
    }

    pub fn hess(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        match self {
            Self::Linear => DMatrix::zeros(d, d),
            Self::Quadratic => DMatrix::identity(d, d) * 2.0,
            Self::SinExp => DMatrix::from_element(d, d, -self.value(t, x)),
            Self::Bump => {
                let v = self.value(t, x);
                DMatrix::from_fn(d, d, |i, j| (x[i] * x[j] - if i == j { 1.0 } else { 0.0 }) * v)
            }
        }
    }
}

fn lin_coef(i: usize) -> f64 {
    1.0 + 0.5 * i as f64
}
