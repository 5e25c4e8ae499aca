//! Weight polynomials multiplying the simulated payoff, and Gaussian moments.
//!
//! * `poly2_eval`: monotone second-order weight built from a residual factor `Σ` and an
//!   exponent index `k`,
//! * `upwind1_eval`: nonnegative piecewise-linear first-order weight,
//! * `ftw_eval`: the classical degree-0/1/2 derivative weights of the Euler increment.

use nalgebra::{DMatrix, DVector};

use crate::decomp::Decomposition;
use crate::error::{HjbError, Result};
use crate::linalg;

/// Largest supported exponent index for the second-order weight.
pub const MAX_K: u32 = 7;

/// Columns with norm below this are treated as zero.
const ZERO_COLUMN: f64 = 1e-300;

/// `(2n−1)!! = 1·3·5···(2n−1)`, exact in 128-bit arithmetic; `n = 0` gives 1.
pub fn odd_double_factorial(n: u32) -> u128 {
    (1..=n).map(|i| (2 * i - 1) as u128).product()
}

/// `E[N^n]` for a standard normal `N`.
pub fn gaussian_moment(n: u32) -> f64 {
    if n % 2 == 1 {
        0.0
    } else {
        odd_double_factorial(n / 2) as f64
    }
}

/// `E[|N|^n]`.
pub fn abs_gaussian_moment(n: u32) -> f64 {
    if n.is_multiple_of(2) {
        gaussian_moment(n)
    } else {
        // √(2/π) 2^m m! with n = 2m + 1
        let m = (n - 1) / 2;
        let fact: f64 = (1..=m).map(|i| i as f64).product();
        (2.0 / std::f64::consts::PI).sqrt() * 2f64.powi(m as i32) * fact
    }
}

/// `E[N^n 1{N > 0}]`.
pub fn half_normal_moment(n: u32) -> f64 {
    0.5 * abs_gaussian_moment(n)
}

/// `(c_k, d_k) = (1/((4k+2)·E[N^{4k+2}]), 1/(4k+2))`.
pub fn ck_dk(k: u32) -> Result<(f64, f64)> {
    if k > MAX_K {
        return Err(HjbError::Weight(format!("k = {k} exceeds the supported maximum {MAX_K}")));
    }
    let deg = (4 * k + 2) as f64;
    let moment = odd_double_factorial(2 * k + 1) as f64;
    Ok((1.0 / (deg * moment), 1.0 / deg))
}

/// Second-order weight
/// `Σ_j ‖Σ_j‖² (c_k ([Σᵀw]_j / ‖Σ_j‖)^{4k+2} − d_k)`, zero columns contributing nothing.
pub fn poly2_eval(sigma: &DMatrix<f64>, k: u32, w: &[f64]) -> Result<f64> {
    let (ck, dk) = ck_dk(k)?;
    Ok(poly2_eval_with(sigma, ck, dk, 4 * k as i32 + 2, w))
}

pub(crate) fn poly2_eval_with(sigma: &DMatrix<f64>, ck: f64, dk: f64, deg: i32, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..sigma.ncols() {
        let col = sigma.column(j);
        let norm2 = col.norm_squared();
        if norm2.sqrt() < ZERO_COLUMN {
            continue;
        }
        let proj: f64 = col.iter().zip(w).map(|(s, x)| s * x).sum();
        let y = proj / norm2.sqrt();
        total += norm2 * (ck * y.powi(deg) - dk);
    }
    total
}

/// Lower bound `−tr(ΣΣᵀ)/(4k+2)` of the second-order weight.
pub fn poly2_lower_bound(sigma: &DMatrix<f64>, k: u32) -> f64 {
    -sigma.norm_squared() / (4 * k + 2) as f64
}

/// `2 (g₊·w₊ + g₋·w₋)`; always nonnegative.
pub fn upwind1_eval(g: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for (gi, wi) in g.iter().zip(w) {
        s += gi.max(0.0) * wi.max(0.0) + (-gi).max(0.0) * (-wi).max(0.0);
    }
    2.0 * s
}

/// `E[P¹_g(W/h)]` for `W ~ N(0, hI)`: `√(2/(πh)) Σ|g_i|`.
pub fn upwind1_mean(g: &[f64], h: f64) -> f64 {
    (2.0 / (std::f64::consts::PI * h)).sqrt() * g.iter().map(|v| v.abs()).sum::<f64>()
}

/// Value of a classical derivative weight.
#[derive(Clone, Debug, PartialEq)]
pub enum FtwWeight {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

/// Classical weights: `1`, `(σ̲ᵀ)⁻¹ w / h`, `(σ̲ᵀ)⁻¹ (wwᵀ − hI) σ̲⁻¹ / h²`.
pub fn ftw_eval(order: u8, sigma_under: &DMatrix<f64>, h: f64, w: &[f64]) -> Result<FtwWeight> {
    match order {
        0 => Ok(FtwWeight::Scalar(1.0)),
        1 => {
            let inv_t = linalg::inverse(&sigma_under.transpose())?;
            Ok(FtwWeight::Vector(inv_t * DVector::from_column_slice(w) / h))
        }
        2 => {
            let inv = linalg::inverse(sigma_under)?;
            let d = w.len();
            let wv = DVector::from_column_slice(w);
            let inner = &wv * wv.transpose() - DMatrix::identity(d, d) * h;
            Ok(FtwWeight::Matrix(inv.transpose() * inner * inv / (h * h)))
        }
        o => Err(HjbError::Weight(format!("derivative weight of order {o} is not supported"))),
    }
}

/// Total multiplier `1 + h P¹_g(h^{−1/2} w) + P²_{Σ,k}(w)` of the payoff in the numerator of
/// the scheme, for a scaled increment `w = h^{−1/2} W`.
pub fn composite_weight(
    decomp: &Decomposition,
    m: usize,
    u: &[f64],
    x: &[f64],
    h: f64,
    k: u32,
    w_scaled: &[f64],
) -> Result<f64> {
    let g = decomp.drift_residual(m, x, u);
    let s = h.sqrt();
    let w_first: Vec<f64> = w_scaled.iter().map(|v| v / s).collect();
    Ok(1.0 + h * upwind1_eval(&g, &w_first) + poly2_eval(decomp.residual_factor(m), k, w_scaled)?)
}
