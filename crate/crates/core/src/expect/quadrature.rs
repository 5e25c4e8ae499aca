//! One-dimensional Gauss rules from three-term recurrences (Golub–Welsch).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{HjbError, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss rule of the measure with monic recurrence coefficients `alpha[0..n]`,
/// `beta[1..n]` and total mass `mu0`.
pub fn gauss_from_recurrence(alpha: &[f64], beta: &[f64], mu0: f64) -> Rule {
    let n = alpha.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = alpha[i];
        if i + 1 < n {
            let b = beta[i + 1].sqrt();
            j[(i, i + 1)] = b;
            j[(i + 1, i)] = b;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Hermite rule for the standard normal law (weights sum to one).
pub fn hermite(n: usize) -> Result<Rule> {
    check_order(n)?;
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let mut rule = gauss_from_recurrence(&alpha, &beta, 1.0);
    // exact symmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    Ok(rule)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn legendre(n: usize) -> Result<Rule> {
    check_order(n)?;
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (0..n)
        .map(|k| {
            let k = k as f64;
            k * k / (4.0 * k * k - 1.0)
        })
        .collect();
    Ok(gauss_from_recurrence(&alpha, &beta, 2.0))
}

/// Gauss rule for the half-normal law `2φ(x) dx` on `(0, ∞)` (weights sum to one).
///
/// The recurrence is obtained by the discretized Stieltjes procedure on a composite
/// Gauss–Legendre discretization of `[0, 20]`.
pub fn half_normal(n: usize) -> Result<Rule> {
    check_order(n)?;
    if n > 40 {
        return Err(HjbError::Config(format!("half-normal rule of order {n} is not supported (max 40)")));
    }
    let (xs, ws) = half_normal_discretization()?;
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p_prev = vec![0.0; xs.len()];
    let mut p = vec![1.0; xs.len()];
    let mut norm_prev = 1.0;
    let mut norm: f64 = ws.iter().sum();
    let mu0 = norm;
    for k in 0..n {
        let a: f64 = xs.iter().zip(&ws).zip(&p).map(|((x, w), pk)| w * x * pk * pk).sum::<f64>() / norm;
        alpha[k] = a;
        if k > 0 {
            beta[k] = norm / norm_prev;
        }
        if k + 1 == n {
            break;
        }
        let b = beta[k];
        let next: Vec<f64> = (0..xs.len())
            .map(|i| (xs[i] - a) * p[i] - b * p_prev[i])
            .collect();
        p_prev = std::mem::replace(&mut p, next);
        norm_prev = norm;
        norm = ws.iter().zip(&p).map(|(w, v)| w * v * v).sum();
    }
    let mut rule = gauss_from_recurrence(&alpha, &beta, mu0);
    let total: f64 = rule.weights.iter().sum();
    for w in &mut rule.weights {
        *w /= total;
    }
    Ok(rule)
}

/// Rule for the standard normal law that is exact for polynomials of degree `2n − 1`
/// on each half-line separately, hence for integrands with a kink at 0.
pub fn split_normal(n: usize) -> Result<Rule> {
    let half = half_normal(n)?;
    let mut nodes = Vec::with_capacity(2 * n);
    let mut weights = Vec::with_capacity(2 * n);
    for i in (0..n).rev() {
        nodes.push(-half.nodes[i]);
        weights.push(0.5 * half.weights[i]);
    }
    for i in 0..n {
        nodes.push(half.nodes[i]);
        weights.push(0.5 * half.weights[i]);
    }
    Ok(Rule { nodes, weights })
}

fn half_normal_discretization() -> Result<(Vec<f64>, Vec<f64>)> {
    const PANELS: usize = 40;
    const WIDTH: f64 = 0.5;
    let gl = legendre(32)?;
    let norm = (2.0 / std::f64::consts::PI).sqrt();
    let mut xs = Vec::with_capacity(PANELS * gl.nodes.len());
    let mut ws = Vec::with_capacity(xs.capacity());
    for p in 0..PANELS {
        let a = p as f64 * WIDTH;
        for (t, w) in gl.nodes.iter().zip(&gl.weights) {
            let x = a + 0.5 * WIDTH * (t + 1.0);
            xs.push(x);
            ws.push(0.5 * WIDTH * w * norm * (-0.5 * x * x).exp());
        }
    }
    Ok((xs, ws))
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(HjbError::Config("quadrature needs at least one node".into()));
    }
    Ok(())
}
