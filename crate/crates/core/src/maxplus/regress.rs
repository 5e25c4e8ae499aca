use nalgebra::{DMatrix, DVector};

use super::form::QuadraticForm;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;
/// Ridge strength relative to the mean squared column norm.
const RIDGE: f64 = 1e-8;

/// `1 + d + d(d+1)/2`
pub fn basis_size(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

fn basis_row(x: &[f64], row: &mut [f64]) {
    let d = x.len();
    row[0] = 1.0;
    row[1..=d].copy_from_slice(x);
    let mut k = d + 1;
    for i in 0..d {
        for j in i..d {
            row[k] = x[i] * x[j];
            k += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegressionFit {
    pub form: QuadraticForm,
    /// Root mean square residual of the returned (projected) form.
    pub rms: f64,
    pub ridge_used: bool,
}

/// Least squares fit of `y ≈ ½ xᵀQx + b·x + c` over the monomials `{1, x_i, x_i x_j}`,
/// then projection of `Q` onto the negative semidefinite cone.
///
/// A rank-deficient design is retried with a small ridge penalty. The error carries only
/// a reason; callers attach the time and sample context.
pub fn regress_quadratic(xs: &[Vec<f64>], ys: &[f64]) -> std::result::Result<RegressionFit, String> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(format!("{} points for {} targets", xs.len(), ys.len()));
    }
    let d = xs[0].len();
    let p = basis_size(d);
    let n = xs.len();
    let mut a = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for (r, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err("regression points of mixed dimension".into());
        }
        basis_row(x, &mut row);
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
    }
    if !a.iter().chain(ys.iter()).all(|v| v.is_finite()) {
        return Err("non-finite regression data".into());
    }
    let y = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err("design matrix is zero".into());
    }
    let rank = svd.singular_values.iter().filter(|s| **s > RANK_TOL * smax).count();
    let (beta, ridge_used) = if rank == p {
        (svd.solve(&y, RANK_TOL * smax)?, false)
    } else {
        let ata = a.transpose() * &a;
        let lam = RIDGE * ata.trace() / p as f64;
        let reg = ata + DMatrix::identity(p, p) * lam;
        let beta = reg
            .cholesky()
            .ok_or_else(|| "rank-deficient design is singular even after ridge".to_string())?
            .solve(&(a.transpose() * &y));
        (beta, true)
    };
    if !beta.iter().all(|v| v.is_finite()) {
        return Err("regression produced non-finite coefficients".into());
    }
    let mut q = DMatrix::zeros(d, d);
    let mut k = d + 1;
    for i in 0..d {
        for j in i..d {
            if i == j {
                q[(i, i)] = 2.0 * beta[k];
            } else {
                q[(i, j)] = beta[k];
                q[(j, i)] = beta[k];
            }
            k += 1;
        }
    }
    let b = DVector::from_iterator(d, (1..=d).map(|i| beta[i]));
    let form = QuadraticForm::projected(q, b, beta[0]).map_err(|e| e.to_string())?;
    let rms = (xs.iter().zip(ys).map(|(x, yv)| (form.eval(x) - yv).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(RegressionFit { form, rms, ridge_used })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Vec<Vec<f64>> {
        let mut xs = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                xs.push(vec![-1.0 + 0.5 * i as f64, -0.7 + 0.45 * j as f64]);
            }
        }
        xs
    }

    #[test]
    fn recovers_concave_quadratic() {
        let truth = QuadraticForm::from_row_major(2, &[-2.0, 0.5, 0.5, -1.0], &[0.3, -0.4], 1.5).unwrap();
        let xs = grid2();
        let ys: Vec<f64> = xs.iter().map(|x| truth.eval(x)).collect();
        let fit = regress_quadratic(&xs, &ys).unwrap();
        assert!((&fit.form.q - &truth.q).amax() < 1e-8);
        assert!((&fit.form.b - &truth.b).amax() < 1e-8);
        assert!((fit.form.c - truth.c).abs() < 1e-8);
        assert!(fit.rms < 1e-10);
        assert!(!fit.ridge_used);
    }

    #[test]
    fn constant_targets() {
        let xs = grid2();
        let fit = regress_quadratic(&xs, &vec![3.25; xs.len()]).unwrap();
        assert!(fit.form.q.amax() < 1e-12 && fit.form.b.amax() < 1e-12);
        assert!((fit.form.c - 3.25).abs() < 1e-12);
    }

    #[test]
    fn outlier_keeps_form_concave() {
        let xs: Vec<Vec<f64>> = (0..21).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| -x[0] * x[0]).collect();
        // a huge positive outlier at the edge pulls the curvature upward
        ys[20] += 50.0;
        let fit = regress_quadratic(&xs, &ys).unwrap();
        assert!(fit.form.largest_eigenvalue() <= 1e-9);
        let direct: f64 = (xs.iter().zip(&ys).map(|(x, y)| (fit.form.eval(x) - y).powi(2)).sum::<f64>() / 21.0).sqrt();
        assert!((fit.rms - direct).abs() < 1e-12);
        assert!(fit.rms > 1.0);
    }

    #[test]
    fn duplicate_points_fall_back_to_ridge() {
        let xs = vec![vec![0.5]; 6];
        let fit = regress_quadratic(&xs, &[1.0; 6]).unwrap();
        assert!(fit.ridge_used);
        assert!(fit.form.largest_eigenvalue() <= 1e-9 && fit.rms.is_finite());
        assert!(regress_quadratic(&[vec![0.0]], &[1.0, 2.0]).is_err());
    }
}
