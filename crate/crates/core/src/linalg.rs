//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{HjbError, Result};

/// `y = A x` for a slice `x`.
pub fn matvec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    matvec_into(a, x, &mut y);
    y
}

pub fn matvec_into(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), y.len());
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += a[(i, j)] * xj;
        }
        *yi = s;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x^T A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            s += x[i] * a[(i, j)] * x[j];
        }
    }
    s
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(0.0)
}

pub fn sym_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(0.0)
}

/// Nearest (Frobenius) negative semidefinite matrix: positive eigenvalues are clamped to zero.
pub fn project_nsd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    if eig.eigenvalues.iter().all(|&l| l <= 0.0) {
        return symmetrize(a);
    }
    let clamped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.min(0.0)));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    symmetrize(&out)
}

/// Diagonally pivoted Cholesky factorization of a symmetric positive semidefinite matrix.
///
/// Returns `L` of size `n x r` with `M ≈ L L^T`, where columns whose pivot falls below
/// `rel_tol` times the leading pivot are dropped. A matrix whose leading pivot is zero
/// gives `r = 0`.
pub fn pivoted_cholesky(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(HjbError::Dimension(format!(
            "pivoted Cholesky needs a square matrix, got {}x{}",
            n,
            m.ncols()
        )));
    }
    let mut a = symmetrize(m);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    let mut leading = 0.0;
    for k in 0..n {
        // largest remaining diagonal entry
        let (mut piv, mut best) = (k, a[(k, k)]);
        for i in (k + 1)..n {
            if a[(i, i)] > best {
                best = a[(i, i)];
                piv = i;
            }
        }
        if k == 0 {
            leading = best;
        }
        if !(best > 0.0) || best <= rel_tol * leading {
            break;
        }
        if piv != k {
            a.swap_rows(k, piv);
            a.swap_columns(k, piv);
            l.swap_rows(k, piv);
            perm.swap(k, piv);
        }
        let d = a[(k, k)].sqrt();
        l[(k, k)] = d;
        for i in (k + 1)..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for i in (k + 1)..n {
            for j in (k + 1)..=i {
                let v = a[(i, j)] - l[(i, k)] * l[(j, k)];
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        rank += 1;
    }
    // undo the symmetric permutation on the rows of L
    let mut out = DMatrix::<f64>::zeros(n, rank);
    for (row, &orig) in perm.iter().enumerate() {
        for c in 0..rank {
            out[(orig, c)] = l[(row, c)];
        }
    }
    Ok(out)
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(HjbError::Dimension("inverse of a non-square matrix".into()));
    }
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| HjbError::Factorization("matrix is singular".into()))?;
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if !inv.iter().all(|v| v.is_finite()) || inv.amax() * scale > 1e14 {
        return Err(HjbError::Factorization("matrix is numerically singular".into()));
    }
    Ok(inv)
}

/// Builds a row-major `rows x cols` matrix, checking the length.
pub fn matrix_from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(HjbError::Dimension(format!(
            "{what}: expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

pub fn matrix_to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}
