use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HjbError, Result};
use crate::linalg::{self, matrix_from_row_major, matrix_to_row_major};

/// Largest eigenvalue tolerated for a form to count as concave.
pub const NSD_TOL: f64 = 1e-9;

/// `q(x) = ½ xᵀ Q x + b·x + c` with `Q` symmetric negative semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    /// Builds a form, symmetrizing `q` and rejecting matrices that are not NSD.
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let d = b.len();
        if q.nrows() != d || q.ncols() != d {
            return Err(HjbError::Dimension(format!(
                "quadratic form: Q is {}x{} but b has length {d}",
                q.nrows(),
                q.ncols()
            )));
        }
        let q = linalg::symmetrize(&q);
        let top = linalg::sym_max_eigenvalue(&q);
        if top > NSD_TOL {
            return Err(HjbError::Config(format!(
                "quadratic form is not concave (largest eigenvalue {top:e})"
            )));
        }
        if !q.iter().chain(b.iter()).all(|v| v.is_finite()) || !c.is_finite() {
            return Err(HjbError::Config("quadratic form has non-finite entries".into()));
        }
        Ok(Self { q, b, c })
    }

    /// Builds a form after projecting `q` onto the NSD cone.
    pub fn projected(q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let q = linalg::project_nsd(&q);
        Self::new(q, b, c)
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self {
            q: DMatrix::zeros(d, d),
            b: DVector::zeros(d),
            c,
        }
    }

    pub fn from_row_major(d: usize, q: &[f64], b: &[f64], c: f64) -> Result<Self> {
        let qm = matrix_from_row_major(d, d, q, "Q")?;
        if b.len() != d {
            return Err(HjbError::Dimension(format!("b: expected {d} entries, got {}", b.len())));
        }
        Self::new(qm, DVector::from_column_slice(b), c)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        0.5 * linalg::quad_form(&self.q, x) + linalg::dot(self.b.as_slice(), x) + self.c
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        linalg::sym_max_eigenvalue(&self.q)
    }

    pub fn to_record(&self) -> FormRecord {
        FormRecord {
            q: matrix_to_row_major(&self.q),
            b: self.b.iter().copied().collect(),
            c: self.c,
        }
    }
}

/// JSON shape of a quadratic form: `Q` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormRecord {
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl FormRecord {
    pub fn to_form(&self, d: usize) -> Result<QuadraticForm> {
        QuadraticForm::from_row_major(d, &self.q, &self.b, self.c)
    }
}

/// `max_z q(x, z)`; `None` when `forms` is empty.
pub fn max_of_forms(forms: &[QuadraticForm], x: &[f64]) -> Option<f64> {
    forms.iter().map(|f| f.eval(x)).reduce(f64::max)
}
