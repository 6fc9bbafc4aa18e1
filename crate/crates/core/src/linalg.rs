//! Scale matrices: positive diagonal or dense symmetric positive definite.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A symmetric positive-definite scale matrix `Σ`.
///
/// Diagonal storage is the common case (mean-field posteriors); dense storage
/// keeps its Cholesky factor so quadratic forms and sampling stay `O(d²)`.
#[derive(Debug, Clone)]
pub enum ScaleMatrix {
    Diagonal(DVector<f64>),
    Dense { matrix: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
}

impl PartialEq for ScaleMatrix {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ScaleMatrix::Diagonal(a), ScaleMatrix::Diagonal(b)) => a == b,
            (ScaleMatrix::Dense { matrix: a, .. }, ScaleMatrix::Dense { matrix: b, .. }) => a == b,
            _ => false,
        }
    }
}

impl ScaleMatrix {
    pub fn diagonal(diag: DVector<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Shape("scale matrix must be at least 1x1".into()));
        }
        if let Some(v) = diag.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("diagonal scale entries must be positive and finite, got {v}")));
        }
        Ok(ScaleMatrix::Diagonal(diag))
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Shape(format!("scale matrix must be square, got {}x{}", matrix.nrows(), matrix.ncols())));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Domain("scale matrix is not symmetric".into()));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::Domain("scale matrix is not positive definite".into()))?;
        Ok(ScaleMatrix::Dense { matrix, chol })
    }

    pub fn identity(d: usize) -> Self {
        ScaleMatrix::Diagonal(DVector::from_element(d, 1.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            ScaleMatrix::Diagonal(v) => v.len(),
            ScaleMatrix::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ScaleMatrix::Diagonal(v) => DMatrix::from_diagonal(v),
            ScaleMatrix::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        match self {
            ScaleMatrix::Diagonal(v) => v.iter().map(|x| x.ln()).sum(),
            ScaleMatrix::Dense { chol, .. } => 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        }
    }

    /// `vᵀ Σ⁻¹ v`.
    pub fn mahalanobis(&self, v: &[f64]) -> f64 {
        match self {
            ScaleMatrix::Diagonal(d) => v.iter().zip(d.iter()).map(|(x, s)| x * x / s).sum(),
            ScaleMatrix::Dense { chol, .. } => {
                let mut w = DVector::from_column_slice(v);
                chol.l_dirty().solve_lower_triangular_mut(&mut w);
                w.norm_squared()
            }
        }
    }

    /// `L ε` where `L Lᵀ = Σ`, written into `out`.
    pub fn mul_cholesky(&self, eps: &[f64], out: &mut [f64]) {
        match self {
            ScaleMatrix::Diagonal(d) => {
                for ((o, e), s) in out.iter_mut().zip(eps).zip(d.iter()) {
                    *o = e * s.sqrt();
                }
            }
            ScaleMatrix::Dense { chol, .. } => {
                let l = chol.l_dirty();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..=i).map(|j| l[(i, j)] * eps[j]).sum();
                }
            }
        }
    }

    /// `c Σ` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            ScaleMatrix::Diagonal(d) => ScaleMatrix::Diagonal(d * c),
            ScaleMatrix::Dense { matrix, chol } => {
                let mut l = chol.l_dirty().clone_owned();
                l *= c.sqrt();
                ScaleMatrix::Dense { matrix: matrix * c, chol: Cholesky::pack_dirty(l) }
            }
        }
    }

    /// `Σ⁻¹` as a dense matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            ScaleMatrix::Diagonal(d) => DMatrix::from_diagonal(&d.map(|x| 1.0 / x)),
            ScaleMatrix::Dense { chol, .. } => chol.inverse(),
        }
    }

    /// `tr(Σ⁻¹ B)`.
    pub fn trace_inv_times(&self, b: &ScaleMatrix) -> f64 {
        match (self, b) {
            (ScaleMatrix::Diagonal(a), ScaleMatrix::Diagonal(b)) => a.iter().zip(b.iter()).map(|(x, y)| y / x).sum(),
            _ => (self.inverse() * b.to_dense()).trace(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_diagonal_agree() {
        let d = DVector::from_vec(vec![2.0, 0.5, 3.0]);
        let diag = ScaleMatrix::diagonal(d.clone()).unwrap();
        let dense = ScaleMatrix::dense(DMatrix::from_diagonal(&d)).unwrap();
        let v = [0.3, -1.2, 2.0];
        assert!((diag.mahalanobis(&v) - dense.mahalanobis(&v)).abs() < 1e-14);
        assert!((diag.log_det() - dense.log_det()).abs() < 1e-14);
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        diag.mul_cholesky(&v, &mut a);
        dense.mul_cholesky(&v, &mut b);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_quadratic_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = ScaleMatrix::dense(m.clone()).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let expected = (v.transpose() * m.clone().try_inverse().unwrap() * &v)[(0, 0)];
        assert!((s.mahalanobis(v.as_slice()) - expected).abs() < 1e-13);
        assert!((s.log_det() - m.determinant().ln()).abs() < 1e-13);
        let half = s.scaled(0.5);
        assert!((half.log_det() - (0.25 * m.determinant()).ln()).abs() < 1e-13);
        assert!((half.mahalanobis(v.as_slice()) - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(ScaleMatrix::diagonal(DVector::from_vec(vec![1.0, 0.0])).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ScaleMatrix::dense(not_pd), Err(Error::Domain(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(ScaleMatrix::dense(asym).is_err());
    }
}
