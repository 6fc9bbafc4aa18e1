//! Reconstruction and sample-quality metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("mse needs equal non-empty inputs, got {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB for data in `[0, 1]`; infinite at zero error.
pub fn psnr(mse: f64) -> f64 {
    -10.0 * mse.log10()
}

/// Column means and unbiased covariance of an `n × d` row-major sample.
pub fn mean_cov(data: &[f64], n: usize, d: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if data.len() != n * d || n < 2 {
        return Err(Error::Shape(format!("need at least two rows of {d} values, got {} values", data.len())));
    }
    let x = DMatrix::from_row_slice(n, d, data);
    let mu = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mu, cov))
}

fn sym_sqrt(c: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new(c.clone());
    let tol = 1e-10 * e.eigenvalues.amax().max(1.0);
    if let Some(bad) = e.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(Error::Domain(format!("{what} is not positive semi-definite (eigenvalue {bad})")));
    }
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose())
}

fn check_sym(c: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if c.nrows() != d || c.ncols() != d {
        return Err(Error::Shape(format!("{what} is {}x{}, expected {d}x{d}", c.nrows(), c.ncols())));
    }
    let asym = (c - c.transpose()).amax();
    if asym > 1e-9 * c.amax().max(1.0) {
        return Err(Error::Domain(format!("{what} is not symmetric (max asymmetry {asym})")));
    }
    Ok(())
}

/// `‖μ₁ − μ₂‖² + tr(C₁ + C₂ − 2(C₁^{1/2} C₂ C₁^{1/2})^{1/2})`.
pub fn frechet_gaussian(mu1: &DVector<f64>, c1: &DMatrix<f64>, mu2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d {
        return Err(Error::Shape(format!("means have lengths {d} and {}", mu2.len())));
    }
    check_sym(c1, d, "first covariance")?;
    check_sym(c2, d, "second covariance")?;
    let s1 = sym_sqrt(c1, "first covariance")?;
    sym_sqrt(c2, "second covariance")?;
    let m = &s1 * c2 * &s1;
    let m = (&m + m.transpose()) / 2.0;
    let eig = SymmetricEigen::new(m).eigenvalues;
    let mut tr_sqrt = 0.0;
    for l in eig.iter() {
        if *l < -1e-10 {
            return Err(Error::Domain(format!("cross term has eigenvalue {l}")));
        }
        tr_sqrt += l.max(0.0).sqrt();
    }
    let dist = (mu1 - mu2).norm_squared() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
    Ok(dist.max(0.0))
}

/// Projection onto the top `k` principal directions of `reference`.
#[derive(Debug, Clone)]
pub struct Pca {
    mean: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Pca {
    pub fn fit(reference: &[f64], n: usize, d: usize, k: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::Config(format!("PCA dimension must be in 1..={d}, got {k}")));
        }
        let (mean, cov) = mean_cov(reference, n, d)?;
        let e = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| e.eigenvalues[b].total_cmp(&e.eigenvalues[a]).then(a.cmp(&b)));
        let mut basis = DMatrix::zeros(d, k);
        for (j, &i) in order.iter().take(k).enumerate() {
            let mut v = e.eigenvectors.column(i).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            if v[imax] < 0.0 {
                v = -v;
            }
            basis.set_column(j, &v);
        }
        Ok(Self { mean, basis })
    }

    pub fn project(&self, data: &[f64], n: usize) -> Vec<f64> {
        let d = self.mean.len();
        let mut x = DMatrix::from_row_slice(n, d, data);
        for mut row in x.row_iter_mut() {
            row -= self.mean.transpose();
        }
        let p = x * &self.basis;
        let mut out = Vec::with_capacity(p.len());
        for r in p.row_iter() {
            out.extend(r.iter());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples() {
        let z = DVector::zeros(2);
        let i = DMatrix::identity(2, 2);
        assert!(frechet_gaussian(&z, &i, &z, &i).unwrap().abs() < 1e-12);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert!((frechet_gaussian(&e1, &i, &z, &i).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_gaussian(&z, &i, &z, &(&i * 4.0)).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(mse(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!((psnr(0.01) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let z = DVector::zeros(2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(frechet_gaussian(&z, &bad, &z, &DMatrix::identity(2, 2)), Err(Error::Domain(_))));
    }

    #[test]
    fn pca_keeps_dominant_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let data: Vec<f64> =
            (0..n).flat_map(|_| {
                let t: f64 = rng.random_range(-3.0..3.0);
                let e: f64 = rng.random_range(-0.1..0.1);
                [t, t + e, e]
            }).collect();
        let p = Pca::fit(&data, n, 3, 1).unwrap();
        let proj = p.project(&data, n);
        let var: f64 = proj.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(var > 5.0);
    }

    #[test]
    fn mean_cov_matches_hand_values() {
        let (m, c) = mean_cov(&[1.0, 2.0, 3.0, 6.0], 2, 2).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 4.0]);
        assert_eq!(c.as_slice(), &[2.0, 4.0, 4.0, 8.0]);
    }
}
