use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::escort_kappa;
use crate::algebra::Coupling;
use crate::error::{Error, Result};
use crate::linalg::ScaleMatrix;
use crate::special::ln_gamma_ratio;

/// `ln Z` of the coupled Gaussian for a scale matrix with log-determinant
/// `log_det` and coupling `c`.
///
/// For `κ > 0`, `Z = (π/κ)^{d/2} |Σ|^{1/2} Γ(1/(2κ)) / Γ((1+dκ)/(2κ))`;
/// at `κ = 0` it is the Gaussian `(2π)^{d/2} |Σ|^{1/2}`.
pub fn cg_log_normalizer(log_det: f64, c: &Coupling) -> Result<f64> {
    if c.alpha() != 2 {
        return Err(Error::InvalidCoupling("coupled Gaussian requires alpha = 2".into()));
    }
    let k = c.kappa();
    if k < 0.0 {
        return Err(Error::InvalidCoupling(format!("coupled Gaussian requires kappa >= 0, got {k}")));
    }
    let half_d = 0.5 * c.dim() as f64;
    if k == 0.0 {
        return Ok(half_d * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det);
    }
    Ok(half_d * (std::f64::consts::PI / k).ln() + 0.5 * log_det - ln_gamma_ratio(0.5 / k, half_d))
}

/// Normalizer `Z(Σ, κ)`; see [`cg_log_normalizer`].
pub fn cg_normalizer(sigma: &ScaleMatrix, c: &Coupling) -> Result<f64> {
    if sigma.dim() != c.dim() {
        return Err(Error::Shape(format!("scale is {}-dimensional, coupling has d = {}", sigma.dim(), c.dim())));
    }
    Ok(cg_log_normalizer(sigma.log_det(), c)?.exp())
}

/// Multivariate coupled Gaussian with location `μ`, scale matrix `Σ` and
/// coupling `κ ≥ 0`:
///
/// ```text
/// p(x) = (1/Z) (1 + κ (x−μ)ᵀ Σ⁻¹ (x−μ))^{−(1+dκ)/(2κ)}
/// ```
///
/// `Σ` is the quadratic-form matrix, not the covariance; for `κ < ½` the
/// covariance is `Σ/(1 − 2κ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledGaussian {
    mu: DVector<f64>,
    sigma: ScaleMatrix,
    coupling: Coupling,
    log_z: f64,
}

impl CoupledGaussian {
    pub fn new(mu: DVector<f64>, sigma: ScaleMatrix, kappa: f64) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(Error::Shape(format!("mu has length {}, sigma is {}-dimensional", mu.len(), sigma.dim())));
        }
        let coupling = Coupling::gaussian(kappa, mu.len())?;
        let log_z = cg_log_normalizer(sigma.log_det(), &coupling)?;
        Ok(Self { mu, sigma, coupling, log_z })
    }

    /// Diagonal scale from per-coordinate variances.
    pub fn diagonal(mu: &[f64], variances: &[f64], kappa: f64) -> Result<Self> {
        let sigma = ScaleMatrix::diagonal(DVector::from_column_slice(variances))?;
        Self::new(DVector::from_column_slice(mu), sigma, kappa)
    }

    /// Zero location, identity scale.
    pub fn standard(dim: usize, kappa: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), ScaleMatrix::identity(dim), kappa)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &ScaleMatrix {
        &self.sigma
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn kappa(&self) -> f64 {
        self.coupling.kappa()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_z
    }

    /// Radial tail exponent: the density decays like `|x|^{−(1+dκ)/κ}`.
    pub fn tail_exponent(&self) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            f64::INFINITY
        } else {
            self.coupling.one_plus_d_kappa() / k
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.log_z.exp()
    }

    /// `δ = (x−μ)ᵀ Σ⁻¹ (x−μ)`.
    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point has length {}, distribution has d = {}", x.len(), self.dim())));
        }
        let diff: Vec<f64> = x.iter().zip(self.mu.iter()).map(|(a, b)| a - b).collect();
        Ok(self.sigma.mahalanobis(&diff))
    }

    /// Log density at squared Mahalanobis distance `δ`.
    pub fn log_density_at_delta(&self, delta: f64) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            -self.log_z - 0.5 * delta
        } else {
            -self.log_z - self.coupling.one_plus_d_kappa() / (2.0 * k) * (k * delta).ln_1p()
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density_at_delta(self.mahalanobis(x)?))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Escort of order `m`: same location, coupling `κ/(1+mκ)` and scale
    /// `Σ/(1+mκ)`. Its density is proportional to `p^{1 + mκ/(1+dκ)}`.
    pub fn escort(&self, m: f64) -> Self {
        let k = self.kappa();
        if k == 0.0 {
            return self.clone();
        }
        let f = 1.0 + m * k;
        let sigma = self.sigma.scaled(1.0 / f);
        Self::new(self.mu.clone(), sigma, escort_kappa(k, m)).expect("escort of a valid coupled Gaussian is valid")
    }

    /// The second-order escort `κ_Q = κ/(1+2κ)`, `Σ_Q = Σ/(1+2κ)` from which
    /// training latents are drawn. Its tails always have finite variance.
    pub fn escort_transform(&self) -> Self {
        self.escort(2.0)
    }

    /// Covariance `Σ/(1 − 2κ)`; divergent for `κ ≥ ½`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let k = self.kappa();
        if 2.0 * k >= 1.0 {
            return Err(Error::Divergent(format!("covariance requires kappa < 1/2, got {k}")));
        }
        Ok(self.sigma.to_dense() / (1.0 - 2.0 * k))
    }

    /// Draw one sample into `out`: `μ + L ε √(ν/w)` with `ε ~ N(0, I)`,
    /// `w ~ χ²(ν)`, `ν = 1/κ` (plain Gaussian at `κ = 0`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        self.sigma.mul_cholesky(&eps, out);
        let mix = self.mixing_scale(rng);
        for (o, m) in out.iter_mut().zip(self.mu.iter()) {
            *o = m + *o * mix;
        }
    }

    /// `√(ν/w)` for one draw, `1` at `κ = 0`.
    pub(crate) fn mixing_scale<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        t_mixing_scale(self.kappa(), rng)
    }

    /// `n × d` matrix of independent samples.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(n, d);
        let mut row = vec![0.0; d];
        for i in 0..n {
            self.sample_into(rng, &mut row);
            for j in 0..d {
                out[(i, j)] = row[j];
            }
        }
        out
    }
}

/// Scale-mixture factor `√(ν/w)`, `w ~ χ²(ν)`, `ν = 1/κ`.
pub(crate) fn t_mixing_scale<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa == 0.0 {
        return 1.0;
    }
    let nu = 1.0 / kappa;
    let w: f64 = ChiSquared::new(nu).expect("nu is positive and finite").sample(rng);
    (nu / w).sqrt()
}
