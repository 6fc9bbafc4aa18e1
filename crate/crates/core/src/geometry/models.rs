use nalgebra::{DMatrix, DVector};

use super::{CoupledFamily, Law, Measure};
use crate::algebra::Coupling;
use crate::distributions::{CoupledGaussian, GeneralizedPareto};
use crate::error::{Error, Result};
use crate::special::ln_gamma_ratio;

/// Coupled exponential / generalized Pareto family on `x ≥ 0`:
/// `T(x) = x`, `h = 1`, `α = d = 1`, `Z(θ) = 1/θ`, i.e. `GPD(κ, σ = 1/θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdModel {
    coupling: Coupling,
}

impl GpdModel {
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa < 0.0 {
            return Err(Error::InvalidCoupling(format!("GPD model requires kappa >= 0, got {kappa}")));
        }
        Ok(Self { coupling: Coupling::pareto(kappa)? })
    }

    fn check(&self, theta: &[f64]) -> Result<f64> {
        match theta {
            [t] if *t > 0.0 && t.is_finite() => Ok(*t),
            _ => Err(Error::Domain(format!("GPD model needs a single positive parameter, got {theta:?}"))),
        }
    }
}

impl CoupledFamily for GpdModel {
    fn coupling(&self) -> Coupling {
        self.coupling
    }

    fn n_params(&self) -> usize {
        1
    }

    fn stat_degree(&self) -> i32 {
        1
    }

    fn suff_stat(&self, x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn log_normalizer(&self, theta: &[f64]) -> Result<f64> {
        Ok(-self.check(theta)?.ln())
    }

    fn log_normalizer_grad(&self, theta: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, -1.0 / self.check(theta)?))
    }

    fn log_normalizer_hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let t = self.check(theta)?;
        Ok(DMatrix::from_element(1, 1, 1.0 / (t * t)))
    }

    fn law(&self, theta: &[f64], measure: Measure) -> Result<Law> {
        let t = self.check(theta)?;
        let base = GeneralizedPareto::new(1.0 / t, self.coupling.kappa())?;
        Ok(Law::Pareto(match measure {
            Measure::Density => base,
            Measure::Escort => base.escort(2.0),
        }))
    }
}

/// Two-parameter coupled Gaussian family on the real line:
/// `T(x) = (x, x²)`, `h = 1`, `α = 2`, `d = 1`, density
/// `(1/Z)(1 + κ(θ₁x + θ₂x²))^{−(1+κ)/(2κ)}`.
///
/// With `b = 1 − κθ₁²/(4θ₂)` this is a coupled Gaussian with location
/// `−θ₁/(2θ₂)` and scale `b/θ₂`, so `θ₂ > 0` and `b > 0` are required.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    coupling: Coupling,
}

impl GaussianModel {
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa < 0.0 {
            return Err(Error::InvalidCoupling(format!("Gaussian model requires kappa >= 0, got {kappa}")));
        }
        Ok(Self { coupling: Coupling::gaussian(kappa, 1)? })
    }

    fn check(&self, theta: &[f64]) -> Result<(f64, f64, f64)> {
        let (t1, t2) = match theta {
            [a, b] => (*a, *b),
            _ => return Err(Error::Domain(format!("Gaussian model needs two parameters, got {theta:?}"))),
        };
        let b = 1.0 - self.coupling.kappa() * t1 * t1 / (4.0 * t2);
        if !(t2 > 0.0 && b > 0.0) {
            return Err(Error::Domain(format!("theta = ({t1}, {t2}) outside the admissible region")));
        }
        Ok((t1, t2, b))
    }
}

impl CoupledFamily for GaussianModel {
    fn coupling(&self) -> Coupling {
        self.coupling
    }

    fn n_params(&self) -> usize {
        2
    }

    fn stat_degree(&self) -> i32 {
        2
    }

    fn suff_stat(&self, x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, x * x])
    }

    fn log_normalizer(&self, theta: &[f64]) -> Result<f64> {
        let (t1, t2, b) = self.check(theta)?;
        let k = self.coupling.kappa();
        if k == 0.0 {
            return Ok(t1 * t1 / (8.0 * t2) + 0.5 * (2.0 * std::f64::consts::PI / t2).ln());
        }
        Ok(-b.ln() / (2.0 * k) + 0.5 * (std::f64::consts::PI / (k * t2)).ln() - ln_gamma_ratio(0.5 / k, 0.5))
    }

    fn log_normalizer_grad(&self, theta: &[f64]) -> Result<DVector<f64>> {
        let (t1, t2, b) = self.check(theta)?;
        Ok(DVector::from_vec(vec![
            t1 / (4.0 * t2 * b),
            -t1 * t1 / (8.0 * t2 * t2 * b) - 0.5 / t2,
        ]))
    }

    fn log_normalizer_hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let (t1, t2, b) = self.check(theta)?;
        let k = self.coupling.kappa();
        let (b2, t22) = (b * b, t2 * t2);
        let h11 = 1.0 / (4.0 * t2 * b) + k * t1 * t1 / (8.0 * t22 * b2);
        let h12 = -t1 / (4.0 * t22 * b) - k * t1.powi(3) / (16.0 * t22 * t2 * b2);
        let h22 = t1 * t1 / (4.0 * t22 * t2 * b) + k * t1.powi(4) / (32.0 * t22 * t22 * b2) + 0.5 / t22;
        Ok(DMatrix::from_row_slice(2, 2, &[h11, h12, h12, h22]))
    }

    fn law(&self, theta: &[f64], measure: Measure) -> Result<Law> {
        let (t1, t2, b) = self.check(theta)?;
        let base = CoupledGaussian::diagonal(&[-t1 / (2.0 * t2)], &[b / t2], self.coupling.kappa())?;
        Ok(Law::Gaussian(match measure {
            Measure::Density => base,
            Measure::Escort => base.escort_transform(),
        }))
    }
}
