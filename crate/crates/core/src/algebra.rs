//! Deformed ("coupled") algebra on the reals.
//!
//! For a coupling `κ` the coupled exponential and logarithm are
//!
//! ```text
//! exp_κ(u) = (1 + κu)_+^{1/κ}        ln_κ(x) = (x^κ − 1)/κ
//! ```
//!
//! with the ordinary `exp`/`ln` recovered exactly at `κ = 0`. Products of
//! coupled exponentials compose through the coupled sum
//! `a ⊕_κ b = a + b + κab`.
//!
//! Every function here is evaluated in log space (`log1p`/`expm1`), so small
//! non-zero couplings do not suffer cancellation and no cutoff around zero is
//! needed: `κ = 0` is an exact branch and nothing else is special-cased.

use crate::error::{Error, Result};

/// The `(κ, α, d)` triple shared by every deformed function and distribution.
///
/// `kappa` controls tail heaviness, `alpha` the shape near the location
/// (1 for the coupled exponential / generalized Pareto, 2 for the coupled
/// Gaussian) and `dim` the dimension of the distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    kappa: f64,
    alpha: u32,
    dim: usize,
}

impl Coupling {
    pub fn new(kappa: f64, alpha: u32, dim: usize) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(Error::InvalidCoupling(format!("kappa must be finite, got {kappa}")));
        }
        if dim == 0 {
            return Err(Error::InvalidCoupling("dim must be at least 1".into()));
        }
        if alpha != 1 && alpha != 2 {
            return Err(Error::InvalidCoupling(format!("alpha must be 1 or 2, got {alpha}")));
        }
        if kappa <= -1.0 / dim as f64 {
            return Err(Error::InvalidCoupling(format!(
                "kappa = {kappa} must exceed -1/d = {}",
                -1.0 / dim as f64
            )));
        }
        Ok(Self { kappa, alpha, dim })
    }

    /// Coupled Gaussian coupling (`α = 2`).
    pub fn gaussian(kappa: f64, dim: usize) -> Result<Self> {
        Self::new(kappa, 2, dim)
    }

    /// Coupled exponential / generalized Pareto coupling (`α = 1`, `d = 1`).
    pub fn pareto(kappa: f64) -> Result<Self> {
        Self::new(kappa, 1, 1)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn alpha(&self) -> u32 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same `α` and `d` with a different coupling.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(kappa, self.alpha, self.dim)
    }

    /// `1 + dκ`, the factor that appears in every exponent of the family.
    pub fn one_plus_d_kappa(&self) -> f64 {
        1.0 + self.dim as f64 * self.kappa
    }

    /// `r = ακ/(1 + dκ)`.
    pub fn r(&self) -> f64 {
        self.alpha as f64 * self.kappa / self.one_plus_d_kappa()
    }

    /// Escort power `1 + mκ/(1 + dκ)`; see [`escort_power`].
    pub fn escort_power(&self, m: f64) -> f64 {
        escort_power(self, m)
    }
}

/// Coupled exponential `(1 + κu)_+^{1/κ}`.
///
/// The base is clamped at zero, so for `κ > 0` the result is exactly `0` once
/// `1 + κu ≤ 0`. Use [`in_support`] to detect the clamped region.
pub fn coupled_exp(u: f64, kappa: f64) -> f64 {
    coupled_exp_power(u, kappa, 1.0)
}

/// Coupled logarithm `(x^κ − 1)/κ`, the inverse of [`coupled_exp`] on its
/// unclamped domain.
pub fn coupled_log(x: f64, kappa: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("coupled_log requires x > 0, got {x}")));
    }
    Ok(coupled_log_exp(x.ln(), kappa))
}

/// `ln_κ(e^v) = (e^{κv} − 1)/κ`: the coupled logarithm of a value given by its
/// natural log. Lets callers stay in log space end to end.
pub fn coupled_log_exp(v: f64, kappa: f64) -> f64 {
    if kappa == 0.0 {
        v
    } else {
        (kappa * v).exp_m1() / kappa
    }
}

/// Coupled sum `a ⊕_κ b = a + b + κab`.
pub fn coupled_sum(a: f64, b: f64, kappa: f64) -> f64 {
    a + b + kappa * a * b
}

/// Coupled exponential raised to a power: `((1 + κu)_+)^{exponent/κ}`, with
/// `e^{u·exponent}` at `κ = 0`.
pub fn coupled_exp_power(u: f64, kappa: f64, exponent: f64) -> f64 {
    if kappa == 0.0 {
        return (u * exponent).exp();
    }
    let ku = kappa * u;
    if ku <= -1.0 {
        let power = exponent / kappa;
        return if power > 0.0 {
            0.0
        } else if power < 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
    }
    (exponent * ku.ln_1p() / kappa).exp()
}

/// Whether `u` lies inside the unclamped domain `1 + κu > 0`.
pub fn in_support(u: f64, kappa: f64) -> bool {
    kappa == 0.0 || 1.0 + kappa * u > 0.0
}

/// Power `q = 1 + mκ/(1 + dκ)` of the escort (coupled) probability of order
/// `m`. With `m = α` this is the coupled probability of the distribution
/// itself; with `m` equal to a moment order it is the escort used for the
/// coupled moment of that order.
pub fn escort_power(c: &Coupling, m: f64) -> f64 {
    1.0 + m * c.kappa / c.one_plus_d_kappa()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn coupled_exp_examples() {
        assert_eq!(coupled_exp(0.0, 0.7), 1.0);
        assert!((coupled_exp(1.0, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(coupled_exp(-3.0, 0.5), 0.0);
        assert!((coupled_exp(1.0, 0.0) - E).abs() < 1e-15);
    }

    #[test]
    fn coupled_log_examples() {
        assert_eq!(coupled_log(1.0, 3.2).unwrap(), 0.0);
        assert!((coupled_log(2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((coupled_log(E, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(coupled_log(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(coupled_log(-1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn coupled_sum_examples() {
        assert_eq!(coupled_sum(1.0, 2.0, 0.0), 3.0);
        assert_eq!(coupled_sum(1.0, 2.0, 0.5), 4.0);
        assert_eq!(coupled_sum(1.0, 2.0, 1.0), 5.0);
        let lhs = coupled_exp(5.0, 1.0);
        let rhs = coupled_exp(1.0, 1.0) * coupled_exp(2.0, 1.0);
        assert!((lhs - 6.0).abs() < 1e-14 && (rhs - 6.0).abs() < 1e-14);
    }

    #[test]
    fn coupled_exp_power_examples() {
        assert!((coupled_exp_power(1.0, 1.0, -1.0) - 0.5).abs() < 1e-15);
        assert_eq!(coupled_exp_power(0.0, 0.3, 7.0), 1.0);
        assert!((coupled_exp_power(3.0, 0.0, 2.0) - 6f64.exp()).abs() < 1e-12);
        // clamped base with a negative exponent diverges, positive vanishes
        assert_eq!(coupled_exp_power(-5.0, 1.0, 1.0), 0.0);
        assert_eq!(coupled_exp_power(-5.0, 1.0, -1.0), f64::INFINITY);
    }

    #[test]
    fn escort_power_examples() {
        let c0 = Coupling::new(0.0, 2, 3).unwrap();
        assert_eq!(escort_power(&c0, 5.0), 1.0);
        let c = Coupling::new(1.0, 2, 1).unwrap();
        assert_eq!(escort_power(&c, 2.0), 2.0);
        assert_eq!(escort_power(&c, 1.0), 1.5);
    }

    #[test]
    fn coupling_validation() {
        assert!(Coupling::new(-0.5, 1, 2).is_err());
        assert!(Coupling::new(-0.4, 1, 2).is_ok());
        assert!(Coupling::new(0.1, 3, 1).is_err());
        assert!(Coupling::new(0.1, 1, 0).is_err());
        assert!(Coupling::new(f64::NAN, 1, 1).is_err());
    }

    #[test]
    fn support_predicate() {
        assert!(in_support(-1.9, 0.5));
        assert!(!in_support(-2.0, 0.5));
        assert!(in_support(-1e9, 0.0));
    }
}
