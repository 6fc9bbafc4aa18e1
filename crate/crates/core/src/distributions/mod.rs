//! Coupled exponential-family distributions.
//!
//! * [`CoupledGaussian`]: the `α = 2` member, a multivariate Student's t with
//!   `ν = 1/κ` and scale matrix `Σ`.
//! * [`GeneralizedPareto`]: the `α = 1`, `d = 1` member on `x ≥ 0`.
//! * [`DiscreteDistribution`]: finite probability vectors, used by the
//!   coupled entropy.
//!
//! All continuous members are closed under escorts: raising the density to
//! the power `1 + mκ/(1 + dκ)` and renormalizing yields the same family with
//! coupling `κ/(1 + mκ)` and scale `Σ/(1 + mκ)`.

mod discrete;
mod escort;
mod gaussian;
mod pareto;

pub use discrete::DiscreteDistribution;
pub use escort::{escort_density, EscortDensity, EscortDomain, MomentEstimate, MomentMethod};
pub use gaussian::{cg_log_normalizer, cg_normalizer, CoupledGaussian};
pub(crate) use gaussian::t_mixing_scale;
pub use pareto::GeneralizedPareto;

use crate::algebra::Coupling;

/// Whether the ordinary `m`-th moment exists, i.e. `κ < 1/m`.
pub fn moment_exists(c: &Coupling, m: u32) -> bool {
    c.kappa() * (m as f64) < 1.0
}

/// Coupling of the escort of order `m`: `κ/(1 + mκ)`.
pub fn escort_kappa(kappa: f64, m: f64) -> f64 {
    kappa / (1.0 + m * kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_existence_boundary() {
        let c = |k| Coupling::new(k, 2, 1).unwrap();
        assert!(!moment_exists(&c(1.0), 1));
        assert!(moment_exists(&c(0.0), 7));
        assert!(moment_exists(&c(0.4), 2));
        assert!(!moment_exists(&c(0.5), 2));
    }
}
