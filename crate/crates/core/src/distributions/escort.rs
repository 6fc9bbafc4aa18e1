use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CoupledGaussian;
use crate::error::{Error, Result};
use crate::quadrature::{Domain, Quadrature};

/// Where and how to normalize an escort density.
#[derive(Debug, Clone)]
pub enum EscortDomain {
    /// One-dimensional: adaptive quadrature over the given range.
    Line(Domain),
    /// Any dimension: importance sampling with `samples` draws from
    /// `proposal`. The proposal must have tails at least as heavy as the
    /// escort for the estimate to have finite variance.
    Importance { proposal: CoupledGaussian, samples: usize, seed: u64 },
}

/// A normalized escort density `p(x)^q / ∫ p^q`.
pub struct EscortDensity<F> {
    log_density: F,
    power: f64,
    log_norm: f64,
    rel_err: f64,
}

impl<F: Fn(&[f64]) -> f64> EscortDensity<F> {
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.power * (self.log_density)(x) - self.log_norm
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    /// `ln ∫ p^q`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// Relative error of the normalizer (quadrature error or one standard
    /// error for importance sampling).
    pub fn normalizer_rel_err(&self) -> f64 {
        self.rel_err
    }
}

/// Build the escort of order `power` of the density given by `log_density`.
pub fn escort_density<F: Fn(&[f64]) -> f64>(
    log_density: F,
    power: f64,
    domain: EscortDomain,
) -> Result<EscortDensity<F>> {
    if !(power >= 1.0) {
        return Err(Error::Domain(format!("escort power must be >= 1, got {power}")));
    }
    let (norm, rel_err) = match domain {
        EscortDomain::Line(dom) => {
            let e = Quadrature::default().integrate(|x| (power * log_density(&[x])).exp(), dom)?;
            (e.value, e.abs_err / e.value.abs())
        }
        EscortDomain::Importance { proposal, samples, seed } => {
            if samples < 2 {
                return Err(Error::Domain("importance sampling needs at least 2 samples".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = vec![0.0; proposal.dim()];
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..samples {
                proposal.sample_into(&mut rng, &mut x);
                let w = (power * log_density(&x) - proposal.log_density(&x)?).exp();
                let delta = w - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (w - mean);
            }
            let stderr = (m2 / (samples - 1) as f64 / samples as f64).sqrt();
            (mean, stderr / mean.abs())
        }
    };
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Divergent(format!("escort normalizer is {norm}")));
    }
    Ok(EscortDensity { log_density, power, log_norm: norm.ln(), rel_err })
}

/// How to evaluate a coupled moment.
#[derive(Debug, Clone, Copy)]
pub enum MomentMethod {
    /// Adaptive quadrature of `xᵐ` against the numerically normalized escort
    /// (one-dimensional distributions only).
    Quadrature,
    /// Average of `xᵐ` over `samples` draws from the analytic escort of
    /// order `m`, coordinate-wise.
    EscortSampling { samples: usize, seed: u64 },
}

/// Per-coordinate moment values with their error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl CoupledGaussian {
    /// The `m`-th coupled moment `∫ xᵐ P^{(1+mκ/(1+dκ))}(x) dx`, coordinate-wise.
    ///
    /// It exists for every `κ ≥ 0` because the escort of order `m` always
    /// has tail coupling below `1/m`.
    pub fn coupled_moment(&self, m: u32, method: MomentMethod) -> Result<MomentEstimate> {
        match method {
            MomentMethod::Quadrature => {
                if self.dim() != 1 {
                    return Err(Error::Shape("quadrature moments need a one-dimensional distribution".into()));
                }
                let q = self.coupling().escort_power(m as f64);
                let centre = self.mu()[0];
                let scale = self.sigma().to_dense()[(0, 0)].sqrt();
                let dom = Domain::real().centered(centre, scale).with_decay(q * self.tail_exponent());
                let esc = escort_density(|x| self.log_density(x).unwrap_or(f64::NEG_INFINITY), q, EscortDomain::Line(dom))?;
                let tail = dom.with_decay(q * self.tail_exponent() - m as f64);
                let e = Quadrature::default().integrate(|x| x.powi(m as i32) * esc.density(&[x]), tail)?;
                Ok(MomentEstimate {
                    value: vec![e.value],
                    stderr: vec![e.abs_err + e.value.abs() * esc.normalizer_rel_err()],
                })
            }
            MomentMethod::EscortSampling { samples, seed } => {
                if samples < 2 {
                    return Err(Error::Domain("escort sampling needs at least 2 samples".into()));
                }
                let esc = self.escort(m as f64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = self.dim();
                let mut x = vec![0.0; d];
                let mut mean = vec![0.0; d];
                let mut m2 = vec![0.0; d];
                for i in 0..samples {
                    esc.sample_into(&mut rng, &mut x);
                    for j in 0..d {
                        let v = x[j].powi(m as i32);
                        let delta = v - mean[j];
                        mean[j] += delta / (i + 1) as f64;
                        m2[j] += delta * (v - mean[j]);
                    }
                }
                let n = samples as f64;
                let stderr = m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
                Ok(MomentEstimate { value: mean, stderr })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cauchy_square_escort() {
        let c = CoupledGaussian::standard(1, 1.0).unwrap();
        let dom = Domain::real().with_decay(4.0);
        let e = escort_density(|x| c.log_density(x).unwrap(), 2.0, EscortDomain::Line(dom)).unwrap();
        for &x in &[0.0f64, 0.5, 3.0, -10.0] {
            let expected = 2.0 / PI / (1.0 + x * x).powi(2);
            assert!((e.density(&[x]) / expected - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_escort_shrinks_variance() {
        let g = CoupledGaussian::diagonal(&[0.0], &[2.0], 0.0).unwrap();
        let q = 3.0;
        let e = escort_density(|x| g.log_density(x).unwrap(), q, EscortDomain::Line(Domain::real())).unwrap();
        let narrow = CoupledGaussian::diagonal(&[0.0], &[2.0 / q], 0.0).unwrap();
        for &x in &[0.0, 0.4, -1.3] {
            assert!((e.log_density(&[x]) - narrow.log_density(&[x]).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn importance_normalizer_in_two_dimensions() {
        let c = CoupledGaussian::standard(2, 0.5).unwrap();
        let q = c.coupling().escort_power(2.0);
        let dom = EscortDomain::Importance { proposal: c.clone(), samples: 200_000, seed: 11 };
        let e = escort_density(|x| c.log_density(x).unwrap(), q, dom).unwrap();
        // analytic: ∫p^q = Z_esc / Z^q
        let esc = c.escort_transform();
        let exact = esc.log_normalizer() - q * c.log_normalizer();
        assert!((e.log_normalizer() - exact).abs() < 4.0 * e.normalizer_rel_err());
    }

    #[test]
    fn cauchy_coupled_moments() {
        let c = CoupledGaussian::standard(1, 1.0).unwrap();
        let m1 = c.coupled_moment(1, MomentMethod::Quadrature).unwrap();
        assert!(m1.value[0].abs() <= 1e-8);
        let m2 = c.coupled_moment(2, MomentMethod::Quadrature).unwrap();
        assert!((m2.value[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_moments_agree_with_quadrature() {
        let c = CoupledGaussian::diagonal(&[0.5], &[1.5], 0.7).unwrap();
        let quad = c.coupled_moment(2, MomentMethod::Quadrature).unwrap();
        let mc = c.coupled_moment(2, MomentMethod::EscortSampling { samples: 200_000, seed: 5 }).unwrap();
        assert!((quad.value[0] - mc.value[0]).abs() < 4.0 * mc.stderr[0]);
    }

    #[test]
    fn gaussian_second_moment_is_ordinary() {
        let g = CoupledGaussian::standard(1, 0.0).unwrap();
        let m2 = g.coupled_moment(2, MomentMethod::Quadrature).unwrap();
        assert!((m2.value[0] - 1.0).abs() < 1e-10);
    }
}
