use rand::Rng;

use super::escort_kappa;
use crate::algebra::Coupling;
use crate::error::{Error, Result};
use crate::quadrature::{Domain, Estimate, Quadrature};

/// Generalized Pareto distribution (coupled exponential) on `x ≥ 0`:
/// `p(x) = (1/σ)(1 + κx/σ)^{−(1+κ)/κ}`, the exponential law at `κ = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedPareto {
    scale: f64,
    coupling: Coupling,
}

impl GeneralizedPareto {
    pub fn new(scale: f64, kappa: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("GPD scale must be positive, got {scale}")));
        }
        if kappa < 0.0 {
            return Err(Error::InvalidCoupling(format!("GPD requires kappa >= 0, got {kappa}")));
        }
        Ok(Self { scale, coupling: Coupling::pareto(kappa)? })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kappa(&self) -> f64 {
        self.coupling.kappa()
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// The density decays like `x^{−(1+κ)/κ}`.
    pub fn tail_exponent(&self) -> f64 {
        let k = self.kappa();
        if k == 0.0 {
            f64::INFINITY
        } else {
            (1.0 + k) / k
        }
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("GPD support is x >= 0, got {x}")));
        }
        let k = self.kappa();
        let s = self.scale;
        Ok(if k == 0.0 {
            -s.ln() - x / s
        } else {
            -s.ln() - (1.0 + k) / k * (k * x / s).ln_1p()
        })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let k = self.kappa();
        let z = x / self.scale;
        if k == 0.0 {
            -(-z).exp_m1()
        } else {
            -(-(k * z).ln_1p() / k).exp_m1()
        }
    }

    /// Inverse CDF: `σ/κ ((1−u)^{−κ} − 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.kappa();
        let l = (-u).ln_1p();
        if k == 0.0 {
            -self.scale * l
        } else {
            self.scale * (-k * l).exp_m1() / k
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }

    /// Escort of order `m`: `GPD(κ/(1+mκ), σ/(1+mκ))`, proportional to
    /// `p^{1 + mκ/(1+κ)}`.
    pub fn escort(&self, m: f64) -> Self {
        let k = self.kappa();
        Self::new(self.scale / (1.0 + m * k), escort_kappa(k, m)).expect("escort of a valid GPD is valid")
    }

    /// Coupled moment `∫ xᵐ P^{(1+mκ/(1+κ))}(x) dx`, normalized by quadrature.
    pub fn coupled_moment(&self, m: u32) -> Result<Estimate> {
        let q = self.coupling.escort_power(m as f64);
        let quad = Quadrature::default();
        let dom = Domain::above(0.0).centered(0.0, self.scale);
        let decay = q * self.tail_exponent();
        let norm = quad.integrate(|x| (q * self.log_density(x).unwrap_or(f64::NEG_INFINITY)).exp(), dom.with_decay(decay))?;
        let raw = quad.integrate(
            |x| x.powi(m as i32) * (q * self.log_density(x).unwrap_or(f64::NEG_INFINITY)).exp(),
            dom.with_decay(decay - m as f64),
        )?;
        let value = raw.value / norm.value;
        Ok(Estimate { value, abs_err: raw.abs_err / norm.value + value.abs() * norm.abs_err / norm.value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    #[test]
    fn log_density_examples() {
        let e = GeneralizedPareto::new(1.0, 0.0).unwrap();
        assert_eq!(e.log_density(0.0).unwrap(), 0.0);
        let e2 = GeneralizedPareto::new(2.0, 0.0).unwrap();
        assert!((e2.log_density(2.0).unwrap() - (-1.0 - 2f64.ln())).abs() < 1e-15);
        let g = GeneralizedPareto::new(1.0, 1.0).unwrap();
        assert!((g.log_density(1.0).unwrap() + 4f64.ln()).abs() < 1e-15);
        assert!(matches!(g.log_density(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn normalizes() {
        for &k in &[0.0, 0.3, 1.0, 2.5] {
            let g = GeneralizedPareto::new(1.3, k).unwrap();
            let dom = Domain::above(0.0).with_decay(g.tail_exponent());
            let mass = integrate(|x| g.log_density(x).unwrap().exp(), dom).unwrap();
            assert!((mass.value - 1.0).abs() < 1e-9, "kappa={k}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let g = GeneralizedPareto::new(0.7, 0.8).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            assert!((g.cdf(g.quantile(u)) - u).abs() < 1e-13);
        }
    }

    #[test]
    fn escort_density_ratio_is_constant() {
        let g = GeneralizedPareto::new(1.0, 1.0).unwrap();
        let e = g.escort(2.0);
        assert!((e.kappa() - 1.0 / 3.0).abs() < 1e-15);
        let q = g.coupling().escort_power(2.0);
        let r0 = q * g.log_density(0.0).unwrap() - e.log_density(0.0).unwrap();
        for i in 1..50 {
            let x = i as f64 * 0.7;
            let r = q * g.log_density(x).unwrap() - e.log_density(x).unwrap();
            assert!((r - r0).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_mean_matches_escort_mean() {
        // the order-1 escort has kappa/(1+kappa) < 1, so its mean σ'/(1−κ') exists
        let g = GeneralizedPareto::new(1.0, 2.0).unwrap();
        let e = g.escort(1.0);
        let expected = e.scale() / (1.0 - e.kappa());
        assert!((g.coupled_moment(1).unwrap().value - expected).abs() < 1e-9);
    }
}
