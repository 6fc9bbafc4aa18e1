//! Coupled entropy, the coupled divergence and the Coupled Free Energy.
//!
//! The CFE of a posterior `q` against a prior `p` is
//!
//! ```text
//! F = ½ E_{z~Q}[ ln_κ(p(z)^{−2/(1+dκ)}) − ln_κ(q(z)^{−2/(1+dκ)}) ] + E[reconstruction]
//! ```
//!
//! where `Q` is the second-order escort of `q`. Writing
//! `A = ln_κ(Z^{2/(1+dκ)})` for a coupled Gaussian with normalizer `Z`, each
//! log term expands to a coupled sum `δ ⊕_κ A = A + (1+κA)δ` of the squared
//! Mahalanobis distance and that constant, which gives the divergence a
//! closed form because `Cov_Q = Σ_q`.

use rand::Rng;

use crate::algebra::{coupled_log_exp, Coupling};
use crate::distributions::{CoupledGaussian, DiscreteDistribution};
use crate::error::{Error, Result};

/// Coupled entropy `(1/α) Σᵢ Pᵢ ln_κ(pᵢ^{−α/(1+dκ)})`, with `Pᵢ` the escort
/// weights of power `1 + ακ/(1+dκ)`. Shannon entropy (nats) at `κ = 0`.
pub fn coupled_entropy(p: &DiscreteDistribution, c: &Coupling) -> f64 {
    let alpha = c.alpha() as f64;
    let a = alpha / c.one_plus_d_kappa();
    let weights = p.escort(c.escort_power(alpha));
    p.probs()
        .iter()
        .zip(weights)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, w)| w * coupled_log_exp(-a * pi.ln(), c.kappa()))
        .sum::<f64>()
        / alpha
}

/// The alternative entropy expression `(1/α) ln_κ((Σ pᵢ^q)^{(1+dκ)/(ακ)})`,
/// `q = 1 + ακ/(1+dκ)`. It does not coincide with [`coupled_entropy`]: as
/// `κ → 0` it tends to `−H/α` where `H` is the Shannon entropy.
pub fn coupled_entropy_closed_form(p: &DiscreteDistribution, c: &Coupling) -> Result<f64> {
    let k = c.kappa();
    if k == 0.0 {
        return Err(Error::Domain("closed-form entropy is undefined at kappa = 0".into()));
    }
    let alpha = c.alpha() as f64;
    let q = c.escort_power(alpha);
    let log_s = log_sum_exp(p.probs().iter().filter(|x| **x > 0.0).map(|x| q * x.ln()));
    Ok((c.one_plus_d_kappa() / alpha * log_s).exp_m1() / (alpha * k))
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(it: I) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Which reading of the normalizer constant `A` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormTermReading {
    /// `(ln_κ(1/Z))^{−2/(1+dκ)}`: real only for `ln_κ(1/Z) > 0`.
    #[default]
    OuterPower,
    /// `ln_κ((1/Z)^{−2/(1+dκ)}) = ln_κ(Z^{2/(1+dκ)})`: defined for every
    /// `Z > 0`, equal to `2 ln Z` at `κ = 0`, and the reading under which
    /// the closed-form divergence equals the expectation form.
    InnerPower,
}

/// The normalizer constant `A` of a coupled Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTerm {
    pub value: f64,
}

/// `A = (ln_κ(1/Z))^{−2/(1+dκ)}`.
pub fn norm_term(z: f64, c: &Coupling) -> Result<NormTerm> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("normalizer must be positive, got {z}")));
    }
    norm_term_from_log(z.ln(), c, NormTermReading::OuterPower)
}

/// `A` from `ln Z` under the chosen reading.
pub fn norm_term_from_log(log_z: f64, c: &Coupling, reading: NormTermReading) -> Result<NormTerm> {
    let e = 2.0 / c.one_plus_d_kappa();
    let value = match reading {
        NormTermReading::OuterPower => {
            let l = coupled_log_exp(-log_z, c.kappa());
            if !(l > 0.0) {
                return Err(Error::Domain(format!(
                    "ln_kappa(1/Z) = {l} <= 0 for Z = {}, kappa = {}; the fractional power is not real",
                    log_z.exp(),
                    c.kappa()
                )));
            }
            (-e * l.ln()).exp()
        }
        NormTermReading::InnerPower => coupled_log_exp(e * log_z, c.kappa()),
    };
    Ok(NormTerm { value })
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningMean {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMean {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation (`n − 1` denominator); 0 below two values.
    pub fn std_dev(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> McEstimate {
        let stderr = if self.n < 2 { 0.0 } else { self.std_dev() / (self.n as f64).sqrt() };
        McEstimate { mean: self.mean, stderr }
    }
}

/// `ln_κ(p(z)^{−2/(1+dκ)})` for a coupled Gaussian at squared Mahalanobis
/// distance `δ`: `(Z^r (1+κδ) − 1)/κ` with `r = 2κ/(1+dκ)`, or `2 ln Z + δ`
/// at `κ = 0`.
pub fn coupled_neg_log_term(log_z: f64, delta: f64, c: &Coupling) -> f64 {
    let k = c.kappa();
    if k == 0.0 {
        return 2.0 * log_z + delta;
    }
    let r = 2.0 * k / c.one_plus_d_kappa();
    (r * log_z + (k * delta).ln_1p()).exp_m1() / k
}

/// Integrand of the divergence at one latent point:
/// `½[ln_κ(p(z)^{−2/(1+dκ)}) − ln_κ(q(z)^{−2/(1+dκ)})]`.
pub fn divergence_integrand(q: &CoupledGaussian, p: &CoupledGaussian, z: &[f64]) -> Result<f64> {
    let c = q.coupling();
    let tp = coupled_neg_log_term(p.log_normalizer(), p.mahalanobis(z)?, c);
    let tq = coupled_neg_log_term(q.log_normalizer(), q.mahalanobis(z)?, c);
    Ok(0.5 * (tp - tq))
}

fn check_pair(q: &CoupledGaussian, p: &CoupledGaussian) -> Result<()> {
    if q.dim() != p.dim() {
        return Err(Error::Shape(format!("posterior has d = {}, prior has d = {}", q.dim(), p.dim())));
    }
    if q.kappa() != p.kappa() {
        return Err(Error::InvalidCoupling(format!(
            "posterior and prior couplings differ: {} vs {}",
            q.kappa(),
            p.kappa()
        )));
    }
    Ok(())
}

/// Expectation-form divergence: average of [`divergence_integrand`] over
/// `n` draws from the escort `Q` of `q`.
pub fn cfe_divergence_mc<R: Rng + ?Sized>(
    q: &CoupledGaussian,
    p: &CoupledGaussian,
    rng: &mut R,
    n: usize,
) -> Result<McEstimate> {
    check_pair(q, p)?;
    if n < 2 {
        return Err(Error::Domain("Monte Carlo divergence needs n >= 2".into()));
    }
    let big_q = q.escort_transform();
    let mut z = vec![0.0; q.dim()];
    let mut acc = RunningMean::default();
    for _ in 0..n {
        big_q.sample_into(rng, &mut z);
        acc.push(divergence_integrand(q, p, &z)?);
    }
    Ok(acc.estimate())
}

/// Analytic `KL(q‖p)` between two Gaussians.
pub fn gaussian_kl(q: &CoupledGaussian, p: &CoupledGaussian) -> Result<f64> {
    check_pair(q, p)?;
    let d = q.dim() as f64;
    let diff: Vec<f64> = p.mu().iter().zip(q.mu().iter()).map(|(a, b)| a - b).collect();
    let maha = p.sigma().mahalanobis(&diff);
    let tr = p.sigma().trace_inv_times(q.sigma());
    Ok(0.5 * (tr + maha - d + p.sigma().log_det() - q.sigma().log_det()))
}

/// Closed-form divergence with the outer-power normalizer constants:
///
/// ```text
/// −d(1+κA_q)/2 + ((1+κA_p)/2)[Δμᵀ Σ_p⁻¹ Δμ + tr(Σ_p⁻¹ Σ_q)] − A_q/2 + A_p/2
/// ```
///
/// At `κ = 0` the Gaussian KL divergence is returned.
pub fn cfe_divergence_closed(q: &CoupledGaussian, p: &CoupledGaussian) -> Result<f64> {
    cfe_divergence_closed_with(q, p, NormTermReading::OuterPower)
}

/// [`cfe_divergence_closed`] under an explicit [`NormTermReading`]. With
/// [`NormTermReading::InnerPower`] the expression is the exact expectation of
/// the Monte Carlo form and needs no `κ = 0` special case.
pub fn cfe_divergence_closed_with(q: &CoupledGaussian, p: &CoupledGaussian, reading: NormTermReading) -> Result<f64> {
    check_pair(q, p)?;
    let k = q.kappa();
    if k == 0.0 && reading == NormTermReading::OuterPower {
        return gaussian_kl(q, p);
    }
    let c = q.coupling();
    let a_q = norm_term_from_log(q.log_normalizer(), c, reading)?.value;
    let a_p = norm_term_from_log(p.log_normalizer(), c, reading)?.value;
    let d = q.dim() as f64;
    let diff: Vec<f64> = p.mu().iter().zip(q.mu().iter()).map(|(a, b)| a - b).collect();
    let quad = p.sigma().mahalanobis(&diff) + p.sigma().trace_inv_times(q.sigma());
    Ok(-d * (1.0 + k * a_q) / 2.0 + (1.0 + k * a_p) / 2.0 * quad - a_q / 2.0 + a_p / 2.0)
}

/// `½[(1+κA)δ + A]` with `δ = Σᵢ (xᵢ − x̂ᵢ)²/σᵢ²`: half the coupled sum
/// `δ ⊕_κ A`.
pub fn reconstruction_loss(x: &[f64], x_hat: &[f64], sigma_xz: &[f64], a: f64, kappa: f64) -> Result<f64> {
    if x.len() != x_hat.len() || (sigma_xz.len() != x.len() && sigma_xz.len() != 1) {
        return Err(Error::Shape(format!(
            "reconstruction shapes differ: x {}, x_hat {}, sigma {}",
            x.len(),
            x_hat.len(),
            sigma_xz.len()
        )));
    }
    let delta: f64 = x
        .iter()
        .zip(x_hat)
        .enumerate()
        .map(|(i, (a, b))| {
            let s = if sigma_xz.len() == 1 { sigma_xz[0] } else { sigma_xz[i] };
            (a - b).powi(2) / s
        })
        .sum();
    Ok(reconstruction_from_delta(delta, a, kappa))
}

/// [`reconstruction_loss`] for a precomputed `δ`.
pub fn reconstruction_from_delta(delta: f64, a: f64, kappa: f64) -> f64 {
    0.5 * ((1.0 + kappa * a) * delta + a)
}

/// Divergence plus reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfeTerms {
    pub divergence: f64,
    pub reconstruction: f64,
    pub total: f64,
    pub mc_stderr: f64,
}

pub fn cfe_total(divergence: f64, reconstruction: f64) -> CfeTerms {
    CfeTerms { divergence, reconstruction, total: divergence + reconstruction, mc_stderr: 0.0 }
}

/// Sign that turns the expectation-form divergence into a non-negative
/// penalty, determined by comparing it with the Gaussian KL at `κ = 0`.
///
/// Returns `+1` or `−1`; an error if neither sign agrees within six standard
/// errors.
pub fn pin_divergence_sign<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<f64> {
    let q = CoupledGaussian::diagonal(&[1.0, -0.5], &[0.5, 2.0], 0.0)?;
    let p = CoupledGaussian::standard(2, 0.0)?;
    let kl = gaussian_kl(&q, &p)?;
    let mc = cfe_divergence_mc(&q, &p, rng, n)?;
    let tol = 6.0 * mc.stderr;
    if (mc.mean - kl).abs() <= tol {
        Ok(1.0)
    } else if (mc.mean + kl).abs() <= tol {
        Ok(-1.0)
    } else {
        Err(Error::Domain(format!(
            "kappa = 0 divergence {} ± {} matches neither +KL nor -KL = {kl}",
            mc.mean, mc.stderr
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(k: f64, alpha: u32, d: usize) -> Coupling {
        Coupling::new(k, alpha, d).unwrap()
    }

    // Independent oracle: (1/(ακ))(1/Σp^q − 1).
    fn entropy_oracle(p: &[f64], c: &Coupling) -> f64 {
        let a = c.alpha() as f64;
        let q = 1.0 + a * c.kappa() / c.one_plus_d_kappa();
        let s: f64 = p.iter().map(|x| x.powf(q)).sum();
        (1.0 / s - 1.0) / (a * c.kappa())
    }

    #[test]
    fn entropy_examples() {
        let delta = DiscreteDistribution::delta(4, 2).unwrap();
        assert_eq!(coupled_entropy(&delta, &c(0.7, 2, 3)), 0.0);
        let u4 = DiscreteDistribution::uniform(4).unwrap();
        assert!((coupled_entropy(&u4, &c(0.0, 1, 1)) - 4f64.ln()).abs() < 1e-15);
        let u2 = DiscreteDistribution::uniform(2).unwrap();
        assert!((coupled_entropy(&u2, &c(1.0, 1, 1)) - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn entropy_matches_oracle() {
        let p = DiscreteDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        for &(k, a, d) in &[(0.3, 1, 1), (1.0, 2, 1), (2.5, 2, 3), (0.01, 1, 4)] {
            let cc = c(k, a, d);
            assert!((coupled_entropy(&p, &cc) - entropy_oracle(p.probs(), &cc)).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_entropy() {
        let u2 = DiscreteDistribution::uniform(2).unwrap();
        assert!((coupled_entropy_closed_form(&u2, &c(1.0, 1, 1)).unwrap() + 0.5).abs() < 1e-15);
        let delta = DiscreteDistribution::delta(3, 0).unwrap();
        assert_eq!(coupled_entropy_closed_form(&delta, &c(0.4, 2, 2)).unwrap(), 0.0);
        let u5 = DiscreteDistribution::uniform(5).unwrap();
        let small = coupled_entropy_closed_form(&u5, &c(1e-8, 2, 1)).unwrap();
        assert!((small + 5f64.ln() / 2.0).abs() < 1e-5);
        assert!(coupled_entropy_closed_form(&u5, &c(0.0, 1, 1)).is_err());
    }

    #[test]
    fn norm_term_examples() {
        assert!((norm_term(0.5, &c(1.0, 2, 1)).unwrap().value - 1.0).abs() < 1e-15);
        assert!((norm_term(0.25, &c(1.0, 2, 1)).unwrap().value - 1.0 / 3.0).abs() < 1e-15);
        assert!((norm_term(0.5, &c(0.0, 2, 1)).unwrap().value - 2f64.ln().powi(-2)).abs() < 1e-14);
        assert!(matches!(norm_term(2.0, &c(1.0, 2, 1)), Err(Error::Domain(_))));
        assert!(matches!(norm_term(1.0, &c(0.0, 2, 1)), Err(Error::Domain(_))));
        let inner = norm_term_from_log(3f64.ln(), &c(0.0, 2, 1), NormTermReading::InnerPower).unwrap();
        assert!((inner.value - 2.0 * 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_is_kl_at_zero() {
        let q = CoupledGaussian::diagonal(&[1.0], &[1.0], 0.0).unwrap();
        let p = CoupledGaussian::diagonal(&[0.0], &[1.0], 0.0).unwrap();
        assert!((cfe_divergence_closed(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cfe_divergence_closed(&q, &q).unwrap(), 0.0);
        let inner = cfe_divergence_closed_with(&q, &p, NormTermReading::InnerPower).unwrap();
        assert!((inner - 0.5).abs() < 1e-14);
    }

    #[test]
    fn mc_sign_is_positive_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(pin_divergence_sign(&mut rng, 20_000).unwrap(), 1.0);
    }

    #[test]
    fn inner_reading_matches_mc_expectation() {
        let q = CoupledGaussian::diagonal(&[0.5, 0.1], &[0.04, 0.3], 1.0).unwrap();
        let p = CoupledGaussian::diagonal(&[0.0, 0.0], &[0.0625, 1.0], 1.0).unwrap();
        let mc = cfe_divergence_mc(&q, &p, &mut ChaCha8Rng::seed_from_u64(2), 200_000).unwrap();
        let closed = cfe_divergence_closed_with(&q, &p, NormTermReading::InnerPower).unwrap();
        assert!((mc.mean - closed).abs() < 4.0 * mc.stderr, "{mc:?} vs {closed}");
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruction_loss(&[0.2, 0.4], &[0.2, 0.4], &[1.0], 0.0, 3.0).unwrap(), 0.0);
        assert_eq!(reconstruction_from_delta(2.0, 1.0, 1.0), 2.5);
        assert_eq!(reconstruction_from_delta(2.0, 0.0, 0.0), 1.0);
        let r = reconstruction_loss(&[1.0, 0.0], &[0.0, 1.0], &[0.5, 2.0], 0.0, 0.0).unwrap();
        assert!((r - 0.5 * (2.0 + 0.5)).abs() < 1e-15);
        assert!(reconstruction_loss(&[1.0], &[1.0, 2.0], &[1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn totals() {
        assert_eq!(cfe_total(0.0, 0.0).total, 0.0);
        assert_eq!(cfe_total(0.5, 1.0).total, 1.5);
    }
}
