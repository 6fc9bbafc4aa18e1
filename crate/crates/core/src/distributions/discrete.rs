use crate::error::{Error, Result};

/// A finite probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Entries must be non-negative and sum to 1 within `1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("empty probability vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!("probabilities must be finite and non-negative, got {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Normalize arbitrary non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain(format!("weights must have a positive finite sum, got {total}")));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let drift: f64 = 1.0 - probs.iter().sum::<f64>();
        if let Some(max) = probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += drift;
        }
        Self::new(probs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    pub fn delta(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::Domain(format!("delta index {at} out of range for {n} outcomes")));
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Escort weights `pᵢ^q / Σⱼ pⱼ^q`, computed in log space. Zero entries
    /// stay zero.
    pub fn escort(&self, power: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .probs
            .iter()
            .map(|&p| if p > 0.0 { power * p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    /// Shannon entropy in nats.
    pub fn shannon_entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escort_of_uniform_is_uniform() {
        let u = DiscreteDistribution::uniform(2).unwrap();
        for q in [1.0, 2.0, 7.3] {
            assert_eq!(u.escort(q), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn escort_sharpens() {
        let p = DiscreteDistribution::new(vec![0.2, 0.8]).unwrap();
        let e = p.escort(2.0);
        assert!((e[0] - 0.04 / 0.68).abs() < 1e-15);
        assert!((e[1] - 0.64 / 0.68).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(DiscreteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteDistribution::delta(3, 3).is_err());
    }
}
