use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-chain MCMC settings. The defaults are the five-chain protocol with
/// 8000 iterations, 2000 burn-in and thinning by 30.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub num_chains: usize,
    pub iterations_per_chain: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Robbins–Monro target for scalar updates; blocks of dimension ≥ 5 use
    /// 0.234.
    pub target_acceptance: f64,
    pub adapt_during_burnin_only: bool,
    /// Keep `σ_k`, `σ_M` and `σ_M̃` at their initial value of 1.
    pub hold_scales: bool,
    /// Store the pointwise log-likelihood of every saved draw.
    pub record_loglik: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_chains: 5,
            iterations_per_chain: 8000,
            burn_in: 2000,
            thin: 30,
            seed: 0,
            target_acceptance: 0.44,
            adapt_during_burnin_only: true,
            hold_scales: false,
            record_loglik: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_chains == 0 {
            return Err(Error::Config("num_chains must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations_per_chain {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations_per_chain ({})",
                self.burn_in, self.iterations_per_chain
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `⌊(iterations − burn_in) / thin⌋`.
    pub fn saved_per_chain(&self) -> usize {
        (self.iterations_per_chain - self.burn_in) / self.thin
    }

    pub fn total_saved(&self) -> usize {
        self.num_chains * self.saved_per_chain()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_arithmetic() {
        let c = SamplerConfig::default();
        assert_eq!(c.saved_per_chain(), 200);
        assert_eq!(c.total_saved(), 1000);
        let c = SamplerConfig {
            num_chains: 1,
            iterations_per_chain: 100,
            burn_in: 0,
            thin: 1,
            ..Default::default()
        };
        assert_eq!(c.total_saved(), 100);
    }

    #[test]
    fn invalid_configs() {
        let base = SamplerConfig::default();
        assert!(SamplerConfig {
            burn_in: 8000,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SamplerConfig {
            thin: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(SamplerConfig {
            num_chains: 0,
            ..base
        }
        .validate()
        .is_err());
    }
}
