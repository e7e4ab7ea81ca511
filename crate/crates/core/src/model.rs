use crate::error::Result;
use crate::seed::Rng;

/// A stationary source of discrete symbol sequences with computable
/// sequence probabilities.
///
/// Implemented by [`crate::chmm::ClassicalHmm`], [`crate::qhmm::QhmmModel`]
/// and [`IidCategorical`], so the divergence and Hankel tools in
/// [`crate::analysis`] work across model classes.
pub trait SequenceModel: Sync {
    fn n_symbols(&self) -> usize;

    /// ln P(obs). Fails with `ZeroProbability` when the sequence is impossible.
    fn log_prob(&self, obs: &[usize]) -> Result<f64>;

    /// P(obs), returning 0 for impossible sequences.
    fn prob(&self, obs: &[usize]) -> f64 {
        self.log_prob(obs).map(f64::exp).unwrap_or(0.0)
    }

    /// Draws a sequence from exactly the law `log_prob` evaluates.
    fn sample_symbols(&self, len: usize, rng: &mut Rng) -> Vec<usize>;
}

/// Independent draws from a fixed categorical law.
#[derive(Debug, Clone, PartialEq)]
pub struct IidCategorical {
    probs: Vec<f64>,
}

impl IidCategorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let s: f64 = probs.iter().sum();
        if probs.len() < 2 || probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(crate::Error::Invalid(
                "categorical law needs >= 2 nonnegative probabilities summing to 1".into(),
            ));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }
}

impl SequenceModel for IidCategorical {
    fn n_symbols(&self) -> usize {
        self.probs.len()
    }

    fn log_prob(&self, obs: &[usize]) -> Result<f64> {
        let mut acc = 0.0;
        for (t, &s) in obs.iter().enumerate() {
            let p = *self.probs.get(s).ok_or_else(|| {
                crate::Error::Invalid(format!("symbol {s} out of range at step {t}"))
            })?;
            if p == 0.0 {
                return Err(crate::Error::ZeroProbability { step: t });
            }
            acc += p.ln();
        }
        Ok(acc)
    }

    fn sample_symbols(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        (0..len)
            .map(|_| crate::seed::sample_categorical(&self.probs, rng))
            .collect()
    }
}
