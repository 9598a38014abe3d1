use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Distribution of simulated inference delays used while training with
/// prefix conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayDistribution {
    /// Uniform over {0, ..., d_max}.
    UniformInt { d_max: usize },
    /// P(d) proportional to base^d over {0, ..., d_max}, base in (0, 1).
    GeometricWeights { base: f64, d_max: usize },
}

impl DelayDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            DelayDistribution::UniformInt { .. } => Ok(()),
            DelayDistribution::GeometricWeights { base, .. } => {
                if !(0.0 < *base && *base < 1.0) {
                    return Err(Error::Config("geometric base must lie in (0, 1)".into()));
                }
                Ok(())
            }
        }
    }

    pub fn d_max(&self) -> usize {
        match self {
            DelayDistribution::UniformInt { d_max } => *d_max,
            DelayDistribution::GeometricWeights { d_max, .. } => *d_max,
        }
    }

    /// Probability of each delay in {0, ..., d_max}; sums to 1.
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            DelayDistribution::UniformInt { d_max } => {
                vec![1.0 / (*d_max as f64 + 1.0); *d_max + 1]
            }
            DelayDistribution::GeometricWeights { base, d_max } => {
                let weights: Vec<f64> = (0..=*d_max).map(|d| base.powi(d as i32)).collect();
                let total: f64 = weights.iter().sum();
                weights.into_iter().map(|w| w / total).collect()
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match self {
            DelayDistribution::UniformInt { d_max } => rng.gen_range(0..=*d_max),
            DelayDistribution::GeometricWeights { .. } => {
                let probs = self.probabilities();
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (d, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return d;
                    }
                }
                probs.len() - 1
            }
        }
    }
}

/// Convenience free function mirroring the module's operation table.
pub fn sample_delay<R: Rng>(dist: &DelayDistribution, rng: &mut R) -> usize {
    dist.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_frequencies_are_flat() {
        let dist = DelayDistribution::UniformInt { d_max: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[dist.sample(&mut rng)] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.005, "freq {}", freq);
        }
    }

    #[test]
    fn geometric_probabilities_match_the_normalized_weights() {
        let dist = DelayDistribution::GeometricWeights { base: 0.5, d_max: 4 };
        let probs = dist.probabilities();
        let want = [16.0 / 31.0, 8.0 / 31.0, 4.0 / 31.0, 2.0 / 31.0, 1.0 / 31.0];
        for (p, w) in probs.iter().zip(&want) {
            assert!((p - w).abs() < 1e-12);
        }
        // Empirical frequencies agree too.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000usize;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[dist.sample(&mut rng)] += 1;
        }
        for (c, w) in counts.iter().zip(&want) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.005);
        }
    }

    #[test]
    fn degenerate_support_always_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dist in [
            DelayDistribution::UniformInt { d_max: 0 },
            DelayDistribution::GeometricWeights { base: 0.5, d_max: 0 },
        ] {
            for _ in 0..100 {
                assert_eq!(dist.sample(&mut rng), 0);
            }
        }
    }

    #[test]
    fn geometric_base_is_validated() {
        assert!(DelayDistribution::GeometricWeights { base: 1.0, d_max: 3 }.validate().is_err());
        assert!(DelayDistribution::GeometricWeights { base: 0.0, d_max: 3 }.validate().is_err());
        assert!(DelayDistribution::GeometricWeights { base: 0.5, d_max: 3 }.validate().is_ok());
    }
}
