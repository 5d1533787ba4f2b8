//! Competing selection strategies: entropy, random and the AADA score.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::prediction_entropy;
use crate::nn::DenseNet;
use crate::scalar::Scalar;

/// Clamp applied to the domain discriminator output before forming `(1 − d)/d`.
pub const AADA_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Diverse greedy selection over SAGE embeddings.
    Sage,
    /// Top-b SAGE norms, no diversity.
    SageNormOnly,
    Entropy,
    Random,
    Aada,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Sage,
        StrategyKind::SageNormOnly,
        StrategyKind::Entropy,
        StrategyKind::Random,
        StrategyKind::Aada,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Sage => "sage",
            StrategyKind::SageNormOnly => "sage_norm_only",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Random => "random",
            StrategyKind::Aada => "aada",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::parse("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Positions of the `k` largest scores, descending, ties to the lowest index.
pub fn top_k<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::contract(format!("budget {k} exceeds pool size {}", scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("selection scores", None));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among equal scores
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    order.truncate(k);
    Ok(order)
}

/// Top-`budget` pool positions by prediction entropy.
pub fn rank_by_entropy<T: Scalar>(predictions: &[Vec<T>], budget: usize) -> Result<Vec<usize>> {
    let scores: Vec<T> = predictions.iter().map(|p| prediction_entropy(p)).collect();
    top_k(&scores, budget)
}

pub fn entropy_select<T: Scalar>(
    features: &DenseNet<T>,
    classifier: &DenseNet<T>,
    pool: &[&[T]],
    budget: usize,
) -> Result<Vec<usize>> {
    let preds = pool
        .iter()
        .map(|x| classifier.forward(&features.forward(x)?))
        .collect::<Result<Vec<_>>>()?;
    rank_by_entropy(&preds, budget)
}

/// Uniform sample of `budget` distinct positions out of `pool_size`.
pub fn random_select<R: Rng + ?Sized>(pool_size: usize, budget: usize, rng: &mut R) -> Result<Vec<usize>> {
    if budget > pool_size {
        return Err(Error::contract(format!("budget {budget} exceeds pool size {pool_size}")));
    }
    Ok(rand::seq::index::sample(rng, pool_size, budget).into_vec())
}

/// `H(ŷ) · (1 − d)/d` where `d` is the discriminator's probability that the
/// sample is a *source* sample, clamped to `[1e-6, 1 − 1e-6]`.
pub fn aada_score<T: Scalar>(prediction: &[T], source_prob: T) -> T {
    let lo = T::lit(AADA_CLAMP);
    let d = source_prob.max(lo).min(T::one() - lo);
    prediction_entropy(prediction) * (T::one() - d) / d
}

/// AADA selection. `domain_disc` outputs the probability of the target domain,
/// so the source probability fed to the score is its complement.
pub fn aada_select<T: Scalar>(
    features: &DenseNet<T>,
    classifier: &DenseNet<T>,
    domain_disc: &DenseNet<T>,
    pool: &[&[T]],
    budget: usize,
) -> Result<Vec<usize>> {
    let scores = pool
        .iter()
        .map(|x| {
            let z = features.forward(x)?;
            let p = classifier.forward(&z)?;
            let target_prob = domain_disc.forward(&z)?[0];
            Ok(aada_score(&p, T::one() - target_prob))
        })
        .collect::<Result<Vec<T>>>()?;
    top_k(&scores, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_prediction_ranks_first() {
        let mut preds = vec![vec![1.0, 0.0, 0.0]; 5];
        preds[3] = vec![1.0 / 3.0; 3];
        assert_eq!(rank_by_entropy(&preds, 1).unwrap(), vec![3]);
        let all = rank_by_entropy(&preds, 5).unwrap();
        assert_eq!(all, vec![3, 0, 1, 2, 4]);
    }

    #[test]
    fn oversized_budget_is_rejected() {
        assert!(top_k(&[1.0, 2.0], 3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(random_select(4, 5, &mut rng).is_err());
    }

    #[test]
    fn random_full_budget_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = random_select(20, 20, &mut rng).unwrap();
        s.sort_unstable();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn random_is_reproducible() {
        let a = random_select(100, 7, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = random_select(100, 7, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aada_score_cases() {
        assert_eq!(aada_score(&[0.0, 1.0], 0.01), 0.0);
        let u = [0.25; 4];
        assert!((aada_score(&u, 0.5) - 4f64.ln()).abs() < 1e-15);
        assert!((aada_score(&u, 0.2) - 4f64.ln() * 4.0).abs() < 1e-12);
        assert!(aada_score(&u, 0.0).is_finite());
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("badge".parse::<StrategyKind>().is_err());
    }
}
