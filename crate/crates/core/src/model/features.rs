use std::collections::BTreeMap;

use super::ModelConfig;
use crate::seed::fnv1a64;

/// Sparse, L2-normalised bucket weights with ascending indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
    }
}

/// Lowercases, splits on Unicode whitespace, hashes each token n-gram (tokens
/// joined by one space) with FNV-1a modulo `hash_dim`, and L2-normalises the
/// bucket counts.
pub fn featurize(text: &str, config: &ModelConfig) -> FeatureVector {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut orders = config.ngram_orders.clone();
    orders.sort_unstable();
    orders.dedup();
    for n in orders {
        for gram in tokens.windows(n) {
            let bucket = fnv1a64(gram.join(" ").as_bytes()) % config.hash_dim as u64;
            *counts.entry(bucket as u32).or_default() += 1;
        }
    }
    let norm = counts.values().map(|&c| f64::from(c).powi(2)).sum::<f64>().sqrt();
    FeatureVector {
        indices: counts.keys().copied().collect(),
        values: counts.values().map(|&c| (f64::from(c) / norm) as f32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            hash_dim: 1 << 20,
            ..Default::default()
        }
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(featurize("", &cfg()).is_zero());
        assert!(featurize("  \t\n ", &cfg()).is_zero());
    }

    #[test]
    fn whitespace_and_case_collapse() {
        assert_eq!(featurize("a b", &cfg()), featurize("a  b", &cfg()));
        assert_eq!(featurize("A\u{3000}B", &cfg()), featurize("a b", &cfg()));
    }

    #[test]
    fn normalised() {
        let fv = featurize("the cat the dog the", &cfg());
        assert!((fv.norm() - 1.0).abs() < 1e-6);
        assert!(fv.indices.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_token_has_no_bigram() {
        let fv = featurize("solo", &cfg());
        assert_eq!(fv.nnz(), 1);
        assert_eq!(fv.values, vec![1.0]);
    }
}
