use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// What defines a stratum when splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrataKey {
    Label,
    #[default]
    LanguageLabel,
}

impl std::str::FromStr for StrataKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(StrataKey::Label),
            "language-label" | "language×label" => Ok(StrataKey::LanguageLabel),
            other => Err(Error::InvalidConfig(format!("unknown strata key `{other}`"))),
        }
    }
}

/// Example indices grouped by stratum, keyed by a printable stratum name.
/// Within a stratum indices are in corpus order.
fn strata(corpus: &Corpus, key: StrataKey) -> BTreeMap<String, Vec<usize>> {
    let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in corpus.examples().iter().enumerate() {
        let label = &corpus.label_names()[ex.label];
        let name = match key {
            StrataKey::Label => label.clone(),
            StrataKey::LanguageLabel => format!("{}/{}", ex.language, label),
        };
        map.entry(name).or_default().push(i);
    }
    map
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub train: Corpus,
    pub val: Corpus,
    /// Corpus indices of the validation examples, ascending.
    pub val_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSet {
    pub folds: Vec<Fold>,
    pub strata_key: StrataKey,
    pub seed: u64,
}

/// K-fold partition with per-stratum round-robin assignment.
///
/// Each stratum is shuffled and dealt onto the k validation blocks in turn.
/// The dealing position carries over from one stratum to the next so block
/// totals stay balanced as well. Fold `i` validates on block `i`.
pub fn stratified_folds(corpus: &Corpus, k: usize, strata_key: StrataKey, seed: u64) -> Result<FoldSet> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k-fold needs k >= 2, got {k}")));
    }
    let strata = strata(corpus, strata_key);
    if let Some((name, idx)) = strata.iter().find(|(_, idx)| idx.len() < k) {
        return Err(Error::StratumTooSmall {
            stratum: name.clone(),
            size: idx.len(),
            k,
        });
    }

    let mut block = vec![0usize; corpus.len()];
    let mut offset = 0;
    for (name, mut idx) in strata {
        idx.shuffle(&mut rng_for(seed, &format!("fold-stratum:{name}"), 0));
        for (pos, &i) in idx.iter().enumerate() {
            block[i] = (offset + pos) % k;
        }
        offset = (offset + idx.len()) % k;
    }

    let folds = (0..k)
        .map(|f| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| block[i] == f);
            Fold {
                train: corpus.subset(&train),
                val: corpus.subset(&val),
                val_indices: val,
            }
        })
        .collect();
    Ok(FoldSet {
        folds,
        strata_key,
        seed,
    })
}

/// Largest-remainder apportionment of `n` items over `fractions`.
/// Ties in the remainder go to the earlier part.
pub(crate) fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // Guards against floor overshoot from the epsilon.
    while counts.iter().sum::<usize>() > n {
        let i = counts.iter().rposition(|&c| c > 0).unwrap();
        counts[i] -= 1;
    }
    counts
}

/// Splits into `fractions.len()` disjoint parts covering the corpus.
/// Each part lists its examples in corpus order.
pub fn stratified_split(corpus: &Corpus, fractions: &[f64], strata_key: StrataKey, seed: u64) -> Result<Vec<Corpus>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("cannot split an empty corpus".into()));
    }

    let mut part_of = vec![0usize; corpus.len()];
    for (name, mut idx) in strata(corpus, strata_key) {
        idx.shuffle(&mut rng_for(seed, &format!("split-stratum:{name}"), 0));
        let counts = apportion(idx.len(), fractions);
        let mut cursor = 0;
        for (part, &c) in counts.iter().enumerate() {
            for &i in &idx[cursor..cursor + c] {
                part_of[i] = part;
            }
            cursor += c;
        }
    }
    Ok((0..fractions.len())
        .map(|p| {
            let idx: Vec<usize> = (0..corpus.len()).filter(|&i| part_of[i] == p).collect();
            corpus.subset(&idx)
        })
        .collect())
}
