//! Corpora: loading, duplicate removal, stratified splitting and synthetic
//! generation.

mod dedup;
mod io;
mod split;
mod synth;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dedup::{dedup, normalize_text, DedupOutcome};
pub use io::{load_corpus, read_corpus, write_corpus, CorpusFormat};
pub use split::{stratified_folds, stratified_split, Fold, FoldSet, StrataKey};
pub use synth::{generate, LanguageSpec, SynthCorpora, SynthSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
    pub language: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: usize, language: impl Into<String>) -> Self {
        Example {
            text: text.into(),
            label,
            language: language.into(),
        }
    }
}

/// An ordered list of examples over a fixed label vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    examples: Vec<Example>,
    label_names: Vec<String>,
}

impl Corpus {
    pub fn new(label_names: Vec<String>) -> Self {
        Corpus {
            examples: Vec::new(),
            label_names,
        }
    }

    pub fn from_examples(examples: Vec<Example>, label_names: Vec<String>) -> Result<Self> {
        let mut corpus = Corpus::new(label_names);
        for ex in examples {
            corpus.push(ex)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, ex: Example) -> Result<()> {
        if ex.language.is_empty() {
            return Err(Error::InvalidConfig("example with empty language tag".into()));
        }
        if ex.label >= self.label_names.len() {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                num_classes: self.label_names.len(),
            });
        }
        self.examples.push(ex);
        Ok(())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Distinct language tags, sorted.
    pub fn languages(&self) -> Vec<String> {
        self.examples
            .iter()
            .map(|e| e.language.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    pub fn filter_language(&self, language: &str) -> Corpus {
        self.filter(|e| e.language == language)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Example) -> bool) -> Corpus {
        Corpus {
            examples: self.examples.iter().filter(|e| keep(e)).cloned().collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Examples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            label_names: self.label_names.clone(),
        }
    }

    /// Stable sort by language tag; within-language order is kept.
    pub fn grouped_by_language(&self) -> Corpus {
        let mut examples = self.examples.clone();
        examples.sort_by(|a, b| a.language.cmp(&b.language));
        Corpus {
            examples,
            label_names: self.label_names.clone(),
        }
    }

    /// Re-indexes labels into `names`. Fails if a used label is absent there.
    pub fn remap_labels(&self, names: &[String]) -> Result<Corpus> {
        if self.label_names == names {
            return Ok(self.clone());
        }
        let mapping: Vec<Option<usize>> = self
            .label_names
            .iter()
            .map(|n| names.iter().position(|m| m == n))
            .collect();
        let mut out = Corpus::new(names.to_vec());
        for ex in &self.examples {
            let label = mapping[ex.label].ok_or_else(|| {
                Error::LabelVocabularyMismatch(format!(
                    "label `{}` is not in {:?}",
                    self.label_names[ex.label], names
                ))
            })?;
            out.examples.push(Example { label, ..ex.clone() });
        }
        Ok(out)
    }

    /// Concatenates `other` after `self`, extending the label vocabulary with
    /// any of `other`'s labels not yet known.
    pub fn concat(&self, other: &Corpus) -> Corpus {
        let mut names = self.label_names.clone();
        for n in &other.label_names {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
        let mut out = self.remap_labels(&names).expect("superset vocabulary");
        let tail = other.remap_labels(&names).expect("superset vocabulary");
        out.examples.extend(tail.examples);
        out
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn push_validates() {
        let mut c = Corpus::new(names(&["a", "b"]));
        assert!(c.push(Example::new("x", 2, "eng")).is_err());
        assert!(c.push(Example::new("x", 0, "")).is_err());
        c.push(Example::new("x", 1, "eng")).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn remap_and_concat() {
        let a = Corpus::from_examples(vec![Example::new("x", 0, "eng")], names(&["A"])).unwrap();
        let b = Corpus::from_examples(
            vec![Example::new("y", 0, "hin"), Example::new("z", 1, "hin")],
            names(&["B", "A"]),
        )
        .unwrap();
        let c = a.concat(&b);
        assert_eq!(c.label_names(), &names(&["A", "B"])[..]);
        let labels: Vec<_> = c.examples().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0, 1, 0]);
        assert!(matches!(
            b.remap_labels(&names(&["A"])),
            Err(Error::LabelVocabularyMismatch(_))
        ));
        assert_eq!(c.languages(), names(&["eng", "hin"]));
    }

    #[test]
    fn grouping_is_stable() {
        let c = Corpus::from_examples(
            vec![
                Example::new("1", 0, "hin"),
                Example::new("2", 0, "eng"),
                Example::new("3", 0, "hin"),
                Example::new("4", 0, "eng"),
            ],
            names(&["a"]),
        )
        .unwrap();
        let texts: Vec<_> = c.grouped_by_language().examples().iter().map(|e| e.text.clone()).collect();
        assert_eq!(texts, vec!["2", "4", "1", "3"]);
    }
}
