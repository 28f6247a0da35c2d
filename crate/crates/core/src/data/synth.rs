//! Synthetic multilingual corpora.
//!
//! Each token of a generated text is either a shared signal token (same
//! vocabulary in every language, indicative of the label), a language-specific
//! signal token, or a language-specific noise token. Train and test sides can
//! use different class priors to simulate label-distribution shift.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Example};
use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub class_priors_train: Vec<f64>,
    pub class_priors_test: Vec<f64>,
    pub exclusive_signal_strength: f64,
    pub shared_signal_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub languages: Vec<LanguageSpec>,
    pub num_classes: usize,
    /// Shared signal tokens per class.
    pub shared_vocab: usize,
    /// Language-specific signal tokens per class and language.
    pub exclusive_vocab: usize,
    /// Noise tokens per language.
    pub noise_vocab: usize,
    /// Inclusive `[min, max]` token count per text.
    pub tokens_per_text: [usize; 2],
    pub label_noise: f64,
    pub seed: u64,
    /// Optional label names; defaults to `label_0`, `label_1`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpora {
    pub train: Corpus,
    pub test: Corpus,
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.languages.is_empty() {
            return bad("no languages".into());
        }
        if self.shared_vocab == 0 || self.exclusive_vocab == 0 || self.noise_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        let [lo, hi] = self.tokens_per_text;
        if lo == 0 || lo > hi {
            return bad(format!("tokens_per_text {:?} is not a valid range", self.tokens_per_text));
        }
        if !unit(self.label_noise) {
            return bad(format!("label_noise {} outside [0, 1]", self.label_noise));
        }
        if let Some(names) = &self.label_names {
            if names.len() != self.num_classes {
                return bad(format!("{} label names for {} classes", names.len(), self.num_classes));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.languages {
            if l.name.is_empty() || l.name.chars().any(char::is_whitespace) {
                return bad(format!("invalid language name {:?}", l.name));
            }
            if !seen.insert(l.name.as_str()) {
                return bad(format!("duplicate language `{}`", l.name));
            }
            for (side, priors) in [("train", &l.class_priors_train), ("test", &l.class_priors_test)] {
                if priors.len() != self.num_classes || priors.iter().any(|&p| !unit(p)) {
                    return bad(format!("{}: invalid {side} priors {priors:?}", l.name));
                }
                let sum: f64 = priors.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("{}: {side} priors sum to {sum}", l.name));
                }
            }
            let (s, x) = (l.shared_signal_strength, l.exclusive_signal_strength);
            if !unit(s) || !unit(x) || s + x > 1.0 + 1e-12 {
                return bad(format!(
                    "{}: strengths shared={s} exclusive={x} must lie in [0, 1] and sum to at most 1",
                    l.name
                ));
            }
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        self.label_names
            .clone()
            .unwrap_or_else(|| (0..self.num_classes).map(|c| format!("label_{c}")).collect())
    }

    /// Names of the shared signal tokens for `class`.
    pub fn shared_tokens(&self, class: usize) -> Vec<String> {
        (0..self.shared_vocab).map(|j| format!("sig{class}w{j}")).collect()
    }

    /// Names of `language`'s exclusive signal tokens for `class`.
    pub fn exclusive_tokens(&self, language: &str, class: usize) -> Vec<String> {
        (0..self.exclusive_vocab).map(|j| format!("{language}sig{class}w{j}")).collect()
    }

    fn noise_token(language: &str, j: usize) -> String {
        format!("{language}w{j}")
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, priors: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // u landed in the rounding gap above the cumulative sum.
    priors.iter().rposition(|&p| p > 0.0).unwrap_or(priors.len() - 1)
}

fn generate_side(spec: &SynthSpec, lang: &LanguageSpec, side: &str, n: usize, priors: &[f64], out: &mut Corpus) {
    let mut rng = rng_for(spec.seed, &format!("synth:{}:{side}", lang.name), 0);
    let [lo, hi] = spec.tokens_per_text;
    for _ in 0..n {
        let label = sample_categorical(&mut rng, priors);
        let len = rng.gen_range(lo..=hi);
        let tokens: Vec<String> = (0..len)
            .map(|_| {
                let u: f64 = rng.gen();
                if u < lang.shared_signal_strength {
                    format!("sig{label}w{}", rng.gen_range(0..spec.shared_vocab))
                } else if u < lang.shared_signal_strength + lang.exclusive_signal_strength {
                    format!("{}sig{label}w{}", lang.name, rng.gen_range(0..spec.exclusive_vocab))
                } else {
                    SynthSpec::noise_token(&lang.name, rng.gen_range(0..spec.noise_vocab))
                }
            })
            .collect();
        let mut recorded = label;
        if spec.label_noise > 0.0 && rng.gen::<f64>() < spec.label_noise {
            recorded = (label + 1 + rng.gen_range(0..spec.num_classes - 1)) % spec.num_classes;
        }
        out.push(Example::new(tokens.join(" "), recorded, lang.name.clone()))
            .expect("generated example is valid");
    }
}

/// Generates train and test corpora; languages appear in spec order.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpora> {
    spec.validate()?;
    let names = spec.label_names();
    let mut train = Corpus::new(names.clone());
    let mut test = Corpus::new(names);
    for lang in &spec.languages {
        generate_side(spec, lang, "train", lang.n_train, &lang.class_priors_train, &mut train);
        generate_side(spec, lang, "test", lang.n_test, &lang.class_priors_test, &mut test);
    }
    Ok(SynthCorpora { train, test })
}
