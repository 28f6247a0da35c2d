//! Built-in synthetic configurations.

use crate::data::{LanguageSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

pub const PRESET_NAMES: [&str; 3] = ["three-lang", "shift", "no-shift"];

pub const PRESET_LANGUAGES: [&str; 3] = ["eng", "hin", "mal"];

fn language(name: &str, n_train: usize, n_test: usize, train: [f64; 2], test: [f64; 2], shared: f64, exclusive: f64) -> LanguageSpec {
    LanguageSpec {
        name: name.to_string(),
        n_train,
        n_test,
        class_priors_train: train.to_vec(),
        class_priors_test: test.to_vec(),
        exclusive_signal_strength: exclusive,
        shared_signal_strength: shared,
    }
}

fn base(languages: Vec<LanguageSpec>, seed: u64) -> SynthSpec {
    SynthSpec {
        languages,
        num_classes: 2,
        shared_vocab: 40,
        exclusive_vocab: 20,
        noise_vocab: 300,
        tokens_per_text: [4, 12],
        label_noise: 0.05,
        seed,
        label_names: Some(vec!["none".into(), "hope".into()]),
    }
}

/// Three languages with moderate shared and language-specific signal and no
/// prior shift.
pub fn three_lang(seed: u64) -> SynthSpec {
    let strengths = [(0.25, 0.2), (0.15, 0.3), (0.3, 0.1)];
    base(
        PRESET_LANGUAGES
            .iter()
            .zip(strengths)
            .map(|(n, (s, x))| language(n, 300, 300, [0.7, 0.3], [0.7, 0.3], s, x))
            .collect(),
        seed,
    )
}

/// Train priors `[0.8, 0.2]` against test priors `[0.4, 0.6]`; every token is
/// signal (shared 0.7, exclusive 0.3).
pub fn shift(seed: u64) -> SynthSpec {
    let mut spec = base(
        PRESET_LANGUAGES
            .iter()
            .map(|n| language(n, 400, 2000, [0.8, 0.2], [0.4, 0.6], 0.7, 0.3))
            .collect(),
        seed,
    );
    spec.shared_vocab = 400;
    spec.exclusive_vocab = 20;
    spec.tokens_per_text = [1, 3];
    spec.label_noise = 0.1;
    spec
}

/// Same as [`shift`] but with equal train and test priors.
pub fn no_shift(seed: u64) -> SynthSpec {
    let mut spec = shift(seed);
    for l in &mut spec.languages {
        l.class_priors_test = l.class_priors_train.clone();
    }
    spec
}

pub fn by_name(name: &str, seed: u64) -> Result<SynthSpec> {
    match name {
        "three-lang" => Ok(three_lang(seed)),
        "shift" => Ok(shift(seed)),
        "no-shift" => Ok(no_shift(seed)),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset `{other}` (expected one of {PRESET_NAMES:?})"
        ))),
    }
}

/// Pipeline settings used with the presets.
pub fn pipeline() -> PipelineConfig {
    let mut cfg = PipelineConfig::desk_preset();
    cfg.model.hash_dim = 4096;
    cfg
}

/// True when any language's train and test priors differ.
pub fn has_shift(spec: &SynthSpec) -> bool {
    spec.languages.iter().any(|l| l.class_priors_train != l.class_priors_test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for n in PRESET_NAMES {
            by_name(n, 1).unwrap().validate().unwrap();
        }
        assert!(has_shift(&shift(1)));
        assert!(!has_shift(&no_shift(1)));
        assert!(by_name("nope", 1).is_err());
    }
}
