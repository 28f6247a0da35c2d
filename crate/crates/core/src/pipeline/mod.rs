//! Base training, per-language fine-tuning, alpha sweep and merging.

mod rundir;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{argmax, Predictor};
use crate::model::{
    self, encode, init_model, EncodedCorpus, ModelConfig, TrainConfig, TrainHistory, META_LABEL_NAMES,
    META_MODEL_CONFIG,
};
use crate::seed::derive_seed;
use crate::tensorstore::{interpolate, Checkpoint};

pub use rundir::{load_run_dir, save_run_dir, sweep_csv, RunSummary, SWEEP_CSV_HEADER};

pub const META_LANGUAGE: &str = "language";
pub const META_PARENT: &str = "parent";
pub const META_ROLE: &str = "role";
pub const MULTILINGUAL: &str = "multilingual";

/// `[0.0, 0.1, …, 1.0]`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Evenly spaced grid `start, start+step, …, ≤ stop`, rounded to 12 decimals.
pub fn alpha_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::InvalidConfig(format!("bad grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) || grid.last() != Some(&1.0) {
        return Err(Error::InvalidConfig(format!("alpha grid {grid:?} must start at 0 and end at 1")));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig(format!("alpha grid {grid:?} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackPolicy {
    /// Unknown languages are served by the multilingual model.
    #[default]
    UseMl,
    Error,
}

/// How the multilingual stopping metric combines per-language scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LanguageAveraging {
    /// Unweighted mean of per-language weighted F1.
    #[default]
    Mean,
    /// Mean weighted by each language's validation size.
    SizeWeighted,
}

/// Initial weights for the language-specific models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecialistInit {
    #[default]
    Multilingual,
    Scratch,
}

/// Pipeline settings. The `seed` fields inside `model` and `train` are
/// replaced by values derived from the top-level `seed`, and
/// `model.num_classes` is taken from the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub alpha_grid: Vec<f64>,
    /// Languages to model; `None` means every language in the training set.
    pub languages: Option<Vec<String>>,
    pub seed: u64,
    pub fallback_language_policy: FallbackPolicy,
    pub ml_metric: LanguageAveraging,
    pub specialist_init: SpecialistInit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            alpha_grid: default_alpha_grid(),
            languages: None,
            seed: 0,
            fallback_language_policy: FallbackPolicy::default(),
            ml_metric: LanguageAveraging::default(),
            specialist_init: SpecialistInit::default(),
        }
    }
}

impl PipelineConfig {
    /// Defaults with the learning rate used for the built-in linear model.
    pub fn desk_preset() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.train.learning_rate = 0.05;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.alpha_grid)?;
        self.train.validate()
    }

    /// Model config for a corpus with `num_classes` labels, seeded from `seed`.
    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_classes,
            seed: derive_seed(self.seed, "model-init", 0),
            ..self.model.clone()
        }
    }

    fn train_config(&self, purpose: &str) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, purpose, 0),
            ..self.train.clone()
        }
    }

    pub fn resolve_languages(&self, train: &Corpus) -> Vec<String> {
        match &self.languages {
            Some(langs) => {
                let mut l = langs.clone();
                l.sort();
                l.dedup();
                l
            }
            None => train.languages(),
        }
    }
}

/// Combines per-language `(weighted F1, size)` pairs into one score.
pub fn combine_language_scores(scores: &BTreeMap<String, (f64, usize)>, mode: LanguageAveraging) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    match mode {
        LanguageAveraging::Mean => scores.values().map(|(f, _)| f).sum::<f64>() / scores.len() as f64,
        LanguageAveraging::SizeWeighted => {
            let n: usize = scores.values().map(|(_, n)| n).sum();
            scores.values().map(|(f, k)| f * *k as f64).sum::<f64>() / n as f64
        }
    }
}

fn tag(ckpt: &mut Checkpoint, mcfg: &ModelConfig, label_names: &[String]) {
    ckpt.set_meta(META_MODEL_CONFIG, serde_json::to_string(mcfg).expect("config serializes"));
    ckpt.set_meta(META_LABEL_NAMES, serde_json::to_string(label_names).expect("names serialize"));
}

fn restrict(corpus: &Corpus, languages: &[String], which: &str) -> Result<Corpus> {
    for l in languages {
        if !corpus.examples().iter().any(|e| &e.language == l) {
            return Err(Error::MissingLanguage(format!("{l} (in {which} set)")));
        }
    }
    Ok(corpus.filter(|e| languages.contains(&e.language)).grouped_by_language())
}

/// Trains the multilingual model.
///
/// The stopping metric combines per-language weighted F1 on `val` according
/// to `cfg.ml_metric`. Training examples are grouped by language first, so the
/// result does not depend on how languages are interleaved in the input.
pub fn train_multilingual(train: &Corpus, val: &Corpus, cfg: &PipelineConfig) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    let val = val.remap_labels(train.label_names())?;
    let languages = cfg.resolve_languages(train);
    let train_r = restrict(train, &languages, "training")?;
    let val_r = restrict(&val, &languages, "validation")?;
    let mcfg = cfg.model_config(train.num_classes());
    let mode = cfg.ml_metric;
    let metric = move |c: &Checkpoint, v: &EncodedCorpus| -> Result<f64> {
        Ok(combine_language_scores(&v.per_language_weighted_f1(c)?, mode))
    };
    let init = init_model(&mcfg)?;
    let (mut ml, history) = model::train(&init, &train_r, &val_r, &mcfg, &cfg.train_config("train-ml"), &metric)?;
    tag(&mut ml, &mcfg, train.label_names());
    ml.set_meta(META_LANGUAGE, MULTILINGUAL);
    ml.set_meta(META_ROLE, "ml");
    Ok((ml, history))
}

fn check_single_language(corpus: &Corpus, language: &str, which: &str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(format!("{which} set for `{language}`")));
    }
    if let Some(e) = corpus.examples().iter().find(|e| e.language != language) {
        return Err(Error::LanguageMismatch {
            expected: language.to_string(),
            found: e.language.clone(),
        });
    }
    Ok(())
}

/// Fine-tunes a specialist for `language` starting from `ml`, stopping on
/// weighted F1 over `val_l`. Adam state starts fresh.
pub fn finetune_language(
    ml: &Checkpoint,
    language: &str,
    train_l: &Corpus,
    val_l: &Corpus,
    cfg: &PipelineConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    check_single_language(train_l, language, "training")?;
    check_single_language(val_l, language, "validation")?;
    let val_l = val_l.remap_labels(train_l.label_names())?;
    let mcfg = cfg.model_config(train_l.num_classes());
    let init = match cfg.specialist_init {
        SpecialistInit::Multilingual => ml.clone(),
        SpecialistInit::Scratch => init_model(&ModelConfig {
            seed: derive_seed(cfg.seed, &format!("ls-init:{language}"), 0),
            ..mcfg.clone()
        })?,
    };
    let metric = |c: &Checkpoint, v: &EncodedCorpus| v.weighted_f1(c);
    let tcfg = cfg.train_config(&format!("finetune:{language}"));
    let (mut ls, history) = model::train(&init, train_l, &val_l, &mcfg, &tcfg, &metric)?;
    tag(&mut ls, &mcfg, train_l.label_names());
    ls.set_meta(META_LANGUAGE, language);
    ls.set_meta(META_ROLE, "ls");
    ls.set_meta(META_PARENT, ml.digest());
    Ok((ls, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub language: String,
    pub grid: Vec<SweepPoint>,
    pub chosen_alpha: f64,
    pub chosen_val_f1: f64,
    pub chosen_digest: String,
}

impl SweepResult {
    pub fn f1_at(&self, alpha: f64) -> Option<f64> {
        self.grid.iter().find(|p| p.alpha == alpha).map(|p| p.val_f1)
    }
}

/// Smallest alpha attaining the maximum F1.
pub fn choose_alpha(points: &[SweepPoint]) -> Option<SweepPoint> {
    let mut best: Option<SweepPoint> = None;
    for &p in points {
        if best.is_none_or(|b| p.val_f1 > b.val_f1) {
            best = Some(p);
        }
    }
    best
}

/// Scores `interpolate(ls, ml, α)` on `val_l` for every α in `grid` and
/// returns the curve together with the merged checkpoint at the chosen α.
pub fn alpha_sweep(
    ls: &Checkpoint,
    ml: &Checkpoint,
    val_l: &Corpus,
    grid: &[f64],
    mcfg: &ModelConfig,
) -> Result<(SweepResult, Checkpoint)> {
    validate_grid(grid)?;
    ls.check_compatible(ml)?;
    let language = val_l
        .examples()
        .first()
        .map(|e| e.language.clone())
        .ok_or_else(|| Error::EmptyCorpus("sweep validation set".into()))?;
    check_single_language(val_l, &language, "validation")?;
    let val = encode(val_l, mcfg)?;

    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&alpha| {
            let merged = interpolate(ls, ml, alpha)?;
            Ok(SweepPoint {
                alpha,
                val_f1: val.weighted_f1(&merged)?,
            })
        })
        .collect::<Result<_>>()?;
    let chosen = choose_alpha(&points).expect("grid is non-empty");
    let merged = interpolate(ls, ml, chosen.alpha)?.with_meta(META_ROLE, "merged");
    Ok((
        SweepResult {
            language,
            grid: points,
            chosen_alpha: chosen.alpha,
            chosen_val_f1: chosen.val_f1,
            chosen_digest: merged.digest(),
        },
        merged,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub ls: Checkpoint,
    pub merged: Checkpoint,
    pub sweep: SweepResult,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangPaintModel {
    pub config: PipelineConfig,
    pub model_config: ModelConfig,
    pub label_names: Vec<String>,
    pub ml: Checkpoint,
    pub ml_history: TrainHistory,
    pub per_language: BTreeMap<String, LanguageModel>,
}

/// Which checkpoint answers for a language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// The language's fine-tuned specialist (α = 1).
    LanguageSpecific,
    /// The shared multilingual model (α = 0).
    Multilingual,
    /// The merged model at the swept α.
    LangPaint,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LanguageSpecific, Method::Multilingual, Method::LangPaint];

    pub fn label(self) -> &'static str {
        match self {
            Method::LanguageSpecific => "L-S",
            Method::Multilingual => "M-L",
            Method::LangPaint => "LangPAINT",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ls" | "l-s" => Ok(Method::LanguageSpecific),
            "ml" | "m-l" => Ok(Method::Multilingual),
            "langpaint" | "merged" => Ok(Method::LangPaint),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

impl LangPaintModel {
    /// Checkpoint that `method` uses for `language`, applying the fallback
    /// policy for languages without a specialist.
    pub fn checkpoint_for(&self, language: &str, method: Method) -> Result<&Checkpoint> {
        match self.per_language.get(language) {
            Some(lm) => Ok(match method {
                Method::LanguageSpecific => &lm.ls,
                Method::Multilingual => &self.ml,
                Method::LangPaint => &lm.merged,
            }),
            None => match self.config.fallback_language_policy {
                FallbackPolicy::UseMl => Ok(&self.ml),
                FallbackPolicy::Error => Err(Error::UnknownLanguage(language.to_string())),
            },
        }
    }

    pub fn infer_with(&self, text: &str, language: &str, method: Method) -> Result<(usize, Vec<f64>)> {
        let ckpt = self.checkpoint_for(language, method)?;
        let p = model::predict_proba(ckpt, text, &self.model_config)?;
        Ok((argmax(&p), p))
    }

    /// Routes to the language's merged model.
    pub fn infer(&self, text: &str, language: &str) -> Result<(usize, Vec<f64>)> {
        self.infer_with(text, language, Method::LangPaint)
    }

    pub fn view(&self, method: Method) -> MethodView<'_> {
        MethodView { model: self, method }
    }

    pub fn chosen_alphas(&self) -> BTreeMap<String, f64> {
        self.per_language
            .iter()
            .map(|(l, m)| (l.clone(), m.sweep.chosen_alpha))
            .collect()
    }

    /// Digest over every checkpoint's tensors and the chosen alphas.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.ml.digest().as_bytes());
        for (lang, lm) in &self.per_language {
            h.update(lang.as_bytes());
            h.update(lm.ls.digest().as_bytes());
            h.update(lm.merged.digest().as_bytes());
            h.update(lm.sweep.chosen_alpha.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl Predictor for LangPaintModel {
    fn label_names(&self) -> &[String] {
        &self.label_names
    }

    fn predict_proba(&self, text: &str, language: &str) -> Result<Vec<f64>> {
        self.infer(text, language).map(|(_, p)| p)
    }
}

/// A [`LangPaintModel`] fixed to one [`Method`].
pub struct MethodView<'a> {
    model: &'a LangPaintModel,
    method: Method,
}

impl Predictor for MethodView<'_> {
    fn label_names(&self) -> &[String] {
        &self.model.label_names
    }

    fn predict_proba(&self, text: &str, language: &str) -> Result<Vec<f64>> {
        self.model.infer_with(text, language, self.method).map(|(_, p)| p)
    }
}

/// Runs the whole procedure: multilingual training, then per language a
/// fine-tune, an alpha sweep on that language's validation slice, and the
/// merge. Languages are processed in sorted order (in parallel when the
/// thread pool allows) and collected deterministically.
pub fn run_langpaint(train: &Corpus, val: &Corpus, cfg: &PipelineConfig) -> Result<LangPaintModel> {
    cfg.validate()?;
    let val = val.remap_labels(train.label_names())?;
    let languages = cfg.resolve_languages(train);
    let (ml, ml_history) = train_multilingual(train, &val, cfg)?;
    let mcfg = cfg.model_config(train.num_classes());

    let per_language: Vec<(String, LanguageModel)> = languages
        .par_iter()
        .map(|lang| {
            let train_l = train.filter_language(lang);
            let val_l = val.filter_language(lang);
            let (ls, history) = finetune_language(&ml, lang, &train_l, &val_l, cfg)?;
            let (sweep, merged) = alpha_sweep(&ls, &ml, &val_l, &cfg.alpha_grid, &mcfg)?;
            check_dominance(&sweep)?;
            Ok((
                lang.clone(),
                LanguageModel {
                    ls,
                    merged,
                    sweep,
                    history,
                },
            ))
        })
        .collect::<Result<_>>()?;

    Ok(LangPaintModel {
        config: cfg.clone(),
        model_config: mcfg,
        label_names: train.label_names().to_vec(),
        ml,
        ml_history,
        per_language: per_language.into_iter().collect(),
    })
}

fn check_dominance(sweep: &SweepResult) -> Result<()> {
    for end in [0.0, 1.0] {
        let f = sweep
            .f1_at(end)
            .ok_or_else(|| Error::Internal(format!("sweep for {} lacks alpha {end}", sweep.language)))?;
        if sweep.chosen_val_f1 < f {
            return Err(Error::Internal(format!(
                "sweep for {}: chosen F1 {} below endpoint {end} F1 {f}",
                sweep.language, sweep.chosen_val_f1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(alpha: f64, val_f1: f64) -> SweepPoint {
        SweepPoint { alpha, val_f1 }
    }

    #[test]
    fn grid_helpers() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(alpha_grid(0.0, 1.0, 0.1).unwrap(), g);
        assert_eq!(alpha_grid(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        validate_grid(&g).unwrap();
        assert!(validate_grid(&[0.0, 0.5]).is_err());
        assert!(validate_grid(&[0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(alpha_grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn tie_break_smallest_alpha() {
        let c = choose_alpha(&[pt(0.0, 0.5), pt(0.5, 0.7), pt(1.0, 0.7)]).unwrap();
        assert_eq!(c.alpha, 0.5);
        let c = choose_alpha(&[pt(0.0, 0.6), pt(1.0, 0.6)]).unwrap();
        assert_eq!(c.alpha, 0.0);
        let c = choose_alpha(&[pt(0.0, 0.6), pt(1.0, 0.65)]).unwrap();
        assert_eq!(c.alpha, 1.0);
    }

    #[test]
    fn language_averaging() {
        let mut s = BTreeMap::new();
        s.insert("eng".to_string(), (1.0, 30));
        assert_eq!(combine_language_scores(&s, LanguageAveraging::Mean), 1.0);
        s.insert("hin".to_string(), (0.0, 10));
        assert_eq!(combine_language_scores(&s, LanguageAveraging::Mean), 0.5);
        assert_eq!(combine_language_scores(&s, LanguageAveraging::SizeWeighted), 0.75);
    }

    #[test]
    fn config_json_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 4, "train": {"learning_rate": 0.05}}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.alpha_grid, default_alpha_grid());
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.fallback_language_policy, FallbackPolicy::UseMl);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
