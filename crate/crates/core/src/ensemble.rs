//! Fold ensembles whose members' probability vectors are summed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_folds, stratified_split, Corpus, StrataKey};
use crate::error::{Error, Result};
use crate::manifest::{ensure_dir, RunManifest};
use crate::metrics::{argmax, Predictor};
use crate::pipeline::{load_run_dir, run_langpaint, save_run_dir, LangPaintModel, Method, PipelineConfig};
use crate::seed::derive_seed;

pub const ENSEMBLE_MANIFEST: &str = "ensemble_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleOptions {
    pub k: usize,
    /// Validation share used when `k = 1` (a single stratified split).
    pub val_fraction: f64,
    pub strata_key: StrataKey,
    /// Which per-language checkpoint each member contributes.
    pub member_method: Method,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            k: 5,
            val_fraction: 0.2,
            strata_key: StrataKey::LanguageLabel,
            member_method: Method::LangPaint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<LangPaintModel>,
    pub fold_seeds: Vec<u64>,
    pub label_names: Vec<String>,
    pub options: EnsembleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnsembleSummary {
    options: EnsembleOptions,
    fold_seeds: Vec<u64>,
    label_names: Vec<String>,
    member_digests: Vec<String>,
    fold_sizes: Vec<(usize, usize)>,
}

/// Trains one pipeline per stratified fold of `corpus`.
///
/// Returns the ensemble and `(train, val)` sizes per fold.
pub fn build_ensemble(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    options: &EnsembleOptions,
) -> Result<(EnsembleModel, Vec<(usize, usize)>)> {
    let split_seed = derive_seed(cfg.seed, "folds", 0);
    let folds: Vec<(Corpus, Corpus)> = match options.k {
        0 => return Err(Error::InvalidConfig("ensemble needs k >= 1".into())),
        1 => {
            let f = options.val_fraction;
            let mut parts = stratified_split(corpus, &[1.0 - f, f], options.strata_key, split_seed)?;
            let val = parts.pop().unwrap();
            vec![(parts.pop().unwrap(), val)]
        }
        k => stratified_folds(corpus, k, options.strata_key, split_seed)?
            .folds
            .into_iter()
            .map(|f| (f.train, f.val))
            .collect(),
    };
    let fold_seeds: Vec<u64> = (0..folds.len()).map(|i| derive_seed(cfg.seed, "fold", i as u64)).collect();
    let members = folds
        .par_iter()
        .zip(&fold_seeds)
        .map(|((train, val), &seed)| {
            run_langpaint(
                train,
                val,
                &PipelineConfig {
                    seed,
                    ..cfg.clone()
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let sizes = folds.iter().map(|(t, v)| (t.len(), v.len())).collect();
    Ok((
        EnsembleModel {
            members,
            fold_seeds,
            label_names: corpus.label_names().to_vec(),
            options: options.clone(),
        },
        sizes,
    ))
}

/// Elementwise sum of probability vectors, independent of their order:
/// each class's values are summed in ascending order.
pub fn sum_probabilities(vectors: &[Vec<f64>]) -> Vec<f64> {
    let c = vectors.first().map_or(0, Vec::len);
    (0..c)
        .map(|k| {
            let mut col: Vec<f64> = vectors.iter().map(|v| v[k]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum()
        })
        .collect()
}

/// Sums (does not average) the members' probabilities; the label is the
/// argmax of the sum with ties toward the lowest class.
pub fn ensemble_predict(ens: &EnsembleModel, text: &str, language: &str) -> Result<(usize, Vec<f64>)> {
    let vectors = ens
        .members
        .iter()
        .map(|m| m.infer_with(text, language, ens.options.member_method).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    let summed = sum_probabilities(&vectors);
    Ok((argmax(&summed), summed))
}

impl Predictor for EnsembleModel {
    fn label_names(&self) -> &[String] {
        &self.label_names
    }

    fn predict_proba(&self, text: &str, language: &str) -> Result<Vec<f64>> {
        ensemble_predict(self, text, language).map(|(_, p)| p)
    }
}

pub fn save_ensemble_dir(ens: &EnsembleModel, dir: &Path, fold_sizes: &[(usize, usize)], base: RunManifest) -> Result<RunManifest> {
    ensure_dir(dir)?;
    let mut manifest = base.clone();
    for (i, member) in ens.members.iter().enumerate() {
        let sub = format!("fold_{i}");
        let mut m = RunManifest::new(format!("{}/{sub}", base.command));
        m.seeds.insert("fold".into(), ens.fold_seeds[i]);
        m.threads = base.threads;
        let written = save_run_dir(member, &dir.join(&sub), m)?;
        for (f, d) in written.outputs {
            manifest.outputs.insert(format!("{sub}/{f}"), d);
        }
    }
    let summary = EnsembleSummary {
        options: ens.options.clone(),
        fold_seeds: ens.fold_seeds.clone(),
        label_names: ens.label_names.clone(),
        member_digests: ens.members.iter().map(LangPaintModel::digest).collect(),
        fold_sizes: fold_sizes.to_vec(),
    };
    if let Some(first) = ens.members.first() {
        manifest.config = serde_json::to_value(&first.config).map_err(|e| Error::Internal(e.to_string()))?;
    }
    manifest.details = serde_json::to_value(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    manifest.write(&dir.join(ENSEMBLE_MANIFEST))?;
    Ok(manifest)
}

pub fn load_ensemble_dir(dir: &Path) -> Result<EnsembleModel> {
    let manifest = RunManifest::read(&dir.join(ENSEMBLE_MANIFEST))?;
    let summary: EnsembleSummary = serde_json::from_value(manifest.details)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", dir.display())))?;
    let members = (0..summary.fold_seeds.len())
        .map(|i| load_run_dir(&dir.join(format!("fold_{i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        members,
        fold_seeds: summary.fold_seeds,
        label_names: summary.label_names,
        options: summary.options,
    })
}
