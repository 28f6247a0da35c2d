//! Run directory layout:
//!
//! ```text
//! ml.ckpt
//! <lang>.ls.ckpt
//! <lang>.merged.ckpt
//! <lang>.sweep.csv      alpha,val_f1
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LangPaintModel, LanguageModel, PipelineConfig, SweepResult};
use crate::error::{Error, Result};
use crate::manifest::{ensure_dir, write_atomic, RunManifest};
use crate::model::{ModelConfig, TrainHistory};
use crate::tensorstore::{load, save};

pub const SWEEP_CSV_HEADER: &str = "alpha,val_f1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Command-specific part of a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label_names: Vec<String>,
    pub languages: Vec<String>,
    pub model_config: ModelConfig,
    pub model_digest: String,
    pub ml_digest: String,
    pub chosen_alpha: BTreeMap<String, f64>,
    pub sweeps: Vec<SweepResult>,
    pub ml_history: TrainHistory,
    pub ls_histories: BTreeMap<String, TrainHistory>,
    /// The alpha sweep scores the same validation split used for early stopping.
    pub sweep_validation: String,
}

pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for p in &sweep.grid {
        writeln!(s, "{},{}", p.alpha, p.val_f1).unwrap();
    }
    s
}

/// Writes every artifact of `model` into `dir` and returns the completed
/// manifest (also written as `manifest.json`). `manifest` supplies command,
/// seeds and inputs.
pub fn save_run_dir(model: &LangPaintModel, dir: &Path, mut manifest: RunManifest) -> Result<RunManifest> {
    ensure_dir(dir)?;
    let mut files = vec!["ml.ckpt".to_string()];
    save(&model.ml, dir.join("ml.ckpt"))?;
    for (lang, lm) in &model.per_language {
        let ls = format!("{lang}.ls.ckpt");
        let merged = format!("{lang}.merged.ckpt");
        let sweep = format!("{lang}.sweep.csv");
        save(&lm.ls, dir.join(&ls))?;
        save(&lm.merged, dir.join(&merged))?;
        write_atomic(&dir.join(&sweep), sweep_csv(&lm.sweep).as_bytes())?;
        files.extend([ls, merged, sweep]);
    }
    manifest.record_outputs(dir, &files)?;

    let summary = RunSummary {
        label_names: model.label_names.clone(),
        languages: model.per_language.keys().cloned().collect(),
        model_config: model.model_config.clone(),
        model_digest: model.digest(),
        ml_digest: model.ml.digest(),
        chosen_alpha: model.chosen_alphas(),
        sweeps: model.per_language.values().map(|m| m.sweep.clone()).collect(),
        ml_history: model.ml_history.clone(),
        ls_histories: model
            .per_language
            .iter()
            .map(|(l, m)| (l.clone(), m.history.clone()))
            .collect(),
        sweep_validation: "early-stopping validation split, restricted to the language".into(),
    };
    manifest.config = serde_json::to_value(&model.config).map_err(|e| Error::Internal(e.to_string()))?;
    manifest.details = serde_json::to_value(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn load_run_dir(dir: &Path) -> Result<LangPaintModel> {
    let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
    let invalid = |e: serde_json::Error| Error::InvalidConfig(format!("{}: {e}", dir.join(MANIFEST_FILE).display()));
    let config: PipelineConfig = serde_json::from_value(manifest.config).map_err(invalid)?;
    let summary: RunSummary = serde_json::from_value(manifest.details).map_err(invalid)?;

    let ml = load(dir.join("ml.ckpt"))?;
    let mut per_language = BTreeMap::new();
    for sweep in summary.sweeps {
        let lang = sweep.language.clone();
        let ls = load(dir.join(format!("{lang}.ls.ckpt")))?;
        let merged = load(dir.join(format!("{lang}.merged.ckpt")))?;
        if merged.digest() != sweep.chosen_digest {
            return Err(Error::Format(format!("{lang}.merged.ckpt does not match its manifest digest")));
        }
        let history = summary
            .ls_histories
            .get(&lang)
            .cloned()
            .ok_or_else(|| Error::Format(format!("manifest has no history for `{lang}`")))?;
        per_language.insert(
            lang,
            LanguageModel {
                ls,
                merged,
                sweep,
                history,
            },
        );
    }
    Ok(LangPaintModel {
        config,
        model_config: summary.model_config,
        label_names: summary.label_names,
        ml,
        ml_history: summary.ml_history,
        per_language,
    })
}
