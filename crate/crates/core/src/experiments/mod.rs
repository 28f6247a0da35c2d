//! Repeated-resampling comparisons of the specialist, multilingual and merged
//! models.
//!
//! Protocol 1 resamples an 80-20 train/validation split of a fixed pool for
//! every run and scores all methods on one external test set. Protocol 2
//! resamples an 80-10-10 train/validation/test split per run; with a separate
//! shifted pool the test part is drawn from that pool instead.
//!
//! Within a run all three methods come from the same training: the
//! specialist column is the sweep's α = 1 endpoint and the multilingual
//! column is α = 0.

pub mod presets;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, Corpus, StrataKey};
use crate::error::{Error, Result};
use crate::manifest::{bytes_digest, ensure_dir, write_atomic, RunManifest};
use crate::metrics::{evaluate, MeanStd};
use crate::pipeline::{
    choose_alpha, run_langpaint, save_run_dir, LangPaintModel, Method, PipelineConfig, SweepPoint, SweepResult,
};

/// Receives each run's trained model, e.g. to persist it.
pub type ModelSink<'a> = dyn Fn(usize, &LangPaintModel) -> Result<()> + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Exp1,
    Exp2,
}

impl Protocol {
    pub fn default_runs(self) -> usize {
        match self {
            Protocol::Exp1 => 5,
            Protocol::Exp2 => 10,
        }
    }

    pub fn fractions(self) -> &'static [f64] {
        match self {
            Protocol::Exp1 => &[0.8, 0.2],
            Protocol::Exp2 => &[0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub runs: usize,
    /// Run `r` uses seed `base_seed + r` for both its split and its pipeline.
    pub base_seed: u64,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub strata_key: StrataKey,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, pipeline: PipelineConfig, base_seed: u64) -> Self {
        ExperimentSpec {
            protocol,
            runs: protocol.default_runs(),
            base_seed,
            pipeline,
            strata_key: StrataKey::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        self.pipeline.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub model_digest: String,
    pub chosen_alpha: BTreeMap<String, f64>,
    /// language → method label → test weighted F1.
    pub test_f1: BTreeMap<String, BTreeMap<String, f64>>,
    /// language → method label → validation weighted F1 from the sweep.
    pub val_f1: BTreeMap<String, BTreeMap<String, f64>>,
    pub sweeps: Vec<SweepResult>,
    pub split_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub language: String,
    pub method: String,
    pub mean_f1: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummaryRow {
    pub language: String,
    pub mean_alpha: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub language: String,
    pub alpha: f64,
    pub mean_val_f1: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub comparison: Vec<ComparisonRow>,
    pub alpha_summary: Vec<AlphaSummaryRow>,
    pub mean_curves: Vec<CurveRow>,
}

impl ExperimentReport {
    pub fn mean_f1(&self, language: &str, method: Method) -> Option<f64> {
        self.comparison
            .iter()
            .find(|r| r.language == language && r.method == method.label())
            .map(|r| r.mean_f1)
    }

    pub fn languages(&self) -> Vec<String> {
        self.alpha_summary.iter().map(|r| r.language.clone()).collect()
    }
}

struct RunData {
    train: Corpus,
    val: Corpus,
    test: Corpus,
}

fn one_run(spec: &ExperimentSpec, run: usize, data: RunData) -> Result<(RunRecord, LangPaintModel)> {
    let seed = spec.base_seed + run as u64;
    let cfg = PipelineConfig {
        seed,
        ..spec.pipeline.clone()
    };
    let model = run_langpaint(&data.train, &data.val, &cfg)?;

    let mut test_f1: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for method in Method::ALL {
        let report = evaluate(&model.view(method), &data.test)?;
        for (lang, scores) in report.per_language {
            if model.per_language.contains_key(&lang) {
                test_f1.entry(lang).or_default().insert(method.label().into(), scores.weighted_f1);
            }
        }
    }
    let mut val_f1: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (lang, lm) in &model.per_language {
        let s = &lm.sweep;
        let e = val_f1.entry(lang.clone()).or_default();
        e.insert(Method::LanguageSpecific.label().into(), s.f1_at(1.0).unwrap_or(f64::NAN));
        e.insert(Method::Multilingual.label().into(), s.f1_at(0.0).unwrap_or(f64::NAN));
        e.insert(Method::LangPaint.label().into(), s.chosen_val_f1);
    }
    let record = RunRecord {
        run,
        seed,
        model_digest: model.digest(),
        chosen_alpha: model.chosen_alphas(),
        test_f1,
        val_f1,
        sweeps: model.per_language.values().map(|m| m.sweep.clone()).collect(),
        split_sizes: vec![data.train.len(), data.val.len(), data.test.len()],
    };
    Ok((record, model))
}

fn run_all<F>(spec: &ExperimentSpec, make: F, on_model: Option<&ModelSink<'_>>) -> Result<ExperimentReport>
where
    F: Fn(usize) -> Result<RunData> + Sync,
{
    spec.validate()?;
    let runs = (0..spec.runs)
        .into_par_iter()
        .map(|r| {
            let (record, model) = one_run(spec, r, make(r)?)?;
            if let Some(sink) = on_model {
                sink(r, &model)?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(spec.clone(), runs))
}

fn summarize(spec: ExperimentSpec, runs: Vec<RunRecord>) -> ExperimentReport {
    let languages: Vec<String> = runs
        .iter()
        .flat_map(|r| r.chosen_alpha.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut comparison = Vec::new();
    let mut alpha_summary = Vec::new();
    let mut mean_curves = Vec::new();
    for lang in &languages {
        for method in Method::ALL {
            let vals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.test_f1.get(lang).and_then(|m| m.get(method.label())).copied())
                .collect();
            let ms = MeanStd::of(&vals);
            comparison.push(ComparisonRow {
                language: lang.clone(),
                method: method.label().into(),
                mean_f1: ms.mean,
                std: ms.std,
                runs: ms.n,
            });
        }
        let alphas: Vec<f64> = runs.iter().filter_map(|r| r.chosen_alpha.get(lang).copied()).collect();
        let ms = MeanStd::of(&alphas);
        alpha_summary.push(AlphaSummaryRow {
            language: lang.clone(),
            mean_alpha: ms.mean,
            std: ms.std,
            runs: ms.n,
        });
        let curves: Vec<&SweepResult> = runs
            .iter()
            .flat_map(|r| r.sweeps.iter().filter(|s| &s.language == lang))
            .collect();
        if let Some(first) = curves.first() {
            for (i, p) in first.grid.iter().enumerate() {
                let ys: Vec<f64> = curves.iter().map(|c| c.grid[i].val_f1).collect();
                let ms = MeanStd::of(&ys);
                mean_curves.push(CurveRow {
                    language: lang.clone(),
                    alpha: p.alpha,
                    mean_val_f1: ms.mean,
                    std: ms.std,
                    runs: ms.n,
                });
            }
        }
    }
    ExperimentReport {
        spec,
        runs,
        comparison,
        alpha_summary,
        mean_curves,
    }
}

/// Protocol 1: `pool` (train ∪ dev) is resampled 80-20 per run; every run is
/// scored on the fixed `test` set.
pub fn run_experiment1(pool: &Corpus, test: &Corpus, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment1_with(pool, test, spec, None)
}

pub fn run_experiment1_with(
    pool: &Corpus,
    test: &Corpus,
    spec: &ExperimentSpec,
    on_model: Option<&ModelSink<'_>>,
) -> Result<ExperimentReport> {
    let test = test.remap_labels(pool.label_names())?;
    run_all(
        spec,
        |r| {
            let mut parts = stratified_split(pool, &[0.8, 0.2], spec.strata_key, spec.base_seed + r as u64)?;
            let val = parts.pop().unwrap();
            Ok(RunData {
                train: parts.pop().unwrap(),
                val,
                test: test.clone(),
            })
        },
        on_model,
    )
}

/// Protocol 2: `pool` is resampled 80-10-10 per run. With `shifted`, the
/// run's test part is the third part of the same resampling applied to the
/// shifted pool, so train/validation and test follow different label priors.
pub fn run_experiment2(pool: &Corpus, shifted: Option<&Corpus>, spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment2_with(pool, shifted, spec, None)
}

pub fn run_experiment2_with(
    pool: &Corpus,
    shifted: Option<&Corpus>,
    spec: &ExperimentSpec,
    on_model: Option<&ModelSink<'_>>,
) -> Result<ExperimentReport> {
    let shifted = shifted.map(|s| s.remap_labels(pool.label_names())).transpose()?;
    let fr = Protocol::Exp2.fractions();
    run_all(
        spec,
        |r| {
            let seed = spec.base_seed + r as u64;
            let mut parts = stratified_split(pool, fr, spec.strata_key, seed)?;
            let test = match &shifted {
                Some(s) => stratified_split(s, fr, spec.strata_key, seed)?.pop().unwrap(),
                None => parts.pop().unwrap(),
            };
            Ok(RunData {
                train: parts.swap_remove(0),
                val: parts.swap_remove(0),
                test,
            })
        },
        on_model,
    )
}

pub const COMPARISON_HEADER: &str = "language,method,mean_f1,std,runs";
pub const PER_RUN_HEADER: &str = "run,language,method,test_f1,val_f1";
pub const SWEEP_CURVES_HEADER: &str = "run,language,alpha,val_f1";
pub const ALPHA_SUMMARY_HEADER: &str = "language,mean_alpha,std,runs";
pub const MEAN_CURVES_HEADER: &str = "language,alpha,mean_val_f1,std,runs";

pub fn comparison_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{COMPARISON_HEADER}\n");
    for r in &report.comparison {
        writeln!(s, "{},{},{},{},{}", r.language, r.method, r.mean_f1, r.std, r.runs).unwrap();
    }
    s
}

pub fn per_run_csv(report: &ExperimentReport) -> String {
    let mut s = format!("{PER_RUN_HEADER}\n");
    for run in &report.runs {
        for (lang, methods) in &run.test_f1 {
            for m in Method::ALL {
                let t = methods[m.label()];
                let v = run.val_f1[lang][m.label()];
                writeln!(s, "{},{lang},{},{t},{v}", run.run, m.label()).unwrap();
            }
        }
    }
    s
}

pub fn sweep_curves_csv(runs: &[RunRecord]) -> String {
    let mut s = format!("{SWEEP_CURVES_HEADER}\n");
    for run in runs {
        for sweep in &run.sweeps {
            for p in &sweep.grid {
                writeln!(s, "{},{},{},{}", run.run, sweep.language, p.alpha, p.val_f1).unwrap();
            }
        }
    }
    s
}

pub fn alpha_summary_csv(rows: &[AlphaSummaryRow]) -> String {
    let mut s = format!("{ALPHA_SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.language, r.mean_alpha, r.std, r.runs).unwrap();
    }
    s
}

pub fn mean_curves_csv(rows: &[CurveRow]) -> String {
    let mut s = format!("{MEAN_CURVES_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.language, r.alpha, r.mean_val_f1, r.std, r.runs).unwrap();
    }
    s
}

/// Rebuilds the per-language alpha summary and mean curves from sweep-curve
/// rows `(run, language, alpha, val_f1)`, choosing each run's alpha with the
/// pipeline's tie rule.
pub fn summarize_curves(rows: &[(String, String, f64, f64)]) -> (Vec<AlphaSummaryRow>, Vec<CurveRow>) {
    let mut by_lang: BTreeMap<&str, BTreeMap<&str, Vec<SweepPoint>>> = BTreeMap::new();
    for (run, lang, alpha, f1) in rows {
        by_lang
            .entry(lang)
            .or_default()
            .entry(run)
            .or_default()
            .push(SweepPoint {
                alpha: *alpha,
                val_f1: *f1,
            });
    }
    let mut alpha_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for (lang, runs) in by_lang {
        let chosen: Vec<f64> = runs.values().filter_map(|pts| choose_alpha(pts)).map(|p| p.alpha).collect();
        let ms = MeanStd::of(&chosen);
        alpha_rows.push(AlphaSummaryRow {
            language: lang.to_string(),
            mean_alpha: ms.mean,
            std: ms.std,
            runs: ms.n,
        });
        let mut per_alpha: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for pts in runs.values() {
            for p in pts {
                per_alpha.entry(p.alpha.to_bits()).or_insert((p.alpha, Vec::new())).1.push(p.val_f1);
            }
        }
        let mut points: Vec<(f64, Vec<f64>)> = per_alpha.into_values().collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (alpha, ys) in points {
            let ms = MeanStd::of(&ys);
            curve_rows.push(CurveRow {
                language: lang.to_string(),
                alpha,
                mean_val_f1: ms.mean,
                std: ms.std,
                runs: ms.n,
            });
        }
    }
    (alpha_rows, curve_rows)
}

/// Output files written by [`write_outputs`], relative to the output dir.
pub const OUTPUT_FILES: [&str; 5] = [
    "comparison.csv",
    "per_run.csv",
    "sweep_curves.csv",
    "alpha_summary.csv",
    "mean_curves.csv",
];

/// Writes the CSV outputs and `experiment_manifest.json`.
pub fn write_outputs(report: &ExperimentReport, dir: &Path, mut manifest: RunManifest) -> Result<RunManifest> {
    ensure_dir(dir)?;
    let files = [
        comparison_csv(report),
        per_run_csv(report),
        sweep_curves_csv(&report.runs),
        alpha_summary_csv(&report.alpha_summary),
        mean_curves_csv(&report.mean_curves),
    ];
    for (name, body) in OUTPUT_FILES.iter().zip(&files) {
        write_atomic(&dir.join(name), body.as_bytes())?;
        manifest.outputs.insert(name.to_string(), bytes_digest(body.as_bytes()));
    }
    manifest.config = serde_json::to_value(&report.spec).map_err(|e| Error::Internal(e.to_string()))?;
    manifest.details = serde_json::json!({
        "runs": report.runs.iter().map(|r| serde_json::json!({
            "run": r.run,
            "seed": r.seed,
            "model_digest": r.model_digest,
            "chosen_alpha": r.chosen_alpha,
            "split_sizes": r.split_sizes,
        })).collect::<Vec<_>>(),
    });
    manifest.write(&dir.join("experiment_manifest.json"))?;
    Ok(manifest)
}

/// Saves run `r`'s model under `dir/runs/run_<r>/`.
pub fn save_run_model(dir: &Path, run: usize, seed: u64, model: &LangPaintModel, threads: usize) -> Result<()> {
    let sub = dir.join("runs").join(format!("run_{run}"));
    let mut m = RunManifest::new("run");
    m.seeds.insert("seed".into(), seed);
    m.threads = threads;
    save_run_dir(model, &sub, m).map(|_| ())
}
