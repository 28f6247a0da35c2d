//! Confusion matrices, F1 scores and evaluation reports.
//!
//! Conventions: any 0/0 ratio is 0. Weighted F1 averages per-class F1 by gold
//! support and ignores zero-support classes. Macro F1 averages over classes
//! that occur in gold labels or in predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};

/// Rows are gold labels, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

pub fn confusion(golds: &[usize], preds: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(Error::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&g, &p) in golds.iter().zip(preds) {
        for label in [g, p] {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        cm.counts[g][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_scores(cm: &ConfusionMatrix) -> F1Scores {
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let (mut macro_sum, mut active) = (0.0, 0u64);
    let (mut weighted_sum, mut support_sum) = (0.0, 0u64);
    for k in 0..c {
        let tp = cm.count(k, k);
        let support = cm.support(k);
        let predicted = cm.predicted(k);
        precision.push(ratio(tp, predicted));
        recall.push(ratio(tp, support));
        // Harmonic mean of precision and recall, in count form.
        let f1 = ratio(2 * tp, support + predicted);
        per_class.push(f1);
        if support > 0 || predicted > 0 {
            macro_sum += f1;
            active += 1;
        }
        if support > 0 {
            weighted_sum += support as f64 * f1;
            support_sum += support;
        }
    }
    F1Scores {
        per_class,
        precision,
        recall,
        macro_f1: if active == 0 { 0.0 } else { macro_sum / active as f64 },
        weighted_f1: if support_sum == 0 { 0.0 } else { weighted_sum / support_sum as f64 },
    }
}

pub fn weighted_f1(golds: &[usize], preds: &[usize], num_classes: usize) -> Result<f64> {
    Ok(f1_scores(&confusion(golds, preds, num_classes)?).weighted_f1)
}

/// Anything that can score texts for a given language.
pub trait Predictor {
    fn label_names(&self) -> &[String];
    fn predict_proba(&self, text: &str, language: &str) -> Result<Vec<f64>>;
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageScores {
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<u64>,
    pub n: u64,
    pub confusion: ConfusionMatrix,
}

impl LanguageScores {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let s = f1_scores(&cm);
        LanguageScores {
            weighted_f1: s.weighted_f1,
            macro_f1: s.macro_f1,
            per_class_f1: s.per_class,
            support: (0..cm.num_classes()).map(|k| cm.support(k)).collect(),
            n: cm.total(),
            confusion: cm,
        }
    }

    pub fn from_labels(golds: &[usize], preds: &[usize], num_classes: usize) -> Result<Self> {
        Ok(Self::from_confusion(confusion(golds, preds, num_classes)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label_names: Vec<String>,
    pub per_language: BTreeMap<String, LanguageScores>,
    pub overall: LanguageScores,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl EvalReport {
    /// Scores per-language label lists already produced by a model.
    pub fn from_predictions(
        label_names: &[String],
        by_language: &BTreeMap<String, (Vec<usize>, Vec<usize>)>,
    ) -> Result<Self> {
        let c = label_names.len();
        let mut overall = ConfusionMatrix::zeros(c);
        let mut per_language = BTreeMap::new();
        for (lang, (golds, preds)) in by_language {
            let cm = confusion(golds, preds, c)?;
            for g in 0..c {
                for p in 0..c {
                    overall.counts[g][p] += cm.counts[g][p];
                }
            }
            per_language.insert(lang.clone(), LanguageScores::from_confusion(cm));
        }
        Ok(EvalReport {
            label_names: label_names.to_vec(),
            per_language,
            overall: LanguageScores::from_confusion(overall),
            meta: BTreeMap::new(),
        })
    }
}

/// Evaluates each language slice of `corpus` independently.
pub fn evaluate(predictor: &dyn Predictor, corpus: &Corpus) -> Result<EvalReport> {
    let corpus = corpus.remap_labels(predictor.label_names())?;
    let mut by_language: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ex in corpus.examples() {
        let probs = predictor.predict_proba(&ex.text, &ex.language)?;
        let entry = by_language.entry(ex.language.clone()).or_default();
        entry.0.push(ex.label);
        entry.1.push(argmax(&probs));
    }
    EvalReport::from_predictions(predictor.label_names(), &by_language)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub weighted_f1: MeanStd,
    pub macro_f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub per_language: BTreeMap<String, AggregateScores>,
    pub overall: AggregateScores,
}

/// Mean and sample standard deviation of reports across runs. A language
/// missing from some runs is averaged over the runs that have it.
pub fn aggregate(reports: &[EvalReport]) -> AggregateReport {
    let summarize = |scores: Vec<&LanguageScores>| {
        let w: Vec<f64> = scores.iter().map(|s| s.weighted_f1).collect();
        let m: Vec<f64> = scores.iter().map(|s| s.macro_f1).collect();
        AggregateScores {
            weighted_f1: MeanStd::of(&w),
            macro_f1: MeanStd::of(&m),
        }
    };
    let mut langs: BTreeMap<&str, Vec<&LanguageScores>> = BTreeMap::new();
    for r in reports {
        for (l, s) in &r.per_language {
            langs.entry(l).or_default().push(s);
        }
    }
    AggregateReport {
        runs: reports.len(),
        per_language: langs.into_iter().map(|(l, s)| (l.to_string(), summarize(s))).collect(),
        overall: summarize(reports.iter().map(|r| &r.overall).collect()),
    }
}
