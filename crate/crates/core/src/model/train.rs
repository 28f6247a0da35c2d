//! Minibatch Adam with early stopping on a validation metric.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::linear::LinearView;
use super::{featurize, FeatureVector, ModelConfig, TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, BIAS, WEIGHTS};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::metrics::{self, argmax};
use crate::seed::rng_for;
use crate::tensorstore::Checkpoint;

/// A corpus with its feature vectors computed once.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub languages: Vec<String>,
    pub num_classes: usize,
}

pub fn encode(corpus: &Corpus, config: &ModelConfig) -> Result<EncodedCorpus> {
    let mut labels = Vec::with_capacity(corpus.len());
    for ex in corpus.examples() {
        if ex.label >= config.num_classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                num_classes: config.num_classes,
            });
        }
        labels.push(ex.label);
    }
    Ok(EncodedCorpus {
        features: corpus.examples().iter().map(|e| featurize(&e.text, config)).collect(),
        labels,
        languages: corpus.examples().iter().map(|e| e.language.clone()).collect(),
        num_classes: config.num_classes,
    })
}

impl EncodedCorpus {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn predict(&self, ckpt: &Checkpoint) -> Result<Vec<usize>> {
        let view = LinearView::of(ckpt)?;
        self.features
            .iter()
            .map(|fv| view.probabilities(fv).map(|p| argmax(&p)))
            .collect()
    }

    pub fn weighted_f1(&self, ckpt: &Checkpoint) -> Result<f64> {
        metrics::weighted_f1(&self.labels, &self.predict(ckpt)?, self.num_classes)
    }

    /// Weighted F1 of each language slice, keyed by sorted language tag.
    pub fn per_language_weighted_f1(&self, ckpt: &Checkpoint) -> Result<BTreeMap<String, (f64, usize)>> {
        let preds = self.predict(ckpt)?;
        let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for ((lang, &g), &p) in self.languages.iter().zip(&self.labels).zip(&preds) {
            let e = groups.entry(lang).or_default();
            e.0.push(g);
            e.1.push(p);
        }
        groups
            .into_iter()
            .map(|(l, (g, p))| Ok((l.to_string(), (metrics::weighted_f1(&g, &p, self.num_classes)?, g.len()))))
            .collect()
    }
}

/// Validation metric: higher is better.
pub type Metric<'a> = dyn Fn(&Checkpoint, &EncodedCorpus) -> Result<f64> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Last epoch run (1-based; 0 if none ran).
    pub stopped_epoch: usize,
    /// Epoch the returned weights come from (0 means the initial weights).
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p = (f64::from(*p) - update) as f32;
        }
    }
}

/// Trains from `init` and returns the weights of the best validation epoch.
///
/// Each epoch shuffles the training set with a generator keyed by
/// `(tcfg.seed, epoch)`. An epoch counts as an improvement when its metric is
/// at least `best + min_delta`; training stops after `patience` epochs
/// without improvement or at `max_epochs`. Adam state starts fresh.
pub fn train(
    init: &Checkpoint,
    train_set: &Corpus,
    val_set: &Corpus,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    metric: &Metric<'_>,
) -> Result<(Checkpoint, TrainHistory)> {
    mcfg.validate()?;
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyCorpus("training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyCorpus("validation set".into()));
    }
    let view = LinearView::of(init)?;
    view.check_config(mcfg)?;
    let (classes, dim) = (view.classes, view.dim);

    let train_enc = encode(train_set, mcfg)?;
    let val_enc = encode(val_set, mcfg)?;

    let mut history = TrainHistory {
        epochs: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_metric: None,
    };
    if tcfg.max_epochs == 0 {
        return Ok((init.clone(), history));
    }

    let n_w = classes * dim;
    let mut params: Vec<f32> = view.w.iter().chain(view.b).copied().collect();
    let mut grads = vec![0.0f64; params.len()];
    let mut adam = Adam::new(params.len());
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stale = 0;

    let snapshot = |params: &[f32]| -> Result<Checkpoint> {
        let mut c = init.clone();
        c.replace_data(WEIGHTS, params[..n_w].to_vec())?;
        c.replace_data(BIAS, params[n_w..].to_vec())?;
        Ok(c)
    };

    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    for epoch in 1..=tcfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(tcfg.seed, "epoch", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let (gw, gb) = grads.split_at_mut(n_w);
            let view = LinearView {
                w: &params[..n_w],
                b: &params[n_w..],
                classes,
                dim,
            };
            for &i in batch {
                loss_sum += view.accumulate(&train_enc.features[i], train_enc.labels[i], gw, gb)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grads, tcfg.learning_rate);
        }

        let current = snapshot(&params)?;
        let val_metric = metric(&current, &val_enc)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_enc.len() as f64,
            val_metric,
        });
        history.stopped_epoch = epoch;

        let improved = match &best {
            None => true,
            Some((b, _)) => val_metric >= b + tcfg.min_delta,
        };
        if improved {
            best = Some((val_metric, current));
            history.best_epoch = epoch;
            history.best_metric = Some(val_metric);
            stale = 0;
        } else {
            stale += 1;
            if stale >= tcfg.patience {
                break;
            }
        }
    }

    let (_, ckpt) = best.expect("at least one epoch ran");
    Ok((ckpt, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::model::init_model;

    fn separable(n: usize) -> Corpus {
        let ex = (0..n)
            .map(|i| {
                let label = i % 2;
                Example::new(format!("tok{label} filler{} other{}", i % 7, i % 3), label, "eng")
            })
            .collect();
        Corpus::from_examples(ex, vec!["a".into(), "b".into()]).unwrap()
    }

    fn mcfg() -> ModelConfig {
        ModelConfig {
            hash_dim: 256,
            num_classes: 2,
            ngram_orders: vec![1],
            seed: 3,
        }
    }

    #[test]
    fn constant_metric_patience_one() {
        let tcfg = TrainConfig {
            patience: 1,
            max_epochs: 10,
            learning_rate: 0.05,
            ..Default::default()
        };
        let data = separable(40);
        let (_, h) = train(&init_model(&mcfg()).unwrap(), &data, &data, &mcfg(), &tcfg, &|_, _| Ok(0.5)).unwrap();
        assert_eq!((h.stopped_epoch, h.best_epoch), (2, 1));
        assert_eq!(h.epochs.len(), 2);
    }

    #[test]
    fn returns_best_not_last() {
        let tcfg = TrainConfig {
            patience: 2,
            max_epochs: 10,
            learning_rate: 0.05,
            ..Default::default()
        };
        let data = separable(40);
        let scores = std::cell::RefCell::new(vec![0.1, 0.9, 0.5, 0.4].into_iter());
        let seen = std::cell::RefCell::new(Vec::new());
        let metric = |c: &Checkpoint, _: &EncodedCorpus| {
            seen.borrow_mut().push(c.clone());
            Ok(scores.borrow_mut().next().unwrap())
        };
        let (best, h) = train(&init_model(&mcfg()).unwrap(), &data, &data, &mcfg(), &tcfg, &metric).unwrap();
        assert_eq!((h.best_epoch, h.stopped_epoch), (2, 4));
        assert!(best.tensors_bits_eq(&seen.borrow()[1]));
        assert!(!best.tensors_bits_eq(&seen.borrow()[3]));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let tcfg = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let data = separable(10);
        let init = init_model(&mcfg()).unwrap();
        let (out, h) = train(&init, &data, &data, &mcfg(), &tcfg, &|_, _| Ok(0.0)).unwrap();
        assert_eq!(out, init);
        assert_eq!((h.best_epoch, h.stopped_epoch), (0, 0));
    }

    #[test]
    fn empty_sets_rejected() {
        let data = separable(10);
        let empty = Corpus::new(data.label_names().to_vec());
        let init = init_model(&mcfg()).unwrap();
        let t = TrainConfig::default();
        assert!(matches!(train(&init, &empty, &data, &mcfg(), &t, &|_, _| Ok(0.0)), Err(Error::EmptyCorpus(_))));
        assert!(matches!(train(&init, &data, &empty, &mcfg(), &t, &|_, _| Ok(0.0)), Err(Error::EmptyCorpus(_))));
    }
}
