use rand::distributions::{Distribution, Uniform};

use super::{featurize, FeatureVector, ModelConfig, META_MODEL_CONFIG};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::seed::rng_for;
use crate::tensorstore::{Checkpoint, Tensor};

pub const WEIGHTS: &str = "W";
pub const BIAS: &str = "b";

const INIT_SCALE: f32 = 0.01;

/// Borrowed `W [classes, dim]` and `b [classes]` of a checkpoint.
pub(crate) struct LinearView<'a> {
    pub w: &'a [f32],
    pub b: &'a [f32],
    pub classes: usize,
    pub dim: usize,
}

impl<'a> LinearView<'a> {
    pub fn of(ckpt: &'a Checkpoint) -> Result<Self> {
        let w = ckpt
            .get(WEIGHTS)
            .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint has no `{WEIGHTS}` tensor")))?;
        let b = ckpt
            .get(BIAS)
            .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint has no `{BIAS}` tensor")))?;
        let &[classes, dim] = w.shape() else {
            return Err(Error::ShapeMismatch(format!("`{WEIGHTS}` has shape {:?}, expected 2-d", w.shape())));
        };
        if b.shape() != [classes] {
            return Err(Error::ShapeMismatch(format!(
                "`{BIAS}` has shape {:?}, expected [{classes}]",
                b.shape()
            )));
        }
        Ok(LinearView {
            w: w.data(),
            b: b.data(),
            classes,
            dim,
        })
    }

    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        if self.classes != cfg.num_classes || self.dim != cfg.hash_dim {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint is [{}, {}] but config expects [{}, {}]",
                self.classes, self.dim, cfg.num_classes, cfg.hash_dim
            )));
        }
        Ok(())
    }

    /// Softmax probabilities, computed in f64.
    pub fn probabilities(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        if let Some(&bad) = fv.indices.iter().find(|&&i| i as usize >= self.dim) {
            return Err(Error::ShapeMismatch(format!(
                "feature index {bad} out of range for hash_dim {}",
                self.dim
            )));
        }
        let mut z: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.w[c * self.dim..(c + 1) * self.dim];
                f64::from(self.b[c]) + fv.iter().map(|(j, x)| f64::from(row[j]) * f64::from(x)).sum::<f64>()
            })
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in &mut z {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in &mut z {
            *v /= total;
        }
        Ok(z)
    }

    /// Adds one example's cross-entropy gradient (unscaled) into the buffers
    /// and returns its loss.
    pub fn accumulate(&self, fv: &FeatureVector, label: usize, grad_w: &mut [f64], grad_b: &mut [f64]) -> Result<f64> {
        if label >= self.classes {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.classes,
            });
        }
        let p = self.probabilities(fv)?;
        for (c, &pc) in p.iter().enumerate() {
            let delta = pc - if c == label { 1.0 } else { 0.0 };
            grad_b[c] += delta;
            let row = &mut grad_w[c * self.dim..(c + 1) * self.dim];
            for (j, x) in fv.iter() {
                row[j] += delta * f64::from(x);
            }
        }
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }
}

/// `W ~ U(-0.01, 0.01)` from the config seed, `b = 0`.
pub fn init_model(config: &ModelConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = rng_for(config.seed, "init", 0);
    let dist = Uniform::new(-INIT_SCALE, INIT_SCALE);
    let n = config.num_classes * config.hash_dim;
    let mut w = Vec::with_capacity(n);
    while w.len() < n {
        let x = dist.sample(&mut rng);
        if x > -INIT_SCALE {
            w.push(x);
        }
    }
    let mut ckpt = Checkpoint::from_tensors([
        Tensor::new(WEIGHTS, vec![config.num_classes, config.hash_dim], w)?,
        Tensor::zeros(BIAS, vec![config.num_classes])?,
    ])?;
    ckpt.set_meta(META_MODEL_CONFIG, serde_json::to_string(config).expect("config serializes"));
    ckpt.set_meta("seed", config.seed.to_string());
    Ok(ckpt)
}

pub fn forward(ckpt: &Checkpoint, fv: &FeatureVector) -> Result<Vec<f64>> {
    LinearView::of(ckpt)?.probabilities(fv)
}

/// Mean cross-entropy over `batch` and its gradient as a checkpoint with the
/// same tensors as `ckpt`.
pub fn loss_and_grad(ckpt: &Checkpoint, batch: &[(FeatureVector, usize)]) -> Result<(f64, Checkpoint)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let view = LinearView::of(ckpt)?;
    let mut gw = vec![0.0; view.w.len()];
    let mut gb = vec![0.0; view.classes];
    let mut loss = 0.0;
    for (fv, label) in batch {
        loss += view.accumulate(fv, *label, &mut gw, &mut gb)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let cast = |g: Vec<f64>| g.into_iter().map(|x| (x * scale) as f32).collect::<Vec<f32>>();
    let grad = Checkpoint::from_tensors([
        Tensor::new(WEIGHTS, vec![view.classes, view.dim], cast(gw))?,
        Tensor::new(BIAS, vec![view.classes], cast(gb))?,
    ])?;
    Ok((loss * scale, grad))
}

pub fn predict_proba(ckpt: &Checkpoint, text: &str, config: &ModelConfig) -> Result<Vec<f64>> {
    let view = LinearView::of(ckpt)?;
    view.check_config(config)?;
    view.probabilities(&featurize(text, config))
}

pub fn predict(ckpt: &Checkpoint, text: &str, config: &ModelConfig) -> Result<usize> {
    Ok(argmax(&predict_proba(ckpt, text, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(c: usize, d: usize) -> ModelConfig {
        ModelConfig {
            hash_dim: d,
            num_classes: c,
            ngram_orders: vec![1, 2],
            seed: 7,
        }
    }

    fn constant(c: usize, d: usize, w: f32, b: Vec<f32>) -> Checkpoint {
        Checkpoint::from_tensors([
            Tensor::new(WEIGHTS, vec![c, d], vec![w; c * d]).unwrap(),
            Tensor::new(BIAS, vec![c], b).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn init_deterministic_and_ranged() {
        let a = init_model(&cfg(3, 64)).unwrap();
        let b = init_model(&cfg(3, 64)).unwrap();
        assert!(a.tensors_bits_eq(&b));
        assert!(a.get(BIAS).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(a.get(WEIGHTS).unwrap().data().iter().all(|&x| x > -0.01 && x < 0.01));
        let other = init_model(&ModelConfig { seed: 8, ..cfg(3, 64) }).unwrap();
        assert!(!a.tensors_bits_eq(&other));
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = constant(4, 16, 0.0, vec![0.0; 4]);
        let p = forward(&m, &featurize("anything at all", &cfg(4, 16))).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn bias_only_softmax() {
        let m = constant(2, 8, 0.0, vec![10.0, 0.0]);
        let p = forward(&m, &FeatureVector::default()).unwrap();
        let e10 = 10f64.exp();
        assert!((p[0] - e10 / (e10 + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e10 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn uniform_loss_is_ln_c() {
        let m = constant(3, 8, 0.0, vec![0.0; 3]);
        let batch = vec![(featurize("a b", &cfg(3, 8)), 1), (featurize("c", &cfg(3, 8)), 2)];
        let (loss, grad) = loss_and_grad(&m, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!(grad.is_compatible(&m));
    }

    #[test]
    fn confident_truth_has_near_zero_loss() {
        let m = constant(2, 8, 0.0, vec![50.0, 0.0]);
        let (loss, _) = loss_and_grad(&m, &[(FeatureVector::default(), 0)]).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn batch_errors() {
        let m = constant(2, 8, 0.0, vec![0.0; 2]);
        assert!(matches!(loss_and_grad(&m, &[]), Err(Error::EmptyBatch)));
        assert!(matches!(
            loss_and_grad(&m, &[(FeatureVector::default(), 2)]),
            Err(Error::LabelOutOfRange { .. })
        ));
        let fv = FeatureVector {
            indices: vec![8],
            values: vec![1.0],
        };
        assert!(matches!(forward(&m, &fv), Err(Error::ShapeMismatch(_))));
        assert!(matches!(predict(&m, "x", &cfg(3, 8)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(forward(&Checkpoint::new(), &fv), Err(Error::ShapeMismatch(_))));
    }
}
