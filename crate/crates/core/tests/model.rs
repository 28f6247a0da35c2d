use langpaint::data::{Corpus, Example};
use langpaint::model::{
    encode, featurize, forward, init_model, loss_and_grad, predict, train, EncodedCorpus, ModelConfig, TrainConfig,
    BIAS, WEIGHTS,
};
use langpaint::tensorstore::{Checkpoint, Tensor};
use proptest::prelude::*;

/// Reference FNV-1a, 64-bit.
fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[test]
fn features_match_reference_hashing() {
    let cfg = ModelConfig {
        hash_dim: 64,
        ..ModelConfig::default()
    };
    let fv = featurize("X  y", &cfg);
    let mut counts = std::collections::BTreeMap::new();
    for gram in ["x", "y", "x y"] {
        *counts.entry((fnv(gram.as_bytes()) % 64) as u32).or_insert(0.0f64) += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let expect_idx: Vec<u32> = counts.keys().copied().collect();
    let expect_val: Vec<f32> = counts.values().map(|c| (c / norm) as f32).collect();
    assert_eq!(fv.indices, expect_idx);
    assert_eq!(fv.values, expect_val);
}

fn separable(n: usize) -> Corpus {
    let ex = (0..n)
        .map(|i| {
            let label = i % 2;
            let word = if label == 0 { "apple" } else { "stone" };
            Example::new(format!("{word} filler{} {word}", i % 7), label, "eng")
        })
        .collect();
    Corpus::from_examples(ex, vec!["a".into(), "b".into()]).unwrap()
}

fn wf1(c: &Checkpoint, v: &EncodedCorpus) -> langpaint::Result<f64> {
    v.weighted_f1(c)
}

fn fast() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        max_epochs: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn learns_a_separable_set() {
    let cfg = ModelConfig {
        hash_dim: 256,
        ..ModelConfig::default()
    };
    let data = separable(40);
    let init = init_model(&cfg).unwrap();
    let (model, hist) = train(&init, &data, &data, &cfg, &fast(), &wf1).unwrap();
    let enc = encode(&data, &cfg).unwrap();
    assert_eq!(enc.weighted_f1(&model).unwrap(), 1.0);
    assert!(hist.best_epoch <= hist.stopped_epoch);
    let best = hist.epochs[hist.best_epoch - 1].train_loss;
    assert!(best < hist.epochs[0].train_loss || hist.best_epoch == 1);
    assert_eq!(predict(&model, "apple apple", &cfg).unwrap(), 0);
    assert_eq!(predict(&model, "stone", &cfg).unwrap(), 1);
}

#[test]
fn loss_decreases_on_noisy_learnable_set() {
    let cfg = ModelConfig {
        hash_dim: 256,
        ..ModelConfig::default()
    };
    let mut ex: Vec<Example> = separable(60).examples().to_vec();
    for e in ex.iter_mut().step_by(9) {
        e.label = 1 - e.label;
    }
    let data = Corpus::from_examples(ex, vec!["a".into(), "b".into()]).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 0.01,
        patience: 5,
        min_delta: 0.0,
        ..fast()
    };
    let (_, hist) = train(&init_model(&cfg).unwrap(), &data, &data, &cfg, &tcfg, &wf1).unwrap();
    assert!(hist.best_epoch >= 1);
    let last = hist.epochs.last().unwrap().train_loss;
    assert!(last < hist.epochs[0].train_loss, "{:?}", hist.epochs);
}

#[test]
fn training_is_deterministic() {
    let cfg = ModelConfig {
        hash_dim: 128,
        seed: 9,
        ..ModelConfig::default()
    };
    let data = separable(30);
    let run = || train(&init_model(&cfg).unwrap(), &data, &data, &cfg, &fast(), &wf1).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert!(a.tensors_bits_eq(&b));
    assert_eq!(ha, hb);
    let other = TrainConfig { seed: 1, ..fast() };
    let (c, _) = train(&init_model(&cfg).unwrap(), &data, &data, &cfg, &other, &wf1).unwrap();
    assert_eq!(c.get(WEIGHTS).unwrap().shape(), a.get(WEIGHTS).unwrap().shape());
}

#[test]
fn gradient_of_zero_model_matches_closed_form() {
    // W = 0, b = 0 gives uniform probabilities, so dL/db_k = 1/C - [k == y].
    let cfg = ModelConfig {
        hash_dim: 8,
        num_classes: 4,
        ..ModelConfig::default()
    };
    let zero = Checkpoint::from_tensors([
        Tensor::zeros(WEIGHTS, vec![4, 8]).unwrap(),
        Tensor::zeros(BIAS, vec![4]).unwrap(),
    ])
    .unwrap();
    let (loss, grad) = loss_and_grad(&zero, &[(featurize("a b", &cfg), 2)]).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    assert_eq!(grad.get(BIAS).unwrap().data(), &[0.25, 0.25, -0.75, 0.25]);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(
        w in prop::collection::vec(-20.0f32..20.0, 3 * 16),
        b in prop::collection::vec(-20.0f32..20.0, 3),
        text in "[a-e ]{0,30}",
    ) {
        let cfg = ModelConfig { hash_dim: 16, num_classes: 3, ..ModelConfig::default() };
        let ckpt = Checkpoint::from_tensors([
            Tensor::new(WEIGHTS, vec![3, 16], w).unwrap(),
            Tensor::new(BIAS, vec![3], b).unwrap(),
        ]).unwrap();
        let p = forward(&ckpt, &featurize(&text, &cfg)).unwrap();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn features_are_in_range_and_unit_norm(text in "\\PC{0,40}", dim in 2usize..64) {
        let cfg = ModelConfig { hash_dim: dim, ..ModelConfig::default() };
        let fv = featurize(&text, &cfg);
        prop_assert!(fv.indices.iter().all(|&i| (i as usize) < dim));
        prop_assert!(fv.indices.windows(2).all(|w| w[0] < w[1]));
        let n = fv.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
    }
}
