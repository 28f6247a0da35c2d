use langpaint::data::{generate, Corpus};
use langpaint::ensemble::{
    build_ensemble, ensemble_predict, load_ensemble_dir, save_ensemble_dir, sum_probabilities, EnsembleOptions,
};
use langpaint::experiments::presets;
use langpaint::manifest::RunManifest;
use langpaint::metrics::argmax;
use langpaint::pipeline::PipelineConfig;
use proptest::prelude::*;

fn corpus() -> Corpus {
    let mut spec = presets::three_lang(2);
    for l in &mut spec.languages {
        l.n_train = 200 / 3 + 1;
    }
    let c = generate(&spec).unwrap().train;
    c.subset(&(0..200).collect::<Vec<_>>())
}

fn cfg() -> PipelineConfig {
    PipelineConfig {
        seed: 5,
        ..presets::pipeline()
    }
}

#[test]
fn five_folds_of_two_hundred() {
    let c = corpus();
    assert_eq!(c.len(), 200);
    let opts = EnsembleOptions::default();
    let (ens, sizes) = build_ensemble(&c, &cfg(), &opts).unwrap();
    assert_eq!(ens.members.len(), 5);
    assert_eq!(sizes.iter().map(|s| s.1).sum::<usize>(), 200);
    for (t, v) in &sizes {
        assert_eq!(t + v, 200);
        assert!((38..=42).contains(v), "{sizes:?}");
    }
    let (label, summed) = ensemble_predict(&ens, "sig1w0 sig1w1", "eng").unwrap();
    assert!((summed.iter().sum::<f64>() - 5.0).abs() < 1e-9);
    assert_eq!(label, argmax(&summed));
}

#[test]
fn single_member_ensemble_uses_a_split() {
    let c = corpus();
    let opts = EnsembleOptions {
        k: 1,
        ..EnsembleOptions::default()
    };
    let (ens, sizes) = build_ensemble(&c, &cfg(), &opts).unwrap();
    assert_eq!(ens.members.len(), 1);
    assert_eq!(sizes[0].0 + sizes[0].1, 200);
    assert!((38..=42).contains(&sizes[0].1));
    let (_, p) = ensemble_predict(&ens, "x", "hin").unwrap();
    assert_eq!(p, ens.members[0].infer("x", "hin").unwrap().1);
}

#[test]
fn member_order_does_not_change_output_and_dirs_round_trip() {
    let (ens, sizes) = build_ensemble(&corpus(), &cfg(), &EnsembleOptions::default()).unwrap();
    let mut rev = ens.clone();
    rev.members.reverse();
    for text in ["sig0w3 hinw2", "malsig1w1", ""] {
        let a = ensemble_predict(&ens, text, "mal").unwrap();
        let b = ensemble_predict(&rev, text, "mal").unwrap();
        assert_eq!(a.0, b.0);
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let dir = tempfile::tempdir().unwrap();
    save_ensemble_dir(&ens, dir.path(), &sizes, RunManifest::new("ensemble")).unwrap();
    let back = load_ensemble_dir(dir.path()).unwrap();
    assert_eq!(back, ens);
}

proptest! {
    #[test]
    fn sum_semantics_and_unanimity(
        members in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..6),
        seed in any::<u64>(),
    ) {
        let s = sum_probabilities(&members);
        for k in 0..3 {
            let direct: f64 = members.iter().map(|m| m[k]).sum();
            prop_assert!((s[k] - direct).abs() < 1e-6);
        }
        use rand::seq::SliceRandom;
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut langpaint::seed::rng_for(seed, "perm", 0));
        let t = sum_probabilities(&shuffled);
        prop_assert!(s.iter().zip(&t).all(|(a, b)| a.to_bits() == b.to_bits()));
        let first = argmax(&members[0]);
        if members.iter().all(|m| argmax(m) == first) {
            prop_assert_eq!(argmax(&s), first);
        }
    }
}
