mod common;

use proptest::prelude::*;

use tdha_core::inference::classify_one;
use tdha_core::poincare::distance;
use tdha_core::prototype::PrototypeConfig;
use tdha_core::textbank::{aggregate, AggregateMode};
use tdha_core::data::{generate_synthetic, sample_episode, EpisodeSpec, SyntheticParams};
use tdha_core::{classify_batch, Components, EmbeddingVector, FusionConfig, MeanMode, PrototypeSet, SupportSet};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn library_matches_brute_force(seed in any::<u64>()) {
        let inst = common::random_instance(&mut common::rng(seed));
        let (err, argmax_ok) = common::compare(&inst);
        prop_assert!(err <= 1e-9, "max entry error {err}");
        prop_assert!(argmax_ok);
    }

    #[test]
    fn prototypes_stay_inside_the_scaled_ball(seed in any::<u64>(), tangent in any::<bool>()) {
        let inst = common::random_instance(&mut common::rng(seed));
        let mode = if tangent { MeanMode::Tangent } else { MeanMode::Ambient };
        let p = PrototypeSet::build(&inst.support_set(), &PrototypeConfig { scale: inst.scale, seed: inst.seed, mean_mode: mode }).unwrap();
        let bound = inst.scale.tanh() + 1e-12;
        for b in p.positive.iter().chain(&p.negative) {
            prop_assert!(b.norm() <= bound, "norm {} > {bound}", b.norm());
        }
    }

    #[test]
    fn relabelling_classes_permutes_everything(seed in any::<u64>(), rotate_by in 1usize..5) {
        let inst = common::random_instance(&mut common::rng(seed));
        let k = inst.class_count();
        let r = rotate_by % k;
        // Class c moves to position (c + r) % k, keeping its name and data.
        let to = |c: usize| (c + r) % k;
        let mut moved = inst.clone();
        moved.labels = inst.labels.iter().map(|&l| to(l)).collect();
        for c in 0..k {
            moved.names[to(c)] = inst.names[c].clone();
            moved.prompts_pos[to(c)] = inst.prompts_pos[c].clone();
            moved.prompts_neg[to(c)] = inst.prompts_neg[c].clone();
        }
        let cfg = |i: &common::Instance| PrototypeConfig { scale: i.scale, seed: i.seed, mean_mode: i.mean_mode };
        let a = PrototypeSet::build(&inst.support_set(), &cfg(&inst)).unwrap();
        let b = PrototypeSet::build(&moved.support_set(), &cfg(&moved)).unwrap();
        for c in 0..k {
            prop_assert_eq!(&a.positive[c], &b.positive[to(c)]);
            // Summation order over the other classes changes, so allow rounding.
            for (x, y) in a.negative[c].coords().iter().zip(b.negative[to(c)].coords()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }
        let sa = inst.run_library();
        let sb = moved.run_library();
        for ((ca, pa), (cb, pb)) in sa.iter().zip(&sb) {
            // Ties go to the lowest index, which relabelling can move.
            let top = pa[*ca];
            if pa.iter().filter(|&&x| x == top).count() == 1 {
                prop_assert_eq!(to(*ca), *cb);
            }
            for c in 0..k {
                prop_assert!((pa[c] - pb[to(c)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn renormalising_keeps_the_argmax(seed in any::<u64>()) {
        let mut inst = common::random_instance(&mut common::rng(seed));
        let raw = inst.run_library();
        inst.fusion.renormalize = true;
        let normed = inst.run_library();
        for ((c1, _), (c2, p)) in raw.iter().zip(&normed) {
            prop_assert_eq!(c1, c2);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_alpha_reduces_to_the_text_branch() {
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let mut inst = common::random_instance(&mut rng);
        inst.fusion.alpha = 0.0;
        inst.fusion.components = Components::FULL;
        let full = inst.run_library();
        inst.fusion.components = "itp+,itp-".parse().unwrap();
        let text = inst.run_library();
        for ((c1, p1), (c2, p2)) in full.iter().zip(&text) {
            assert_eq!(c1, c2);
            assert!(p1.iter().zip(p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn batch_equals_sequential_for_any_thread_count() {
    let bundle = generate_synthetic(&SyntheticParams { test_per_class: 20, ..SyntheticParams::standard() }).unwrap();
    let support = sample_episode(&bundle, &EpisodeSpec { shots: 4, seed: 9, episode_index: 0 }).unwrap();
    let protos = PrototypeSet::build(&support, &PrototypeConfig::default()).unwrap();
    let bank = bundle.text_bank(AggregateMode::Normalized).unwrap();
    let test = bundle.test.vectors().unwrap();
    let config = FusionConfig::default();
    let sequential: Vec<_> = test.iter().map(|v| classify_one(v, &protos, &bank, &config, 0.5).unwrap()).collect();
    for threads in [1, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let batch = pool.install(|| classify_batch(&test, &protos, &bank, &config, 0.5).unwrap());
        assert_eq!(batch, sequential, "{threads} threads");
    }
}

#[test]
fn separated_classes_have_distinct_positive_and_negative_prototypes() {
    let bundle = generate_synthetic(&SyntheticParams { noise_sigma: 0.05, ..SyntheticParams::standard() }).unwrap();
    for mode in [MeanMode::Ambient, MeanMode::Tangent] {
        let support = sample_episode(&bundle, &EpisodeSpec { shots: 8, seed: 2, episode_index: 1 }).unwrap();
        let p = PrototypeSet::build(&support, &PrototypeConfig { mean_mode: mode, ..Default::default() }).unwrap();
        for k in 0..p.class_count() {
            assert!(distance(&p.positive[k], &p.negative[k]).unwrap() > 0.0);
        }
        assert!(p.diagnostics.is_empty());
    }
}

#[test]
fn coinciding_prototypes_are_diagnosed_not_rejected() {
    // Two classes with the same single support vector: the negative of each
    // class is the other's sample, which equals its own positive.
    let v = EmbeddingVector::new(vec![0.3, 0.4]).unwrap();
    let support = SupportSet::with_default_names(vec![v.clone(), v], vec![0, 1], 2).unwrap();
    let p = PrototypeSet::build(&support, &PrototypeConfig::default()).unwrap();
    assert_eq!(p.diagnostics.len(), 2);
}

#[test]
fn raw_aggregation_differs_only_when_prompt_norms_differ() {
    let inst = common::random_instance(&mut common::rng(21));
    let bank = inst.prompt_bank();
    let normed = aggregate(&bank, AggregateMode::Normalized).unwrap();
    let raw = aggregate(&bank, AggregateMode::Raw).unwrap();
    for c in 0..inst.class_count() {
        if inst.prompts_pos[c].len() == 1 {
            for (a, b) in normed.positive()[c].iter().zip(&raw.positive()[c]) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }
}
