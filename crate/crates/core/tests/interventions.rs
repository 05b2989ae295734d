//! Degenerate-weight reductions, alternation isolation and the DA/SC
//! contracts, on small models.

use acai_core::generative::{draw_code, CodeDistribution, GeneratorHandle, LatentCode, OracleGenerator};
use acai_core::interventions::{
    adversarial_pool, apply_intervention, augment_da, augmentation_size, kl_divergence, sc_loss, sc_loss_with_values,
    AlternatingTrainer, InterventionConfig, InterventionContext, InterventionKind,
};
use acai_core::task::{train_classifier, Classifier, ClassifierConfig, LabeledSet};
use acai_core::world::{generate_dataset, DatasetSpec, RenderEffect, Sample};
use acai_core::Error;

fn setup(n: usize) -> (Vec<Sample>, GeneratorHandle, usize) {
    let spec = DatasetSpec::desk_with_sensitivity(RenderEffect::Brightness, 0.8);
    let bi = spec.factor_index(RenderEffect::Brightness).unwrap();
    let data = generate_dataset(&spec, n, 21, None).unwrap();
    (data, GeneratorHandle::Oracle(OracleGenerator::with_pairs(spec, &[(3, bi)], 10).unwrap()), bi)
}

fn small() -> ClassifierConfig {
    ClassifierConfig { widths: vec![4, 8, 8, 8], epochs: 2, batch_size: 16, seed: 5, ..Default::default() }
}

#[test]
fn kind_strings() {
    for k in InterventionKind::ALL {
        assert_eq!(InterventionKind::parse(k.as_str()).unwrap(), k);
    }
    assert_eq!(InterventionKind::DA.label(3), "DA-4");
    assert!(matches!(InterventionKind::parse("XY"), Err(Error::Input(_))));
    let mut bad = InterventionConfig::new(InterventionKind::AA, 3, 0);
    bad.aa_weight = -1.0;
    assert!(matches!(bad.validate(10), Err(Error::Input(_))));
    assert!(matches!(InterventionConfig::new(InterventionKind::SC, 10, 0).validate(10), Err(Error::Input(_))));
}

#[test]
fn augmentation_size_rounds_up() {
    assert_eq!(augmentation_size(10.0, 500), 5000);
    assert_eq!(augmentation_size(2.5, 3), 8);
    // 0.1 · 30 is 3.0000000000000004 in floating point.
    assert_eq!(augmentation_size(0.1, 30), 3);
}

#[test]
fn da_keeps_originals_and_covers_the_factor_uniformly() {
    let (train, gen, bi) = setup(30);
    let GeneratorHandle::Oracle(o) = &gen else { unreachable!() };
    let dist = [0.2; 5];
    let aug = augment_da(&train, &gen, 3, 1000, 10.0, &dist, 4).unwrap();
    assert_eq!(aug.original, train);
    assert_eq!(aug.synthetic.len(), 10_000);
    assert_eq!(aug.len(), 10_030);
    let labeled = aug.labeled();
    for (k, s) in train.iter().enumerate() {
        assert_eq!(labeled.images[k], &s.image);
        assert_eq!(labeled.labels[k], s.label);
    }
    for y in 0..5 {
        assert_eq!(aug.synthetic.iter().filter(|s| s.label == y).count(), 2000);
    }

    // Kolmogorov–Smirnov distance of the mapped factor against uniform.
    let range = o.spec.factors[bi].range;
    let mut v: Vec<f64> =
        aug.synthetic.iter().map(|s| (o.factors_for(&s.code)[bi] - range.lo) / (range.hi - range.lo)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    let ks = v
        .iter()
        .enumerate()
        .map(|(k, &x)| f64::max((k as f64 + 1.0) / n - x, x - k as f64 / n))
        .fold(0.0, f64::max);
    assert!(ks < 0.05, "KS {ks}");
}

#[test]
fn kl_examples() {
    let p = [0.9, 0.1];
    let q = [0.1, 0.9];
    assert!((kl_divergence(&p, &q) - 0.8 * 9f64.ln()).abs() < 1e-12);
    assert_eq!(kl_divergence(&p, &p), 0.0);
    assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).is_finite());
}

fn codes(gen: &GeneratorHandle, n: usize) -> Vec<LatentCode> {
    (0..n).map(|k| draw_code(&gen.meta(), CodeDistribution::UniformEval, k % 5, 8, k)).collect()
}

#[test]
fn sc_loss_examples() {
    let (_, gen, _) = setup(1);
    let batch = codes(&gen, 12);
    let mut clf = Classifier::new(&small(), 5, 32, 32).unwrap();
    assert!(sc_loss(&clf, &gen, &batch, 3, 1).unwrap() >= 0.0);
    let same: Vec<f64> = batch.iter().map(|c| c.c[3]).collect();
    assert_eq!(sc_loss_with_values(&clf, &gen, &batch, 3, &same).unwrap(), 0.0);
    assert!(matches!(sc_loss(&clf, &gen, &[], 3, 1), Err(Error::Input(_))));

    // Zero head weights: every image gets the same distribution.
    let params = clf.head.params_mut();
    let last = params.len() - 2;
    for (k, p) in params.into_iter().enumerate() {
        if k == last {
            p.fill(0.0);
        }
    }
    assert_eq!(sc_loss(&clf, &gen, &batch, 3, 1).unwrap(), 0.0);
}

#[test]
fn zero_consistency_weight_is_plain_training() {
    let (train, gen, _) = setup(48);
    let mut config = InterventionConfig::new(InterventionKind::SC, 3, 1);
    config.sc_weight = 0.0;
    let ctx = InterventionContext::new(&train, 20, &gen, small());
    let sc = apply_intervention(&config, &ctx).unwrap().trained.classifier;
    let base = train_classifier(&LabeledSet::from_samples(&train), 5, &small()).unwrap().classifier;
    assert_eq!(sc.trunk, base.trunk);
    assert_eq!(sc.head, base.head);
}

#[test]
fn zero_adversary_weight_is_plain_mix_training() {
    let (train, gen, _) = setup(48);
    let real = LabeledSet::from_samples(&train);
    let pool = adversarial_pool(&gen, &real, 5, 2).unwrap();
    assert_eq!(pool.len(), train.len());
    let with = AlternatingTrainer::new(real.clone(), &pool, 3, 5, &small(), Some((0.0, 10, 16))).unwrap().run(2).unwrap();
    let without = AlternatingTrainer::new(real, &pool, 3, 5, &small(), None).unwrap().run(2).unwrap();
    assert!(with.1.is_some() && without.1.is_none());
    assert_eq!(with.0.classifier, without.0.classifier);
}

#[test]
fn alternation_updates_one_side_at_a_time() {
    let (train, gen, _) = setup(48);
    let real = LabeledSet::from_samples(&train);
    let pool = adversarial_pool(&gen, &real, 5, 2).unwrap();
    let mut t = AlternatingTrainer::new(real, &pool, 3, 5, &small(), Some((0.5, 10, 16))).unwrap();
    for _ in 0..3 {
        let (r, s) = t.next_batches();
        assert_eq!(r.len(), s.len());
        let (clf, adv) = (t.classifier.clone(), t.adversary.clone());
        t.adversary_step(&s).unwrap();
        assert_eq!(t.classifier, clf);
        assert_ne!(t.adversary, adv);
        let (clf, adv) = (t.classifier.clone(), t.adversary.clone());
        t.classifier_step(&r, &s).unwrap();
        assert_eq!(t.adversary, adv);
        assert_ne!(t.classifier, clf);
    }
}

#[test]
fn dispatch_records_recipe_metadata() {
    let (train, gen, _) = setup(40);
    let ctx = InterventionContext::new(&train, 7, &gen, ClassifierConfig { epochs: 1, ..small() });
    let da = apply_intervention(&InterventionConfig::new(InterventionKind::DA, 3, 1), &ctx).unwrap();
    let meta = &da.trained.classifier.meta;
    assert_eq!(meta.recipe, "DA-4");
    assert_eq!(meta.extra["augmented_size"], "110");
    assert_eq!(da.diagnostics["augmented_size"], 110.0);
    let other = apply_intervention(&InterventionConfig::new(InterventionKind::DA, 3, 2), &ctx).unwrap();
    assert_ne!(other.trained.classifier.meta.config_hash, meta.config_hash);
}
