//! Dataset directories, checkpoints and configuration loading.

use acai_core::generative::{GeneratorHandle, OracleGenerator};
use acai_core::task::{Classifier, ClassifierConfig};
use acai_core::world::{generate_dataset, DatasetSpec, RenderEffect};
use acai_workbench::checkpoint;
use acai_workbench::config::{apply_override, load_config, ExperimentConfig, GeneratorConfig};
use acai_workbench::dataset::{load_dataset, save_dataset};
use serde_json::json;

#[test]
fn dataset_directory_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::desk_with_sensitivity(RenderEffect::Brightness, 0.8);
    let samples = generate_dataset(&spec, 25, 4, None).unwrap();
    save_dataset(dir.path(), &spec, 4, &samples).unwrap();
    assert!(dir.path().join("00000024.png").exists());
    let header = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(header.starts_with("index,label,factor_0,factor_1,factor_2,factor_3,factor_4\n"));
    let (info, back) = load_dataset(dir.path()).unwrap();
    assert_eq!(info.spec, spec);
    assert_eq!((info.seed, info.len), (4, 25));
    assert_eq!(back, samples);
}

#[test]
fn corrupt_manifest_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::desk();
    save_dataset(dir.path(), &spec, 0, &generate_dataset(&spec, 3, 0, None).unwrap()).unwrap();
    let path = dir.path().join("manifest.csv");
    let text = std::fs::read_to_string(&path).unwrap().replacen("\n1,", "\n7,", 1);
    std::fs::write(&path, text).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap_err().exit_code(), 1);
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let clf = Classifier::new(&ClassifierConfig { seed: 9, ..ClassifierConfig::default() }, 5, 32, 32).unwrap();
    let path = dir.path().join("clf.ckpt");
    checkpoint::save(&path, "classifier", &clf.meta.config_hash, 9, json!({"note": 1}), &clf).unwrap();
    let (header, back): (_, Classifier) = checkpoint::load(&path, "classifier").unwrap();
    assert_eq!(back, clf);
    assert_eq!(header.seed, 9);
    assert_eq!(header.metadata["note"], 1);
    let bits = |c: &Classifier| c.trunk.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&clf));
    // The body holds every parameter exactly once.
    let (_, body) = checkpoint::read_header(&path).unwrap();
    assert_eq!(body.len(), clf.param_count());
    assert!(checkpoint::load::<Classifier>(&path, "generator").is_err());
}

#[test]
fn oracle_generator_checkpoint_has_no_body() {
    let dir = tempfile::tempdir().unwrap();
    let gen = GeneratorHandle::Oracle(OracleGenerator::with_pairs(DatasetSpec::desk(), &[(3, 1)], 10).unwrap());
    let path = dir.path().join("gen.ckpt");
    checkpoint::save(&path, "generator", "h", 0, json!({}), &gen).unwrap();
    let (_, back): (_, GeneratorHandle) = checkpoint::load(&path, "generator").unwrap();
    assert_eq!(back, gen);
    assert!(checkpoint::read_header(&path).unwrap().1.is_empty());
}

#[test]
fn garbage_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    std::fs::write(&path, b"definitely not a checkpoint").unwrap();
    assert!(checkpoint::read_header(&path).is_err());
}

#[test]
fn dotted_overrides() {
    let mut tree = serde_json::to_value(ExperimentConfig::default()).unwrap();
    apply_override(&mut tree, "classifier.epochs=3").unwrap();
    apply_override(&mut tree, "interventions.kinds=[\"SC\"]").unwrap();
    apply_override(&mut tree, "name=trial").unwrap();
    apply_override(&mut tree, "classifier.widths.0=4").unwrap();
    let c: ExperimentConfig = serde_json::from_value(tree.clone()).unwrap();
    assert_eq!(c.classifier.epochs, 3);
    assert_eq!(c.classifier.widths[0], 4);
    assert_eq!(c.name, "trial");
    assert_eq!(c.interventions.kinds.len(), 1);
    assert!(apply_override(&mut tree, "no_equals_sign").is_err());
    assert!(apply_override(&mut tree, "seed.deeper=1").is_err());
}

#[test]
fn config_file_merges_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    std::fs::write(&path, r#"{"dataset": {"train": 64}, "generator": {"type": "info_gan", "steps": 5}}"#).unwrap();
    let c = load_config(Some(&path), &["seed=7".into()]).unwrap();
    assert_eq!(c.dataset.train, 64);
    assert_eq!(c.dataset.test, ExperimentConfig::default().dataset.test);
    assert_eq!(c.seed, 7);
    match c.generator {
        GeneratorConfig::InfoGan(g) => assert_eq!((g.steps, g.d_c), (5, 10)),
        other => panic!("expected InfoGAN config, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_input_errors() {
    for bad in [
        vec!["dataset.train=0".to_string()],
        vec!["interventions.kinds=[\"XX\"]".to_string()],
        vec!["evaluation.real_factor=\"mood\"".to_string()],
        vec!["unknown_key=1".to_string()],
    ] {
        let err = load_config(None, &bad).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{bad:?} → {err}");
    }
    let err = load_config(Some(std::path::Path::new("/nonexistent/exp.json")), &[]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
