//! Baseline task classifier: a four-block CNN ending in global average
//! pooling and one linear layer. The pooled vector is the embedding that the
//! adversarial intervention inspects.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::generative::SyntheticSample;
use crate::nn::{softmax_cross_entropy, softmax_rows, Adam, AdamConfig, Conv2d, Grads, Layer, Linear, Sequential, Tape, Tensor};
use crate::rng::{streams, Rng};
use crate::world::{Image, Sample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    /// Output channels of the four conv blocks; the last is the embedding size.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// Learning-rate schedule over the whole training run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` towards 0; damps the step-to-step
    /// fluctuation of the final weights.
    #[default]
    Cosine,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            widths: vec![16, 32, 32, 64],
            epochs: 6,
            batch_size: 32,
            lr: 5e-3,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Learning rate of step `step` out of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f32 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                (f64::from(self.lr) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * t.min(1.0)))) as f32
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return Err(Error::input("classifier needs four positive conv widths"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::input("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub recipe: String,
    pub config_hash: String,
    /// Free-form metadata (intervention kind, augmented set size, ...).
    pub extra: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub trunk: Sequential,
    pub head: Sequential,
    pub meta: ClassifierMeta,
}

pub(crate) struct ClassifierTape {
    trunk: Tape,
    head: Tape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierGrads {
    pub trunk: Grads,
    pub head: Grads,
}

impl ClassifierGrads {
    pub fn add_scaled(&mut self, other: &ClassifierGrads, s: f32) {
        self.trunk.add_scaled(&other.trunk, s);
        self.head.add_scaled(&other.head, s);
    }
}

impl Classifier {
    pub fn new(config: &ClassifierConfig, num_classes: usize, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed, streams::INIT);
        let w = &config.widths;
        let trunk = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new(&mut rng, 3, w[0], 3, 1, 1)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new(&mut rng, w[0], w[1], 3, 2, 1)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new(&mut rng, w[1], w[2], 3, 2, 1)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new(&mut rng, w[2], w[3], 3, 2, 1)),
            Layer::Relu,
            Layer::GlobalAvgPool,
        ]);
        let head = Sequential::new(vec![Layer::Linear(Linear::new_head(&mut rng, w[3], num_classes))]);
        Ok(Classifier {
            trunk,
            head,
            meta: ClassifierMeta {
                num_classes,
                height,
                width,
                seed: config.seed,
                recipe: "baseline".to_string(),
                config_hash: crate::config_hash(config),
                extra: BTreeMap::new(),
            },
        })
    }

    pub fn embedding_dim(&self) -> usize {
        match self.head.layers.first() {
            Some(Layer::Linear(l)) => l.inputs,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.head.param_count()
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        for img in images {
            if img.height != self.meta.height || img.width != self.meta.width || img.data.len() != img.height * img.width * 3 {
                return Err(Error::input(alloc::format!(
                    "image is {}×{}, classifier expects {}×{}×3",
                    img.height,
                    img.width,
                    self.meta.height,
                    self.meta.width
                )));
            }
        }
        Ok(())
    }

    /// Post-pooling embeddings.
    pub fn embed(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        self.check_images(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            let e = self.trunk.infer(&Tensor::from_images(chunk.iter().copied()));
            out.extend((0..e.rows()).map(|i| e.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Softmax of the linear head applied to embeddings.
    pub fn predict_from_embeddings(&self, embeddings: &[Vec<f32>]) -> Vec<Vec<f64>> {
        if embeddings.is_empty() {
            return Vec::new();
        }
        let d = embeddings[0].len();
        let e = Tensor::from_vec(&[embeddings.len(), d], embeddings.iter().flatten().copied().collect());
        softmax_rows(&self.head.infer(&e))
    }

    /// Class probability rows.
    pub fn predict(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.check_images(images)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            out.extend(softmax_rows(&self.logits(&Tensor::from_images(chunk.iter().copied()))));
        }
        Ok(out)
    }

    pub fn predict_labels(&self, images: &[&Image]) -> Result<Vec<usize>> {
        Ok(self.predict(images)?.iter().map(|p| argmax(p)).collect())
    }

    pub(crate) fn logits(&self, x: &Tensor) -> Tensor {
        self.head.infer(&self.trunk.infer(x))
    }

    pub(crate) fn forward_train(&self, x: &Tensor) -> (Tensor, Tensor, ClassifierTape) {
        let (emb, trunk) = self.trunk.forward(x);
        let (logits, head) = self.head.forward(&emb);
        (logits, emb, ClassifierTape { trunk, head })
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads { trunk: self.trunk.zero_grads(), head: self.head.zero_grads() }
    }

    /// Backpropagates a logit gradient plus an optional extra gradient
    /// arriving directly at the embedding.
    pub(crate) fn backward(&self, tape: &ClassifierTape, d_logits: Tensor, d_emb_extra: Option<&Tensor>, grads: &mut ClassifierGrads) {
        let mut d_emb = self.head.backward(&tape.head, d_logits, &mut grads.head, true);
        if let Some(extra) = d_emb_extra {
            for (a, b) in d_emb.data.iter_mut().zip(&extra.data) {
                *a += b;
            }
        }
        self.trunk.backward(&tape.trunk, d_emb, &mut grads.trunk, false);
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Borrowed images with labels; the common input of every training routine.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet<'a> {
    pub images: Vec<&'a Image>,
    pub labels: Vec<usize>,
}

impl<'a> LabeledSet<'a> {
    pub fn from_samples(samples: &'a [Sample]) -> Self {
        LabeledSet { images: samples.iter().map(|s| &s.image).collect(), labels: samples.iter().map(|s| s.label).collect() }
    }

    pub fn from_synthetic(samples: &'a [SyntheticSample]) -> Self {
        LabeledSet { images: samples.iter().map(|s| &s.image).collect(), labels: samples.iter().map(|s| s.label).collect() }
    }

    pub fn extend(&mut self, other: LabeledSet<'a>) {
        self.images.extend(other.images);
        self.labels.extend(other.labels);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub(crate) fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (Tensor::from_images(idx.iter().map(|&i| self.images[i])), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub step: usize,
    pub task_loss: f64,
    /// Weighted regularizer contribution (adversarial or consistency), 0 for plain training.
    pub aux_loss: f64,
    pub batch_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub curve: Vec<CurveRow>,
}

/// Optimizer state for one classifier.
pub(crate) struct Optimizers {
    trunk: Adam,
    head: Adam,
}

impl Optimizers {
    pub(crate) fn new(clf: &Classifier, lr: f32) -> Self {
        Optimizers {
            trunk: Adam::new(AdamConfig::with_lr(lr), &clf.trunk.params()),
            head: Adam::new(AdamConfig::with_lr(lr), &clf.head.params()),
        }
    }

    pub(crate) fn set_lr(&mut self, lr: f32) {
        self.trunk.config.lr = lr;
        self.head.config.lr = lr;
    }

    pub(crate) fn step(&mut self, clf: &mut Classifier, grads: &ClassifierGrads) {
        self.trunk.step(clf.trunk.params_mut(), &grads.trunk);
        self.head.step(clf.head.params_mut(), &grads.head);
    }
}

pub(crate) fn batch_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let probs = softmax_rows(logits);
    let hits = probs.iter().zip(labels).filter(|(p, y)| argmax(p) == **y).count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn validate_training_set(set: &LabeledSet<'_>, num_classes: usize) -> Result<(usize, usize)> {
    let first = set.images.first().ok_or_else(|| Error::input("training set is empty"))?;
    if let Some(bad) = set.labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::input(alloc::format!("label {bad} outside [0, {num_classes})")));
    }
    Ok((first.height, first.width))
}

/// Per-step hook that may add regularizer gradients. Receives the current
/// classifier, the gradient buffer already holding the task gradient, and
/// the global step; returns the weighted auxiliary loss.
pub(crate) type StepHook<'h> = dyn FnMut(&Classifier, &mut ClassifierGrads, usize) -> Result<f64> + 'h;

/// Epoch loop shared by baseline and consistency training.
pub(crate) fn run_epochs(
    set: &LabeledSet<'_>,
    num_classes: usize,
    config: &ClassifierConfig,
    hook: Option<&mut StepHook<'_>>,
) -> Result<TrainedClassifier> {
    let (h, w) = validate_training_set(set, num_classes)?;
    let mut clf = Classifier::new(config, num_classes, h, w)?;
    let mut opt = Optimizers::new(&clf, config.lr);
    let mut order_rng = Rng::new(config.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut curve = Vec::new();
    let mut step = 0;
    let total = set.len().div_ceil(config.batch_size) * config.epochs;
    let mut hook = hook;
    for epoch in 0..config.epochs {
        order_rng.shuffle(&mut order);
        for idx in order.chunks(config.batch_size) {
            let (x, y) = set.batch(idx);
            let (logits, _, tape) = clf.forward_train(&x);
            let (loss, d_logits) = softmax_cross_entropy(&logits, &y, 1.0);
            if !loss.is_finite() {
                return Err(Error::Divergence { step, detail: "non-finite task loss".into() });
            }
            let mut grads = clf.zero_grads();
            clf.backward(&tape, d_logits, None, &mut grads);
            let aux = match hook.as_deref_mut() {
                Some(f) => f(&clf, &mut grads, step)?,
                None => 0.0,
            };
            if !aux.is_finite() {
                return Err(Error::Divergence { step, detail: "non-finite regularizer".into() });
            }
            opt.set_lr(config.lr_at(step, total));
            opt.step(&mut clf, &grads);
            curve.push(CurveRow { epoch, step, task_loss: loss, aux_loss: aux, batch_accuracy: batch_accuracy(&logits, &y) });
            step += 1;
        }
    }
    Ok(TrainedClassifier { classifier: clf, curve })
}

/// Cross-entropy training from scratch with a fixed epoch budget.
pub fn train_classifier(set: &LabeledSet<'_>, num_classes: usize, config: &ClassifierConfig) -> Result<TrainedClassifier> {
    run_epochs(set, num_classes, config, None)
}

/// Percentage of correctly classified images.
pub fn accuracy(clf: &Classifier, images: &[&Image], labels: &[usize]) -> Result<f64> {
    let pred = clf.predict_labels(images)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * hits as f64 / labels.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_dataset, DatasetSpec};

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig { widths: vec![4, 8, 8, 12], epochs: 1, batch_size: 16, seed: 3, ..Default::default() }
    }

    #[test]
    fn predictions_are_distributions() {
        let data = generate_dataset(&DatasetSpec::desk(), 10, 1, None).unwrap();
        let clf = Classifier::new(&tiny_config(), 5, 32, 32).unwrap();
        let imgs: Vec<&Image> = data.iter().map(|s| &s.image).collect();
        let p = clf.predict(&imgs).unwrap();
        assert_eq!(p.len(), 10);
        for row in &p {
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let data = generate_dataset(&DatasetSpec::desk(), 2, 1, None).unwrap();
        let clf = Classifier::new(&tiny_config(), 5, 32, 32).unwrap();
        let p = clf.predict(&[&data[0].image, &data[1].image, &data[0].image]).unwrap();
        assert_eq!(p[0], p[2]);
        let e = clf.embed(&[&data[0].image, &data[0].image]).unwrap();
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn embedding_width_and_head_identity() {
        let data = generate_dataset(&DatasetSpec::desk(), 6, 2, None).unwrap();
        let clf = Classifier::new(&tiny_config(), 5, 32, 32).unwrap();
        let imgs: Vec<&Image> = data.iter().map(|s| &s.image).collect();
        let e = clf.embed(&imgs).unwrap();
        assert!(e.iter().all(|r| r.len() == 12));
        assert_eq!(clf.embedding_dim(), 12);
        let via_head = clf.predict_from_embeddings(&e);
        let direct = clf.predict(&imgs).unwrap();
        for (a, b) in via_head.iter().flatten().zip(direct.iter().flatten()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let clf = Classifier::new(&tiny_config(), 5, 32, 32).unwrap();
        let img = Image::new(16, 16);
        assert!(matches!(clf.predict(&[&img]), Err(Error::Input(_))));
        assert!(matches!(clf.embed(&[&img]), Err(Error::Input(_))));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = generate_dataset(&DatasetSpec::desk(), 48, 4, None).unwrap();
        let set = LabeledSet::from_samples(&data);
        let a = train_classifier(&set, 5, &tiny_config()).unwrap();
        let b = train_classifier(&set, 5, &tiny_config()).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.curve.len(), 3);
    }

    #[test]
    fn zero_epochs_returns_initialized_model() {
        let data = generate_dataset(&DatasetSpec::desk(), 8, 4, None).unwrap();
        let set = LabeledSet::from_samples(&data);
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let t = train_classifier(&set, 5, &cfg).unwrap();
        assert_eq!(t.classifier, Classifier::new(&cfg, 5, 32, 32).unwrap());
        assert!(t.curve.is_empty());
    }

    #[test]
    fn bad_labels_are_rejected() {
        let data = generate_dataset(&DatasetSpec::desk(), 8, 4, None).unwrap();
        let set = LabeledSet::from_samples(&data);
        assert!(matches!(train_classifier(&set, 2, &tiny_config()), Err(Error::Input(_))));
        assert!(matches!(train_classifier(&LabeledSet::default(), 5, &tiny_config()), Err(Error::Input(_))));
    }
}
