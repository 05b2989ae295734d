//! The three invariance interventions, each retraining a classifier from
//! scratch to be insensitive to one latent code `c_i`:
//!
//! * **DA** appends generator samples with every code drawn from
//!   `Uniform(−2, 2)` to the training set.
//! * **AA** alternates between an adversary that predicts the binned `c_i`
//!   of synthetic images from the pooled embedding plus the class one-hot,
//!   and a classifier step that ascends the adversary's loss.
//! * **SC** adds the KL divergence between predictions on counterfactual
//!   pairs that differ only in `c_i`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::generative::{
    draw_code, one_hot, sample_synthetic, CodeDistribution, GeneratorHandle, LatentCode, SyntheticSample, CODE_SWEEP,
};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Layer, Linear, Sequential, Tensor};
use crate::rng::{derive_seed, streams, Rng};
use crate::task::{
    batch_accuracy, run_epochs, validate_training_set, Classifier, ClassifierConfig, ClassifierGrads, CurveRow,
    LabeledSet, Optimizers, TrainedClassifier,
};
use crate::world::{bin_assign, label_distribution, Interval, Sample};
use crate::{Error, Result, PROB_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InterventionKind {
    DA,
    AA,
    SC,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 3] = [InterventionKind::DA, InterventionKind::AA, InterventionKind::SC];

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::DA => "DA",
            InterventionKind::AA => "AA",
            InterventionKind::SC => "SC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DA" => Ok(InterventionKind::DA),
            "AA" => Ok(InterventionKind::AA),
            "SC" => Ok(InterventionKind::SC),
            _ => Err(Error::input(alloc::format!("unknown intervention kind `{s}` (expected DA, AA or SC)"))),
        }
    }

    /// Row label such as `DA-4`; codes are shown 1-based.
    pub fn label(self, code: usize) -> String {
        alloc::format!("{}-{}", self.as_str(), code + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    pub kind: InterventionKind,
    pub factor_index: usize,
    /// Synthetic set size as a multiple of the test-set size.
    pub da_multiplier: f64,
    pub aa_weight: f64,
    pub aa_bins: usize,
    pub aa_hidden: usize,
    pub sc_weight: f64,
    /// Counterfactual pairs per classifier step.
    pub sc_batch: usize,
    /// Use `KL(p‖q) + KL(q‖p)` instead of the forward divergence.
    pub sc_symmetric: bool,
    /// Treat the unmodified image's prediction as a fixed target, so only
    /// the counterfactual's prediction is pulled toward it.
    pub sc_detach_reference: bool,
    /// Distribution of the reference codes; `c_i′` is always uniform.
    pub sc_codes: CodeDistribution,
    /// Fraction of training over which the consistency weight ramps up
    /// linearly from 0; early predictions are too uninformative to be targets.
    pub sc_rampup: f64,
    /// Temperature applied to a detached reference before the divergence;
    /// below 1 it sharpens the target.
    pub sc_temperature: f64,
    /// Pairs whose detached reference has a top probability below this are
    /// left out of the gradient.
    pub sc_confidence: f64,
    pub seed: u64,
}

impl InterventionConfig {
    pub fn new(kind: InterventionKind, factor_index: usize, seed: u64) -> Self {
        InterventionConfig {
            kind,
            factor_index,
            da_multiplier: 10.0,
            aa_weight: 0.05,
            aa_bins: 10,
            aa_hidden: 32,
            sc_weight: 1.0,
            sc_batch: 64,
            sc_symmetric: false,
            sc_detach_reference: true,
            sc_codes: CodeDistribution::TrainingPrior,
            sc_rampup: 0.25,
            sc_temperature: 0.5,
            sc_confidence: 0.8,
            seed,
        }
    }

    pub fn validate(&self, d_c: usize) -> Result<()> {
        if self.factor_index >= d_c {
            return Err(Error::input(alloc::format!("code index {} outside [0, {d_c})", self.factor_index)));
        }
        let finite = [self.da_multiplier, self.aa_weight, self.sc_weight].iter().all(|v| v.is_finite());
        if !finite || self.aa_weight < 0.0 || self.sc_weight < 0.0 || !(0.0..=1.0).contains(&self.sc_rampup)
            || !(self.sc_temperature > 0.0 && self.sc_temperature.is_finite())
            || !(0.0..=1.0).contains(&self.sc_confidence)
        {
            return Err(Error::input("intervention weights must be finite and non-negative"));
        }
        if self.aa_bins < 2 || self.aa_hidden == 0 || self.sc_batch == 0 {
            return Err(Error::input("aa_bins must be ≥ 2 and aa_hidden, sc_batch positive"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.kind.label(self.factor_index)
    }
}

// ---------------------------------------------------------------------------
// Data augmentation

/// Original training samples plus generator samples appended after them.
#[derive(Clone, Debug)]
pub struct AugmentedSet {
    pub original: Vec<Sample>,
    pub synthetic: Vec<SyntheticSample>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.original.len() + self.synthetic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labeled(&self) -> LabeledSet<'_> {
        let mut set = LabeledSet::from_samples(&self.original);
        set.extend(LabeledSet::from_synthetic(&self.synthetic));
        set
    }
}

/// `⌈multiplier · test_size⌉`, tolerant of products that land a rounding
/// error above an integer.
pub fn augmentation_size(multiplier: f64, test_size: usize) -> usize {
    let x = multiplier * test_size as f64;
    let r = libm::round(x);
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        libm::ceil(x) as usize
    }
}

pub fn augment_da(
    train: &[Sample],
    gen: &GeneratorHandle,
    i: usize,
    test_size: usize,
    multiplier: f64,
    label_dist: &[f64],
    seed: u64,
) -> Result<AugmentedSet> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::input("augmentation multiplier must be positive"));
    }
    let d_c = gen.meta().d_c;
    if i >= d_c {
        return Err(Error::input(alloc::format!("code index {i} outside [0, {d_c})")));
    }
    let n = augmentation_size(multiplier, test_size);
    let synthetic = sample_synthetic(gen, n, label_dist, CodeDistribution::UniformEval, derive_seed(seed, streams::SYNTH))?;
    Ok(AugmentedSet { original: train.to_vec(), synthetic })
}

// ---------------------------------------------------------------------------
// Adversarial alignment

/// Bin index of each code value over `[−2, 2]`.
pub fn code_bins(values: &[f64], n_bins: usize) -> Result<Vec<usize>> {
    Ok(bin_assign(values, n_bins, Interval { lo: -CODE_SWEEP, hi: CODE_SWEEP })?.assignment)
}

/// MLP reading `[embedding, onehot(y)]` and predicting the bin of `c_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub net: Sequential,
    pub num_classes: usize,
    pub bins: usize,
}

impl Adversary {
    pub fn new(seed: u64, embedding_dim: usize, num_classes: usize, hidden: usize, bins: usize) -> Self {
        let mut rng = Rng::new(seed, streams::ADVERSARY);
        Adversary {
            net: Sequential::new(vec![
                Layer::Linear(Linear::new(&mut rng, embedding_dim + num_classes, hidden)),
                Layer::Relu,
                Layer::Linear(Linear::new_head(&mut rng, hidden, bins)),
            ]),
            num_classes,
            bins,
        }
    }

    fn input(&self, embeddings: &Tensor, labels: &[usize]) -> Tensor {
        embeddings.hcat(&Tensor::from_vec(&[labels.len(), self.num_classes], one_hot(labels, self.num_classes)))
    }

    /// Percentage of correctly predicted bins.
    pub fn accuracy(&self, embeddings: &Tensor, labels: &[usize], bins: &[usize]) -> f64 {
        100.0 * batch_accuracy(&self.net.infer(&self.input(embeddings, labels)), bins)
    }
}

/// Alternating classifier/adversary optimization over a 1:1 mix of real and
/// synthetic batches. With no adversary this is plain training on the mix.
pub struct AlternatingTrainer<'a> {
    pub classifier: Classifier,
    pub adversary: Option<Adversary>,
    opt: Optimizers,
    adv_opt: Option<Adam>,
    real: LabeledSet<'a>,
    synth: &'a [SyntheticSample],
    synth_bins: Vec<usize>,
    weight: f64,
    batch_size: usize,
    config: ClassifierConfig,
    total_steps: usize,
    real_order: Vec<usize>,
    real_pos: usize,
    real_rng: Rng,
    synth_order: Vec<usize>,
    synth_pos: usize,
    synth_rng: Rng,
    pub step: usize,
    pub curve: Vec<CurveRow>,
    pub adversary_accuracy: Vec<f64>,
}

impl<'a> AlternatingTrainer<'a> {
    /// `adversary`: `(weight, bins, hidden)`; `None` trains on the mix only.
    pub fn new(
        real: LabeledSet<'a>,
        synth: &'a [SyntheticSample],
        code: usize,
        num_classes: usize,
        config: &ClassifierConfig,
        adversary: Option<(f64, usize, usize)>,
    ) -> Result<Self> {
        let (h, w) = validate_training_set(&real, num_classes)?;
        if synth.is_empty() {
            return Err(Error::input("adversarial training needs synthetic samples"));
        }
        let clf = Classifier::new(config, num_classes, h, w)?;
        let opt = Optimizers::new(&clf, config.lr);
        let bins = adversary.map_or(10, |a| a.1);
        let values: Vec<f64> = synth.iter().map(|s| s.code.c.get(code).copied().unwrap_or(0.0)).collect();
        if synth.iter().any(|s| code >= s.code.c.len()) {
            return Err(Error::input(alloc::format!("code index {code} outside the synthetic codes")));
        }
        let synth_bins = code_bins(&values, bins)?;
        let (adv, adv_opt, weight) = match adversary {
            Some((weight, bins, hidden)) => {
                let adv = Adversary::new(config.seed, clf.embedding_dim(), num_classes, hidden, bins);
                let opt = Adam::new(AdamConfig::with_lr(config.lr), &adv.net.params());
                (Some(adv), Some(opt), weight)
            }
            None => (None, None, 0.0),
        };
        let n_real = real.len();
        Ok(AlternatingTrainer {
            classifier: clf,
            adversary: adv,
            opt,
            adv_opt,
            real,
            synth,
            synth_bins,
            weight,
            batch_size: config.batch_size,
            config: config.clone(),
            total_steps: n_real.div_ceil(config.batch_size) * config.epochs,
            real_order: (0..n_real).collect(),
            real_pos: n_real,
            real_rng: Rng::new(config.seed, streams::SHUFFLE),
            synth_order: (0..synth.len()).collect(),
            synth_pos: synth.len(),
            synth_rng: Rng::new(config.seed, streams::SYNTH),
            step: 0,
            curve: Vec::new(),
            adversary_accuracy: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.real.len().div_ceil(self.batch_size)
    }

    /// Next real and synthetic index batches.
    pub fn next_batches(&mut self) -> (Vec<usize>, Vec<usize>) {
        if self.real_pos >= self.real_order.len() {
            self.real_rng.shuffle(&mut self.real_order);
            self.real_pos = 0;
        }
        let end = (self.real_pos + self.batch_size).min(self.real_order.len());
        let real = self.real_order[self.real_pos..end].to_vec();
        self.real_pos = end;
        let mut synth = Vec::with_capacity(real.len());
        while synth.len() < real.len() {
            if self.synth_pos >= self.synth_order.len() {
                self.synth_rng.shuffle(&mut self.synth_order);
                self.synth_pos = 0;
            }
            synth.push(self.synth_order[self.synth_pos]);
            self.synth_pos += 1;
        }
        (real, synth)
    }

    fn synth_batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>, Vec<usize>) {
        (
            Tensor::from_images(idx.iter().map(|&i| &self.synth[i].image)),
            idx.iter().map(|&i| self.synth[i].label).collect(),
            idx.iter().map(|&i| self.synth_bins[i]).collect(),
        )
    }

    /// Updates only the adversary, against the frozen classifier.
    pub fn adversary_step(&mut self, synth_idx: &[usize]) -> Result<f64> {
        let (Some(adv), Some(opt)) = (self.adversary.as_mut(), self.adv_opt.as_mut()) else {
            return Ok(0.0);
        };
        let (x, labels, bins) = {
            let idx = synth_idx;
            (
                Tensor::from_images(idx.iter().map(|&i| &self.synth[i].image)),
                idx.iter().map(|&i| self.synth[i].label).collect::<Vec<_>>(),
                idx.iter().map(|&i| self.synth_bins[i]).collect::<Vec<_>>(),
            )
        };
        let emb = self.classifier.trunk.infer(&x);
        let input = adv.input(&emb, &labels);
        let (logits, tape) = adv.net.forward(&input);
        let (loss, d_logits) = softmax_cross_entropy(&logits, &bins, 1.0);
        if !loss.is_finite() {
            return Err(Error::Divergence { step: self.step, detail: "non-finite adversary loss".into() });
        }
        let mut grads = adv.net.zero_grads();
        adv.net.backward(&tape, d_logits, &mut grads, false);
        opt.step(adv.net.params_mut(), &grads);
        self.adversary_accuracy.push(100.0 * batch_accuracy(&logits, &bins));
        Ok(loss)
    }

    /// Updates only the classifier: task loss on the mix minus the weighted
    /// adversary loss on the synthetic half.
    pub fn classifier_step(&mut self, real_idx: &[usize], synth_idx: &[usize]) -> Result<()> {
        let (xr, yr) = self.real.batch(real_idx);
        let (xs, ys, bins) = self.synth_batch(synth_idx);
        let x = Tensor::cat_rows(&[&xr, &xs]);
        let mut y = yr;
        y.extend_from_slice(&ys);
        let clf = &self.classifier;
        let (logits, emb, tape) = clf.forward_train(&x);
        let (task_loss, d_logits) = softmax_cross_entropy(&logits, &y, 1.0);
        if !task_loss.is_finite() {
            return Err(Error::Divergence { step: self.step, detail: "non-finite task loss".into() });
        }
        let mut aux = 0.0;
        let extra = match &self.adversary {
            Some(adv) => {
                let n_real = real_idx.len();
                let emb_s = emb.slice_rows(n_real, emb.rows());
                let (adv_logits, adv_tape) = adv.net.forward(&adv.input(&emb_s, &ys));
                let (adv_loss, d_adv) = softmax_cross_entropy(&adv_logits, &bins, -(self.weight as f32));
                aux = -self.weight * adv_loss;
                let mut frozen = adv.net.zero_grads();
                let d_in = adv.net.backward(&adv_tape, d_adv, &mut frozen, true);
                let e = emb.row_len();
                let mut d_emb = Tensor::zeros(&emb.shape);
                for r in 0..emb_s.rows() {
                    let src = &d_in.row(r)[..e];
                    d_emb.data[(n_real + r) * e..(n_real + r + 1) * e].copy_from_slice(src);
                }
                Some(d_emb)
            }
            None => None,
        };
        let mut grads = clf.zero_grads();
        clf.backward(&tape, d_logits, extra.as_ref(), &mut grads);
        self.opt.set_lr(self.config.lr_at(self.step, self.total_steps));
        self.opt.step(&mut self.classifier, &grads);
        self.curve.push(CurveRow {
            epoch: self.step / self.steps_per_epoch().max(1),
            step: self.step,
            task_loss,
            aux_loss: aux,
            batch_accuracy: batch_accuracy(&logits, &y),
        });
        self.step += 1;
        Ok(())
    }

    pub fn run(mut self, epochs: usize) -> Result<(TrainedClassifier, Option<Adversary>, Vec<f64>)> {
        let total = epochs * self.steps_per_epoch();
        self.total_steps = total;
        for _ in 0..total {
            let (real, synth) = self.next_batches();
            self.adversary_step(&synth)?;
            self.classifier_step(&real, &synth)?;
        }
        Ok((TrainedClassifier { classifier: self.classifier, curve: self.curve }, self.adversary, self.adversary_accuracy))
    }
}

/// Synthetic pool for adversarial training: as many samples as the real set,
/// labels matched to the real label distribution.
pub fn adversarial_pool(gen: &GeneratorHandle, real: &LabeledSet<'_>, num_classes: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    let mut dist = vec![0.0; num_classes];
    for &y in &real.labels {
        dist[y] += 1.0 / real.len() as f64;
    }
    let total: f64 = dist.iter().sum();
    for p in &mut dist {
        *p /= total;
    }
    sample_synthetic(gen, real.len(), &dist, CodeDistribution::UniformEval, derive_seed(seed, streams::ADVERSARY))
}

pub struct AaOutcome {
    pub trained: TrainedClassifier,
    pub adversary: Adversary,
    /// Per-step adversary batch accuracy (percent).
    pub adversary_accuracy: Vec<f64>,
}

pub fn train_aa(
    real: &LabeledSet<'_>,
    gen: &GeneratorHandle,
    i: usize,
    num_classes: usize,
    config: &InterventionConfig,
    clf_config: &ClassifierConfig,
) -> Result<AaOutcome> {
    config.validate(gen.meta().d_c)?;
    let pool = adversarial_pool(gen, real, num_classes, config.seed)?;
    let trainer = AlternatingTrainer::new(
        real.clone(),
        &pool,
        i,
        num_classes,
        clf_config,
        Some((config.aa_weight, config.aa_bins, config.aa_hidden)),
    )?;
    let (trained, adversary, adversary_accuracy) = trainer.run(clf_config.epochs)?;
    Ok(AaOutcome { trained, adversary: adversary.expect("adversary present"), adversary_accuracy })
}

/// Held-out accuracy (percent) of a fresh adversary trained to read the bin
/// of `c_i` from a frozen classifier's embeddings.
pub fn adversary_probe(
    clf: &Classifier,
    gen: &GeneratorHandle,
    i: usize,
    bins: usize,
    n_train: usize,
    n_test: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let k = clf.meta.num_classes;
    let dist = vec![1.0 / k as f64; k];
    let samples = sample_synthetic(gen, n_train + n_test, &dist, CodeDistribution::UniformEval, derive_seed(seed, streams::EVAL))?;
    let images: Vec<&crate::world::Image> = samples.iter().map(|s| &s.image).collect();
    let emb_rows = clf.embed(&images)?;
    let e = clf.embedding_dim();
    let emb = Tensor::from_vec(&[samples.len(), e], emb_rows.into_iter().flatten().collect());
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.code.c[i]).collect();
    let target = code_bins(&values, bins)?;
    let mut adv = Adversary::new(seed, e, k, 32, bins);
    let mut opt = Adam::new(AdamConfig::with_lr(3e-3), &adv.net.params());
    let mut rng = Rng::new(seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..n_train).collect();
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(64) {
            let x = Tensor::from_vec(&[idx.len(), e], idx.iter().flat_map(|&r| emb.row(r).to_vec()).collect());
            let y: Vec<usize> = idx.iter().map(|&r| labels[r]).collect();
            let t: Vec<usize> = idx.iter().map(|&r| target[r]).collect();
            let (logits, tape) = adv.net.forward(&adv.input(&x, &y));
            let (_, d) = softmax_cross_entropy(&logits, &t, 1.0);
            let mut g = adv.net.zero_grads();
            adv.net.backward(&tape, d, &mut g, false);
            opt.step(adv.net.params_mut(), &g);
        }
    }
    let test = emb.slice_rows(n_train, n_train + n_test);
    Ok(adv.accuracy(&test, &labels[n_train..], &target[n_train..]))
}

// ---------------------------------------------------------------------------
// Semantic consistency

/// `KL(p‖q)` with both distributions clamped at ε.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let (pc, qc) = (pi.max(PROB_EPS), qi.max(PROB_EPS));
            pc * (libm::log(pc) - libm::log(qc))
        })
        .sum()
}

fn softmax64(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gradient of `KL(p‖q)` w.r.t. `p` and `q`, honoring the ε clamp.
fn kl_prob_grads(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dp = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > PROB_EPS { libm::log(pi) - libm::log(qi.max(PROB_EPS)) + 1.0 } else { 0.0 })
        .collect();
    let dq = p.iter().zip(q).map(|(&pi, &qi)| if qi > PROB_EPS { -pi.max(PROB_EPS) / qi } else { 0.0 }).collect();
    (dp, dq)
}

fn through_softmax(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Consistency loss of one counterfactual pair from its two logit vectors,
/// with gradients w.r.t. both. `reference` is the unmodified image.
pub fn consistency_pair(reference: &[f64], counterfactual: &[f64], symmetric: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let p = softmax64(reference);
    let q = softmax64(counterfactual);
    let (dp, dq) = kl_prob_grads(&p, &q);
    let mut loss = kl_divergence(&p, &q);
    let mut g_ref = through_softmax(&p, &dp);
    let mut g_cf = through_softmax(&q, &dq);
    if symmetric {
        let (dq2, dp2) = kl_prob_grads(&q, &p);
        loss += kl_divergence(&q, &p);
        for (a, b) in g_ref.iter_mut().zip(through_softmax(&p, &dp2)) {
            *a += b;
        }
        for (a, b) in g_cf.iter_mut().zip(through_softmax(&q, &dq2)) {
            *a += b;
        }
    }
    (loss, g_ref, g_cf)
}

/// Mean consistency loss over codes with explicit replacement values.
pub fn sc_loss_with_values(clf: &Classifier, gen: &GeneratorHandle, codes: &[LatentCode], i: usize, values: &[f64]) -> Result<f64> {
    if codes.is_empty() {
        return Err(Error::input("consistency loss needs a non-empty code batch"));
    }
    if i >= gen.meta().d_c {
        return Err(Error::input(alloc::format!("code index {i} outside [0, {})", gen.meta().d_c)));
    }
    let edited: Vec<LatentCode> = codes.iter().zip(values).map(|(c, &v)| c.with_code(i, v)).collect();
    let a = gen.generate_batch(codes)?;
    let b = gen.generate_batch(&edited)?;
    let pa = clf.predict(&a.iter().collect::<Vec<_>>())?;
    let pb = clf.predict(&b.iter().collect::<Vec<_>>())?;
    Ok(pa.iter().zip(&pb).map(|(p, q)| kl_divergence(p, q)).sum::<f64>() / codes.len() as f64)
}

/// Mean `KL(Ŷ(x̂) ‖ Ŷ(x̂ with c_i ← c_i'))` with `c_i' ~ Uniform(−2, 2)`.
pub fn sc_loss(clf: &Classifier, gen: &GeneratorHandle, codes: &[LatentCode], i: usize, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed, streams::CONSISTENCY);
    let values: Vec<f64> = codes.iter().map(|_| rng.uniform_in(-CODE_SWEEP, CODE_SWEEP)).collect();
    sc_loss_with_values(clf, gen, codes, i, &values)
}

/// Training with the task loss on real data plus `sc_weight` times the
/// consistency loss on freshly generated pairs each step.
pub fn train_sc(
    real: &LabeledSet<'_>,
    gen: &GeneratorHandle,
    i: usize,
    num_classes: usize,
    config: &InterventionConfig,
    clf_config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    let meta = gen.meta();
    config.validate(meta.d_c)?;
    let mut dist = vec![0.0; num_classes];
    for &y in &real.labels {
        if y < num_classes {
            dist[y] += 1.0;
        }
    }
    let mut rng = Rng::new(derive_seed(config.seed, streams::CONSISTENCY), streams::CONSISTENCY);
    let code_seed = derive_seed(config.seed, streams::SYNTH);
    let mut drawn = 0usize;
    let total_steps = real.len().div_ceil(clf_config.batch_size.max(1)) * clf_config.epochs;
    let ramp_steps = config.sc_rampup * total_steps as f64;
    let mut hook = |clf: &Classifier, grads: &mut ClassifierGrads, step: usize| -> Result<f64> {
        let weight = if (step as f64) < ramp_steps { config.sc_weight * step as f64 / ramp_steps } else { config.sc_weight };
        let codes: Vec<LatentCode> = (0..config.sc_batch)
            .map(|_| {
                let y = rng.categorical(&dist);
                drawn += 1;
                draw_code(&meta, config.sc_codes, y, code_seed, drawn)
            })
            .collect();
        let edited: Vec<LatentCode> =
            codes.iter().map(|c| c.with_code(i, rng.uniform_in(-CODE_SWEEP, CODE_SWEEP))).collect();
        consistency_step(clf, gen, &codes, &edited, weight, config, grads)
    };
    run_epochs(real, num_classes, clf_config, Some(&mut hook))
}

/// Adds `weight ×` the mean consistency gradient of the pairs
/// `(codes, edited)` to `grads` and returns the weighted loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn consistency_step(
    clf: &Classifier,
    gen: &GeneratorHandle,
    codes: &[LatentCode],
    edited: &[LatentCode],
    weight: f64,
    config: &InterventionConfig,
    grads: &mut ClassifierGrads,
) -> Result<f64> {
    let detach = config.sc_detach_reference;
    let xa = Tensor::from_images(gen.generate_batch(codes)?.iter());
    let xb = Tensor::from_images(gen.generate_batch(edited)?.iter());
    let (la, ta) = if detach {
        (clf.logits(&xa), None)
    } else {
        let (l, _, t) = clf.forward_train(&xa);
        (l, Some(t))
    };
    let (lb, _, tb) = clf.forward_train(&xb);
    let n = codes.len();
    let k = la.row_len();
    let mut ga = Tensor::zeros(&la.shape);
    let mut gb = Tensor::zeros(&lb.shape);
    let mut total = 0.0;
    for r in 0..n {
        let mut a: Vec<f64> = la.row(r).iter().map(|v| f64::from(*v)).collect();
        let b: Vec<f64> = lb.row(r).iter().map(|v| f64::from(*v)).collect();
        if detach {
            if softmax64(&a).iter().copied().fold(0.0, f64::max) < config.sc_confidence {
                continue;
            }
            a.iter_mut().for_each(|v| *v /= config.sc_temperature);
        }
        let (loss, da, db) = consistency_pair(&a, &b, config.sc_symmetric);
        total += loss;
        let s = weight / n as f64;
        for j in 0..k {
            ga.data[r * k + j] = (s * da[j]) as f32;
            gb.data[r * k + j] = (s * db[j]) as f32;
        }
    }
    if let Some(ta) = &ta {
        clf.backward(ta, ga, None, grads);
    }
    clf.backward(&tb, gb, None, grads);
    Ok(weight * total / n as f64)
}

// ---------------------------------------------------------------------------
// Dispatch

/// Everything an intervention run needs besides its own configuration.
#[derive(Clone)]
pub struct InterventionContext<'a> {
    pub train: &'a [Sample],
    pub test_size: usize,
    pub label_dist: Vec<f64>,
    pub generator: &'a GeneratorHandle,
    pub classifier: ClassifierConfig,
    pub num_classes: usize,
}

impl<'a> InterventionContext<'a> {
    pub fn new(train: &'a [Sample], test_size: usize, generator: &'a GeneratorHandle, classifier: ClassifierConfig) -> Self {
        let num_classes = generator.meta().num_classes;
        InterventionContext { label_dist: label_distribution(train, num_classes), train, test_size, generator, classifier, num_classes }
    }
}

pub struct InterventionOutcome {
    pub trained: TrainedClassifier,
    /// Held-out-free training diagnostics, e.g. final adversary accuracy.
    pub diagnostics: BTreeMap<String, f64>,
}

/// Runs one intervention from scratch and stamps its recipe into the
/// returned classifier's metadata.
pub fn apply_intervention(config: &InterventionConfig, ctx: &InterventionContext<'_>) -> Result<InterventionOutcome> {
    config.validate(ctx.generator.meta().d_c)?;
    let real = LabeledSet::from_samples(ctx.train);
    let i = config.factor_index;
    let mut diagnostics = BTreeMap::new();
    let mut extra = BTreeMap::new();
    let mut trained = match config.kind {
        InterventionKind::DA => {
            let aug = augment_da(ctx.train, ctx.generator, i, ctx.test_size, config.da_multiplier, &ctx.label_dist, config.seed)?;
            extra.insert("augmented_size".to_string(), aug.len().to_string());
            extra.insert("synthetic_size".to_string(), aug.synthetic.len().to_string());
            diagnostics.insert("augmented_size".to_string(), aug.len() as f64);
            crate::task::train_classifier(&aug.labeled(), ctx.num_classes, &ctx.classifier)?
        }
        InterventionKind::AA => {
            let out = train_aa(&real, ctx.generator, i, ctx.num_classes, config, &ctx.classifier)?;
            let tail = out.adversary_accuracy.len().saturating_sub(50);
            let acc = &out.adversary_accuracy[tail..];
            diagnostics.insert("adversary_batch_accuracy".to_string(), acc.iter().sum::<f64>() / acc.len().max(1) as f64);
            out.trained
        }
        InterventionKind::SC => train_sc(&real, ctx.generator, i, ctx.num_classes, config, &ctx.classifier)?,
    };
    extra.insert("kind".to_string(), config.kind.as_str().to_string());
    extra.insert("code".to_string(), i.to_string());
    let meta = &mut trained.classifier.meta;
    meta.recipe = config.label();
    meta.config_hash = crate::config_hash(&(config, &ctx.classifier));
    meta.extra = extra;
    Ok(InterventionOutcome { trained, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::OracleGenerator;
    use crate::task::Optimizers;
    use crate::world::{DatasetSpec, RenderEffect};

    #[test]
    fn consistency_steps_lower_the_consistency_loss() {
        let spec = DatasetSpec::desk_with_sensitivity(RenderEffect::Brightness, 0.8);
        let bi = spec.factor_index(RenderEffect::Brightness).unwrap();
        let gen = GeneratorHandle::Oracle(OracleGenerator::with_pairs(spec, &[(3, bi)], 10).unwrap());
        let meta = gen.meta();
        let codes: Vec<LatentCode> = (0..16).map(|k| draw_code(&meta, CodeDistribution::UniformEval, k % 5, 4, k)).collect();
        let values: Vec<f64> = (0..16).map(|k| -2.0 + 0.25 * k as f64).collect();
        let edited: Vec<LatentCode> = codes.iter().zip(&values).map(|(c, &v)| c.with_code(3, v)).collect();
        let cfg = ClassifierConfig { widths: vec![4, 8, 8, 8], seed: 1, ..Default::default() };
        let mut clf = Classifier::new(&cfg, 5, 32, 32).unwrap();
        let mut opt = Optimizers::new(&clf, 1e-2);
        // An untrained classifier is never confident, so the default gate
        // skips every pair.
        let mut grads = clf.zero_grads();
        let gated = InterventionConfig::new(InterventionKind::SC, 3, 0);
        consistency_step(&clf, &gen, &codes, &edited, 1.0, &gated, &mut grads).unwrap();
        assert_eq!(grads, clf.zero_grads());

        let plain = InterventionConfig { sc_confidence: 0.0, sc_temperature: 1.0, ..gated };
        let before = sc_loss_with_values(&clf, &gen, &codes, 3, &values).unwrap();
        for _ in 0..30 {
            let mut grads = clf.zero_grads();
            consistency_step(&clf, &gen, &codes, &edited, 1.0, &plain, &mut grads).unwrap();
            opt.step(&mut clf, &grads);
        }
        let after = sc_loss_with_values(&clf, &gen, &codes, 3, &values).unwrap();
        assert!(after < before, "{before} -> {after}");
    }
}
