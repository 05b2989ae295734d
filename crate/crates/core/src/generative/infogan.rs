//! Conditional InfoGAN at desk scale.
//!
//! The generator maps `[z, c, onehot(y)]` through a linear stem and three
//! upsample+conv stages to a 32×32 RGB image. The discriminator is a strided
//! conv trunk; the class one-hot is broadcast and concatenated to its second
//! feature map. The real/fake head and the code predictor Q both read the
//! flattened penultimate features, so Q shares every trunk weight with D.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::losses::{gan_step_gradients, gan_step_losses};
use super::{one_hot, GeneratorHandle, GeneratorMeta, LatentCode};
use crate::nn::{Adam, AdamConfig, Conv2d, Grads, Layer, Linear, Sequential, Tape, Tensor};
use crate::rng::{streams, Rng};
use crate::world::{Image, Sample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoGanConfig {
    pub d_z: usize,
    pub d_c: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_g: f32,
    pub lr_d: f32,
    pub info_weight: f64,
    /// Base channel width of the generator (doubled per resolution halving).
    pub g_width: usize,
    /// Base channel width of the discriminator trunk.
    pub d_width: usize,
    pub seed: u64,
}

impl Default for InfoGanConfig {
    fn default() -> Self {
        InfoGanConfig {
            d_z: 16,
            d_c: 10,
            steps: 3000,
            batch_size: 32,
            lr_g: 1e-3,
            lr_d: 2e-4,
            info_weight: 2.0,
            g_width: 16,
            d_width: 16,
            seed: 0,
        }
    }
}

impl InfoGanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.d_c == 0 || self.batch_size == 0 || self.g_width == 0 || self.d_width == 0 {
            return Err(Error::input("InfoGAN sizes must be positive"));
        }
        if !(self.info_weight >= 0.0 && self.info_weight.is_finite()) || !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::input("InfoGAN weights must be non-negative and learning rates positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedGenerator {
    pub net: Sequential,
    pub meta: GeneratorMeta,
}

fn gan_adam(lr: f32) -> AdamConfig {
    AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
}

impl LearnedGenerator {
    fn new(rng: &mut Rng, meta: GeneratorMeta, width: usize) -> Self {
        let (bh, bw) = (meta.height / 8, meta.width / 8);
        let stem = 4 * width;
        let inputs = meta.d_z + meta.d_c + meta.num_classes;
        let net = Sequential::new(vec![
            Layer::Linear(Linear::new(rng, inputs, stem * bh * bw)),
            Layer::Relu,
            Layer::Reshape(vec![stem, bh, bw]),
            Layer::Upsample2x,
            Layer::Conv2d(Conv2d::new(rng, stem, 2 * width, 3, 1, 1)),
            Layer::Relu,
            Layer::Upsample2x,
            Layer::Conv2d(Conv2d::new(rng, 2 * width, width, 3, 1, 1)),
            Layer::Relu,
            Layer::Upsample2x,
            Layer::Conv2d(Conv2d::new(rng, width, 3, 3, 1, 1)),
            Layer::Sigmoid,
        ]);
        LearnedGenerator { net, meta }
    }

    fn input_tensor(&self, codes: &[LatentCode]) -> Tensor {
        let m = &self.meta;
        let width = m.d_z + m.d_c + m.num_classes;
        let mut data = Vec::with_capacity(codes.len() * width);
        for code in codes {
            data.extend(code.z.iter().map(|v| *v as f32));
            data.extend(code.c.iter().map(|v| *v as f32));
            data.extend(one_hot(&[code.y], m.num_classes));
        }
        Tensor::from_vec(&[codes.len(), width], data)
    }

    /// Images as NCHW floats in `[0, 1]`, before quantization.
    pub fn forward_float(&self, codes: &[LatentCode]) -> Tensor {
        self.net.infer(&self.input_tensor(codes))
    }

    pub fn generate_batch(&self, codes: &[LatentCode]) -> Vec<Image> {
        let out = self.forward_float(codes);
        (0..codes.len()).map(|i| Image::from_unit_chw(self.meta.height, self.meta.width, out.row(i))).collect()
    }
}

/// Discriminator with the shared-trunk code predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub trunk_low: Sequential,
    pub trunk_high: Sequential,
    pub real_head: Sequential,
    pub q_head: Sequential,
    pub num_classes: usize,
}

struct DiscTape {
    low: Tape,
    high: Tape,
    real: Tape,
    q: Tape,
    low_shape: Vec<usize>,
}

struct DiscGrads {
    low: Grads,
    high: Grads,
    real: Grads,
    q: Grads,
}

impl Discriminator {
    fn new(rng: &mut Rng, height: usize, width: usize, base: usize, num_classes: usize, d_c: usize) -> Self {
        let feat = 4 * base * (height / 8) * (width / 8);
        Discriminator {
            trunk_low: Sequential::new(vec![
                Layer::Conv2d(Conv2d::new(rng, 3, base, 3, 2, 1)),
                Layer::LeakyRelu(0.2),
                Layer::Conv2d(Conv2d::new(rng, base, 2 * base, 3, 2, 1)),
                Layer::LeakyRelu(0.2),
            ]),
            trunk_high: Sequential::new(vec![
                Layer::Conv2d(Conv2d::new(rng, 2 * base + num_classes, 4 * base, 3, 2, 1)),
                Layer::LeakyRelu(0.2),
                Layer::Flatten,
            ]),
            real_head: Sequential::new(vec![Layer::Linear(Linear::new_head(rng, feat, 1))]),
            q_head: Sequential::new(vec![
                Layer::Linear(Linear::new(rng, feat, 64)),
                Layer::LeakyRelu(0.2),
                Layer::Linear(Linear::new_head(rng, 64, d_c)),
            ]),
            num_classes,
        }
    }

    fn zero_grads(&self) -> DiscGrads {
        DiscGrads {
            low: self.trunk_low.zero_grads(),
            high: self.trunk_high.zero_grads(),
            real: self.real_head.zero_grads(),
            q: self.q_head.zero_grads(),
        }
    }

    /// Broadcast-concatenates class one-hots as extra channels.
    fn condition(&self, x: &Tensor, labels: &[usize]) -> Tensor {
        let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let k = self.num_classes;
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c + k) * plane);
        for (i, &y) in labels.iter().enumerate() {
            data.extend_from_slice(&x.data[i * c * plane..(i + 1) * c * plane]);
            for j in 0..k {
                data.extend(core::iter::repeat_n(if j == y { 1.0 } else { 0.0 }, plane));
            }
        }
        Tensor::from_vec(&[n, c + k, h, w], data)
    }

    fn uncondition_grad(&self, g: &Tensor, low_shape: &[usize]) -> Tensor {
        let (n, c, h, w) = (low_shape[0], low_shape[1], low_shape[2], low_shape[3]);
        let plane = h * w;
        let k = self.num_classes;
        let mut data = Vec::with_capacity(n * c * plane);
        for i in 0..n {
            let base = i * (c + k) * plane;
            data.extend_from_slice(&g.data[base..base + c * plane]);
        }
        Tensor::from_vec(low_shape, data)
    }

    /// Penultimate features.
    pub fn features(&self, x: &Tensor, labels: &[usize]) -> Tensor {
        let low = self.trunk_low.infer(x);
        self.trunk_high.infer(&self.condition(&low, labels))
    }

    fn forward(&self, x: &Tensor, labels: &[usize]) -> (Tensor, Tensor, DiscTape) {
        let (low, low_tape) = self.trunk_low.forward(x);
        let low_shape = low.shape.clone();
        let (feat, high_tape) = self.trunk_high.forward(&self.condition(&low, labels));
        let (logit, real_tape) = self.real_head.forward(&feat);
        let (q, q_tape) = self.q_head.forward(&feat);
        (logit, q, DiscTape { low: low_tape, high: high_tape, real: real_tape, q: q_tape, low_shape })
    }

    fn backward(&self, tape: &DiscTape, d_logit: Tensor, d_q: Tensor, grads: &mut DiscGrads, want_input: bool) -> Tensor {
        let mut d_feat = self.real_head.backward(&tape.real, d_logit, &mut grads.real, true);
        let d_feat_q = self.q_head.backward(&tape.q, d_q, &mut grads.q, true);
        for (a, b) in d_feat.data.iter_mut().zip(&d_feat_q.data) {
            *a += b;
        }
        let d_cond = self.trunk_high.backward(&tape.high, d_feat, &mut grads.high, true);
        let d_low = self.uncondition_grad(&d_cond, &tape.low_shape);
        self.trunk_low.backward(&tape.low, d_low, &mut grads.low, want_input)
    }
}

/// Code predictor Q: the trained discriminator trunk plus its Q head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPredictor {
    pub disc: Discriminator,
}

impl QPredictor {
    pub fn predict(&self, images: &[&Image], labels: &[usize]) -> Vec<Vec<f64>> {
        let x = Tensor::from_images(images.iter().copied());
        let q = self.disc.q_head.infer(&self.disc.features(&x, labels));
        (0..q.rows()).map(|i| q.row(i).iter().map(|v| f64::from(*v)).collect()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanLogRow {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub info: f64,
}

#[derive(Clone, Debug)]
pub struct InfoGanOutput {
    pub generator: GeneratorHandle,
    pub q: QPredictor,
    pub log: Vec<GanLogRow>,
}

fn sigmoid_probs(logits: &Tensor) -> Vec<f64> {
    logits.data.iter().map(|&l| 1.0 / (1.0 + libm::exp(-f64::from(l)))).collect()
}

fn q_rows(q: &Tensor) -> Vec<Vec<f64>> {
    (0..q.rows()).map(|i| q.row(i).iter().map(|v| f64::from(*v)).collect()).collect()
}

/// Chains `∂L/∂p` through the sigmoid into a logit gradient tensor.
fn logit_grad(dp: &[f64], p: &[f64]) -> Tensor {
    let data = dp.iter().zip(p).map(|(g, p)| (g * p * (1.0 - p)) as f32).collect();
    Tensor::from_vec(&[p.len(), 1], data)
}

fn q_grad(rows: &[Vec<f64>]) -> Tensor {
    let d = rows[0].len();
    Tensor::from_vec(&[rows.len(), d], rows.iter().flatten().map(|v| *v as f32).collect())
}

fn diverged(step: usize, detail: &str) -> Error {
    Error::Divergence { step, detail: detail.into() }
}

/// Trains the conditional InfoGAN on `dataset`.
///
/// Each step takes one discriminator/Q update on `d_loss + w·info` and one
/// generator update on the non-saturating adversarial term plus `w·info`.
/// Codes are drawn from the standard-normal prior and fakes reuse the labels
/// of the real batch, so the class mix matches the data.
pub fn train_infogan(dataset: &[Sample], config: &InfoGanConfig) -> Result<InfoGanOutput> {
    config.validate()?;
    let first = dataset.first().ok_or_else(|| Error::input("InfoGAN needs a non-empty dataset"))?;
    let (h, w) = (first.image.height, first.image.width);
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::input("InfoGAN image sides must be multiples of 8"));
    }
    let num_classes = dataset.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let meta = GeneratorMeta { d_z: config.d_z, d_c: config.d_c, num_classes, height: h, width: w, seed: config.seed };

    let mut init = Rng::new(config.seed, streams::INIT);
    let mut gen = LearnedGenerator::new(&mut init, meta.clone(), config.g_width);
    let mut disc = Discriminator::new(&mut init, h, w, config.d_width, num_classes, config.d_c);
    let mut opt_g = Adam::new(gan_adam(config.lr_g), &gen.net.params());
    let mut opt_low = Adam::new(gan_adam(config.lr_d), &disc.trunk_low.params());
    let mut opt_high = Adam::new(gan_adam(config.lr_d), &disc.trunk_high.params());
    let mut opt_real = Adam::new(gan_adam(config.lr_d), &disc.real_head.params());
    let mut opt_q = Adam::new(gan_adam(config.lr_d), &disc.q_head.params());

    let mut rng = Rng::new(config.seed, streams::GAN);
    let b = config.batch_size;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..b).map(|_| rng.below(dataset.len())).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| dataset[i].label).collect();
        let real = Tensor::from_images(idx.iter().map(|&i| &dataset[i].image));
        let codes: Vec<LatentCode> = labels
            .iter()
            .map(|&y| LatentCode {
                z: (0..config.d_z).map(|_| rng.normal()).collect(),
                c: (0..config.d_c).map(|_| rng.normal()).collect(),
                y,
            })
            .collect();
        let code_rows: Vec<Vec<f64>> = codes.iter().map(|c| c.c.clone()).collect();
        let (fake, g_tape) = gen.net.forward(&gen.input_tensor(&codes));

        // Discriminator and Q.
        let (real_logit, _, real_tape) = disc.forward(&real, &labels);
        let (fake_logit, fake_q, fake_tape) = disc.forward(&fake, &labels);
        let p_real = sigmoid_probs(&real_logit);
        let p_fake = sigmoid_probs(&fake_logit);
        let q_out = q_rows(&fake_q);
        let losses = gan_step_losses(&p_real, &p_fake, &q_out, &code_rows, config.info_weight)
            .map_err(|_| diverged(step, "non-finite discriminator output"))?;
        if !(losses.d_loss.is_finite() && losses.g_loss.is_finite()) {
            return Err(diverged(step, "non-finite loss"));
        }
        let grads = gan_step_gradients(&p_real, &p_fake, &q_out, &code_rows, config.info_weight)?;
        let mut dg = disc.zero_grads();
        let q_zero = Tensor::zeros(&fake_q.shape);
        disc.backward(&real_tape, logit_grad(&grads.d_loss_real, &p_real), q_zero, &mut dg, false);
        disc.backward(&fake_tape, logit_grad(&grads.d_loss_fake, &p_fake), q_grad(&grads.info_q), &mut dg, false);
        opt_low.step(disc.trunk_low.params_mut(), &dg.low);
        opt_high.step(disc.trunk_high.params_mut(), &dg.high);
        opt_real.step(disc.real_head.params_mut(), &dg.real);
        opt_q.step(disc.q_head.params_mut(), &dg.q);

        // Generator.
        let (fake_logit, fake_q, fake_tape) = disc.forward(&fake, &labels);
        let p_fake = sigmoid_probs(&fake_logit);
        let q_out = q_rows(&fake_q);
        let grads = gan_step_gradients(&p_real, &p_fake, &q_out, &code_rows, config.info_weight)
            .map_err(|_| diverged(step, "non-finite discriminator output"))?;
        let mut scratch = disc.zero_grads();
        let d_img = disc.backward(&fake_tape, logit_grad(&grads.g_loss_fake, &p_fake), q_grad(&grads.info_q), &mut scratch, true);
        let mut gg = gen.net.zero_grads();
        gen.net.backward(&g_tape, d_img, &mut gg, false);
        if !gg.all_finite() {
            return Err(diverged(step, "non-finite generator gradient"));
        }
        opt_g.step(gen.net.params_mut(), &gg);

        log.push(GanLogRow { step, d_loss: losses.d_loss, g_loss: losses.g_loss, info: losses.info });
    }
    Ok(InfoGanOutput { generator: GeneratorHandle::Learned(gen), q: QPredictor { disc }, log })
}

/// Mean of `info` over the first and last `window` log rows.
pub fn info_trend(log: &[GanLogRow], window: usize) -> (f64, f64) {
    let w = window.min(log.len()).max(1);
    let mean = |rows: &[GanLogRow]| rows.iter().map(|r| r.info).sum::<f64>() / rows.len().max(1) as f64;
    (mean(&log[..w.min(log.len())]), mean(&log[log.len().saturating_sub(w)..]))
}

/// Correlation between each code and Q's reconstruction of it, over `n`
/// fresh generations with prior-distributed codes and cycling labels.
pub fn code_recovery(gen: &GeneratorHandle, q: &QPredictor, n: usize, seed: u64) -> Result<Vec<f64>> {
    let meta = gen.meta();
    let codes: Vec<LatentCode> =
        (0..n).map(|k| super::draw_code(&meta, super::CodeDistribution::TrainingPrior, k % meta.num_classes, seed, k)).collect();
    let images = gen.generate_batch(&codes)?;
    let labels: Vec<usize> = codes.iter().map(|c| c.y).collect();
    let mut pred = Vec::with_capacity(n);
    for (imgs, ys) in images.chunks(100).zip(labels.chunks(100)) {
        let refs: Vec<&Image> = imgs.iter().collect();
        pred.extend(q.predict(&refs, ys));
    }
    (0..meta.d_c)
        .map(|i| {
            let c: Vec<f64> = codes.iter().map(|l| l.c[i]).collect();
            let p: Vec<f64> = pred.iter().map(|r| r[i]).collect();
            crate::metrics::pearson(&c, &p)
        })
        .collect()
}
