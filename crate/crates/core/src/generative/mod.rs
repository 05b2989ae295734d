//! Controllable generators and the machinery built on them: latent codes,
//! synthetic sampling, counterfactual pairs and traversal grids.
//!
//! Two generators share one interface. [`LearnedGenerator`] is the
//! conditional mutual-information GAN trained by [`train_infogan`];
//! [`OracleGenerator`] renders the factor world directly with chosen codes
//! wired to chosen factors, which makes it perfectly disentangled and
//! removes GAN noise from verification.

mod infogan;
mod losses;
mod oracle;

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub use infogan::{
    code_recovery, info_trend, train_infogan, Discriminator, GanLogRow, InfoGanConfig, InfoGanOutput, LearnedGenerator, QPredictor,
};
pub use losses::{
    code_neg_log_prior, gan_step_gradients, gan_step_losses, info_loss, info_loss_grad, GanLossGrads, GanLosses,
};
pub use oracle::{AffineMap, CodeMapping, OracleGenerator};

use crate::rng::{streams, Rng};
use crate::world::{validate_distribution, Image};
use crate::{Error, Result};

/// Bound of the evaluation and augmentation code sweep.
pub const CODE_SWEEP: f64 = 2.0;

/// Generator input: nuisance noise, information codes and class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub y: usize,
}

impl LatentCode {
    /// Copy with code `i` replaced by `value`.
    pub fn with_code(&self, i: usize, value: f64) -> LatentCode {
        let mut out = self.clone();
        out.c[i] = value;
        out
    }
}

/// How information codes are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeDistribution {
    /// `Uniform(−2, 2)` per code; used for evaluation and augmentation.
    UniformEval,
    /// Standard normal per code; the training prior.
    TrainingPrior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub d_z: usize,
    pub d_c: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneratorHandle {
    Oracle(OracleGenerator),
    Learned(LearnedGenerator),
}

impl GeneratorHandle {
    pub fn meta(&self) -> GeneratorMeta {
        match self {
            GeneratorHandle::Oracle(g) => g.meta(),
            GeneratorHandle::Learned(g) => g.meta.clone(),
        }
    }

    pub fn validate_code(&self, code: &LatentCode) -> Result<()> {
        let m = self.meta();
        if code.z.len() != m.d_z || code.c.len() != m.d_c {
            return Err(Error::input(alloc::format!(
                "latent code has |z|={} |c|={}, generator expects {} and {}",
                code.z.len(),
                code.c.len(),
                m.d_z,
                m.d_c
            )));
        }
        if code.y >= m.num_classes {
            return Err(Error::input(alloc::format!("class {} outside [0, {})", code.y, m.num_classes)));
        }
        if code.c.iter().chain(&code.z).any(|v| !v.is_finite()) {
            return Err(Error::input("latent code must be finite"));
        }
        Ok(())
    }

    pub fn generate(&self, code: &LatentCode) -> Result<Image> {
        Ok(self.generate_batch(core::slice::from_ref(code))?.remove(0))
    }

    pub fn generate_batch(&self, codes: &[LatentCode]) -> Result<Vec<Image>> {
        for c in codes {
            self.validate_code(c)?;
        }
        match self {
            GeneratorHandle::Oracle(g) => codes.iter().map(|c| g.render_code(c).map(|s| s.image)).collect(),
            GeneratorHandle::Learned(g) => Ok(g.generate_batch(codes)),
        }
    }
}

/// A generated image with the code that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub image: Image,
    pub label: usize,
    pub code: LatentCode,
}

/// Splits `n` items across classes in proportion to `dist` using
/// largest-remainder rounding (ties go to the lower class index).
pub fn stratified_allocation(n: usize, dist: &[f64]) -> Vec<usize> {
    let total: f64 = dist.iter().sum();
    let exact: Vec<f64> = dist.iter().map(|p| p / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Draws one latent code from stream `(seed, index)`.
pub fn draw_code(meta: &GeneratorMeta, c_dist: CodeDistribution, y: usize, seed: u64, index: usize) -> LatentCode {
    let mut rng = Rng::new(seed, index as u64);
    let z = (0..meta.d_z).map(|_| rng.normal()).collect();
    let c = (0..meta.d_c)
        .map(|_| match c_dist {
            CodeDistribution::UniformEval => rng.uniform_in(-CODE_SWEEP, CODE_SWEEP),
            CodeDistribution::TrainingPrior => rng.normal(),
        })
        .collect();
    LatentCode { z, c, y }
}

/// Labels for `n` synthetic samples matching `label_dist` exactly, in a
/// seeded random order.
pub fn stratified_labels(n: usize, label_dist: &[f64], seed: u64) -> Vec<usize> {
    let counts = stratified_allocation(n, label_dist);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| core::iter::repeat_n(k, c)).collect();
    Rng::new(seed, streams::LABELS).shuffle(&mut labels);
    labels
}

/// Samples `n` generated images with labels stratified to `label_dist`.
pub fn sample_synthetic(
    gen: &GeneratorHandle,
    n: usize,
    label_dist: &[f64],
    c_dist: CodeDistribution,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    let meta = gen.meta();
    validate_distribution(label_dist, meta.num_classes)?;
    let labels = stratified_labels(n, label_dist, seed);
    let codes: Vec<LatentCode> =
        labels.iter().enumerate().map(|(idx, &y)| draw_code(&meta, c_dist, y, seed, idx)).collect();
    let mut out = Vec::with_capacity(n);
    for chunk in codes.chunks(256) {
        let images = gen.generate_batch(chunk)?;
        out.extend(
            images
                .into_iter()
                .zip(chunk)
                .map(|(image, code)| SyntheticSample { image, label: code.y, code: code.clone() }),
        );
    }
    Ok(out)
}

/// A generated pair differing only in code `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Counterfactual {
    pub original: LatentCode,
    pub edited: LatentCode,
    pub images: (Image, Image),
}

/// Generates the pair `(G(z, c, y), G(z, c with c_i ← c_prime, y))`.
pub fn counterfactual(gen: &GeneratorHandle, code: &LatentCode, i: usize, c_prime: f64) -> Result<Counterfactual> {
    let d_c = gen.meta().d_c;
    if i >= d_c {
        return Err(Error::input(alloc::format!("code index {i} outside [0, {d_c})")));
    }
    let edited = code.with_code(i, c_prime);
    let mut imgs = gen.generate_batch(&[code.clone(), edited.clone()])?;
    let second = imgs.pop().expect("two images");
    let first = imgs.pop().expect("two images");
    Ok(Counterfactual { original: code.clone(), edited, images: (first, second) })
}

/// Montage with one row per random base code and one column per value of
/// code `i`, swept linearly over `[−2, 2]`.
pub fn traversal_grid(gen: &GeneratorHandle, i: usize, n_steps: usize, n_images: usize, seed: u64) -> Result<Image> {
    let meta = gen.meta();
    if n_steps < 2 {
        return Err(Error::input("traversal needs at least two steps"));
    }
    if i >= meta.d_c {
        return Err(Error::input(alloc::format!("code index {i} outside [0, {})", meta.d_c)));
    }
    let (h, w) = (meta.height, meta.width);
    let mut grid = Image::new(n_images * h, n_steps * w);
    let mut label_rng = Rng::new(seed, streams::LABELS);
    for row in 0..n_images {
        let y = label_rng.below(meta.num_classes);
        let base = draw_code(&meta, CodeDistribution::UniformEval, y, seed, row);
        let codes: Vec<LatentCode> = (0..n_steps)
            .map(|col| {
                let v = -CODE_SWEEP + 2.0 * CODE_SWEEP * col as f64 / (n_steps - 1) as f64;
                base.with_code(i, v)
            })
            .collect();
        for (col, img) in gen.generate_batch(&codes)?.iter().enumerate() {
            grid.blit(img, row * h, col * w);
        }
    }
    Ok(grid)
}

/// Row `r`, column `k` of a traversal grid's latent codes, for inspection.
pub fn traversal_code(meta: &GeneratorMeta, i: usize, n_steps: usize, seed: u64, row: usize, col: usize) -> LatentCode {
    let mut label_rng = Rng::new(seed, streams::LABELS);
    let mut y = 0;
    for _ in 0..=row {
        y = label_rng.below(meta.num_classes);
    }
    let v = -CODE_SWEEP + 2.0 * CODE_SWEEP * col as f64 / (n_steps - 1) as f64;
    draw_code(meta, CodeDistribution::UniformEval, y, seed, row).with_code(i, v)
}

/// One-hot rows for a label slice.
pub(crate) fn one_hot(labels: &[usize], k: usize) -> Vec<f32> {
    let mut out = vec![0f32; labels.len() * k];
    for (r, &y) in labels.iter().enumerate() {
        out[r * k + y] = 1.0;
    }
    out
}
