//! Loss terms of the mutual-information GAN, with analytic gradients with
//! respect to the model outputs they consume.

use alloc::vec::Vec;

use crate::{Error, Result, PROB_EPS};

/// Reconstruction term for continuous codes: `½‖c − q‖²`.
///
/// This is the unit-variance Gaussian negative log-likelihood of `c` under a
/// prediction `q` with its additive constant dropped.
pub fn info_loss(code: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(code, predicted)?;
    Ok(0.5 * code.iter().zip(predicted).map(|(c, q)| (c - q) * (c - q)).sum::<f64>())
}

/// Gradient of [`info_loss`] with respect to `predicted`.
pub fn info_loss_grad(code: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    check_lengths(code, predicted)?;
    Ok(code.iter().zip(predicted).map(|(c, q)| q - c).collect())
}

/// `−log p(c)` under the standard-normal code prior. Constant with respect to
/// every trainable parameter, so it is logged but never optimized.
pub fn code_neg_log_prior(code: &[f64]) -> f64 {
    0.5 * code.iter().map(|c| c * c).sum::<f64>() + 0.5 * code.len() as f64 * libm::log(2.0 * core::f64::consts::PI)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(alloc::format!("code length {} vs prediction length {}", a.len(), b.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    /// `−mean log D(x) − mean log(1 − D(x̂))`.
    pub d_loss: f64,
    /// Non-saturating generator term plus the weighted information term.
    pub g_loss: f64,
    /// Mean information loss over the fake batch.
    pub info: f64,
    /// Mean `−log p(c)` of the batch codes, for logging.
    pub info_prior: f64,
}

/// Gradients of the quantities in [`GanLosses`] with respect to the
/// discriminator probabilities and the Q predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct GanLossGrads {
    /// `∂d_loss/∂D(x)`.
    pub d_loss_real: Vec<f64>,
    /// `∂d_loss/∂D(x̂)`.
    pub d_loss_fake: Vec<f64>,
    /// `∂g_loss/∂D(x̂)`.
    pub g_loss_fake: Vec<f64>,
    /// `∂(w·info)/∂q`, shared by the generator and Q updates.
    pub info_q: Vec<Vec<f64>>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn inside_clamp(p: f64) -> bool {
    p > PROB_EPS && p < 1.0 - PROB_EPS
}

fn validate_outputs(d_real: &[f64], d_fake: &[f64], q_outputs: &[Vec<f64>], codes: &[Vec<f64>]) -> Result<()> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::input("discriminator batches must be non-empty"));
    }
    if q_outputs.len() != codes.len() || codes.len() != d_fake.len() {
        return Err(Error::input("Q predictions, codes and fake outputs must align"));
    }
    let finite = d_real.iter().chain(d_fake).all(|v| v.is_finite())
        && q_outputs.iter().flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Divergence { step: 0, detail: "non-finite discriminator or Q output".into() });
    }
    Ok(())
}

/// Evaluates the discriminator, generator and information losses from model
/// outputs. Probabilities are clamped to `[ε, 1 − ε]` inside every log.
pub fn gan_step_losses(
    d_real: &[f64],
    d_fake: &[f64],
    q_outputs: &[Vec<f64>],
    codes: &[Vec<f64>],
    info_weight: f64,
) -> Result<GanLosses> {
    validate_outputs(d_real, d_fake, q_outputs, codes)?;
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let real_term = -d_real.iter().map(|&p| libm::log(clamp_prob(p))).sum::<f64>() / nr;
    let fake_term = -d_fake.iter().map(|&p| libm::log(1.0 - clamp_prob(p))).sum::<f64>() / nf;
    let adv = -d_fake.iter().map(|&p| libm::log(clamp_prob(p))).sum::<f64>() / nf;
    let mut info = 0.0;
    for (c, q) in codes.iter().zip(q_outputs) {
        info += info_loss(c, q)?;
    }
    info /= nf;
    let info_prior = codes.iter().map(|c| code_neg_log_prior(c)).sum::<f64>() / nf;
    Ok(GanLosses { d_loss: real_term + fake_term, g_loss: adv + info_weight * info, info, info_prior })
}

pub fn gan_step_gradients(
    d_real: &[f64],
    d_fake: &[f64],
    q_outputs: &[Vec<f64>],
    codes: &[Vec<f64>],
    info_weight: f64,
) -> Result<GanLossGrads> {
    validate_outputs(d_real, d_fake, q_outputs, codes)?;
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let d_loss_real = d_real.iter().map(|&p| if inside_clamp(p) { -1.0 / (nr * p) } else { 0.0 }).collect();
    let d_loss_fake = d_fake.iter().map(|&p| if inside_clamp(p) { 1.0 / (nf * (1.0 - p)) } else { 0.0 }).collect();
    let g_loss_fake = d_fake.iter().map(|&p| if inside_clamp(p) { -1.0 / (nf * p) } else { 0.0 }).collect();
    let info_q = codes
        .iter()
        .zip(q_outputs)
        .map(|(c, q)| Ok(info_loss_grad(c, q)?.into_iter().map(|g| info_weight * g / nf).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(GanLossGrads { d_loss_real, d_loss_fake, g_loss_fake, info_q })
}
