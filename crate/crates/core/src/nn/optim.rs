use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Gradient buffers aligned with a network's parameter slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn zeros_like(params: &[&[f32]]) -> Self {
        Grads(params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, s: f32) {
        for g in &mut self.0 {
            for v in g {
                *v *= s;
            }
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Grads, s: f32) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&[f32]]) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - libm::powf(c.beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(c.beta2, self.step as f32);
        let step_size = c.lr / bc1;
        for (((p, g), m), v) in params.into_iter().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= step_size * m[i] / (libm::sqrtf(v[i] / bc2) + c.eps);
            }
        }
    }
}
