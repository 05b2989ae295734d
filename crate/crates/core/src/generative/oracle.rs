use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{GeneratorMeta, LatentCode, CODE_SWEEP};
use crate::rng::derive_seed;
use crate::world::{render, DatasetSpec, Interval, Sample};
use crate::{Error, Result};

/// `factor = scale · c + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    /// Increasing map sending `[−2, 2]` onto `range`.
    pub fn onto(range: Interval) -> Self {
        AffineMap { scale: range.width() / (2.0 * CODE_SWEEP), offset: range.midpoint() }
    }

    pub fn apply(&self, c: f64) -> f64 {
        self.scale * c + self.offset
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeMapping {
    pub code: usize,
    pub factor: usize,
    pub map: AffineMap,
}

/// Generator that renders the factor world directly.
///
/// Mapped codes drive their factor through an affine map; every other factor
/// is set from the nuisance vector (`Φ(z_k)` spread over the factor range)
/// and the render noise seed comes from the last entry of `z`. Unmapped
/// codes are ignored, so the generator is disentangled by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGenerator {
    pub spec: DatasetSpec,
    pub mappings: Vec<CodeMapping>,
    pub d_c: usize,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

impl OracleGenerator {
    pub fn new(spec: DatasetSpec, mappings: Vec<CodeMapping>, d_c: usize) -> Result<Self> {
        spec.validate()?;
        for (k, m) in mappings.iter().enumerate() {
            if m.code >= d_c {
                return Err(Error::input(alloc::format!("mapped code {} outside [0, {d_c})", m.code)));
            }
            let Some(f) = spec.factors.get(m.factor) else {
                return Err(Error::input(alloc::format!("mapped factor {} does not exist", m.factor)));
            };
            for other in &mappings[..k] {
                if other.code == m.code || other.factor == m.factor {
                    return Err(Error::input(alloc::format!(
                        "mapping is not injective (code {} / factor {})",
                        m.code,
                        m.factor
                    )));
                }
            }
            let (a, b) = (m.map.apply(-CODE_SWEEP), m.map.apply(CODE_SWEEP));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let tol = 1e-9 * f.range.width();
            if (lo - f.range.lo).abs() > tol || (hi - f.range.hi).abs() > tol {
                return Err(Error::input(alloc::format!(
                    "affine map for code {} does not send [-2, 2] onto the range of `{}`",
                    m.code,
                    f.name
                )));
            }
        }
        Ok(OracleGenerator { spec, mappings, d_c })
    }

    /// Maps each `(code, factor index)` pair with [`AffineMap::onto`].
    pub fn with_pairs(spec: DatasetSpec, pairs: &[(usize, usize)], d_c: usize) -> Result<Self> {
        let mappings = pairs
            .iter()
            .map(|&(code, factor)| {
                let range = spec
                    .factors
                    .get(factor)
                    .map(|f| f.range)
                    .ok_or_else(|| Error::input(alloc::format!("mapped factor {factor} does not exist")))?;
                Ok(CodeMapping { code, factor, map: AffineMap::onto(range) })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, mappings, d_c)
    }

    pub fn meta(&self) -> GeneratorMeta {
        GeneratorMeta {
            d_z: self.spec.num_factors() + 1,
            d_c: self.d_c,
            num_classes: self.spec.num_classes,
            height: self.spec.height,
            width: self.spec.width,
            seed: 0,
        }
    }

    pub fn code_for_factor(&self, factor: usize) -> Option<usize> {
        self.mappings.iter().find(|m| m.factor == factor).map(|m| m.code)
    }

    /// Ground-truth factor values the code renders with.
    pub fn factors_for(&self, code: &LatentCode) -> Vec<f64> {
        self.spec
            .factors
            .iter()
            .enumerate()
            .map(|(k, f)| match self.mappings.iter().find(|m| m.factor == k) {
                Some(m) => f.range.clamp(m.map.apply(code.c[m.code].clamp(-CODE_SWEEP, CODE_SWEEP))),
                None => f.range.lerp(std_normal_cdf(code.z[k])),
            })
            .collect()
    }

    pub fn render_code(&self, code: &LatentCode) -> Result<Sample> {
        let noise_seed = derive_seed(code.z[self.spec.num_factors()].to_bits(), 0);
        render(&self.factors_for(code), code.y, &self.spec, noise_seed)
    }
}
