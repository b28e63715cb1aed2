//! Loss and compositing math used by both editing stages.

use serde::{Deserialize, Serialize};

use crate::image::{Mask, RgbImage, ScalarImage, ShapeMismatch};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Shape(#[from] ShapeMismatch),
    #[error("editing mask has no pixels")]
    EmptyMask,
    #[error("gamma {0} outside [0, 1]")]
    Gamma(f64),
    #[error("lambda must be non-negative, got {0}")]
    Lambda(f64),
    #[error("attention values must lie in [0, 1]")]
    AttentionRange,
}

/// Cross-attention map of the object keyword, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(ScalarImage);

impl AttentionMap {
    pub fn new(values: ScalarImage) -> Result<Self, LossError> {
        if values.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(Self(values))
        } else {
            Err(LossError::AttentionRange)
        }
    }

    pub fn values(&self) -> &ScalarImage {
        &self.0
    }

    pub fn into_inner(self) -> ScalarImage {
        self.0
    }

    /// Bilinear resampling to another resolution; stays within [0, 1].
    pub fn resampled(&self, width: usize, height: usize) -> Self {
        Self(self.0.resample_bilinear(width, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationParams {
    pub lambda: f64,
}

impl Default for LocalizationParams {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

/// `(1 - max_{s in S} A_s) + lambda * sum_{s not in S} A_s^2`.
///
/// Only the peak inside the mask is rewarded; the penalty outside is an
/// unnormalized sum.
pub fn localization_loss(attention: &AttentionMap, mask: &Mask, params: &LocalizationParams) -> Result<f64, LossError> {
    let a = attention.values();
    if a.shape() != mask.shape() {
        return Err(ShapeMismatch {
            left: a.shape(),
            right: mask.shape(),
        }
        .into());
    }
    if !(params.lambda >= 0.0) {
        return Err(LossError::Lambda(params.lambda));
    }
    let mut peak: Option<f64> = None;
    let mut outside = 0.0;
    for (&v, &inside) in a.data.iter().zip(&mask.data) {
        if inside {
            peak = Some(peak.map_or(v, |p| p.max(v)));
        } else {
            outside += v * v;
        }
    }
    let peak = peak.ok_or(LossError::EmptyMask)?;
    Ok((1.0 - peak) + params.lambda * outside)
}

/// `gamma * global + (1 - gamma) * local` over flat buffers. The endpoints
/// return the selected input unchanged.
pub fn blend(global: &[f64], local: &[f64], gamma: f64) -> Result<Vec<f64>, LossError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LossError::Gamma(gamma));
    }
    if global.len() != local.len() {
        return Err(ShapeMismatch {
            left: (global.len(), 1, 1),
            right: (local.len(), 1, 1),
        }
        .into());
    }
    Ok(if gamma == 1.0 {
        global.to_vec()
    } else if gamma == 0.0 {
        local.to_vec()
    } else {
        global
            .iter()
            .zip(local)
            .map(|(g, l)| gamma * g + (1.0 - gamma) * l)
            .collect()
    })
}

/// Blends the global and local pixel-space SDS gradients.
pub fn combine_sds(global: &RgbImage, local: &RgbImage, gamma: f64) -> Result<RgbImage, LossError> {
    global.check_same_shape(local)?;
    let data = blend(&global.data, &local.data, gamma)?;
    Ok(RgbImage {
        width: global.width,
        height: global.height,
        data,
    })
}

/// Pseudo ground truth: denoised pixels inside the instance mask, clean
/// background elsewhere.
pub fn compose_pseudo_gt(denoised: &RgbImage, background: &RgbImage, mask: &Mask) -> Result<RgbImage, LossError> {
    denoised.check_same_shape(background)?;
    if (mask.width, mask.height) != (denoised.width, denoised.height) {
        return Err(ShapeMismatch {
            left: denoised.shape(),
            right: mask.shape(),
        }
        .into());
    }
    let mut out = background.clone();
    for (p, &m) in mask.data.iter().enumerate() {
        if m {
            out.data[3 * p..3 * p + 3].copy_from_slice(&denoised.data[3 * p..3 * p + 3]);
        }
    }
    Ok(out)
}

/// Mean squared difference over all pixels and channels.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64, LossError> {
    a.check_same_shape(b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// Gradient of [`mse`] with respect to `a`.
pub fn mse_grad(a: &RgbImage, b: &RgbImage) -> Result<RgbImage, LossError> {
    a.check_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(RgbImage {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| 2.0 * (x - y) / n).collect(),
    })
}
