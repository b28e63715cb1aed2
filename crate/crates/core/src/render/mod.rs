//! Differentiable splatting renderer.
//!
//! Gaussians are projected with the local-affine (EWA) approximation, sorted
//! once per view by camera-space depth and alpha-composited front to back.
//! [`render_backward`] is the exact adjoint of [`render`], including the
//! truncation and early termination rules, so the two can be compared
//! against finite differences on small scenes.

mod backward;
mod forward;
mod project;

pub use backward::render_backward;
pub use forward::{render, render_instance_mask};
pub use project::{project_gaussian, Splat};

use nalgebra::{Quaternion, Vector3};

use crate::camera::CameraError;
use crate::scene::{sh_coeff_count, GaussianScene};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("screen-space covariance of gaussian {index} is not positive definite")]
    Numerical { index: usize },
    #[error("subset index {index} out of range for scene of {len}")]
    SubsetIndex { index: usize, len: usize },
    #[error("gradient image is {found:?}, expected {expected:?}")]
    GradientShape {
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Rasterization constants shared by forward, backward and the test oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Added to the diagonal of the screen-space covariance (pixels²).
    pub dilation: f64,
    /// Pixel support in standard deviations (Mahalanobis radius); `None`
    /// evaluates every Gaussian at every pixel.
    pub cutoff_sigma: Option<f64>,
    /// Compositing stops once transmittance falls below this value.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            dilation: 0.3,
            cutoff_sigma: Some(3.0),
            min_transmittance: 1e-4,
        }
    }
}

impl RenderSettings {
    /// No truncation; used for gradient checks on tiny scenes.
    pub fn untruncated() -> Self {
        Self {
            cutoff_sigma: None,
            ..Self::default()
        }
    }
}

/// Result of a forward render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: crate::image::RgbImage,
    pub alpha: crate::image::ScalarImage,
    /// Scene indices of the drawn Gaussians in front-to-back order.
    pub depth_order: Vec<usize>,
}

/// Gradients for every Gaussian of a scene, flattened per Gaussian as
/// position (3), opacity logit (1), log scale (3), rotation w,x,y,z (4),
/// then SH coefficients (3 per basis function).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeGradients {
    sh_count: usize,
    data: Vec<f64>,
}

pub(crate) const OFF_POSITION: usize = 0;
pub(crate) const OFF_OPACITY: usize = 3;
pub(crate) const OFF_SCALE: usize = 4;
pub(crate) const OFF_ROTATION: usize = 7;
pub(crate) const OFF_SH: usize = 11;

impl AttributeGradients {
    pub fn zeros(len: usize, sh_degree: usize) -> Self {
        let sh_count = sh_coeff_count(sh_degree);
        Self {
            sh_count,
            data: vec![0.0; len * (OFF_SH + 3 * sh_count)],
        }
    }

    pub fn for_scene(scene: &GaussianScene) -> Self {
        Self::zeros(scene.len(), scene.sh_degree())
    }

    pub fn stride(&self) -> usize {
        OFF_SH + 3 * self.sh_count
    }

    /// Per-Gaussian stride for SH degree `sh_degree`.
    pub fn stride_for_degree(sh_degree: usize) -> usize {
        OFF_SH + 3 * sh_coeff_count(sh_degree)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rebuilds gradients from a flat buffer with the same layout as `self`.
    pub fn with_data(&self, data: Vec<f64>) -> Option<Self> {
        (data.len() == self.data.len()).then_some(Self {
            sh_count: self.sh_count,
            data,
        })
    }

    pub fn gaussian(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub(crate) fn gaussian_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.gaussian(i)[OFF_POSITION..OFF_POSITION + 3])
    }

    pub fn opacity_logit(&self, i: usize) -> f64 {
        self.gaussian(i)[OFF_OPACITY]
    }

    pub fn scale_log(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.gaussian(i)[OFF_SCALE..OFF_SCALE + 3])
    }

    /// Gradient with respect to the raw quaternion (w, x, y, z).
    pub fn rotation(&self, i: usize) -> Quaternion<f64> {
        let g = &self.gaussian(i)[OFF_ROTATION..OFF_ROTATION + 4];
        Quaternion::new(g[0], g[1], g[2], g[3])
    }

    pub fn sh(&self, i: usize, k: usize) -> [f64; 3] {
        let g = &self.gaussian(i)[OFF_SH + 3 * k..OFF_SH + 3 * k + 3];
        [g[0], g[1], g[2]]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn resolve_subset(scene: &GaussianScene, subset: Option<&[usize]>) -> Result<Vec<usize>, RenderError> {
    match subset {
        None => Ok((0..scene.len()).collect()),
        Some(idx) => {
            let mut v = idx.to_vec();
            v.sort_unstable();
            v.dedup();
            if let Some(&bad) = v.iter().find(|&&i| i >= scene.len()) {
                return Err(RenderError::SubsetIndex {
                    index: bad,
                    len: scene.len(),
                });
            }
            Ok(v)
        }
    }
}
