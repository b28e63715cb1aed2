use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    GuidanceError, GuidancePayload, GuidanceProvider, GuidanceRequest, GuidanceResponse, PromptKind,
    RequestKind, DEFAULT_DENOISE_LEVEL,
};
use crate::image::RgbImage;
use crate::losses::AttentionMap;
use crate::render::{render, RenderSettings};
use crate::scene::GaussianScene;

/// What the mock pretends the diffusion model wants to see.
#[derive(Debug, Clone)]
pub enum MockTarget {
    /// Targets are renders of `scene`; local prompts see only `foreground`
    /// on black.
    Scene {
        scene: GaussianScene,
        foreground: Vec<usize>,
    },
    /// The target is always the request image itself.
    Identity,
}

/// Analytic stand-in for a diffusion model.
///
/// The SDS gradient is `weight * (image - target)`: a score-distillation
/// step whose noise residual is replaced by the pixel residual to a known
/// target, so gradient descent with it converges to the target. Denoising
/// returns `(1 - t0) * image + t0 * target`, and the attention map is the
/// alpha of the target foreground.
#[derive(Debug, Clone)]
pub struct MockProvider {
    target: MockTarget,
    weight: f64,
    seed: u64,
    background: [f64; 3],
    settings: RenderSettings,
    attention_size: Option<(usize, usize)>,
}

impl MockProvider {
    pub fn new(target: MockTarget) -> Self {
        Self {
            target,
            weight: 1.0,
            seed: 0,
            background: [0.0; 3],
            settings: RenderSettings::default(),
            attention_size: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(MockTarget::Identity)
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Background used for global-prompt target renders.
    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn with_render_settings(mut self, settings: RenderSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Resolution of returned attention maps (defaults to the request size).
    pub fn with_attention_size(mut self, width: usize, height: usize) -> Self {
        self.attention_size = Some((width, height));
        self
    }

    pub fn target(&self) -> &MockTarget {
        &self.target
    }

    /// Target image for `req` under `prompt_kind`.
    pub fn target_image(&self, req: &GuidanceRequest, prompt_kind: PromptKind) -> Result<RgbImage, GuidanceError> {
        match &self.target {
            MockTarget::Identity => Ok(req.image.clone()),
            MockTarget::Scene { scene, foreground } => {
                let (subset, bg) = match prompt_kind {
                    PromptKind::Global => (None, self.background),
                    PromptKind::Local | PromptKind::Reference => (Some(foreground.as_slice()), [0.0; 3]),
                };
                render(scene, subset, &req.pose, &req.intrinsics, bg, &self.settings)
                    .map(|o| o.rgb)
                    .map_err(|e| GuidanceError::Provider(e.to_string()))
            }
        }
    }

    fn foreground_alpha(&self, req: &GuidanceRequest) -> Result<crate::image::ScalarImage, GuidanceError> {
        match &self.target {
            MockTarget::Identity => Ok(crate::image::ScalarImage::zeros(req.image.width, req.image.height)),
            MockTarget::Scene { scene, foreground } => {
                render(scene, Some(foreground), &req.pose, &req.intrinsics, [0.0; 3], &self.settings)
                    .map(|o| o.alpha)
                    .map_err(|e| GuidanceError::Provider(e.to_string()))
            }
        }
    }

    /// Per-request stream so concurrent calls stay deterministic.
    fn rng_for(&self, id: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

impl GuidanceProvider for MockProvider {
    fn guide(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        let start = Instant::now();
        req.validate()?;
        let (payload, t_used) = match req.kind {
            RequestKind::Sds => {
                let target = self.target_image(req, req.prompt_kind)?;
                let data = req
                    .image
                    .data
                    .iter()
                    .zip(&target.data)
                    .map(|(x, t)| self.weight * (x - t))
                    .collect();
                let t = req
                    .noise_level
                    .unwrap_or_else(|| self.rng_for(req.id).gen_range(0.02..=0.98));
                (
                    GuidancePayload::PixelGradient(RgbImage {
                        width: req.image.width,
                        height: req.image.height,
                        data,
                    }),
                    Some(t),
                )
            }
            RequestKind::Denoise => {
                let t0 = req.noise_level.unwrap_or(DEFAULT_DENOISE_LEVEL);
                let target = self.target_image(req, PromptKind::Global)?;
                let data = req
                    .image
                    .data
                    .iter()
                    .zip(&target.data)
                    // exact when the target equals the input
                    .map(|(x, t)| x + t0 * (t - x))
                    .collect();
                (
                    GuidancePayload::Denoised(RgbImage {
                        width: req.image.width,
                        height: req.image.height,
                        data,
                    }),
                    Some(t0),
                )
            }
            RequestKind::Attention => {
                let keyword = req.keyword.as_deref().unwrap_or_default();
                if keyword.chars().any(char::is_whitespace) || !keyword.chars().any(char::is_alphanumeric) {
                    return Err(GuidanceError::Keyword(keyword.to_string()));
                }
                let mut alpha = self.foreground_alpha(req)?;
                if let Some((w, h)) = self.attention_size {
                    alpha = alpha.resample_bilinear(w, h);
                }
                for v in &mut alpha.data {
                    *v = v.clamp(0.0, 1.0);
                }
                let map = AttentionMap::new(alpha).map_err(|e| GuidanceError::Provider(e.to_string()))?;
                (GuidancePayload::Attention(map), None)
            }
        };
        Ok(GuidanceResponse {
            id: req.id,
            payload,
            t_used,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraPose, Intrinsics};
    use crate::scene::Gaussian;
    use nalgebra::Vector3;

    fn k() -> Intrinsics {
        Intrinsics::new(30.0, 30.0, 8.0, 8.0, 16, 16).unwrap()
    }

    fn target_scene() -> GaussianScene {
        GaussianScene::from_gaussians(
            0,
            vec![
                Gaussian::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.3, 0.9, [0.8, 0.2, 0.1], 0),
                Gaussian::isotropic(Vector3::new(0.5, 0.2, 5.0), 0.4, 0.7, [0.1, 0.7, 0.3], 0),
            ],
        )
        .unwrap()
    }

    fn mock() -> MockProvider {
        MockProvider::new(MockTarget::Scene {
            scene: target_scene(),
            foreground: vec![0],
        })
    }

    #[test]
    fn fixed_point_has_zero_gradient() {
        let m = mock();
        let pose = CameraPose::identity();
        let target = render(&target_scene(), None, &pose, &k(), [0.0; 3], &RenderSettings::default()).unwrap().rgb;
        let (g, t) = m.sds_gradient(1, &target, &pose, &k(), PromptKind::Global).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        let t = t.unwrap();
        assert!((0.02..=0.98).contains(&t));
    }

    #[test]
    fn gradient_is_weighted_residual() {
        let m = MockProvider::identity().with_weight(1.0);
        let pose = CameraPose::identity();
        let img = RgbImage::filled(16, 16, [0.5; 3]);
        let (g, _) = m.sds_gradient(1, &img, &pose, &k(), PromptKind::Local).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        // against a black target, a 0.5 pixel gives 0.5
        let black = MockProvider::new(MockTarget::Scene {
            scene: GaussianScene::new(0).unwrap(),
            foreground: vec![],
        });
        let mut img = RgbImage::zeros(16, 16);
        img.set_pixel(3, 4, [0.5, 0.0, 0.0]);
        let (g, _) = black.sds_gradient(2, &img, &pose, &k(), PromptKind::Global).unwrap();
        assert_eq!(g.pixel(3, 4), [0.5, 0.0, 0.0]);
        assert_eq!(g.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn denoise_is_closed_form_blend() {
        let m = mock();
        let pose = CameraPose::identity();
        let img = RgbImage::filled(16, 16, [0.3, 0.6, 0.9]);
        let target = render(&target_scene(), None, &pose, &k(), [0.0; 3], &RenderSettings::default()).unwrap().rgb;
        let out = m.denoise(3, &img, &pose, &k(), 0.05, PromptKind::Global).unwrap();
        for i in 0..img.data.len() {
            let expected = 0.95 * img.data[i] + 0.05 * target.data[i];
            assert!((out.data[i] - expected).abs() < 1e-6);
        }
        let tiny = m.denoise(4, &img, &pose, &k(), 1e-12, PromptKind::Global).unwrap();
        for (a, b) in tiny.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(m.denoise(5, &img, &pose, &k(), 1.0, PromptKind::Global).is_err());
    }

    #[test]
    fn attention_follows_foreground_alpha() {
        let m = mock();
        let pose = CameraPose::identity();
        let img = RgbImage::zeros(16, 16);
        let map = m.attention_map(5, &img, &pose, &k(), "sunglasses").unwrap();
        let alpha = render(&target_scene(), Some(&[0]), &pose, &k(), [0.0; 3], &RenderSettings::default()).unwrap().alpha;
        assert_eq!(map.values().argmax(), alpha.argmax());
        let empty = MockProvider::new(MockTarget::Scene {
            scene: target_scene(),
            foreground: vec![],
        });
        let map = empty.attention_map(6, &img, &pose, &k(), "sunglasses").unwrap();
        assert!(map.values().data.iter().all(|&v| v == 0.0));
        assert!(matches!(m.attention_map(7, &img, &pose, &k(), "two words"), Err(GuidanceError::Keyword(_))));
        let coarse = mock().with_attention_size(4, 4).attention_map(8, &img, &pose, &k(), "hat").unwrap();
        assert_eq!((coarse.values().width, coarse.values().height), (4, 4));
    }

    #[test]
    fn deterministic_per_request() {
        let m = mock().with_seed(17);
        let pose = CameraPose::identity();
        let img = RgbImage::filled(16, 16, [0.2; 3]);
        let a = m.sds_gradient(9, &img, &pose, &k(), PromptKind::Global).unwrap();
        let b = m.sds_gradient(9, &img, &pose, &k(), PromptKind::Global).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reference_prompt_is_rejected_for_sds() {
        let m = mock();
        let img = RgbImage::zeros(16, 16);
        let err = m.sds_gradient(1, &img, &CameraPose::identity(), &k(), PromptKind::Reference);
        assert!(matches!(err, Err(GuidanceError::BadRequest(_))));
    }
}
