//! The two editing stages and the end-to-end run.
//!
//! [`coarse_edit`] optimizes the editable Gaussians with a γ-weighted sum of
//! a global SDS term (full render) and a local SDS term (editable Gaussians
//! alone on black). [`refine`] then renders every refinement grid view,
//! builds a pseudo ground truth from the denoised render and the
//! fixed-only background, and fits the editable Gaussians to those images
//! with a pixel MSE.

mod coarse;
mod config;
mod densify;
mod refine;
mod run;

pub use coarse::coarse_edit;
pub use config::EditConfig;
pub use densify::{DensifyConfig, DensifyStats};
pub use refine::{cached_view_mse, pseudo_ground_truth, refine, CachedView, RefineOutcome};
pub use run::{run, RunOutputs, RunReport, Timings};

use serde::{Deserialize, Serialize};

use crate::camera::{project_box, CameraError, CameraPose, Intrinsics};
use crate::guidance::{GuidanceError, GuidanceProvider};
use crate::image::RgbImage;
use crate::losses::{localization_loss, LocalizationParams, LossError};
use crate::render::RenderError;
use crate::scene::{build_edit_set, jitter_inserted, BoundingBox3D, EditSet, GaussianScene, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Refine,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Coarse => "coarse",
            Self::Refine => "refine",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    /// The provider failed mid-stage. `checkpoint` is the scene after the
    /// last completed iteration.
    #[error("{stage} stage failed at iteration {iter}: {source}")]
    Provider {
        stage: Stage,
        iter: usize,
        source: GuidanceError,
        checkpoint: Box<GaussianScene>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// One optimizer iteration in the run report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub stage: Stage,
    pub iter: usize,
    pub loss: f64,
    /// Milliseconds since the stage started.
    pub wall_ms: f64,
}

/// Receives every loss entry together with the scene after that step.
pub trait StepObserver {
    fn on_step(&mut self, entry: &LossEntry, scene: &GaussianScene) -> Result<(), PipelineError>;
}

impl StepObserver for Vec<LossEntry> {
    fn on_step(&mut self, entry: &LossEntry, _: &GaussianScene) -> Result<(), PipelineError> {
        self.push(*entry);
        Ok(())
    }
}

/// Builds the edit set for `cfg`, applies the trainable restriction and the
/// optional insert jitter, and rejects edits with nothing to optimize.
pub fn prepare(scene: &GaussianScene, cfg: &EditConfig) -> Result<(GaussianScene, EditSet), PipelineError> {
    cfg.validate()?;
    let (mut edited, set) = build_edit_set(scene, &cfg.edit_box, cfg.task)?;
    let set = set.with_trainable(cfg.effective_trainable());
    if !set.trainable().any() {
        return Err(PipelineError::Config(format!(
            "task {:?} leaves no trainable attribute",
            cfg.task
        )));
    }
    if cfg.insert_jitter > 0.0 && cfg.task == crate::scene::EditTask::Insert {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a09_e667);
        jitter_inserted(&mut edited, &set, &cfg.edit_box, cfg.insert_jitter, &mut rng);
    }
    Ok((edited, set))
}

/// Localization loss of the provider's attention map for `keyword` against
/// the projection of `bbox`; the map is resampled to the image size first.
#[allow(clippy::too_many_arguments)]
pub fn box_localization_loss(
    provider: &dyn GuidanceProvider,
    id: u64,
    image: &RgbImage,
    pose: &CameraPose,
    k: &Intrinsics,
    bbox: &BoundingBox3D,
    keyword: &str,
    params: &LocalizationParams,
) -> Result<f64, PipelineError> {
    let map = provider.attention_map(id, image, pose, k, keyword)?;
    let mask = project_box(bbox, pose, k)?;
    let map = map.resampled(k.width, k.height);
    Ok(localization_loss(&map, &mask, params)?)
}
