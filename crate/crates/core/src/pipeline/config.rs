use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::densify::DensifyConfig;
use super::PipelineError;
use crate::camera::{sample_refinement_grid, CameraPose, Intrinsics, PoseSamplerConfig};
use crate::guidance::{PromptSet, DEFAULT_DENOISE_LEVEL};
use crate::optim::AdamConfig;
use crate::scene::{BoundingBox3D, EditTask, Trainable};

/// Everything one edit run needs besides the scene and the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub task: EditTask,
    #[serde(rename = "box")]
    pub edit_box: BoundingBox3D,
    pub prompts: PromptSet,
    /// Weight of the global SDS term; the local term gets `1 - gamma`.
    pub gamma: f64,
    /// Outside-mask weight of the localization loss.
    pub lambda: f64,
    pub coarse_iters: usize,
    pub refine_iters: usize,
    /// Noise level for refinement denoising.
    pub t0: f64,
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    pub adam: AdamConfig,
    pub coarse_poses: PoseSamplerConfig,
    pub refine_poses: PoseSamplerConfig,
    /// Instance mask threshold on the editable-only alpha.
    pub mask_threshold: f64,
    pub seed: u64,
    pub background: [f64; 3],
    /// Further restricts the attributes the task may train.
    pub trainable: Option<Trainable>,
    /// Uniform offset of inserted copies, as a fraction of the box half
    /// extents. Zero keeps copies on top of their sources.
    pub insert_jitter: f64,
    /// Rebuild refinement targets every N iterations; `None` builds them
    /// once.
    pub regenerate_pseudo_gt_every: Option<usize>,
    /// Write a checkpoint every N iterations of each stage.
    pub checkpoint_every: Option<usize>,
    pub densify: DensifyConfig,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            task: EditTask::Insert,
            edit_box: BoundingBox3D::axis_aligned(Vector3::zeros(), Vector3::repeat(0.5)).expect("valid box"),
            prompts: PromptSet::default(),
            gamma: 0.5,
            lambda: 0.1,
            coarse_iters: 3000,
            refine_iters: 3000,
            t0: DEFAULT_DENOISE_LEVEL,
            width: 512,
            height: 512,
            fov_y_deg: 50.0,
            adam: AdamConfig::default(),
            coarse_poses: PoseSamplerConfig::default(),
            refine_poses: PoseSamplerConfig::default(),
            mask_threshold: 0.5,
            seed: 0,
            background: [0.0; 3],
            trainable: None,
            insert_jitter: 0.0,
            regenerate_pseudo_gt_every: None,
            checkpoint_every: None,
            densify: DensifyConfig::default(),
        }
    }
}

impl EditConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if self.coarse_iters == 0 || self.refine_iters == 0 {
            return bad("iteration counts must be positive".into());
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return bad(format!("t0 {} outside (0, 1)", self.t0));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return bad(format!("mask threshold {} outside [0, 1)", self.mask_threshold));
        }
        if !self.background.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad("background channels must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.insert_jitter) {
            return bad(format!("insert jitter {} outside [0, 1]", self.insert_jitter));
        }
        if self.regenerate_pseudo_gt_every == Some(0) || self.checkpoint_every == Some(0) {
            return bad("intervals must be positive".into());
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        self.intrinsics()?;
        for (name, s) in [("coarse_poses", &self.coarse_poses), ("refine_poses", &self.refine_poses)] {
            s.validate().map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
        }
        sample_refinement_grid(&self.refine_poses).map_err(|e| PipelineError::Config(format!("refine_poses: {e}")))?;
        self.prompts
            .validate()
            .map_err(|e| PipelineError::Config(format!("prompts: {e}")))?;
        self.densify.validate()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics, PipelineError> {
        Intrinsics::from_fov(self.width, self.height, self.fov_y_deg).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Attributes the run may change: the task's set, narrowed by
    /// `trainable` when given.
    pub fn effective_trainable(&self) -> Trainable {
        let t = Trainable::for_task(self.task);
        match self.trainable {
            None => t,
            Some(r) => Trainable {
                position: t.position && r.position,
                opacity: t.opacity && r.opacity,
                scale: t.scale && r.scale,
                rotation: t.rotation && r.rotation,
                sh: t.sh && r.sh,
            },
        }
    }

    /// The refinement views, aimed at the box center unless the sampler
    /// names its own target.
    pub fn refinement_grid(&self) -> Result<Vec<CameraPose>, PipelineError> {
        Ok(sample_refinement_grid(&self.aimed(&self.refine_poses))?)
    }

    /// Sampler aimed at the box center unless it names its own target.
    pub(crate) fn aimed(&self, sampler: &PoseSamplerConfig) -> PoseSamplerConfig {
        let mut s = sampler.clone();
        if s.look_at.is_none() {
            s.look_at = Some(self.edit_box.center().into());
        }
        s
    }
}
