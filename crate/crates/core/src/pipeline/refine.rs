use std::time::Instant;

use rayon::prelude::*;

use super::{EditConfig, LossEntry, PipelineError, Stage, StepObserver};
use crate::camera::{CameraPose, Intrinsics};
use crate::guidance::{GuidanceProvider, PromptKind};
use crate::image::{Mask, RgbImage};
use crate::losses::{compose_pseudo_gt, mse, mse_grad};
use crate::optim::Adam;
use crate::render::{render, render_backward, render_instance_mask, RenderSettings};
use crate::scene::{EditSet, GaussianScene};

/// Request ids of refinement calls start here so they never collide with
/// the coarse stage.
const REFINE_ID_BASE: u64 = 1 << 40;

/// A refinement view with its frozen pseudo ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedView {
    pub pose: CameraPose,
    pub target: RgbImage,
    /// Instance mask of the editable Gaussians used to compose `target`.
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub scene: GaussianScene,
    pub set: EditSet,
    pub views: Vec<CachedView>,
    /// Mean MSE over the cached views before the first and after the last
    /// step, against the targets in `views`.
    pub initial_mse: f64,
    pub final_mse: f64,
}

/// For every pose: denoise the full render, then keep the denoised pixels
/// inside the editable instance mask and the fixed-only render elsewhere.
pub fn pseudo_ground_truth(
    scene: &GaussianScene,
    set: &EditSet,
    cfg: &EditConfig,
    provider: &dyn GuidanceProvider,
    poses: &[CameraPose],
    first_id: u64,
) -> Result<Vec<CachedView>, PipelineError> {
    let k = cfg.intrinsics()?;
    let settings = RenderSettings::default();
    let fixed = set.fixed_indices();
    poses
        .par_iter()
        .enumerate()
        .map(|(v, pose)| {
            let mut full = render(scene, None, pose, &k, cfg.background, &settings)?.rgb;
            full.data.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
            let background = render(scene, Some(&fixed), pose, &k, cfg.background, &settings)?.rgb;
            let mask = render_instance_mask(scene, set.editable_indices(), pose, &k, cfg.mask_threshold, &settings)?;
            let denoised = provider.denoise(first_id + v as u64, &full, pose, &k, cfg.t0, PromptKind::Global)?;
            let target = compose_pseudo_gt(&denoised, &background, &mask)?;
            Ok(CachedView {
                pose: *pose,
                target,
                mask,
            })
        })
        .collect()
}

/// Mean over `views` of the MSE between the full render and the target.
pub fn cached_view_mse(
    scene: &GaussianScene,
    views: &[CachedView],
    k: &Intrinsics,
    background: [f64; 3],
) -> Result<f64, PipelineError> {
    if views.is_empty() {
        return Ok(0.0);
    }
    let total = views
        .par_iter()
        .map(|v| {
            let out = render(scene, None, &v.pose, k, background, &RenderSettings::default())?;
            Ok(mse(&out.rgb, &v.target)?)
        })
        .collect::<Result<Vec<f64>, PipelineError>>()?
        .into_iter()
        .sum::<f64>();
    Ok(total / views.len() as f64)
}

/// Pixel-level refinement over the refinement grid. Targets are built once
/// (or every `regenerate_pseudo_gt_every` iterations) and the views are
/// visited in order, one Adam step per iteration.
pub fn refine(
    scene: &GaussianScene,
    set: &EditSet,
    cfg: &EditConfig,
    provider: &dyn GuidanceProvider,
    observer: &mut dyn StepObserver,
) -> Result<RefineOutcome, PipelineError> {
    cfg.validate()?;
    if !set.trainable().any() || set.editable_indices().is_empty() {
        return Err(PipelineError::Config("edit set has nothing to optimize".into()));
    }
    let k = cfg.intrinsics()?;
    let poses = cfg.refinement_grid()?;
    let mut scene = scene.clone();
    let settings = RenderSettings::default();
    let mut generation = 0u64;
    let build = |scene: &GaussianScene, generation: u64| {
        pseudo_ground_truth(scene, set, cfg, provider, &poses, REFINE_ID_BASE + generation * poses.len() as u64)
            .map_err(|e| match e {
                PipelineError::Guidance(source) => PipelineError::Provider {
                    stage: Stage::Refine,
                    iter: 0,
                    source,
                    checkpoint: Box::new(scene.clone()),
                },
                other => other,
            })
    };
    let mut views = build(&scene, generation)?;
    let initial_mse = cached_view_mse(&scene, &views, &k, cfg.background)?;
    let mut adam = Adam::new(cfg.adam, set, &scene);
    let start = Instant::now();

    for iter in 0..cfg.refine_iters {
        if let Some(every) = cfg.regenerate_pseudo_gt_every {
            if iter > 0 && iter % every == 0 {
                generation += 1;
                views = build(&scene, generation).map_err(|e| match e {
                    PipelineError::Provider {
                        stage,
                        source,
                        checkpoint,
                        ..
                    } => PipelineError::Provider {
                        stage,
                        iter,
                        source,
                        checkpoint,
                    },
                    other => other,
                })?;
            }
        }
        let view = &views[iter % views.len()];
        let out = render(&scene, None, &view.pose, &k, cfg.background, &settings)?;
        let loss = mse(&out.rgb, &view.target)?;
        let grad = mse_grad(&out.rgb, &view.target)?;
        let grads = render_backward(&scene, None, &view.pose, &k, cfg.background, &grad, &settings)?;
        adam.step(&mut scene, &grads);
        let entry = LossEntry {
            stage: Stage::Refine,
            iter,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer.on_step(&entry, &scene)?;
    }
    let final_mse = cached_view_mse(&scene, &views, &k, cfg.background)?;
    Ok(RefineOutcome {
        scene,
        set: set.clone(),
        views,
        initial_mse,
        final_mse,
    })
}
