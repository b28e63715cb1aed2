use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::densify::DensifyState;
use super::{EditConfig, LossEntry, PipelineError, Stage, StepObserver};
use crate::camera::{sample_random_pose, CameraPose, Intrinsics};
use crate::guidance::{GuidanceProvider, PromptKind};
use crate::losses::blend;
use crate::optim::Adam;
use crate::render::{render, render_backward, AttributeGradients, RenderSettings};
use crate::scene::{EditSet, EditTask, GaussianScene};

/// Attribute gradients of one SDS term and the mean squared pixel gradient
/// reported as its loss.
#[allow(clippy::too_many_arguments)]
fn sds_term(
    scene: &GaussianScene,
    subset: Option<&[usize]>,
    background: [f64; 3],
    prompt_kind: PromptKind,
    id: u64,
    pose: &CameraPose,
    k: &Intrinsics,
    provider: &dyn GuidanceProvider,
) -> Result<(AttributeGradients, f64), PipelineError> {
    let settings = RenderSettings::default();
    let mut image = render(scene, subset, pose, k, background, &settings)?.rgb;
    // compositing can overshoot 1 by an ulp
    image.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let (pixel_grad, _t) = provider.sds_gradient(id, &image, pose, k, prompt_kind)?;
    let energy = pixel_grad.data.iter().map(|g| g * g).sum::<f64>() / pixel_grad.data.len().max(1) as f64;
    let grads = render_backward(scene, subset, pose, k, background, &pixel_grad, &settings)?;
    Ok((grads, energy))
}

/// Coarse SDS stage. Each iteration samples a random view, requests the
/// global and local SDS gradients concurrently, backpropagates each through
/// its own render, blends the attribute gradients with γ and takes one Adam
/// step on the editable Gaussians.
///
/// Stylize edits have no foreground/background split and use the global
/// term only. The logged loss is `γ·mean(g_G²) + (1-γ)·mean(g_L²)` over the
/// returned pixel gradients.
pub fn coarse_edit(
    scene: &GaussianScene,
    set: &EditSet,
    cfg: &EditConfig,
    provider: &dyn GuidanceProvider,
    observer: &mut dyn StepObserver,
) -> Result<(GaussianScene, EditSet), PipelineError> {
    cfg.validate()?;
    if !set.trainable().any() || set.editable_indices().is_empty() {
        return Err(PipelineError::Config("edit set has nothing to optimize".into()));
    }
    let k = cfg.intrinsics()?;
    let sampler = cfg.aimed(&cfg.coarse_poses);
    let gamma = if set.task() == EditTask::Stylize { 1.0 } else { cfg.gamma };
    let mut scene = scene.clone();
    let mut set = set.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, &set, &scene);
    let mut densify = DensifyState::new(&set);
    let extent = scene.extent();
    let start = Instant::now();

    for iter in 0..cfg.coarse_iters {
        let pose = sample_random_pose(&sampler, &mut rng)?;
        let id = 2 * iter as u64;
        let editable = set.editable_indices();
        let (global, local) = std::thread::scope(|s| {
            let local = (gamma < 1.0).then(|| {
                s.spawn(|| sds_term(&scene, Some(editable), [0.0; 3], PromptKind::Local, id + 1, &pose, &k, provider))
            });
            let global = (gamma > 0.0)
                .then(|| sds_term(&scene, None, cfg.background, PromptKind::Global, id, &pose, &k, provider));
            (global, local.map(|h| h.join().expect("sds worker panicked")))
        });
        let fail = |e: PipelineError, scene: &GaussianScene| match e {
            PipelineError::Guidance(source) => PipelineError::Provider {
                stage: Stage::Coarse,
                iter,
                source,
                checkpoint: Box::new(scene.clone()),
            },
            other => other,
        };
        let global = global.transpose().map_err(|e| fail(e, &scene))?;
        let local = local.transpose().map_err(|e| fail(e, &scene))?;
        let (grads, loss) = match (global, local) {
            (Some((g, eg)), Some((l, el))) => {
                let data = blend(g.as_slice(), l.as_slice(), gamma)?;
                let loss = gamma * eg + (1.0 - gamma) * el;
                (g.with_data(data).expect("same layout"), loss)
            }
            (Some((g, eg)), None) => (g, eg),
            (None, Some((l, el))) => (l, el),
            (None, None) => unreachable!("gamma selects at least one term"),
        };

        adam.step(&mut scene, &grads);
        if cfg.densify.enabled {
            densify.record(&set, &grads);
            if cfg.densify.due(iter, cfg.coarse_iters) && set.trainable().position {
                let stats = densify.apply(&mut scene, &mut set, &mut adam, &cfg.densify, extent, &mut rng);
                log::debug!("densify at {iter}: {stats:?}");
            }
        }
        let entry = LossEntry {
            stage: Stage::Coarse,
            iter,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer.on_step(&entry, &scene)?;
    }
    Ok((scene, set))
}
