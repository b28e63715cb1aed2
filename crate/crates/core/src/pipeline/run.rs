use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{coarse_edit, prepare, refine, EditConfig, LossEntry, PipelineError, Stage, StepObserver};
use crate::guidance::GuidanceProvider;
use crate::scene::{load_ply, save_ply, EditTask, GaussianScene};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_ms: f64,
    pub coarse_ms: f64,
    pub refine_ms: f64,
    pub save_ms: f64,
    pub total_ms: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: EditTask,
    pub seed: u64,
    pub input_gaussians: usize,
    pub output_gaussians: usize,
    pub editable_gaussians: usize,
    /// Random views drawn by the coarse stage (one per iteration).
    pub coarse_poses: usize,
    /// Views in the refinement grid.
    pub refine_poses: usize,
    pub refine_initial_mse: f64,
    pub refine_final_mse: f64,
    pub losses: Vec<LossEntry>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub scene: PathBuf,
    pub report: PathBuf,
}

struct Checkpointer<'a> {
    every: Option<usize>,
    dir: &'a Path,
    entries: Vec<LossEntry>,
}

impl StepObserver for Checkpointer<'_> {
    fn on_step(&mut self, entry: &LossEntry, scene: &GaussianScene) -> Result<(), PipelineError> {
        self.entries.push(*entry);
        if let Some(every) = self.every {
            if (entry.iter + 1).is_multiple_of(every) {
                let path = self
                    .dir
                    .join("checkpoints")
                    .join(format!("{}_{:05}.ply", entry.stage, entry.iter + 1));
                write_scene(scene, &path)?;
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_scene(scene: &GaussianScene, path: &Path) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_ply(scene, path).map_err(|e| match e {
        crate::scene::SceneError::Io(source) => PipelineError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Loads `scene_path`, runs both stages and writes `edited.ply` and
/// `report.json` into `out_dir`. When the provider fails, the last good
/// scene is saved as `partial.ply` before the error is returned.
pub fn run(
    cfg: &EditConfig,
    scene_path: &Path,
    out_dir: &Path,
    provider: &dyn GuidanceProvider,
) -> Result<(RunReport, RunOutputs), PipelineError> {
    let total = Instant::now();
    cfg.validate()?;
    let t = Instant::now();
    let input = load_ply(scene_path)?;
    let load_ms = ms(t);
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let (scene, set) = prepare(&input, cfg)?;
    let mut observer = Checkpointer {
        every: cfg.checkpoint_every,
        dir: out_dir,
        entries: Vec::with_capacity(cfg.coarse_iters + cfg.refine_iters),
    };
    let save_partial = |e: PipelineError| {
        if let PipelineError::Provider { checkpoint, stage, iter, .. } = &e {
            let path = out_dir.join("partial.ply");
            match write_scene(checkpoint, &path) {
                Ok(()) => log::error!("{stage} stage failed at iteration {iter}; saved {}", path.display()),
                Err(w) => log::error!("could not save partial scene: {w}"),
            }
        }
        e
    };

    let t = Instant::now();
    let (scene, set) = coarse_edit(&scene, &set, cfg, provider, &mut observer).map_err(save_partial)?;
    let coarse_ms = ms(t);
    log::info!("coarse stage done in {coarse_ms:.0} ms");

    let t = Instant::now();
    let outcome = refine(&scene, &set, cfg, provider, &mut observer).map_err(save_partial)?;
    let refine_ms = ms(t);
    log::info!(
        "refinement done in {refine_ms:.0} ms, cached-view mse {:.3e} -> {:.3e}",
        outcome.initial_mse,
        outcome.final_mse
    );

    let t = Instant::now();
    let mut edited = outcome.scene;
    // what is written is exactly what a reload sees
    edited.quantize();
    let scene_out = out_dir.join("edited.ply");
    write_scene(&edited, &scene_out)?;
    let save_ms = ms(t);

    let report = RunReport {
        task: cfg.task,
        seed: cfg.seed,
        input_gaussians: input.len(),
        output_gaussians: edited.len(),
        editable_gaussians: outcome.set.editable_indices().len(),
        coarse_poses: cfg.coarse_iters,
        refine_poses: outcome.views.len(),
        refine_initial_mse: outcome.initial_mse,
        refine_final_mse: outcome.final_mse,
        losses: observer.entries,
        timings: Timings {
            load_ms,
            coarse_ms,
            refine_ms,
            save_ms,
            total_ms: ms(total),
        },
    };
    debug_assert_eq!(
        report.losses.iter().filter(|e| e.stage == Stage::Coarse).count(),
        cfg.coarse_iters
    );
    let report_out = out_dir.join("report.json");
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    std::fs::write(&report_out, json).map_err(io_err(&report_out))?;
    Ok((
        report,
        RunOutputs {
            scene: scene_out,
            report: report_out,
        },
    ))
}
