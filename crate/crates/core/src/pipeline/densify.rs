//! Optional densification and pruning of the editable Gaussians, following
//! the usual splatting heuristics: Gaussians with large accumulated
//! positional gradients are cloned (small) or split (large), and nearly
//! transparent ones are removed. Fixed Gaussians are never touched.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::optim::Adam;
use crate::render::AttributeGradients;
use crate::scene::{EditSet, GaussianScene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    /// Iterations between densification passes.
    pub interval: usize,
    pub start_iter: usize,
    /// Passes stop after this fraction of the stage.
    pub stop_fraction: f64,
    /// Mean world-space positional gradient norm that triggers growth.
    pub grad_threshold: f64,
    /// Largest scale, as a fraction of the scene extent, that is cloned
    /// rather than split.
    pub percent_dense: f64,
    pub min_opacity: f64,
    pub max_editable: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            interval: 100,
            start_iter: 100,
            stop_fraction: 0.8,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            min_opacity: 0.005,
            max_editable: 10_000,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.enabled
            && (self.interval == 0
                || !(0.0..=1.0).contains(&self.stop_fraction)
                || !(self.grad_threshold > 0.0)
                || !(self.percent_dense > 0.0)
                || !(0.0..1.0).contains(&self.min_opacity))
        {
            return Err(PipelineError::Config("densify settings out of range".into()));
        }
        Ok(())
    }

    /// Whether a pass runs after iteration `iter` (zero based) of `total`.
    pub(crate) fn due(&self, iter: usize, total: usize) -> bool {
        let done = iter + 1;
        self.enabled
            && done >= self.start_iter
            && (done as f64) <= self.stop_fraction * total as f64
            && done.is_multiple_of(self.interval)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyStats {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Running positional gradient statistics per editable slot.
#[derive(Debug, Clone)]
pub(crate) struct DensifyState {
    accum: Vec<f64>,
    visits: Vec<u32>,
}

impl DensifyState {
    pub(crate) fn new(set: &EditSet) -> Self {
        let n = set.editable_indices().len();
        Self {
            accum: vec![0.0; n],
            visits: vec![0; n],
        }
    }

    pub(crate) fn record(&mut self, set: &EditSet, grads: &AttributeGradients) {
        for (slot, &i) in set.editable_indices().iter().enumerate() {
            let n = grads.position(i).norm();
            if n > 0.0 {
                self.accum[slot] += n;
                self.visits[slot] += 1;
            }
        }
    }

    /// Grows and prunes the editable Gaussians, then rebinds `adam` and
    /// resets the statistics.
    pub(crate) fn apply<R: Rng>(
        &mut self,
        scene: &mut GaussianScene,
        set: &mut EditSet,
        adam: &mut Adam,
        cfg: &DensifyConfig,
        extent: f64,
        rng: &mut R,
    ) -> DensifyStats {
        let mut stats = DensifyStats::default();
        let editable = set.editable_indices().to_vec();
        let base_len = scene.len();
        // previous slot each appended Gaussian descends from
        let mut appended = Vec::new();
        let mut reset = vec![false; editable.len()];
        let mut room = cfg.max_editable.saturating_sub(editable.len());

        for (slot, &i) in editable.iter().enumerate() {
            if room == 0 || self.visits[slot] == 0 {
                continue;
            }
            if self.accum[slot] / f64::from(self.visits[slot]) < cfg.grad_threshold {
                continue;
            }
            let g = scene.gaussians()[i].clone();
            if g.scale().max() <= cfg.percent_dense * extent {
                scene.push(g).expect("copy of a valid gaussian");
                stats.cloned += 1;
            } else {
                let rot = g.rotation_matrix();
                let scale = g.scale();
                let mut child = g.clone();
                child.scale_log = (scale / 1.6).map(f64::ln);
                let mut sample = || {
                    let n = nalgebra::Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    g.position + rot * scale.component_mul(&n)
                };
                let mut first = child.clone();
                first.position = sample();
                child.position = sample();
                scene.gaussians_mut()[i] = first;
                scene.push(child).expect("sample of a valid gaussian");
                reset[slot] = true;
                stats.split += 1;
            }
            appended.push(slot);
            room -= 1;
        }

        let mut keep = vec![true; scene.len()];
        for i in editable.iter().copied().chain(base_len..scene.len()) {
            if scene.gaussians()[i].opacity() < cfg.min_opacity {
                keep[i] = false;
                stats.pruned += 1;
            }
        }

        // old index -> new index after removal
        let mut new_index = vec![usize::MAX; scene.len()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                new_index[i] = next;
                next += 1;
            }
        }
        let mut editable_new = Vec::new();
        let mut origin = Vec::new();
        for (slot, &i) in editable.iter().enumerate() {
            if keep[i] {
                editable_new.push(new_index[i]);
                origin.push((!reset[slot]).then_some(slot));
            }
        }
        for k in 0..appended.len() {
            let i = base_len + k;
            if keep[i] {
                editable_new.push(new_index[i]);
                origin.push(None);
            }
        }
        scene.retain(&keep);
        *set = EditSet::from_parts(editable_new, set.trainable(), set.task(), scene.len());
        adam.remap(set, &origin);
        *self = Self::new(set);
        stats
    }
}
