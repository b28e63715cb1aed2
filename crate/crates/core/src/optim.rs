//! Adam with per-attribute learning rates, restricted to an edit set.

use serde::{Deserialize, Serialize};

use crate::render::{AttributeGradients, OFF_OPACITY, OFF_POSITION, OFF_ROTATION, OFF_SCALE, OFF_SH};
use crate::scene::{EditSet, Gaussian, GaussianScene, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub position: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            sh: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

pub(crate) fn read_params(g: &Gaussian, out: &mut [f64]) {
    out[OFF_POSITION..OFF_POSITION + 3].copy_from_slice(g.position.as_slice());
    out[OFF_OPACITY] = g.opacity_logit;
    out[OFF_SCALE..OFF_SCALE + 3].copy_from_slice(g.scale_log.as_slice());
    out[OFF_ROTATION..OFF_ROTATION + 4].copy_from_slice(&[g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k]);
    for (k, c) in g.sh.iter().enumerate() {
        out[OFF_SH + 3 * k..OFF_SH + 3 * k + 3].copy_from_slice(c);
    }
}

pub(crate) fn write_params(g: &mut Gaussian, p: &[f64]) {
    g.position.copy_from_slice(&p[OFF_POSITION..OFF_POSITION + 3]);
    g.opacity_logit = p[OFF_OPACITY];
    g.scale_log.copy_from_slice(&p[OFF_SCALE..OFF_SCALE + 3]);
    g.rotation = nalgebra::Quaternion::new(p[OFF_ROTATION], p[OFF_ROTATION + 1], p[OFF_ROTATION + 2], p[OFF_ROTATION + 3]);
    for (k, c) in g.sh.iter_mut().enumerate() {
        c.copy_from_slice(&p[OFF_SH + 3 * k..OFF_SH + 3 * k + 3]);
    }
}

/// Per-slot learning rate for one Gaussian's flat parameter vector; zero
/// for frozen attributes.
fn slot_rates(stride: usize, lr: &LearningRates, trainable: Trainable, extent: f64) -> Vec<f64> {
    let mut rates = vec![0.0; stride];
    let mut set = |range: std::ops::Range<usize>, on: bool, v: f64| {
        if on {
            rates[range].iter_mut().for_each(|r| *r = v);
        }
    };
    set(OFF_POSITION..OFF_POSITION + 3, trainable.position, lr.position * extent);
    set(OFF_OPACITY..OFF_OPACITY + 1, trainable.opacity, lr.opacity);
    set(OFF_SCALE..OFF_SCALE + 3, trainable.scale, lr.scale);
    set(OFF_ROTATION..OFF_ROTATION + 4, trainable.rotation, lr.rotation);
    set(OFF_SH..stride, trainable.sh, lr.sh);
    rates
}

/// Optimizer state for the editable Gaussians of one edit.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    indices: Vec<usize>,
    rates: Vec<f64>,
    stride: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, set: &EditSet, scene: &GaussianScene) -> Self {
        let stride = AttributeGradients::stride_for_degree(scene.sh_degree());
        let extent = scene.extent().max(1e-6);
        let n = set.editable_indices().len() * stride;
        Self {
            cfg,
            indices: set.editable_indices().to_vec(),
            rates: slot_rates(stride, &cfg.lr, set.trainable(), extent),
            stride,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Rebinds the optimizer to a resized edit set. `origin[slot]` names the
    /// previous slot whose moments the new slot inherits; `None` starts from
    /// zero.
    pub fn remap(&mut self, set: &EditSet, origin: &[Option<usize>]) {
        assert_eq!(origin.len(), set.editable_indices().len());
        let s = self.stride;
        let mut m = vec![0.0; origin.len() * s];
        let mut v = vec![0.0; origin.len() * s];
        for (slot, src) in origin.iter().enumerate() {
            if let Some(old) = *src {
                m[slot * s..(slot + 1) * s].copy_from_slice(&self.m[old * s..(old + 1) * s]);
                v[slot * s..(slot + 1) * s].copy_from_slice(&self.v[old * s..(old + 1) * s]);
            }
        }
        self.indices = set.editable_indices().to_vec();
        self.m = m;
        self.v = v;
    }

    /// One update of the editable Gaussians; quaternions are renormalized.
    pub fn step(&mut self, scene: &mut GaussianScene, grads: &AttributeGradients) {
        assert_eq!(grads.stride(), self.stride, "gradient layout mismatch");
        self.steps += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        let mut params = vec![0.0; self.stride];
        for (slot, &i) in self.indices.iter().enumerate() {
            let g = grads.gaussian(i);
            let gauss = &mut scene.gaussians_mut()[i];
            read_params(gauss, &mut params);
            let base = slot * self.stride;
            for s in 0..self.stride {
                let lr = self.rates[s];
                if lr == 0.0 {
                    continue;
                }
                let m = &mut self.m[base + s];
                let v = &mut self.v[base + s];
                *m = b1 * *m + (1.0 - b1) * g[s];
                *v = b2 * *v + (1.0 - b2) * g[s] * g[s];
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                params[s] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            write_params(gauss, &params);
            if self.rates[OFF_ROTATION] != 0.0 {
                gauss.normalize_rotation();
            }
        }
    }
}
