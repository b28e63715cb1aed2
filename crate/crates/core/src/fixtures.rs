//! Small deterministic scenes with known edit targets.
//!
//! `blob-10` is a ten-Gaussian toy whose two eyes sit inside the edit box;
//! its target adds a pair of lens-shaped Gaussians in front of the eyes, so
//! an insert edit has an exactly reachable optimum. `box-scene-100` is a
//! hundred Gaussians on the surface of a cube with a retexture target on
//! the top face.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraPose, Intrinsics, PoseSamplerConfig};
use crate::guidance::{MockProvider, MockTarget};
use crate::losses::mse;
use crate::pipeline::{EditConfig, PipelineError};
use crate::render::{render, RenderSettings};
use crate::scene::{BoundingBox3D, EditTask, Gaussian, GaussianScene};
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureName {
    Blob10,
    BoxScene100,
}

impl FixtureName {
    pub const ALL: [Self; 2] = [Self::Blob10, Self::BoxScene100];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Blob10 => "blob-10",
            Self::BoxScene100 => "box-scene-100",
        }
    }
}

impl std::fmt::Display for FixtureName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FixtureName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|f| f.as_str()).collect();
                format!("unknown fixture {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// A scene, the edit to apply to it and the scene the mock provider
/// renders as the goal.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: FixtureName,
    pub scene: GaussianScene,
    pub edit_box: BoundingBox3D,
    pub task: EditTask,
    pub target: GaussianScene,
    /// Indices into `target` of the content the local prompt describes.
    pub foreground: Vec<usize>,
    pub background: [f64; 3],
}

impl Fixture {
    /// Mock provider whose targets are renders of `self.target`.
    pub fn mock_provider(&self, seed: u64) -> MockProvider {
        MockProvider::new(MockTarget::Scene {
            scene: self.target.clone(),
            foreground: self.foreground.clone(),
        })
        .with_background(self.background)
        .with_seed(seed)
    }

    /// Desk-scale edit settings: 64×64 views around the scene center.
    pub fn edit_config(&self, seed: u64) -> EditConfig {
        let poses = PoseSamplerConfig {
            look_at: Some([0.0; 3]),
            radius: [2.5, 3.0],
            ..Default::default()
        };
        EditConfig {
            task: self.task,
            edit_box: self.edit_box.clone(),
            width: 64,
            height: 64,
            fov_y_deg: 40.0,
            coarse_iters: 2000,
            refine_iters: 3000,
            coarse_poses: poses.clone(),
            refine_poses: poses,
            background: self.background,
            seed,
            ..Default::default()
        }
    }

    /// Mean over `poses` of the MSE between `subset` of `scene` and the
    /// target foreground, both rendered alone on black.
    pub fn foreground_mse(
        &self,
        scene: &GaussianScene,
        subset: &[usize],
        poses: &[CameraPose],
        k: &Intrinsics,
    ) -> Result<f64, PipelineError> {
        let settings = RenderSettings::default();
        let mut total = 0.0;
        for pose in poses {
            let a = render(scene, Some(subset), pose, k, [0.0; 3], &settings)?;
            let b = render(&self.target, Some(&self.foreground), pose, k, [0.0; 3], &settings)?;
            total += mse(&a.rgb, &b.rgb)?;
        }
        Ok(total / poses.len().max(1) as f64)
    }
}

/// Builds fixture `name`. `blob-10` is hand-placed and ignores `seed`.
pub fn fixture(name: FixtureName, seed: u64) -> Fixture {
    match name {
        FixtureName::Blob10 => blob10(),
        FixtureName::BoxScene100 => box_scene100(seed),
    }
}

fn ellipsoid(position: [f64; 3], scale: [f64; 3], opacity: f64, color: [f64; 3], degree: usize) -> Gaussian {
    let mut g = Gaussian::isotropic(Vector3::from(position), 1.0, opacity, color, degree);
    g.scale_log = Vector3::from(scale).map(f64::ln);
    g
}

fn blob10() -> Fixture {
    let brown = [0.55, 0.35, 0.2];
    let tan = [0.8, 0.65, 0.45];
    let parts = vec![
        ellipsoid([0.0, -0.3, 0.0], [0.3, 0.35, 0.28], 0.95, brown, 0),
        ellipsoid([0.0, 0.35, 0.0], [0.25, 0.23, 0.22], 0.95, tan, 0),
        ellipsoid([-0.2, 0.58, 0.0], [0.08, 0.1, 0.05], 0.9, brown, 0),
        ellipsoid([0.2, 0.58, 0.0], [0.08, 0.1, 0.05], 0.9, brown, 0),
        ellipsoid([-0.35, -0.2, 0.05], [0.08, 0.2, 0.08], 0.9, tan, 0),
        ellipsoid([0.35, -0.2, 0.05], [0.08, 0.2, 0.08], 0.9, tan, 0),
        ellipsoid([-0.15, -0.68, 0.05], [0.1, 0.07, 0.12], 0.9, brown, 0),
        ellipsoid([0.15, -0.68, 0.05], [0.1, 0.07, 0.12], 0.9, brown, 0),
        // eyes, the only Gaussians inside the edit box
        ellipsoid([-0.09, 0.4, 0.2], [0.04, 0.04, 0.02], 0.95, [0.05, 0.05, 0.05], 0),
        ellipsoid([0.09, 0.4, 0.2], [0.04, 0.04, 0.02], 0.95, [0.05, 0.05, 0.05], 0),
    ];
    let scene = GaussianScene::from_gaussians(0, parts).expect("valid fixture");
    let mut target = scene.clone();
    for x in [-0.1, 0.1] {
        target
            .push(ellipsoid([x, 0.42, 0.26], [0.1, 0.07, 0.03], 0.9, [0.2, 0.45, 0.95], 0))
            .expect("valid fixture");
    }
    let edit_box = BoundingBox3D::axis_aligned(Vector3::new(0.0, 0.42, 0.22), Vector3::new(0.25, 0.12, 0.12))
        .expect("valid box");
    Fixture {
        name: FixtureName::Blob10,
        scene,
        edit_box,
        task: EditTask::Insert,
        target,
        foreground: vec![10, 11],
        background: [1.0, 1.0, 1.0],
    }
}

fn box_scene100(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = 3;
    let mut gaussians = Vec::with_capacity(100);
    for i in 0..100 {
        // 17 per face except the last, which gets 15
        let face = (i / 17).min(5);
        let axis = face % 3;
        let sign = if face < 3 { 1.0 } else { -1.0 };
        let mut p = [rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45)];
        p[axis] = 0.5 * sign;
        let mut scale = [0.12, 0.12, 0.12];
        scale[axis] = 0.02;
        let color = [rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)];
        let mut g = ellipsoid(p, scale, rng.gen_range(0.7..0.95), color, degree);
        for c in g.sh.iter_mut().skip(1) {
            *c = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
        }
        let q = Quaternion::new(1.0, rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        g.rotation = *UnitQuaternion::from_quaternion(q).quaternion();
        gaussians.push(g);
    }
    let scene = GaussianScene::from_gaussians(degree, gaussians).expect("valid fixture");
    // top face (+y) plus a sliver of the sides
    let edit_box = BoundingBox3D::axis_aligned(Vector3::new(0.0, 0.5, 0.0), Vector3::new(0.55, 0.1, 0.55))
        .expect("valid box");
    let mut target = scene.clone();
    let mut foreground = Vec::new();
    for (i, g) in target.gaussians_mut().iter_mut().enumerate() {
        if edit_box.contains(&g.position) {
            g.sh[0] = sh::dc_from_color([0.85, 0.1, 0.1]);
            foreground.push(i);
        }
    }
    Fixture {
        name: FixtureName::BoxScene100,
        scene,
        edit_box,
        task: EditTask::Retexture,
        target,
        foreground,
        background: [0.0, 0.0, 0.0],
    }
}
