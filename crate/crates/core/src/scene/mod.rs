//! Explicit Gaussian scene representation, box selection and editable sets.

mod edit;
mod ply;

pub use edit::{build_edit_set, jitter_inserted, select_in_box, EditSet, EditTask, Trainable};
pub use ply::{load_ply, read_ply, save_ply, write_ply};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Highest supported spherical-harmonics degree.
pub const MAX_SH_DEGREE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("ply format error: {0}")]
    Format(String),
    #[error("invalid value in vertex {vertex}: {message}")]
    Validation { vertex: usize, message: String },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("no Gaussians inside the edit region")]
    EmptyRegion,
    #[error("sh degree {0} is out of range 0..=3")]
    ShDegree(usize),
    #[error("gaussian {index} has {found} sh coefficients, expected {expected}")]
    ShLength {
        index: usize,
        found: usize,
        expected: usize,
    },
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Number of SH coefficients per color channel for degree `d`.
pub const fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Rotation matrix of the normalized quaternion `q` (w, x, y, z).
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// A single anisotropic Gaussian in the standard splatting parameterization.
///
/// Opacity is stored as a logit and scale as a per-axis log standard
/// deviation so that unconstrained gradient steps keep both valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub opacity_logit: f64,
    pub scale_log: Vector3<f64>,
    /// Rotation quaternion, `w` first in storage order.
    pub rotation: Quaternion<f64>,
    /// Spherical-harmonics coefficients, one RGB triple per basis function.
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian {
    /// Isotropic Gaussian with a constant (view-independent) color.
    pub fn isotropic(
        position: Vector3<f64>,
        sigma: f64,
        opacity: f64,
        color: [f64; 3],
        sh_degree: usize,
    ) -> Self {
        let mut sh = vec![[0.0; 3]; sh_coeff_count(sh_degree)];
        sh[0] = crate::sh::dc_from_color(color);
        Self {
            position,
            opacity_logit: logit(opacity),
            scale_log: Vector3::repeat(sigma.ln()),
            rotation: Quaternion::identity(),
            sh,
        }
    }

    pub fn opacity(&self) -> f64 {
        logistic(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.scale_log.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    /// World-space covariance `R S S^T R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 && n.is_finite() {
            self.rotation /= n;
        } else {
            self.rotation = Quaternion::identity();
        }
    }

    /// Rounds every attribute to the nearest `f32`, the precision stored on disk.
    pub fn quantize(&mut self) {
        let q = |v: f64| v as f32 as f64;
        self.position = self.position.map(q);
        self.opacity_logit = q(self.opacity_logit);
        self.scale_log = self.scale_log.map(q);
        self.rotation = Quaternion::new(
            q(self.rotation.w),
            q(self.rotation.i),
            q(self.rotation.j),
            q(self.rotation.k),
        );
        for c in &mut self.sh {
            *c = c.map(q);
        }
    }

    fn all_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.scale_log.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }
}

/// An ordered set of Gaussians sharing one SH degree. Gaussians are never
/// reordered; only optional pruning during an edit removes any.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    sh_degree: usize,
}

impl GaussianScene {
    pub fn new(sh_degree: usize) -> Result<Self, SceneError> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(SceneError::ShDegree(sh_degree));
        }
        Ok(Self {
            gaussians: Vec::new(),
            sh_degree,
        })
    }

    pub fn from_gaussians(sh_degree: usize, gaussians: Vec<Gaussian>) -> Result<Self, SceneError> {
        let mut scene = Self::new(sh_degree)?;
        for g in gaussians {
            scene.push(g)?;
        }
        Ok(scene)
    }

    pub fn push(&mut self, g: Gaussian) -> Result<usize, SceneError> {
        let expected = sh_coeff_count(self.sh_degree);
        let index = self.gaussians.len();
        if g.sh.len() != expected {
            return Err(SceneError::ShLength {
                index,
                found: g.sh.len(),
                expected,
            });
        }
        if !g.all_finite() {
            return Err(SceneError::Validation {
                vertex: index,
                message: "non-finite attribute".into(),
            });
        }
        self.gaussians.push(g);
        Ok(index)
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    /// Mutable access to the attribute values. The list itself cannot grow
    /// or shrink through this slice.
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn get(&self, index: usize) -> Option<&Gaussian> {
        self.gaussians.get(index)
    }

    /// Keeps the Gaussians with `keep[i]`, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.gaussians.len());
        let mut it = keep.iter();
        self.gaussians.retain(|_| *it.next().unwrap());
    }

    pub fn quantize(&mut self) {
        self.gaussians.iter_mut().for_each(Gaussian::quantize);
    }

    /// Largest distance from the centroid to any Gaussian center. Scales the
    /// position learning rate.
    pub fn extent(&self) -> f64 {
        if self.gaussians.is_empty() {
            return 1.0;
        }
        let n = self.gaussians.len() as f64;
        let mean = self
            .gaussians
            .iter()
            .fold(Vector3::zeros(), |acc, g| acc + g.position)
            / n;
        self.gaussians
            .iter()
            .map(|g| (g.position - mean).norm())
            .fold(0.0, f64::max)
    }
}

/// Oriented 3D box used to select the region to edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxSpec", into = "BoxSpec")]
pub struct BoundingBox3D {
    center: Vector3<f64>,
    half_extents: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

impl BoundingBox3D {
    pub fn new(
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        orientation: Quaternion<f64>,
    ) -> Result<Self, SceneError> {
        if !center.iter().all(|v| v.is_finite()) {
            return Err(SceneError::InvalidBox("center must be finite".into()));
        }
        if !half_extents.iter().all(|&v| v.is_finite() && v > 0.0) {
            return Err(SceneError::InvalidBox(
                "half extents must be positive".into(),
            ));
        }
        let n = orientation.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(SceneError::InvalidBox(
                "orientation must be a non-zero quaternion".into(),
            ));
        }
        Ok(Self {
            center,
            half_extents,
            orientation: UnitQuaternion::from_quaternion(orientation),
        })
    }

    pub fn axis_aligned(center: Vector3<f64>, half_extents: Vector3<f64>) -> Result<Self, SceneError> {
        Self::new(center, half_extents, Quaternion::identity())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        self.half_extents
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.orientation
    }

    /// Expresses a world point in the box frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(p - self.center))
    }

    /// Inclusive point-in-box test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    /// The eight corners in world coordinates.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.half_extents;
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            self.center + self.orientation * Vector3::new(sx * h.x, sy * h.y, sz * h.z)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoxSpec {
    center: [f64; 3],
    half_extents: [f64; 3],
    /// (w, x, y, z)
    #[serde(default = "identity_quat")]
    orientation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<BoxSpec> for BoundingBox3D {
    type Error = SceneError;

    fn try_from(s: BoxSpec) -> Result<Self, Self::Error> {
        let [w, x, y, z] = s.orientation;
        Self::new(
            Vector3::from(s.center),
            Vector3::from(s.half_extents),
            Quaternion::new(w, x, y, z),
        )
    }
}

impl From<BoundingBox3D> for BoxSpec {
    fn from(b: BoundingBox3D) -> Self {
        let q = b.orientation.quaternion();
        BoxSpec {
            center: b.center.into(),
            half_extents: b.half_extents.into(),
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_identities() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!((logit(logistic(1.7)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn covariance_is_spd() {
        let g = Gaussian {
            position: Vector3::zeros(),
            opacity_logit: 0.0,
            scale_log: Vector3::new(-1.0, 0.2, -3.0),
            rotation: Quaternion::new(0.3, -0.5, 0.7, 0.1),
            sh: vec![[0.0; 3]],
        };
        let c = g.covariance();
        assert!((c - c.transpose()).norm() < 1e-12);
        let eig = c.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn rotation_matrix_matches_nalgebra() {
        let q = Quaternion::new(0.3, -0.5, 0.7, 0.1);
        let reference = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        assert!((rotation_matrix(&q) - reference.matrix()).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(BoundingBox3D::axis_aligned(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0)).is_err());
        assert!(BoundingBox3D::new(Vector3::zeros(), Vector3::repeat(1.0), Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rejects_wrong_sh_length() {
        let mut scene = GaussianScene::new(1).unwrap();
        let g = Gaussian::isotropic(Vector3::zeros(), 0.1, 0.5, [0.5; 3], 0);
        assert!(matches!(scene.push(g), Err(SceneError::ShLength { expected: 4, .. })));
        assert!(GaussianScene::new(4).is_err());
    }
}
