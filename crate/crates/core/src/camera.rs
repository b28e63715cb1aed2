//! Pinhole cameras, view sampling and box-to-mask projection.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Mask;
use crate::scene::BoundingBox3D;

/// Points closer than this (camera-frame z) are clipped or culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("invalid camera configuration: {0}")]
    Config(String),
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("box lies entirely behind the near plane")]
    EmptyProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels, principal point at the image center, vertical field
    /// of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_y_deg: f64) -> Result<Self, CameraError> {
        if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
            return Err(CameraError::Intrinsics(format!("fov {fov_y_deg} not in (0, 180)")));
        }
        let f = height as f64 / (2.0 * (fov_y_deg.to_radians() / 2.0).tan());
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::Intrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Intrinsics("image size must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(CameraError::Intrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Pixel coordinates of a camera-frame point (pixel `i` spans `[i, i+1)`).
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`; the camera
/// looks down +z with +y pointing down the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target` with `up` as the world up vector.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, CameraError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(CameraError::Config("eye coincides with look-at target".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(CameraError::Config("view direction is parallel to the up vector".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Ok(Self {
            rotation,
            translation: -(rotation * eye),
        })
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn to_record(&self, intrinsics: Intrinsics) -> PoseRecord {
        let q = self.rotation.quaternion();
        PoseRecord {
            quat: [q.w, q.i, q.j, q.k],
            trans: self.translation.into(),
            intrinsics,
        }
    }
}

/// JSON form of a pose with its intrinsics; `quat` is (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
    pub intrinsics: Intrinsics,
}

impl PoseRecord {
    pub fn pose(&self) -> Result<CameraPose, CameraError> {
        let [w, x, y, z] = self.quat;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(CameraError::Config("pose quaternion must be non-zero".into()));
        }
        Ok(CameraPose {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::from(self.trans),
        })
    }
}

/// Spherical view distribution around a target point. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSamplerConfig {
    /// Defaults to the edit box center when unset.
    pub look_at: Option<[f64; 3]>,
    pub radius: [f64; 2],
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub grid_interval: f64,
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self {
            look_at: None,
            radius: [3.0, 4.0],
            elevation: [-30.0, 60.0],
            azimuth: [0.0, 360.0],
            grid_interval: 30.0,
        }
    }
}

impl PoseSamplerConfig {
    pub fn target(&self) -> Vector3<f64> {
        self.look_at.map(Vector3::from).unwrap_or_else(Vector3::zeros)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let [r0, r1] = self.radius;
        if !(r0 > 0.0 && r1 >= r0 && r1.is_finite()) {
            return Err(CameraError::Config(format!("radius range [{r0}, {r1}] is invalid")));
        }
        let [e0, e1] = self.elevation;
        if !(e0 <= e1 && e0 > -90.0 && e1 < 90.0) {
            return Err(CameraError::Config(format!(
                "elevation range [{e0}, {e1}] must be ordered and inside (-90, 90)"
            )));
        }
        let [a0, a1] = self.azimuth;
        if !(a0 <= a1 && a1 - a0 <= 360.0 && a0.is_finite() && a1.is_finite()) {
            return Err(CameraError::Config(format!("azimuth range [{a0}, {a1}] is invalid")));
        }
        Ok(())
    }

    fn pose_at(&self, radius: f64, elevation_deg: f64, azimuth_deg: f64) -> Result<CameraPose, CameraError> {
        let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        let dir = Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        let target = self.target();
        CameraPose::look_at(target + radius * dir, target, Vector3::y())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draws radius, elevation and azimuth uniformly from the configured ranges.
pub fn sample_random_pose<R: Rng + ?Sized>(cfg: &PoseSamplerConfig, rng: &mut R) -> Result<CameraPose, CameraError> {
    cfg.validate()?;
    let radius = uniform(rng, cfg.radius);
    let elevation = uniform(rng, cfg.elevation);
    let azimuth = uniform(rng, cfg.azimuth);
    cfg.pose_at(radius, elevation, azimuth)
}

fn grid_values([lo, hi]: [f64; 2], interval: f64, wrap: bool, what: &str) -> Result<Vec<f64>, CameraError> {
    let span = hi - lo;
    let steps = span / interval;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(CameraError::Config(format!(
            "grid interval {interval} does not divide the {what} span {span}"
        )));
    }
    let mut n = steps.round() as usize + 1;
    // a full turn would repeat the first azimuth
    if wrap && (span - 360.0).abs() < 1e-9 {
        n -= 1;
    }
    Ok((0..n).map(|k| lo + k as f64 * interval).collect())
}

/// Every (elevation, azimuth) grid point at the mid radius, elevation-major.
pub fn sample_refinement_grid(cfg: &PoseSamplerConfig) -> Result<Vec<CameraPose>, CameraError> {
    cfg.validate()?;
    if !(cfg.grid_interval > 0.0) {
        return Err(CameraError::Config("grid interval must be positive".into()));
    }
    let elevations = grid_values(cfg.elevation, cfg.grid_interval, false, "elevation")?;
    let azimuths = grid_values(cfg.azimuth, cfg.grid_interval, true, "azimuth")?;
    let radius = 0.5 * (cfg.radius[0] + cfg.radius[1]);
    let mut poses = Vec::with_capacity(elevations.len() * azimuths.len());
    for &el in &elevations {
        for &az in &azimuths {
            poses.push(cfg.pose_at(radius, el, az)?);
        }
    }
    Ok(poses)
}

fn cross2(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
];

/// Rasterizes the projected box: pixels whose centers fall inside the convex
/// hull of the near-plane-clipped corners.
pub fn project_box(bbox: &BoundingBox3D, pose: &CameraPose, k: &Intrinsics) -> Result<Mask, CameraError> {
    k.validate()?;
    let cam: Vec<Vector3<f64>> = bbox.corners().iter().map(|c| pose.world_to_camera(c)).collect();
    if cam.iter().all(|p| p.z <= NEAR_PLANE) {
        return Err(CameraError::EmptyProjection);
    }
    let mut pts: Vec<Vector3<f64>> = cam.iter().copied().filter(|p| p.z > NEAR_PLANE).collect();
    for &(a, b) in &BOX_EDGES {
        let (pa, pb) = (cam[a], cam[b]);
        if (pa.z > NEAR_PLANE) != (pb.z > NEAR_PLANE) {
            let t = (NEAR_PLANE - pa.z) / (pb.z - pa.z);
            let mut p = pa + t * (pb - pa);
            p.z = NEAR_PLANE;
            pts.push(p);
        }
    }
    let hull = convex_hull(pts.iter().map(|p| k.project(p)).collect());
    let mut mask = Mask::new(k.width, k.height, false);
    if hull.len() < 3 {
        return Ok(mask);
    }
    let (mut lo, mut hi) = (hull[0], hull[0]);
    for p in &hull {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let x0 = (lo.x - 0.5).ceil().max(0.0) as usize;
    let y0 = (lo.y - 0.5).ceil().max(0.0) as usize;
    let x1 = ((hi.x - 0.5).floor()).min(k.width as f64 - 1.0);
    let y1 = ((hi.y - 0.5).floor()).min(k.height as f64 - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return Ok(mask);
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..hull.len()).all(|i| cross2(hull[i], hull[(i + 1) % hull.len()], c) >= -1e-9);
            if inside {
                mask.data[y * k.width + x] = true;
            }
        }
    }
    Ok(mask)
}
