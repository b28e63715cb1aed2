use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{RenderError, RenderSettings};
use crate::camera::{CameraPose, Intrinsics, NEAR_PLANE};
use crate::scene::Gaussian;
use crate::sh;

/// A Gaussian projected into one view.
#[derive(Debug, Clone)]
pub struct Splat {
    pub index: usize,
    pub depth: f64,
    pub mean: Vector2<f64>,
    /// Inverse screen covariance as (a, b, c) of `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Channels whose color was not clamped (gradient passes through).
    pub color_active: [bool; 3],
    /// Inclusive pixel bounds `[x0, x1] x [y0, y1]`; empty when `x0 > x1`.
    pub x_range: (i64, i64),
    pub y_range: (i64, i64),
    pub(crate) p_cam: Vector3<f64>,
    pub(crate) jac: Matrix2x3<f64>,
    pub(crate) cov_cam: Matrix3<f64>,
    pub(crate) view_dir: Vector3<f64>,
    pub(crate) view_dist: f64,
}

impl Splat {
    /// Squared Mahalanobis distance of pixel center `(x+0.5, y+0.5)`.
    #[inline]
    pub fn power(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let [a, b, c] = self.conic;
        (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
    }
}

/// Projects one Gaussian. Returns `Ok(None)` when it is behind the near
/// plane or its support misses the image.
pub fn project_gaussian(
    g: &Gaussian,
    index: usize,
    pose: &CameraPose,
    k: &Intrinsics,
    cam_center: &Vector3<f64>,
    settings: &RenderSettings,
) -> Result<Option<Splat>, RenderError> {
    let w = pose.rotation_matrix();
    let p_cam = w * g.position + pose.translation;
    if p_cam.z <= NEAR_PLANE {
        return Ok(None);
    }
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let jac = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let cov_cam = w * g.covariance() * w.transpose();
    let cov2 = jac * cov_cam * jac.transpose() + Matrix2::identity() * settings.dilation;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det.is_finite() && det > 0.0 && cov2[(0, 0)] > 0.0) {
        return Err(RenderError::Numerical { index });
    }
    let inv_det = 1.0 / det;
    let conic = [cov2[(1, 1)] * inv_det, -cov2[(0, 1)] * inv_det, cov2[(0, 0)] * inv_det];
    if !conic.iter().all(|v| v.is_finite()) {
        return Err(RenderError::Numerical { index });
    }
    let mean = Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy);

    let (x_range, y_range) = match settings.cutoff_sigma {
        Some(n) => {
            // axis-aligned extent of the n-sigma ellipse
            let rx = n * cov2[(0, 0)].sqrt();
            let ry = n * cov2[(1, 1)].sqrt();
            let lo = |m: f64, r: f64| (m - r - 0.5).ceil() as i64;
            let hi = |m: f64, r: f64| (m + r - 0.5).floor() as i64;
            (
                (lo(mean.x, rx).max(0), hi(mean.x, rx).min(k.width as i64 - 1)),
                (lo(mean.y, ry).max(0), hi(mean.y, ry).min(k.height as i64 - 1)),
            )
        }
        None => ((0, k.width as i64 - 1), (0, k.height as i64 - 1)),
    };
    if x_range.0 > x_range.1 || y_range.0 > y_range.1 {
        return Ok(None);
    }

    let v = g.position - cam_center;
    let view_dist = v.norm();
    let view_dir = if view_dist > 0.0 { v / view_dist } else { Vector3::z() };
    let raw = sh::eval_raw(&g.sh, &view_dir);
    let color = raw.map(|c| c.clamp(0.0, 1.0));
    let color_active = raw.map(|c| c > 0.0 && c < 1.0);

    Ok(Some(Splat {
        index,
        depth: z,
        mean,
        conic,
        opacity: g.opacity(),
        color,
        color_active,
        x_range,
        y_range,
        p_cam,
        jac,
        cov_cam,
        view_dir,
        view_dist,
    }))
}

/// Projects the subset and orders it front to back (stable on ties).
pub(crate) fn project_sorted(
    gaussians: &[Gaussian],
    subset: &[usize],
    pose: &CameraPose,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> Result<Vec<Splat>, RenderError> {
    let center = pose.center();
    let mut splats = Vec::with_capacity(subset.len());
    for &i in subset {
        if let Some(s) = project_gaussian(&gaussians[i], i, pose, k, &center, settings)? {
            splats.push(s);
        }
    }
    // subset is ascending, so a stable sort breaks depth ties by index
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    Ok(splats)
}

/// For each image row, the depth-ordered positions (into `splats`) of the
/// splats whose vertical range covers it.
pub(crate) fn row_lists(splats: &[Splat], height: usize) -> Vec<Vec<u32>> {
    let mut rows = vec![Vec::new(); height];
    for (j, s) in splats.iter().enumerate() {
        for y in s.y_range.0..=s.y_range.1 {
            rows[y as usize].push(j as u32);
        }
    }
    rows
}
