use rayon::prelude::*;

use super::project::{project_sorted, row_lists, Splat};
use super::{resolve_subset, RenderError, RenderOutput, RenderSettings};
use crate::camera::{CameraPose, Intrinsics};
use crate::image::{Mask, RgbImage, ScalarImage};
use crate::scene::GaussianScene;

/// Visits the splats that contribute to pixel `(x, y)` in compositing order,
/// passing `(splat position, sigma, gaussian falloff, transmittance before)`.
/// Returns the final transmittance.
#[inline]
pub(crate) fn composite_pixel(
    x: usize,
    y: usize,
    row: &[u32],
    splats: &[Splat],
    settings: &RenderSettings,
    mut visit: impl FnMut(usize, f64, f64, f64),
) -> f64 {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let xi = x as i64;
    let cutoff = settings.cutoff_sigma.map(|n| n * n);
    let mut t = 1.0;
    for &j in row {
        let s = &splats[j as usize];
        if xi < s.x_range.0 || xi > s.x_range.1 {
            continue;
        }
        let (power, _, _) = s.power(px, py);
        if cutoff.is_some_and(|c| power > c) {
            continue;
        }
        let falloff = (-0.5 * power).exp();
        let sigma = s.opacity * falloff;
        visit(j as usize, sigma, falloff, t);
        t *= 1.0 - sigma;
        if t < settings.min_transmittance {
            break;
        }
    }
    t
}

/// Renders `subset` (all Gaussians when `None`) over a constant background.
pub fn render(
    scene: &GaussianScene,
    subset: Option<&[usize]>,
    pose: &CameraPose,
    k: &Intrinsics,
    background: [f64; 3],
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    k.validate()?;
    let subset = resolve_subset(scene, subset)?;
    let splats = project_sorted(scene.gaussians(), &subset, pose, k, settings)?;
    let rows = row_lists(&splats, k.height);
    let (w, h) = (k.width, k.height);
    let mut rgb = RgbImage::zeros(w, h);
    let mut alpha = ScalarImage::zeros(w, h);
    rgb.data
        .par_chunks_mut(w * 3)
        .zip(alpha.data.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rgb_row, alpha_row))| {
            for x in 0..w {
                let mut c = [0.0; 3];
                let t = composite_pixel(x, y, &rows[y], &splats, settings, |j, sigma, _, t| {
                    let s = &splats[j];
                    for ch in 0..3 {
                        c[ch] += s.color[ch] * sigma * t;
                    }
                });
                for ch in 0..3 {
                    rgb_row[x * 3 + ch] = c[ch] + t * background[ch];
                }
                alpha_row[x] = 1.0 - t;
            }
        });
    Ok(RenderOutput {
        rgb,
        alpha,
        depth_order: splats.iter().map(|s| s.index).collect(),
    })
}

/// Opacity mask of `subset` rendered alone: `alpha > tau`.
pub fn render_instance_mask(
    scene: &GaussianScene,
    subset: &[usize],
    pose: &CameraPose,
    k: &Intrinsics,
    tau: f64,
    settings: &RenderSettings,
) -> Result<Mask, RenderError> {
    let out = render(scene, Some(subset), pose, k, [0.0; 3], settings)?;
    Ok(out.alpha.threshold(tau))
}
