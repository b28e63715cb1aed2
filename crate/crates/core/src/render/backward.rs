use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::forward::composite_pixel;
use super::project::{project_sorted, row_lists, Splat};
use super::{
    resolve_subset, AttributeGradients, RenderError, RenderSettings, OFF_OPACITY, OFF_POSITION,
    OFF_ROTATION, OFF_SCALE, OFF_SH,
};
use crate::camera::{CameraPose, Intrinsics};
use crate::image::RgbImage;
use crate::scene::{Gaussian, GaussianScene};
use crate::sh;

/// Rows per reduction chunk. Fixed so that the summation order, and hence
/// the result, does not depend on the thread count.
const ROWS_PER_CHUNK: usize = 4;

/// Screen-space gradient accumulator for one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    /// d/d(a, b, c) of the conic, `b` being the off-diagonal entry.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.mean[i] += o.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
    }
}

/// Adjoint of [`super::render`]: gradients of `sum(grad_rgb * rgb)` with
/// respect to every attribute of the rendered Gaussians. Gaussians outside
/// `subset` get exactly zero.
pub fn render_backward(
    scene: &GaussianScene,
    subset: Option<&[usize]>,
    pose: &CameraPose,
    k: &Intrinsics,
    background: [f64; 3],
    grad_rgb: &RgbImage,
    settings: &RenderSettings,
) -> Result<AttributeGradients, RenderError> {
    k.validate()?;
    if (grad_rgb.width, grad_rgb.height) != (k.width, k.height) {
        return Err(RenderError::GradientShape {
            found: (grad_rgb.width, grad_rgb.height),
            expected: (k.width, k.height),
        });
    }
    let subset = resolve_subset(scene, subset)?;
    let splats = project_sorted(scene.gaussians(), &subset, pose, k, settings)?;
    let rows = row_lists(&splats, k.height);
    let w = k.width;

    let row_ids: Vec<usize> = (0..k.height).collect();
    let partials: Vec<Vec<SplatGrad>> = row_ids
        .par_chunks(ROWS_PER_CHUNK)
        .map(|chunk| {
            let mut acc = vec![SplatGrad::default(); splats.len()];
            let mut hits: Vec<(usize, f64, f64, f64)> = Vec::new();
            for &y in chunk {
                for x in 0..w {
                    let g = grad_rgb.pixel(x, y);
                    if g == [0.0; 3] {
                        continue;
                    }
                    hits.clear();
                    composite_pixel(x, y, &rows[y], &splats, settings, |j, sigma, falloff, t| {
                        hits.push((j, sigma, falloff, t))
                    });
                    backprop_pixel(x, y, &hits, background, g, &splats, &mut acc);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![SplatGrad::default(); splats.len()];
    for part in &partials {
        for (a, p) in screen.iter_mut().zip(part) {
            a.add(p);
        }
    }

    let mut grads = AttributeGradients::for_scene(scene);
    for (s, sg) in splats.iter().zip(&screen) {
        chain_to_attributes(&scene.gaussians()[s.index], s, sg, pose, k, grads.gaussian_mut(s.index));
    }
    Ok(grads)
}

fn backprop_pixel(
    x: usize,
    y: usize,
    hits: &[(usize, f64, f64, f64)],
    background: [f64; 3],
    g: [f64; 3],
    splats: &[Splat],
    acc: &mut [SplatGrad],
) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    // color seen behind the current splat, in units of its own transmittance
    let mut behind = background;
    for &(j, sigma, falloff, t) in hits.iter().rev() {
        let s = &splats[j];
        let a = &mut acc[j];
        let mut dsigma = 0.0;
        for ch in 0..3 {
            a.color[ch] += sigma * t * g[ch];
            dsigma += t * (s.color[ch] - behind[ch]) * g[ch];
            behind[ch] = s.color[ch] * sigma + (1.0 - sigma) * behind[ch];
        }
        a.opacity += dsigma * falloff;
        let dpower = -0.5 * dsigma * sigma;
        let (_, dx, dy) = s.power(px, py);
        let [ca, cb, cc] = s.conic;
        a.mean[0] -= dpower * 2.0 * (ca * dx + cb * dy);
        a.mean[1] -= dpower * 2.0 * (cb * dx + cc * dy);
        a.conic[0] += dpower * dx * dx;
        a.conic[1] += dpower * 2.0 * dx * dy;
        a.conic[2] += dpower * dy * dy;
    }
}

/// Sum over entries of `g ⊙ ∂R/∂q` for each normalized-quaternion component.
fn rotation_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dot = |m: [[f64; 3]; 3]| -> f64 {
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += 2.0 * m[r][c] * g[(r, c)];
            }
        }
        s
    };
    [
        dot([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]),
        dot([[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]]),
        dot([[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]]),
        dot([[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]]),
    ]
}

fn chain_to_attributes(
    g: &Gaussian,
    s: &Splat,
    sg: &SplatGrad,
    pose: &CameraPose,
    k: &Intrinsics,
    out: &mut [f64],
) {
    let wr = pose.rotation_matrix();

    // color -> SH coefficients and view direction
    let dcol: [f64; 3] = std::array::from_fn(|c| if s.color_active[c] { sg.color[c] } else { 0.0 });
    let count = g.sh.len();
    let basis = sh::basis(&s.view_dir, count);
    let mut ddir = Vector3::zeros();
    if count > 1 {
        let bgrad = sh::basis_grad(&s.view_dir, count);
        for kk in 1..count {
            let w = (0..3).map(|c| g.sh[kk][c] * dcol[c]).sum::<f64>();
            ddir += w * Vector3::from(bgrad[kk]);
        }
    }
    for kk in 0..count {
        for c in 0..3 {
            out[OFF_SH + 3 * kk + c] = basis[kk] * dcol[c];
        }
    }
    let mut dpos = if s.view_dist > 0.0 {
        (ddir - s.view_dir * s.view_dir.dot(&ddir)) / s.view_dist
    } else {
        Vector3::zeros()
    };

    // opacity
    let alpha = s.opacity;
    out[OFF_OPACITY] = sg.opacity * alpha * (1.0 - alpha);

    // conic -> screen covariance -> camera covariance and Jacobian
    let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);
    let g_cov_cam = s.jac.transpose() * g_cov2 * s.jac;
    let g_jac = 2.0 * g_cov2 * s.jac * s.cov_cam;
    let g_cov = wr.transpose() * g_cov_cam * wr;

    // covariance -> scale and rotation
    let rot = g.rotation_matrix();
    let scale = g.scale();
    let m = rot * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov * m;
    let mut g_rot = Matrix3::zeros();
    for i in 0..3 {
        let mut ds = 0.0;
        for j in 0..3 {
            ds += g_m[(j, i)] * rot[(j, i)];
            g_rot[(j, i)] = g_m[(j, i)] * scale[i];
        }
        out[OFF_SCALE + i] = ds * scale[i];
    }
    let norm = g.rotation.norm();
    let qn = [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k].map(|v| v / norm);
    let dqn = rotation_grad(qn, &g_rot);
    let proj: f64 = (0..4).map(|i| qn[i] * dqn[i]).sum();
    for i in 0..4 {
        out[OFF_ROTATION + i] = (dqn[i] - qn[i] * proj) / norm;
    }

    // mean and Jacobian -> camera-space position
    let (x, y, z) = (s.p_cam.x, s.p_cam.y, s.p_cam.z);
    let (fx, fy) = (k.fx, k.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut dcam = Vector3::new(
        fx / z * sg.mean[0],
        fy / z * sg.mean[1],
        -fx * x / z2 * sg.mean[0] - fy * y / z2 * sg.mean[1],
    );
    dcam.x += g_jac[(0, 2)] * (-fx / z2);
    dcam.y += g_jac[(1, 2)] * (-fy / z2);
    dcam.z += g_jac[(0, 0)] * (-fx / z2)
        + g_jac[(0, 2)] * (2.0 * fx * x / z3)
        + g_jac[(1, 1)] * (-fy / z2)
        + g_jac[(1, 2)] * (2.0 * fy * y / z3);
    dpos += wr.transpose() * dcam;
    out[OFF_POSITION..OFF_POSITION + 3].copy_from_slice(dpos.as_slice());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render;
    use nalgebra::Vector3;

    fn k32() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let g = Gaussian::isotropic(Vector3::new(0.1, 0.0, 4.0), 0.2, 0.6, [0.3, 0.5, 0.7], 1);
        let scene = GaussianScene::from_gaussians(1, vec![g]).unwrap();
        let grads = render_backward(&scene, None, &CameraPose::identity(), &k32(), [0.2; 3], &RgbImage::zeros(32, 32), &RenderSettings::default()).unwrap();
        assert!(grads.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dc_gradient_single_term() {
        let mut g = Gaussian::isotropic(Vector3::new(0.05, 0.05, 4.0), 0.1, 0.8, [0.3, 0.5, 0.7], 0);
        g.position.x = 0.5 * 4.0 / 40.0;
        g.position.y = 0.5 * 4.0 / 40.0;
        let scene = GaussianScene::from_gaussians(0, vec![g]).unwrap();
        let mut up = RgbImage::zeros(32, 32);
        up.set_pixel(16, 16, [1.0, 0.0, 0.0]);
        let settings = RenderSettings::default();
        let grads = render_backward(&scene, None, &CameraPose::identity(), &k32(), [0.0; 3], &up, &settings).unwrap();
        // sigma at the mean is the opacity; d color / d dc = C0
        let expected = 0.8 * sh::C0;
        assert!((grads.sh(0, 0)[0] - expected).abs() < 1e-12);
        assert_eq!(grads.sh(0, 0)[1], 0.0);
        let out = render(&scene, None, &CameraPose::identity(), &k32(), [0.0; 3], &settings).unwrap();
        assert!((out.alpha.get(16, 16) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wrong_gradient_shape() {
        let scene = GaussianScene::new(0).unwrap();
        let err = render_backward(&scene, None, &CameraPose::identity(), &k32(), [0.0; 3], &RgbImage::zeros(8, 8), &RenderSettings::default());
        assert!(matches!(err, Err(RenderError::GradientShape { .. })));
    }
}
