#![allow(dead_code)]

use gsedit_core::camera::{CameraPose, Intrinsics};
use gsedit_core::scene::{Gaussian, GaussianScene};
use gsedit_core::RgbImage;
use nalgebra::{Matrix2, Matrix3, Quaternion, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = (q.w * q.w + q.i * q.i + q.j * q.j + q.k * q.k).sqrt();
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

/// Degree 0 and 1 only, written out by hand.
fn sh_color(sh: &[[f64; 3]], d: &Vector3<f64>) -> [f64; 3] {
    let c0 = 0.5 / std::f64::consts::PI.sqrt();
    let c1 = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let mut v = c0 * sh[0][ch];
        if sh.len() >= 4 {
            v += -c1 * d.y * sh[1][ch] + c1 * d.z * sh[2][ch] - c1 * d.x * sh[3][ch];
        }
        out[ch] = (v + 0.5).clamp(0.0, 1.0);
    }
    out
}

struct Projected {
    depth: f64,
    index: usize,
    mean: [f64; 2],
    inv: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

/// Direct per-pixel evaluation of the compositing sum with no tiling, no
/// row lists and no bounding rectangles.
pub fn brute_force_render(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    background: [f64; 3],
    cutoff_sigma: Option<f64>,
) -> (RgbImage, Vec<f64>) {
    assert!(scene.sh_degree() <= 1, "oracle evaluates SH up to degree 1");
    let q = pose.rotation.quaternion();
    let w = quat_to_matrix(q);
    let t = pose.translation;
    let center = -(w.transpose() * t);
    let mut list = Vec::new();
    for (index, g) in scene.gaussians().iter().enumerate() {
        let p = w * g.position + t;
        if p.z <= 0.01 {
            continue;
        }
        let r = quat_to_matrix(&g.rotation);
        let s = Matrix3::from_diagonal(&g.scale_log.map(f64::exp));
        let cov = r * s * s * r.transpose();
        let jac = nalgebra::Matrix2x3::new(
            k.fx / p.z,
            0.0,
            -k.fx * p.x / (p.z * p.z),
            0.0,
            k.fy / p.z,
            -k.fy * p.y / (p.z * p.z),
        );
        let cov2 = jac * w * cov * w.transpose() * jac.transpose() + Matrix2::identity() * 0.3;
        let dir = (g.position - center).normalize();
        list.push(Projected {
            depth: p.z,
            index,
            mean: [k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy],
            inv: cov2.try_inverse().unwrap(),
            opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
            color: sh_color(&g.sh, &dir),
        });
    }
    list.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));

    let mut rgb = RgbImage::zeros(k.width, k.height);
    let mut alpha = vec![0.0; k.width * k.height];
    for y in 0..k.height {
        for x in 0..k.width {
            let mut c = [0.0; 3];
            let mut trans = 1.0;
            for p in &list {
                let d = nalgebra::Vector2::new(x as f64 + 0.5 - p.mean[0], y as f64 + 0.5 - p.mean[1]);
                let m = (d.transpose() * p.inv * d)[(0, 0)];
                if let Some(n) = cutoff_sigma {
                    if m > n * n {
                        continue;
                    }
                }
                let sigma = p.opacity * (-0.5 * m).exp();
                for ch in 0..3 {
                    c[ch] += p.color[ch] * sigma * trans;
                }
                trans *= 1.0 - sigma;
                if trans < 1e-4 {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += trans * background[ch];
            }
            rgb.set_pixel(x, y, c);
            alpha[y * k.width + x] = 1.0 - trans;
        }
    }
    (rgb, alpha)
}

pub fn random_quaternion<R: Rng>(rng: &mut R) -> Quaternion<f64> {
    let q = Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    if q.norm() < 0.1 {
        Quaternion::new(1.0, 0.0, 0.0, 0.0)
    } else {
        q
    }
}

/// Gaussians scattered in front of the identity camera, some partly or
/// fully off screen.
pub fn random_scene<R: Rng>(rng: &mut R, n: usize, sh_degree: usize) -> GaussianScene {
    let count = (sh_degree + 1) * (sh_degree + 1);
    let gs = (0..n)
        .map(|_| {
            let z = rng.gen_range(2.0..6.0);
            let mut sh = vec![[0.0; 3]; count];
            for c in sh.iter_mut() {
                *c = [rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6)];
            }
            for ch in 0..3 {
                sh[0][ch] = rng.gen_range(-2.0..2.0);
            }
            Gaussian {
                position: Vector3::new(rng.gen_range(-0.7..0.7) * z, rng.gen_range(-0.7..0.7) * z, z),
                opacity_logit: rng.gen_range(-2.0..5.0),
                scale_log: Vector3::new(
                    rng.gen_range(-3.5..-1.0),
                    rng.gen_range(-3.5..-1.0),
                    rng.gen_range(-3.5..-1.0),
                ),
                rotation: random_quaternion(rng),
                sh,
            }
        })
        .collect();
    GaussianScene::from_gaussians(sh_degree, gs).unwrap()
}

/// A camera near the identity looking roughly down +z.
pub fn random_pose<R: Rng>(rng: &mut R) -> CameraPose {
    let eye = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.0));
    let target = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 4.0);
    CameraPose::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scene tuned for finite differences: colors well inside (0, 1) so the
/// clamp never switches, moderate opacities so early termination never
/// triggers, and footprints of a few pixels.
pub fn fd_scene<R: Rng>(rng: &mut R, n: usize, sh_degree: usize) -> GaussianScene {
    let count = (sh_degree + 1) * (sh_degree + 1);
    let gs = (0..n)
        .map(|_| {
            let z = rng.gen_range(3.0..5.0);
            let mut sh = vec![[0.0; 3]; count];
            for c in sh.iter_mut().skip(1) {
                *c = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            }
            sh[0] = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            Gaussian {
                position: Vector3::new(rng.gen_range(-0.25..0.25) * z, rng.gen_range(-0.25..0.25) * z, z),
                opacity_logit: rng.gen_range(-1.5..1.5),
                scale_log: Vector3::new(
                    rng.gen_range(-2.0..-1.0),
                    rng.gen_range(-2.0..-1.0),
                    rng.gen_range(-2.0..-1.0),
                ),
                rotation: random_quaternion(rng),
                sh,
            }
        })
        .collect();
    GaussianScene::from_gaussians(sh_degree, gs).unwrap()
}

/// Attribute kinds in the order they appear in the flat gradient layout.
pub const ATTRIBUTE_KINDS: [&str; 5] = ["position", "opacity", "scale", "rotation", "sh"];

pub fn attribute_kind(slot: usize) -> usize {
    match slot {
        0..=2 => 0,
        3 => 1,
        4..=6 => 2,
        7..=10 => 3,
        _ => 4,
    }
}

fn param_mut(g: &mut Gaussian, slot: usize) -> &mut f64 {
    match slot {
        0..=2 => &mut g.position[slot],
        3 => &mut g.opacity_logit,
        4..=6 => &mut g.scale_log[slot - 4],
        7 => &mut g.rotation.w,
        8 => &mut g.rotation.i,
        9 => &mut g.rotation.j,
        10 => &mut g.rotation.k,
        s => {
            let k = (s - 11) / 3;
            &mut g.sh[k][(s - 11) % 3]
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub kinds_seen: [usize; 5],
}

/// Compares analytic gradients of `sum(w * rgb)` with central differences
/// at step `h`. A component passes when its relative error is below 1e-3,
/// or its absolute error is below 1e-5 where the gradient is below 1e-3.
pub fn finite_difference_check(
    scene: &GaussianScene,
    pose: &CameraPose,
    k: &Intrinsics,
    background: [f64; 3],
    weights: &RgbImage,
    h: f64,
) -> FdReport {
    use gsedit_core::render::{render, render_backward, RenderSettings};
    let settings = RenderSettings::untruncated();
    let loss = |s: &GaussianScene| -> f64 {
        let out = render(s, None, pose, k, background, &settings).unwrap();
        out.rgb.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
    };
    let grads = render_backward(scene, None, pose, k, background, weights, &settings).unwrap();
    let mut report = FdReport::default();
    let mut work = scene.clone();
    for i in 0..scene.len() {
        for slot in 0..grads.stride() {
            let orig = *param_mut(&mut work.gaussians_mut()[i], slot);
            *param_mut(&mut work.gaussians_mut()[i], slot) = orig + h;
            let plus = loss(&work);
            *param_mut(&mut work.gaussians_mut()[i], slot) = orig - h;
            let minus = loss(&work);
            *param_mut(&mut work.gaussians_mut()[i], slot) = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.gaussian(i)[slot];
            let err = (numeric - analytic).abs();
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale > 0.0 { err / scale } else { 0.0 };
            let ok = rel < 1e-3 || (scale < 1e-3 && err < 1e-5);
            report.checked += 1;
            report.kinds_seen[attribute_kind(slot)] += 1;
            if !ok {
                report.failures += 1;
                eprintln!("gaussian {i} slot {slot}: analytic {analytic:e} numeric {numeric:e}");
            }
            if scale >= 1e-3 {
                report.worst_rel = report.worst_rel.max(rel);
            }
        }
    }
    report
}
