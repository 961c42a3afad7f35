//! Test-only oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls into the rasterizer; projection and compositing are
//! rebuilt from nalgebra primitives so the comparisons stay independent.

#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use sgs_core::camera::CameraModel;
use sgs_core::linalg::{Mat3, Quat, Vec3};
use sgs_core::raster::GradientBuffer;
use sgs_core::surfel::GaussianSurfel;

pub const C0: f64 = 0.282_094_791_773_878_14;
pub const C1: f64 = 0.488_602_511_902_919_9;

pub struct BruteOutput {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub normal: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// Contributing surfels per pixel in compositing order.
    pub active: Vec<Vec<usize>>,
    /// Surfel with the largest compositing weight per pixel.
    pub top: Vec<Option<usize>>,
}

struct Splat {
    index: usize,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    depth: f64,
    normal: Vector3<f64>,
    color: [f64; 3],
    opacity: f64,
}

fn na_rot(q: Quat<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q.w, q.x, q.y, q.z))
        .to_rotation_matrix()
        .into_inner()
}

fn na_mat(m: &Mat3<f64>) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m.m[i][j])
}

fn na_vec(v: Vec3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

fn oracle_splat(i: usize, s: &GaussianSurfel<f64>, cam: &CameraModel<f64>) -> Option<Splat> {
    let rs = na_rot(s.rotation);
    let (su, sv) = (s.log_scales[0].exp(), s.log_scales[1].exp());
    let cov = rs * Matrix3::from_diagonal(&Vector3::new(su * su, sv * sv, 0.0)) * rs.transpose();
    let r = na_mat(&cam.rotation);
    let pc = r * na_vec(s.position) + na_vec(cam.translation);
    if pc.z <= 0.01 {
        return None;
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let cov2 = j * r * cov * r.transpose() * j.transpose() + Matrix2::identity() * 0.3;
    let conic = cov2.try_inverse()?;
    let eye = -(r.transpose() * na_vec(cam.translation));
    let dir = (na_vec(s.position) - eye).normalize();
    let color = raw_color(s, dir).map(|v| v.max(0.0));
    let sig = 1.0 / (1.0 + (-s.opacity_logit).exp());
    Some(Splat {
        index: i,
        mean: Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy),
        conic,
        depth: z,
        normal: r * rs.column(2),
        color,
        opacity: sig.min(0.999),
    })
}

/// Real spherical harmonics through degree 3, each normalized from its
/// closed form, in the usual sign convention.
fn real_sh(d: Vector3<f64>) -> [f64; 16] {
    use std::f64::consts::PI;
    let (x, y, z) = (d.x, d.y, d.z);
    let k = |num: f64, den: f64| (num / (den * PI)).sqrt();
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        k(15.0, 4.0) * x * y,
        -k(15.0, 4.0) * y * z,
        k(5.0, 16.0) * (3.0 * z * z - 1.0),
        -k(15.0, 4.0) * x * z,
        k(15.0, 16.0) * (x * x - y * y),
        -k(35.0, 32.0) * y * (3.0 * x * x - y * y),
        k(105.0, 4.0) * x * y * z,
        -k(21.0, 32.0) * y * (5.0 * z * z - 1.0),
        k(7.0, 16.0) * z * (5.0 * z * z - 3.0),
        -k(21.0, 32.0) * x * (5.0 * z * z - 1.0),
        k(105.0, 16.0) * z * (x * x - y * y),
        -k(35.0, 32.0) * x * (x * x - 3.0 * y * y),
    ]
}

fn raw_color(s: &GaussianSurfel<f64>, dir: Vector3<f64>) -> [f64; 3] {
    let mut color = [0.0; 3];
    for (ch, c) in color.iter_mut().enumerate() {
        let mut v = 0.5 + C0 * s.sh[ch];
        for (i, b) in real_sh(dir).iter().enumerate().take(s.sh.len() / 3).skip(1) {
            v += b * s.sh[3 * i + ch];
        }
        *c = v;
    }
    color
}

/// Which SH colors sit below the clamp and which opacities hit the cap.
pub fn clamp_signature(surfels: &[GaussianSurfel<f64>], cam: &CameraModel<f64>) -> Vec<bool> {
    let r = na_mat(&cam.rotation);
    let eye = -(r.transpose() * na_vec(cam.translation));
    let mut out = Vec::new();
    for s in surfels {
        let dir = (na_vec(s.position) - eye).normalize();
        out.extend(raw_color(s, dir).map(|v| v < 0.0));
        out.push(1.0 / (1.0 + (-s.opacity_logit).exp()) > 0.999);
    }
    out
}

/// Per-pixel compositing with an exact depth sort and no tiling.
pub fn brute_render(
    surfels: &[GaussianSurfel<f64>],
    cam: &CameraModel<f64>,
    background: [f64; 3],
    early_exit: bool,
) -> BruteOutput {
    let splats: Vec<Splat> = surfels
        .iter()
        .enumerate()
        .filter_map(|(i, s)| oracle_splat(i, s, cam))
        .collect();
    let (w, h) = (cam.width, cam.height);
    let mut out = BruteOutput {
        width: w,
        height: h,
        color: vec![[0.0; 3]; w * h],
        depth: vec![0.0; w * h],
        normal: vec![[0.0; 3]; w * h],
        alpha: vec![0.0; w * h],
        active: vec![Vec::new(); w * h],
        top: vec![None; w * h],
    };
    for py in 0..h {
        for px in 0..w {
            let x = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut hits: Vec<(f64, usize, f64, &Splat)> = Vec::new();
            for s in &splats {
                let d = x - s.mean;
                let m = (d.transpose() * s.conic * d)[0];
                if m > 9.0 {
                    continue;
                }
                let a = s.opacity * (-0.5 * m).exp();
                if a < 1.0 / 255.0 {
                    continue;
                }
                hits.push((s.depth, s.index, a, s));
            }
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let p = py * w + px;
            let mut t = 1.0;
            let mut depth = 0.0;
            let mut best = 0.0;
            for (_, idx, a, s) in hits {
                let wk = a * t;
                for c in 0..3 {
                    out.color[p][c] += wk * s.color[c];
                    out.normal[p][c] += wk * s.normal[c];
                }
                depth += wk * s.depth;
                if out.top[p].is_none() || wk > best {
                    best = wk;
                    out.top[p] = Some(idx);
                }
                out.active[p].push(idx);
                t *= 1.0 - a;
                if early_exit && t < 1e-4 {
                    break;
                }
            }
            for (o, b) in out.color[p].iter_mut().zip(background) {
                *o += t * b;
            }
            out.alpha[p] = 1.0 - t;
            out.depth[p] = if out.alpha[p] > 1e-4 {
                depth / out.alpha[p]
            } else {
                0.0
            };
        }
    }
    out
}

pub fn random_unit_quat(rng: &mut impl Rng) -> Quat<f64> {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.2 && q.norm() <= 1.0 {
            return q.normalize();
        }
    }
}

/// Random camera looking down +z and `n` surfels that project into its image.
pub fn random_scene(
    rng: &mut impl Rng,
    n: usize,
    width: usize,
    height: usize,
    sh_degree: usize,
) -> (Vec<GaussianSurfel<f64>>, CameraModel<f64>) {
    let f = width as f64 * rng.random_range(1.0..1.5);
    let mut cam = CameraModel::simple(f, width, height);
    cam.cx += rng.random_range(-1.0..1.0);
    cam.cy += rng.random_range(-1.0..1.0);
    // mild random pose
    let q = Quat::from_axis_angle(
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
        rng.random_range(-0.2..0.2),
    );
    cam.rotation = q.to_matrix();
    cam.translation = Vec3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        0.0,
    );
    let ncoef = 3 * (sh_degree + 1) * (sh_degree + 1);
    let surfels = (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            let u = rng.random_range(0.0..width as f64);
            let v = rng.random_range(0.0..height as f64);
            let p_cam = Vec3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
            let sigma_px = [rng.random_range(0.8..4.0), rng.random_range(0.8..4.0)];
            let mut sh: Vec<f64> = (0..ncoef).map(|_| rng.random_range(-0.3..0.3)).collect();
            for c in sh.iter_mut().take(3) {
                *c = rng.random_range(-1.0..1.0);
            }
            GaussianSurfel {
                position: cam.to_world(p_cam),
                rotation: random_unit_quat(rng),
                log_scales: [
                    (sigma_px[0] * z / cam.fx).ln(),
                    (sigma_px[1] * z / cam.fy).ln(),
                ],
                opacity_logit: rng.random_range(-1.5..2.5),
                sh,
            }
        })
        .collect();
    (surfels, cam)
}

/// One scalar parameter of a surfel set.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Position(usize, usize),
    Rotation(usize, usize),
    LogScale(usize, usize),
    Opacity(usize),
    Sh(usize, usize),
}

impl Param {
    pub fn all(surfels: &[GaussianSurfel<f64>]) -> Vec<Param> {
        let mut v = Vec::new();
        for (i, s) in surfels.iter().enumerate() {
            v.extend((0..3).map(|k| Param::Position(i, k)));
            v.extend((0..4).map(|k| Param::Rotation(i, k)));
            v.extend((0..2).map(|k| Param::LogScale(i, k)));
            v.push(Param::Opacity(i));
            v.extend((0..s.sh.len()).map(|k| Param::Sh(i, k)));
        }
        v
    }

    pub fn group(&self) -> &'static str {
        match self {
            Param::Position(..) => "position",
            Param::Rotation(..) => "rotation",
            Param::LogScale(..) => "log_scale",
            Param::Opacity(..) => "opacity",
            Param::Sh(..) => "sh",
        }
    }

    pub fn nudge(&self, surfels: &mut [GaussianSurfel<f64>], h: f64) {
        match *self {
            Param::Position(i, k) => match k {
                0 => surfels[i].position.x += h,
                1 => surfels[i].position.y += h,
                _ => surfels[i].position.z += h,
            },
            Param::Rotation(i, k) => {
                let mut a = surfels[i].rotation.to_array();
                a[k] += h;
                surfels[i].rotation = Quat::from_array(a);
            }
            Param::LogScale(i, k) => surfels[i].log_scales[k] += h,
            Param::Opacity(i) => surfels[i].opacity_logit += h,
            Param::Sh(i, k) => surfels[i].sh[k] += h,
        }
    }

    pub fn read(&self, g: &GradientBuffer<f64>) -> f64 {
        match *self {
            Param::Position(i, k) => g.d_position[i][k],
            Param::Rotation(i, k) => g.d_rotation[i].to_array()[k],
            Param::LogScale(i, k) => g.d_log_scales[i][k],
            Param::Opacity(i) => g.d_opacity[i],
            Param::Sh(i, k) => g.sh(i)[k],
        }
    }
}

/// `|a − b| ≤ rtol · max(|a|, |b|) + atol`.
pub fn grad_close(analytic: f64, numeric: f64, rtol: f64, atol: f64) -> bool {
    (analytic - numeric).abs() <= rtol * analytic.abs().max(numeric.abs()) + atol
}

pub fn rel_err(analytic: f64, numeric: f64, atol: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d <= atol {
        0.0
    } else {
        d / analytic.abs().max(numeric.abs())
    }
}

/// Central difference of `f` along `param`, shrinking the step when the two
/// probes see different contribution sets (a support-boundary crossing).
pub fn central_difference(
    surfels: &[GaussianSurfel<f64>],
    param: Param,
    eps: f64,
    mut signature: impl FnMut(&[GaussianSurfel<f64>]) -> Vec<Vec<usize>>,
    mut f: impl FnMut(&[GaussianSurfel<f64>]) -> f64,
) -> f64 {
    let base = signature(surfels);
    let mut h = eps;
    loop {
        let mut plus = surfels.to_vec();
        param.nudge(&mut plus, h);
        let mut minus = surfels.to_vec();
        param.nudge(&mut minus, -h);
        let same = signature(&plus) == base && signature(&minus) == base;
        if same || h < eps * 1e-3 {
            return (f(&plus) - f(&minus)) / (2.0 * h);
        }
        h *= 0.1;
    }
}

/// Contributor lists plus the top-weight surfel of every pixel.
pub fn support_signature(
    surfels: &[GaussianSurfel<f64>],
    cam: &CameraModel<f64>,
) -> Vec<Vec<usize>> {
    let out = brute_render(surfels, cam, [0.0; 3], true);
    out.active
        .into_iter()
        .zip(out.top)
        .map(|(mut a, t)| {
            a.push(t.map_or(usize::MAX, |t| t + 1_000_000));
            a
        })
        .collect()
}

/// Sort-based percentile band mask, written without the library helpers.
pub fn oracle_confidence(depth: &[f64], tool: &[bool]) -> Vec<bool> {
    let mut v: Vec<f64> = depth.iter().copied().filter(|d| d.is_finite()).collect();
    if v.is_empty() {
        return vec![false; depth.len()];
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let i = h.floor() as usize;
        let j = (i + 1).min(v.len() - 1);
        v[i] + (h - i as f64) * (v[j] - v[i])
    };
    let (lo, hi) = (q(0.02), q(0.99));
    depth
        .iter()
        .zip(tool)
        .map(|(&d, &t)| !t && d.is_finite() && lo <= d && d <= hi)
        .collect()
}

/// Random frame stack with outliers, NaNs and random tool masks.
pub fn random_frames(
    rng: &mut impl Rng,
    count: usize,
    w: usize,
    h: usize,
) -> Vec<sgs_core::pimi::FrameBundle<f64>> {
    use sgs_core::image::{Image, Mask};
    (0..count)
        .map(|i| {
            let depth = (0..w * h)
                .map(|_| match rng.random_range(0..40) {
                    0 => f64::NAN,
                    1 => f64::INFINITY,
                    2 => 1e5,
                    _ => rng.random_range(0.5..3.0),
                })
                .collect();
            let cover = rng.random_range(0.0..0.6);
            FrameBundle {
                image: Image::from_vec(
                    w,
                    h,
                    3,
                    (0..3 * w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
                )
                .unwrap(),
                depth: Image::from_vec(w, h, 1, depth).unwrap(),
                tool_mask: Mask {
                    width: w,
                    height: h,
                    data: (0..w * h).map(|_| rng.random_bool(cover)).collect(),
                },
                timestamp: i as f64 / count as f64,
            }
        })
        .collect()
}

pub use sgs_core::pimi::FrameBundle;

pub mod objective;
