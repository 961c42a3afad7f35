//! Two-target cosine consistency between rendered normals, the normal of the
//! dominant surfel and the normal implied by the rendered depth.

use super::Cosine;
use crate::camera::CameraModel;
use crate::image::{Image, Mask};
use crate::linalg::Vec3;
use crate::real::{lit, Real};

#[derive(Clone, Debug)]
pub struct NormalLoss<T> {
    pub value: T,
    pub d_normal: Image<T>,
    pub d_depth: Image<T>,
    pub d_top: Image<T>,
}

fn ray<T: Real>(cam: &CameraModel<T>, x: usize, y: usize) -> Vec3<T> {
    let half: T = lit(0.5);
    Vec3::new(
        (lit::<T>(x as f64) + half - cam.cx) / cam.fx,
        (lit::<T>(y as f64) + half - cam.cy) / cam.fy,
        T::one(),
    )
}

fn read3<T: Real>(img: &Image<T>, p: usize) -> Vec3<T> {
    Vec3::new(img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2])
}

fn add3<T: Real>(img: &mut Image<T>, p: usize, v: Vec3<T>) {
    img.data[3 * p] += v.x;
    img.data[3 * p + 1] += v.y;
    img.data[3 * p + 2] += v.z;
}

/// Central-difference tangents of the back-projected depth at an interior
/// pixel whose four neighbors are all covered.
fn tangents<T: Real>(
    depth: &Image<T>,
    alpha: &Image<T>,
    cam: &CameraModel<T>,
    x: usize,
    y: usize,
) -> Option<(Vec3<T>, Vec3<T>)> {
    let (w, h) = (depth.width, depth.height);
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return None;
    }
    let half: T = lit(0.5);
    let pts = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)];
    if pts.iter().any(|&(u, v)| alpha.data[v * w + u] <= half) {
        return None;
    }
    let at = |u: usize, v: usize| ray(cam, u, v) * depth.data[v * w + u];
    let tx = (at(x + 1, y) - at(x - 1, y)) * half;
    let ty = (at(x, y + 1) - at(x, y - 1)) * half;
    Some((tx, ty))
}

/// Depth-implied normals facing the camera; zero where undefined.
pub fn expected_normals<T: Real>(
    depth: &Image<T>,
    alpha: &Image<T>,
    cam: &CameraModel<T>,
) -> Image<T> {
    let (w, h) = (depth.width, depth.height);
    let mut out = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            if let Some((tx, ty)) = tangents(depth, alpha, cam, x, y) {
                if let Some(n) = (-tx.cross(ty)).try_normalize() {
                    add3(&mut out, y * w + x, n);
                }
            }
        }
    }
    out
}

/// `α·mean(1 − cos(n, n_top)) + β·mean(1 − cos(n, n_depth))`, each mean over
/// the covered, unmasked pixels where that target exists.
#[allow(clippy::too_many_arguments)]
pub fn loss_normal<T: Real>(
    normal: &Image<T>,
    depth: &Image<T>,
    alpha: &Image<T>,
    top_normal: &Image<T>,
    cam: &CameraModel<T>,
    tool_mask: Option<&Mask>,
    alpha_n: T,
    beta_n: T,
) -> NormalLoss<T> {
    let (w, h) = (normal.width, normal.height);
    let half: T = lit(0.5);
    let mut d_normal = Image::new(w, h, 3);
    let mut d_depth = Image::new(w, h, 1);
    let mut d_top = Image::new(w, h, 3);
    let mut med: Vec<(usize, Cosine<T>)> = Vec::new();
    let mut exp: Vec<(usize, usize, usize, Vec3<T>, Vec3<T>, Cosine<T>)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if alpha.data[p] <= half || tool_mask.is_some_and(|m| m.data[p]) {
                continue;
            }
            let n = read3(normal, p);
            if let Some(c) = Cosine::new(n, read3(top_normal, p)) {
                med.push((p, c));
            }
            if let Some((tx, ty)) = tangents(depth, alpha, cam, x, y) {
                if let Some(c) = Cosine::new(n, -tx.cross(ty)) {
                    exp.push((p, x, y, tx, ty, c));
                }
            }
        }
    }
    let mut value = T::zero();
    if !med.is_empty() {
        let k = alpha_n / lit(med.len() as f64);
        for (p, c) in &med {
            value += k * (T::one() - c.value);
            let (da, db) = c.grad(-k);
            add3(&mut d_normal, *p, da);
            add3(&mut d_top, *p, db);
        }
    }
    if !exp.is_empty() {
        let k = beta_n / lit(exp.len() as f64);
        for &(p, x, y, tx, ty, c) in &exp {
            value += k * (T::one() - c.value);
            let (da, dn) = c.grad(-k);
            add3(&mut d_normal, p, da);
            // n = −(tx × ty)
            let d_tx = dn.cross(ty);
            let d_ty = tx.cross(dn);
            let mut push = |u: usize, v: usize, g: Vec3<T>| {
                d_depth.data[v * w + u] += g.dot(ray(cam, u, v)) * half;
            };
            push(x + 1, y, d_tx);
            push(x - 1, y, -d_tx);
            push(x, y + 1, d_ty);
            push(x, y - 1, -d_ty);
        }
    }
    NormalLoss {
        value,
        d_normal,
        d_depth,
        d_top,
    }
}
