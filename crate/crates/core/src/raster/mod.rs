//! Tile-based splatting of surfels into color, depth, normal and alpha images.
//!
//! Every splat has compact support: it contributes only where the Mahalanobis
//! distance to its center is at most [`SUPPORT_SIGMA`] and where its alpha is
//! at least [`ALPHA_MIN`].

mod backward;
mod tiles;

pub use backward::{render_backward, GradientBuffer, RenderGrad};
pub use tiles::{splat_bounds, tile_bin, TileBins, DEFAULT_TILE_SIZE, SUPPORT_SIGMA};

use rayon::prelude::*;

use crate::camera::{perspective_jacobian, screen_covariance, CameraModel, ScreenSplat};
use crate::image::Image;
use crate::linalg::{Sym2, Vec3};
use crate::real::{lit, Real};
use crate::sh;
use crate::surfel::{frame_of, GaussianSurfel};

/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// A pixel stops compositing once its transmittance drops below this value.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Depth is normalized by alpha only above this coverage.
pub const DEPTH_ALPHA_MIN: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ShViewDirMode {
    /// Evaluate SH along the direction from the camera center to the surfel center.
    #[default]
    CameraToCenter,
    /// Use only the degree-0 term.
    DcOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings<T> {
    pub background: [T; 3],
    pub sh_mode: ShViewDirMode,
    pub tile_size: usize,
    /// Fixed-order gradient reduction; bitwise reproducible backward passes.
    pub deterministic: bool,
}

impl<T: Real> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            background: [T::zero(); 3],
            sh_mode: ShViewDirMode::CameraToCenter,
            tile_size: DEFAULT_TILE_SIZE,
            deterministic: true,
        }
    }
}

/// Everything the forward and backward passes need about one visible surfel.
#[derive(Clone, Debug)]
pub(crate) struct Projected<T> {
    pub splat: ScreenSplat<T>,
    pub conic: Sym2<T>,
    pub opacity: T,
    pub color: [T; 3],
    pub clamped: [bool; 3],
    pub dir: Vec3<T>,
    pub dir_len: T,
    pub p_cam: Vec3<T>,
    pub jac: [[T; 3]; 2],
    pub a_cam: Vec3<T>,
    pub b_cam: Vec3<T>,
    pub scales: [T; 2],
}

pub(crate) fn project_all<T: Real>(
    surfels: &[GaussianSurfel<T>],
    cam: &CameraModel<T>,
    mode: ShViewDirMode,
) -> Vec<Option<Projected<T>>> {
    let eye = cam.eye();
    surfels
        .par_iter()
        .map(|s| project_one(s, cam, eye, mode))
        .collect()
}

fn project_one<T: Real>(
    s: &GaussianSurfel<T>,
    cam: &CameraModel<T>,
    eye: Vec3<T>,
    mode: ShViewDirMode,
) -> Option<Projected<T>> {
    let r = &cam.rotation;
    let p_cam = cam.to_camera(s.position);
    let jac = perspective_jacobian(cam, p_cam)?;
    let f = frame_of(s.rotation);
    let scales = s.scales();
    let a_cam = r.mul_vec(f.t_u);
    let b_cam = r.mul_vec(f.t_v);
    let ja = mat23_mul(&jac, a_cam);
    let jb = mat23_mul(&jac, b_cam);
    let (au, av) = (
        [ja[0] * scales[0], ja[1] * scales[0]],
        [jb[0] * scales[1], jb[1] * scales[1]],
    );
    let d: T = lit(crate::camera::DILATION);
    let cov2d = Sym2::new(
        au[0] * au[0] + av[0] * av[0] + d,
        au[0] * au[1] + av[0] * av[1],
        au[1] * au[1] + av[1] * av[1] + d,
    );
    debug_assert!({
        let c = screen_covariance(&jac, &crate::camera::world_to_camera(cam, s).covariance);
        (c.xx - cov2d.xx).abs() <= lit::<T>(1e-3) * (T::one() + c.xx.abs())
    });
    let conic = cov2d.inverse()?;
    let delta = s.position - eye;
    let dir_len = delta.norm();
    let dir = if dir_len > T::zero() {
        delta * (T::one() / dir_len)
    } else {
        Vec3::new(T::zero(), T::zero(), T::one())
    };
    let degree = match mode {
        ShViewDirMode::CameraToCenter => s.sh_degree(),
        ShViewDirMode::DcOnly => 0,
    };
    let (color, clamped) = sh::eval_color(degree, &s.sh, dir);
    Some(Projected {
        splat: ScreenSplat {
            center_px: cam.project_camera(p_cam),
            cov2d,
            cam_depth: p_cam.z,
            cam_normal: r.mul_vec(f.t_w),
        },
        conic,
        opacity: s.opacity(),
        color,
        clamped,
        dir,
        dir_len,
        p_cam,
        jac,
        a_cam,
        b_cam,
        scales,
    })
}

#[inline]
pub(crate) fn mat23_mul<T: Real>(j: &[[T; 3]; 2], v: Vec3<T>) -> [T; 2] {
    [
        j[0][0] * v.x + j[0][1] * v.y + j[0][2] * v.z,
        j[1][0] * v.x + j[1][1] * v.y + j[1][2] * v.z,
    ]
}

/// Rendered images of one view.
#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    /// Linear RGB, background composited behind the splats.
    pub color: Image<T>,
    /// Alpha-normalized expected camera depth; zero where nothing was hit.
    pub depth: Image<T>,
    /// Weighted sum of camera-space surfel normals; normalize on read.
    pub normal: Image<T>,
    pub alpha: Image<T>,
    /// Index of the surfel with the largest compositing weight per pixel.
    pub top_surfel: Vec<Option<u32>>,
    pub(crate) cache: RenderCache<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct RenderCache<T> {
    pub projected: Vec<Option<Projected<T>>>,
    pub bins: TileBins,
    /// Number of tile-list entries visited per pixel.
    pub visited: Vec<u32>,
}

impl<T: Real> RenderOutput<T> {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Unit normal at a pixel, `None` where the accumulated normal vanishes.
    pub fn unit_normal(&self, x: usize, y: usize) -> Option<Vec3<T>> {
        let p = self.normal.pixel(x, y);
        Vec3::new(p[0], p[1], p[2]).try_normalize()
    }

    /// Screen-space splats of this pass, `None` for culled surfels.
    pub fn splats(&self) -> Vec<Option<ScreenSplat<T>>> {
        self.cache
            .projected
            .iter()
            .map(|p| p.as_ref().map(|p| p.splat))
            .collect()
    }

    pub fn bins(&self) -> &TileBins {
        &self.cache.bins
    }
}

struct TileResult<T> {
    color: Vec<[T; 3]>,
    depth: Vec<T>,
    normal: Vec<[T; 3]>,
    alpha: Vec<T>,
    top: Vec<Option<u32>>,
    visited: Vec<u32>,
}

/// Front-to-back alpha compositing of all surfels into the camera's image.
pub fn render<T: Real>(
    surfels: &[GaussianSurfel<T>],
    cam: &CameraModel<T>,
    settings: &RenderSettings<T>,
) -> RenderOutput<T> {
    let projected = project_all(surfels, cam, settings.sh_mode);
    let splats: Vec<Option<ScreenSplat<T>>> = projected
        .iter()
        .map(|p| p.as_ref().map(|p| p.splat))
        .collect();
    let bins = tile_bin(&splats, cam.width, cam.height, settings.tile_size);
    let (w, h) = (cam.width, cam.height);
    let ts = bins.tile_size;

    let results: Vec<TileResult<T>> = (0..bins.len())
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
            let list = &bins.lists[t];
            let xs = tx * ts..((tx + 1) * ts).min(w);
            let ys = ty * ts..((ty + 1) * ts).min(h);
            let n = xs.len() * ys.len();
            let mut out = TileResult {
                color: Vec::with_capacity(n),
                depth: Vec::with_capacity(n),
                normal: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                top: Vec::with_capacity(n),
                visited: Vec::with_capacity(n),
            };
            for y in ys.clone() {
                for x in xs.clone() {
                    let px = composite_pixel(&projected, list, x, y, settings);
                    out.color.push(px.color);
                    out.depth.push(px.depth);
                    out.normal.push(px.normal);
                    out.alpha.push(px.alpha);
                    out.top.push(px.top);
                    out.visited.push(px.visited);
                }
            }
            out
        })
        .collect();

    let mut color = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let mut normal = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut top = vec![None; w * h];
    let mut visited = vec![0u32; w * h];
    for (t, r) in results.into_iter().enumerate() {
        let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
        let xs = tx * ts..((tx + 1) * ts).min(w);
        let ys = ty * ts..((ty + 1) * ts).min(h);
        let mut k = 0;
        for y in ys {
            for x in xs.clone() {
                let p = y * w + x;
                color.data[3 * p..3 * p + 3].copy_from_slice(&r.color[k]);
                normal.data[3 * p..3 * p + 3].copy_from_slice(&r.normal[k]);
                depth.data[p] = r.depth[k];
                alpha.data[p] = r.alpha[k];
                top[p] = r.top[k];
                visited[p] = r.visited[k];
                k += 1;
            }
        }
    }
    RenderOutput {
        color,
        depth,
        normal,
        alpha,
        top_surfel: top,
        cache: RenderCache {
            projected,
            bins,
            visited,
        },
    }
}

pub(crate) struct PixelResult<T> {
    pub color: [T; 3],
    pub depth: T,
    pub normal: [T; 3],
    pub alpha: T,
    pub top: Option<u32>,
    pub visited: u32,
}

/// Mahalanobis distance squared and falloff of splat `p` at pixel center `(x, y)`.
#[inline]
pub(crate) fn falloff<T: Real>(p: &Projected<T>, x: usize, y: usize) -> Option<(T, T, T, T)> {
    let half: T = lit(0.5);
    let dx = T::lit(x as f64) + half - p.splat.center_px[0];
    let dy = T::lit(y as f64) + half - p.splat.center_px[1];
    let m = p.conic.quad_form(dx, dy);
    let cutoff: T = lit(SUPPORT_SIGMA * SUPPORT_SIGMA);
    if !(m <= cutoff) {
        return None;
    }
    Some((dx, dy, m, (-half * m).exp()))
}

fn composite_pixel<T: Real>(
    projected: &[Option<Projected<T>>],
    list: &[u32],
    x: usize,
    y: usize,
    settings: &RenderSettings<T>,
) -> PixelResult<T> {
    let alpha_min: T = lit(ALPHA_MIN);
    let t_min: T = lit(TRANSMITTANCE_MIN);
    let mut trans = T::one();
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    let mut normal = [T::zero(); 3];
    let mut top: Option<(T, u32)> = None;
    let mut visited = 0u32;
    for &i in list {
        visited += 1;
        let p = projected[i as usize]
            .as_ref()
            .expect("binned splat is visible");
        let Some((_, _, _, g)) = falloff(p, x, y) else {
            continue;
        };
        let a = p.opacity * g;
        if a < alpha_min {
            continue;
        }
        let w = a * trans;
        for c in 0..3 {
            color[c] += w * p.color[c];
        }
        depth += w * p.splat.cam_depth;
        let n = p.splat.cam_normal;
        normal[0] += w * n.x;
        normal[1] += w * n.y;
        normal[2] += w * n.z;
        if top.is_none_or(|(tw, _)| w > tw) {
            top = Some((w, i));
        }
        trans *= T::one() - a;
        if trans < t_min {
            break;
        }
    }
    let alpha = T::one() - trans;
    for (c, bg) in color.iter_mut().zip(settings.background) {
        *c += trans * bg;
    }
    let depth = if alpha > lit(DEPTH_ALPHA_MIN) {
        depth / alpha
    } else {
        T::zero()
    };
    PixelResult {
        color,
        depth,
        normal,
        alpha,
        top: top.map(|(_, i)| i),
        visited,
    }
}
