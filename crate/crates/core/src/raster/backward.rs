//! Analytic reverse pass of [`super::render`].

use rayon::prelude::*;

use super::{falloff, mat23_mul, Projected, RenderOutput, RenderSettings, ShViewDirMode};
use super::{ALPHA_MIN, DEPTH_ALPHA_MIN, TRANSMITTANCE_MIN};
use crate::camera::CameraModel;
use crate::image::Image;
use crate::linalg::{normalize3_backward, Quat, Vec3};
use crate::real::{lit, sigmoid, Real};
use crate::sh;
use crate::surfel::{frame_backward, GaussianSurfel, MAX_OPACITY};

/// Upstream gradients for every output channel of a render.
#[derive(Clone, Debug)]
pub struct RenderGrad<T> {
    pub color: Image<T>,
    pub depth: Image<T>,
    pub normal: Image<T>,
    pub alpha: Image<T>,
    /// Gradient with respect to the camera-space normal of each pixel's
    /// highest-weight surfel (see [`RenderOutput::top_surfel`]).
    pub top_normal: Image<T>,
}

impl<T: Real> RenderGrad<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Image::new(width, height, 3),
            depth: Image::new(width, height, 1),
            normal: Image::new(width, height, 3),
            alpha: Image::new(width, height, 1),
            top_normal: Image::new(width, height, 3),
        }
    }

    pub fn add_assign(&mut self, o: &Self) {
        for (a, b) in [
            (&mut self.color, &o.color),
            (&mut self.depth, &o.depth),
            (&mut self.normal, &o.normal),
            (&mut self.alpha, &o.alpha),
            (&mut self.top_normal, &o.top_normal),
        ] {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
    }
}

/// Per-surfel parameter gradients of one backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer<T> {
    pub d_position: Vec<Vec3<T>>,
    pub d_rotation: Vec<Quat<T>>,
    pub d_log_scales: Vec<[T; 2]>,
    pub d_opacity: Vec<T>,
    /// Flattened SH gradients, `sh_len` values per surfel.
    pub d_sh: Vec<T>,
    pub sh_len: usize,
    /// Sum over contributing pixels of `|∂L/∂μx| + |∂L/∂μy|`.
    pub homo_grad: Vec<T>,
    pub touch_count: Vec<u32>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros(n: usize, sh_len: usize) -> Self {
        let zq = Quat::new(T::zero(), T::zero(), T::zero(), T::zero());
        Self {
            d_position: vec![Vec3::zero(); n],
            d_rotation: vec![zq; n],
            d_log_scales: vec![[T::zero(); 2]; n],
            d_opacity: vec![T::zero(); n],
            d_sh: vec![T::zero(); n * sh_len],
            sh_len,
            homo_grad: vec![T::zero(); n],
            touch_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn sh(&self, i: usize) -> &[T] {
        &self.d_sh[i * self.sh_len..(i + 1) * self.sh_len]
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct ScreenGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    depth: T,
    normal: Vec3<T>,
    homo: T,
    touches: u32,
}

impl<T: Real> ScreenGrad<T> {
    fn add(&mut self, o: &Self) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
        self.normal += o.normal;
        self.homo += o.homo;
        self.touches += o.touches;
    }
}

struct Contribution<T> {
    pos: usize,
    a: T,
    g: T,
    trans: T,
    dx: T,
    dy: T,
}

/// Gradients of all rendered channels with respect to every surfel parameter.
pub fn render_backward<T: Real>(
    surfels: &[GaussianSurfel<T>],
    cam: &CameraModel<T>,
    settings: &RenderSettings<T>,
    output: &RenderOutput<T>,
    d_output: &RenderGrad<T>,
) -> GradientBuffer<T> {
    let n = surfels.len();
    let sh_len = surfels.first().map_or(3, |s| s.sh.len());
    let cache = &output.cache;
    assert_eq!(
        cache.projected.len(),
        n,
        "output was rendered from a different surfel set"
    );
    assert!(
        d_output.color.width == cam.width && d_output.color.height == cam.height,
        "gradient image size does not match the camera"
    );
    let bins = &cache.bins;
    let (w, h) = (cam.width, cam.height);
    let ts = bins.tile_size;

    let tile_grads = |t: usize| -> Vec<ScreenGrad<T>> {
        let list = &bins.lists[t];
        let mut acc = vec![ScreenGrad::default(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
        let mut contribs: Vec<Contribution<T>> = Vec::with_capacity(list.len());
        for y in ty * ts..((ty + 1) * ts).min(h) {
            for x in tx * ts..((tx + 1) * ts).min(w) {
                contribs.clear();
                pixel_backward(
                    output,
                    d_output,
                    settings,
                    list,
                    x,
                    y,
                    &mut contribs,
                    &mut acc,
                );
            }
        }
        acc
    };

    let mut screen = vec![ScreenGrad::<T>::default(); n];
    if settings.deterministic {
        let per_tile: Vec<Vec<ScreenGrad<T>>> =
            (0..bins.len()).into_par_iter().map(tile_grads).collect();
        for (t, grads) in per_tile.iter().enumerate() {
            for (pos, g) in grads.iter().enumerate() {
                screen[bins.lists[t][pos] as usize].add(g);
            }
        }
    } else {
        screen = (0..bins.len())
            .into_par_iter()
            .fold(
                || vec![ScreenGrad::<T>::default(); n],
                |mut dense, t| {
                    for (pos, g) in tile_grads(t).iter().enumerate() {
                        dense[bins.lists[t][pos] as usize].add(g);
                    }
                    dense
                },
            )
            .reduce(
                || vec![ScreenGrad::<T>::default(); n],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.add(y);
                    }
                    a
                },
            );
    }

    // top-weight normal gradients go straight to that surfel's normal
    for (p, top) in output.top_surfel.iter().enumerate() {
        if let Some(i) = top {
            let g = &d_output.top_normal.data[3 * p..3 * p + 3];
            screen[*i as usize].normal += Vec3::new(g[0], g[1], g[2]);
        }
    }

    let mut out = GradientBuffer::zeros(n, sh_len);
    let per_surfel: Vec<Option<ParamGrad<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            cache.projected[i]
                .as_ref()
                .map(|p| chain_to_params(&surfels[i], p, &screen[i], cam, settings.sh_mode))
        })
        .collect();
    for (i, g) in per_surfel.into_iter().enumerate() {
        out.homo_grad[i] = screen[i].homo;
        out.touch_count[i] = screen[i].touches;
        if let Some(g) = g {
            out.d_position[i] = g.position;
            out.d_rotation[i] = g.rotation;
            out.d_log_scales[i] = g.log_scales;
            out.d_opacity[i] = g.opacity_logit;
            out.d_sh[i * sh_len..(i + 1) * sh_len].copy_from_slice(&g.sh);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn pixel_backward<T: Real>(
    output: &RenderOutput<T>,
    d: &RenderGrad<T>,
    settings: &RenderSettings<T>,
    list: &[u32],
    x: usize,
    y: usize,
    contribs: &mut Vec<Contribution<T>>,
    acc: &mut [ScreenGrad<T>],
) {
    let projected = &output.cache.projected;
    let w = output.width();
    let p = y * w + x;
    let visited = output.cache.visited[p] as usize;
    let alpha_min: T = lit(ALPHA_MIN);
    let t_min: T = lit(TRANSMITTANCE_MIN);

    let mut trans = T::one();
    for (pos, &i) in list.iter().enumerate().take(visited) {
        let sp = projected[i as usize]
            .as_ref()
            .expect("binned splat is visible");
        let Some((dx, dy, _, g)) = falloff(sp, x, y) else {
            continue;
        };
        let a = sp.opacity * g;
        if a < alpha_min {
            continue;
        }
        contribs.push(Contribution {
            pos,
            a,
            g,
            trans,
            dx,
            dy,
        });
        trans *= T::one() - a;
        if trans < t_min {
            break;
        }
    }
    if contribs.is_empty() {
        return;
    }

    let dc = &d.color.data[3 * p..3 * p + 3];
    let dn = &d.normal.data[3 * p..3 * p + 3];
    let dn = Vec3::new(dn[0], dn[1], dn[2]);
    let d_depth = d.depth.data[p];
    let d_alpha = d.alpha.data[p];
    let alpha = output.alpha.data[p];
    let depth = output.depth.data[p];
    let (gz, ga) = if alpha > lit(DEPTH_ALPHA_MIN) {
        (d_depth / alpha, d_alpha - d_depth * depth / alpha)
    } else {
        (T::zero(), d_alpha)
    };
    let bg = settings.background;
    let h = dc[0] * bg[0] + dc[1] * bg[1] + dc[2] * bg[2] - ga;
    let two: T = lit(2.0);
    let half: T = lit(0.5);

    let mut suffix = trans * h;
    for c in contribs.iter().rev() {
        let i = list[c.pos] as usize;
        let sp = projected[i].as_ref().unwrap();
        let f = dc[0] * sp.color[0]
            + dc[1] * sp.color[1]
            + dc[2] * sp.color[2]
            + gz * sp.splat.cam_depth
            + dn.dot(sp.splat.cam_normal);
        let d_a = c.trans * f - suffix / (T::one() - c.a);
        let wk = c.a * c.trans;
        suffix += wk * f;

        let g = &mut acc[c.pos];
        for k in 0..3 {
            g.color[k] += wk * dc[k];
        }
        g.depth += wk * gz;
        g.normal += dn * wk;
        g.opacity += d_a * c.g;
        let d_g = d_a * sp.opacity;
        let d_m = -half * c.g * d_g;
        let q = &sp.conic;
        let qd = [q.xx * c.dx + q.xy * c.dy, q.xy * c.dx + q.yy * c.dy];
        let dmu = [-two * d_m * qd[0], -two * d_m * qd[1]];
        g.mean[0] += dmu[0];
        g.mean[1] += dmu[1];
        g.homo += dmu[0].abs() + dmu[1].abs();
        g.touches += 1;
        g.conic[0] += d_m * c.dx * c.dx;
        g.conic[1] += d_m * two * c.dx * c.dy;
        g.conic[2] += d_m * c.dy * c.dy;
    }
}

struct ParamGrad<T> {
    position: Vec3<T>,
    rotation: Quat<T>,
    log_scales: [T; 2],
    opacity_logit: T,
    sh: Vec<T>,
}

fn chain_to_params<T: Real>(
    s: &GaussianSurfel<T>,
    p: &Projected<T>,
    g: &ScreenGrad<T>,
    cam: &CameraModel<T>,
    mode: ShViewDirMode,
) -> ParamGrad<T> {
    let two: T = lit(2.0);

    // opacity
    let sig = sigmoid(s.opacity_logit);
    let opacity_logit = if sig < lit(MAX_OPACITY) {
        g.opacity * sig * (T::one() - sig)
    } else {
        T::zero()
    };

    // color
    let degree = match mode {
        ShViewDirMode::CameraToCenter => s.sh_degree(),
        ShViewDirMode::DcOnly => 0,
    };
    let mut d_sh = vec![T::zero(); s.sh.len()];
    let d_dir = sh::eval_color_backward(degree, &s.sh, p.dir, p.clamped, g.color, &mut d_sh);
    let mut d_world = if degree > 0 && p.dir_len > T::zero() {
        normalize3_backward(p.dir * p.dir_len, d_dir)
    } else {
        Vec3::zero()
    };

    // conic -> covariance (xx, xy, yy)
    let c = &p.splat.cov2d;
    let (ca, cb, cc) = (c.xx, c.xy, c.yy);
    let det = ca * cc - cb * cb;
    let id = T::one() / det;
    let id2 = id * id;
    let [gxx, gxy, gyy] = g.conic;
    let d_ca = gxx * (-cc * cc * id2) + gxy * (cb * cc * id2) + gyy * (id - ca * cc * id2);
    let d_cb = gxx * (two * cb * cc * id2)
        + gxy * (-id - two * cb * cb * id2)
        + gyy * (two * ca * cb * id2);
    let d_cc = gxx * (id - cc * ca * id2) + gxy * (cb * ca * id2) + gyy * (-ca * ca * id2);

    // covariance = A Aᵀ + B Bᵀ + λI with A = s_u J a, B = s_v J b
    let ja = mat23_mul(&p.jac, p.a_cam);
    let jb = mat23_mul(&p.jac, p.b_cam);
    let [su, sv] = p.scales;
    let au = [ja[0] * su, ja[1] * su];
    let av = [jb[0] * sv, jb[1] * sv];
    let d_au = [
        two * au[0] * d_ca + au[1] * d_cb,
        au[0] * d_cb + two * au[1] * d_cc,
    ];
    let d_av = [
        two * av[0] * d_ca + av[1] * d_cb,
        av[0] * d_cb + two * av[1] * d_cc,
    ];
    let d_su = d_au[0] * ja[0] + d_au[1] * ja[1];
    let d_sv = d_av[0] * jb[0] + d_av[1] * jb[1];
    let d_ja = [d_au[0] * su, d_au[1] * su];
    let d_jb = [d_av[0] * sv, d_av[1] * sv];
    let a = p.a_cam.to_array();
    let b = p.b_cam.to_array();
    let mut d_jac = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            d_jac[r][k] = d_ja[r] * a[k] + d_jb[r] * b[k];
        }
    }
    let jt = |d: [T; 2]| -> Vec3<T> {
        Vec3::new(
            p.jac[0][0] * d[0] + p.jac[1][0] * d[1],
            p.jac[0][1] * d[0] + p.jac[1][1] * d[1],
            p.jac[0][2] * d[0] + p.jac[1][2] * d[1],
        )
    };
    let d_a_cam = jt(d_ja);
    let d_b_cam = jt(d_jb);

    // camera-space position from the mean, the Jacobian and the depth
    let pc = p.p_cam;
    let iz = T::one() / pc.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_pc = Vec3::new(
        g.mean[0] * fx * iz,
        g.mean[1] * fy * iz,
        -g.mean[0] * fx * pc.x * iz2 - g.mean[1] * fy * pc.y * iz2 + g.depth,
    );
    d_pc.x += d_jac[0][2] * (-fx * iz2);
    d_pc.y += d_jac[1][2] * (-fy * iz2);
    d_pc.z += d_jac[0][0] * (-fx * iz2)
        + d_jac[0][2] * (two * fx * pc.x * iz3)
        + d_jac[1][1] * (-fy * iz2)
        + d_jac[1][2] * (two * fy * pc.y * iz3);
    let r = &cam.rotation;
    d_world += r.tr_mul_vec(d_pc);

    let rotation = frame_backward(
        s.rotation,
        r.tr_mul_vec(d_a_cam),
        r.tr_mul_vec(d_b_cam),
        r.tr_mul_vec(g.normal),
    );

    ParamGrad {
        position: d_world,
        rotation,
        log_scales: [d_su * su, d_sv * sv],
        opacity_logit,
        sh: d_sh,
    }
}
