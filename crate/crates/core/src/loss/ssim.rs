//! Windowed structural similarity with an 11-tap Gaussian window and zero
//! padding, plus its exact gradient with respect to the first image.

use crate::image::Image;
use crate::real::{lit, Real};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn gaussian_taps<T: Real>() -> [T; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut k = [0.0f64; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| lit(v / s))
}

/// Separable zero-padded Gaussian filter of one `w × h` plane.
pub fn blur<T: Real>(src: &[T], w: usize, h: usize, taps: &[T; WINDOW]) -> Vec<T> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += *t * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let yy = y as isize + k as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src_row) {
                *o += *t * *s;
            }
        }
    }
    out
}

fn plane<T: Real>(img: &Image<T>, c: usize) -> Vec<T> {
    img.data
        .iter()
        .skip(c)
        .step_by(img.channels)
        .copied()
        .collect()
}

/// Per-channel local statistics needed by both the map and its gradient.
struct Stats<T> {
    s: Vec<T>,
    d_mu: Vec<T>,
    d_xx: Vec<T>,
    d_xy: Vec<T>,
}

fn stats<T: Real>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    taps: &[T; WINDOW],
    want_grad: bool,
) -> Stats<T> {
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(u, v)| *u * *v).collect::<Vec<T>>();
    let mu_x = blur(x, w, h, taps);
    let mu_y = blur(y, w, h, taps);
    let exx = blur(&sq(x, x), w, h, taps);
    let eyy = blur(&sq(y, y), w, h, taps);
    let exy = blur(&sq(x, y), w, h, taps);
    let (c1, c2): (T, T) = (lit(C1), lit(C2));
    let two: T = lit(2.0);
    let n = w * h;
    let mut s = vec![T::zero(); n];
    let (mut d_mu, mut d_xx, mut d_xy) = if want_grad {
        (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let a1 = two * mx * my + c1;
        let a2 = two * (exy[p] - mx * my) + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = (exx[p] - mx * mx) + (eyy[p] - my * my) + c2;
        let v = a1 * a2 / (b1 * b2);
        s[p] = v;
        if want_grad {
            d_mu[p] = v * (two * my / a1 - two * my / a2 - two * mx / b1 + two * mx / b2);
            d_xx[p] = -v / b2;
            d_xy[p] = two * v / a2;
        }
    }
    Stats {
        s,
        d_mu,
        d_xx,
        d_xy,
    }
}

/// SSIM value per pixel and channel, laid out like the input images.
pub fn ssim_map<T: Real>(x: &Image<T>, y: &Image<T>) -> Image<T> {
    assert!(x.same_shape(y));
    let taps = gaussian_taps();
    let (w, h, ch) = (x.width, x.height, x.channels);
    let mut out = Image::new(w, h, ch);
    for c in 0..ch {
        let st = stats(&plane(x, c), &plane(y, c), w, h, &taps, false);
        for (p, v) in st.s.into_iter().enumerate() {
            out.data[p * ch + c] = v;
        }
    }
    out
}

/// SSIM map together with `∂(Σ weight·S)/∂x`.
pub fn ssim_with_grad<T: Real>(
    x: &Image<T>,
    y: &Image<T>,
    weight: &Image<T>,
) -> (Image<T>, Image<T>) {
    assert!(x.same_shape(y) && x.same_shape(weight));
    let taps = gaussian_taps();
    let (w, h, ch) = (x.width, x.height, x.channels);
    let mut map = Image::new(w, h, ch);
    let mut grad = Image::new(w, h, ch);
    let two: T = lit(2.0);
    for c in 0..ch {
        let (xp, yp, wp) = (plane(x, c), plane(y, c), plane(weight, c));
        let st = stats(&xp, &yp, w, h, &taps, true);
        let mul = |a: &[T]| a.iter().zip(&wp).map(|(u, v)| *u * *v).collect::<Vec<T>>();
        let g_mu = blur(&mul(&st.d_mu), w, h, &taps);
        let g_xx = blur(&mul(&st.d_xx), w, h, &taps);
        let g_xy = blur(&mul(&st.d_xy), w, h, &taps);
        for p in 0..w * h {
            map.data[p * ch + c] = st.s[p];
            grad.data[p * ch + c] = g_mu[p] + two * xp[p] * g_xx[p] + yp[p] * g_xy[p];
        }
    }
    (map, grad)
}
