//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Coefficients are stored coefficient-major with interleaved RGB:
//! `sh[3 * i + channel]`, `i` indexing the basis functions below.

use crate::linalg::Vec3;
use crate::real::{lit, Real};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of basis functions for a degree.
pub const fn num_basis(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Number of stored scalars (three channels per basis function).
pub const fn num_coeffs(degree: usize) -> usize {
    3 * num_basis(degree)
}

/// Basis values at unit direction `d`, written into `out[..num_basis(degree)]`.
pub fn basis<T: Real>(degree: usize, d: Vec3<T>, out: &mut [T; 16]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = lit(SH_C0);
    if degree == 0 {
        return;
    }
    let c1: T = lit(SH_C1);
    out[1] = -c1 * y;
    out[2] = c1 * z;
    out[3] = -c1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let two: T = lit(2.0);
    out[4] = lit::<T>(SH_C2[0]) * x * y;
    out[5] = lit::<T>(SH_C2[1]) * y * z;
    out[6] = lit::<T>(SH_C2[2]) * (two * zz - xx - yy);
    out[7] = lit::<T>(SH_C2[3]) * x * z;
    out[8] = lit::<T>(SH_C2[4]) * (xx - yy);
    if degree == 2 {
        return;
    }
    let three: T = lit(3.0);
    let four: T = lit(4.0);
    out[9] = lit::<T>(SH_C3[0]) * y * (three * xx - yy);
    out[10] = lit::<T>(SH_C3[1]) * x * y * z;
    out[11] = lit::<T>(SH_C3[2]) * y * (four * zz - xx - yy);
    out[12] = lit::<T>(SH_C3[3]) * z * (two * zz - three * xx - three * yy);
    out[13] = lit::<T>(SH_C3[4]) * x * (four * zz - xx - yy);
    out[14] = lit::<T>(SH_C3[5]) * z * (xx - yy);
    out[15] = lit::<T>(SH_C3[6]) * x * (xx - three * yy);
}

/// Gradients of each basis function with respect to the direction components.
pub fn basis_grad<T: Real>(degree: usize, d: Vec3<T>, out: &mut [Vec3<T>; 16]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let zero = T::zero();
    out[0] = Vec3::zero();
    if degree == 0 {
        return;
    }
    let c1: T = lit(SH_C1);
    out[1] = Vec3::new(zero, -c1, zero);
    out[2] = Vec3::new(zero, zero, c1);
    out[3] = Vec3::new(-c1, zero, zero);
    if degree == 1 {
        return;
    }
    let two: T = lit(2.0);
    let three: T = lit(3.0);
    let four: T = lit(4.0);
    let six: T = lit(6.0);
    let eight: T = lit(8.0);
    let c2 = SH_C2.map(lit::<T>);
    out[4] = Vec3::new(y, x, zero) * c2[0];
    out[5] = Vec3::new(zero, z, y) * c2[1];
    out[6] = Vec3::new(-two * x, -two * y, four * z) * c2[2];
    out[7] = Vec3::new(z, zero, x) * c2[3];
    out[8] = Vec3::new(two * x, -two * y, zero) * c2[4];
    if degree == 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c3 = SH_C3.map(lit::<T>);
    out[9] = Vec3::new(six * x * y, three * xx - three * yy, zero) * c3[0];
    out[10] = Vec3::new(y * z, x * z, x * y) * c3[1];
    out[11] = Vec3::new(-two * x * y, four * zz - xx - three * yy, eight * y * z) * c3[2];
    out[12] = Vec3::new(
        -six * x * z,
        -six * y * z,
        six * zz - three * xx - three * yy,
    ) * c3[3];
    out[13] = Vec3::new(four * zz - three * xx - yy, -two * x * y, eight * x * z) * c3[4];
    out[14] = Vec3::new(two * x * z, -two * y * z, xx - yy) * c3[5];
    out[15] = Vec3::new(three * xx - three * yy, -six * x * y, zero) * c3[6];
}

/// Color from SH coefficients along unit direction `dir`: `0.5 + Σ cᵢ Yᵢ`,
/// clamped below at zero. Returns the color and a per-channel flag that is
/// `true` where the clamp was active.
pub fn eval_color<T: Real>(degree: usize, sh: &[T], dir: Vec3<T>) -> ([T; 3], [bool; 3]) {
    let mut b = [T::zero(); 16];
    basis(degree, dir, &mut b);
    let mut color = [lit::<T>(0.5); 3];
    for (i, bi) in b.iter().take(num_basis(degree)).enumerate() {
        for (ch, c) in color.iter_mut().enumerate() {
            *c += sh[3 * i + ch] * *bi;
        }
    }
    let mut clamped = [false; 3];
    for (c, k) in color.iter_mut().zip(clamped.iter_mut()) {
        if *c < T::zero() {
            *c = T::zero();
            *k = true;
        }
    }
    (color, clamped)
}

/// Backward of [`eval_color`]: accumulates into `d_sh` and returns the
/// gradient with respect to the (unit) direction.
pub fn eval_color_backward<T: Real>(
    degree: usize,
    sh: &[T],
    dir: Vec3<T>,
    clamped: [bool; 3],
    d_color: [T; 3],
    d_sh: &mut [T],
) -> Vec3<T> {
    let mut g = d_color;
    for (gc, k) in g.iter_mut().zip(clamped) {
        if k {
            *gc = T::zero();
        }
    }
    let mut b = [T::zero(); 16];
    basis(degree, dir, &mut b);
    let nb = num_basis(degree);
    for i in 0..nb {
        for ch in 0..3 {
            d_sh[3 * i + ch] += g[ch] * b[i];
        }
    }
    if degree == 0 {
        return Vec3::zero();
    }
    let mut bg = [Vec3::zero(); 16];
    basis_grad(degree, dir, &mut bg);
    let mut d_dir = Vec3::zero();
    for i in 1..nb {
        let w = sh[3 * i] * g[0] + sh[3 * i + 1] * g[1] + sh[3 * i + 2] * g[2];
        d_dir += bg[i] * w;
    }
    d_dir
}
