//! Image-quality and geometry metrics over unmasked pixels.

use crate::image::{Image, Mask};
use crate::loss::ssim::ssim_map;
use crate::real::Real;

/// Logged PSNR never exceeds this many dB.
pub const PSNR_CAP: f64 = 99.0;

fn kept(exclude: Option<&Mask>, p: usize) -> bool {
    exclude.is_none_or(|m| !m.data[p])
}

/// Mean squared error over pixels not set in `exclude`; `None` if none remain.
pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>, exclude: Option<&Mask>) -> Option<f64> {
    assert!(a.same_shape(b), "metric on mismatched images");
    let ch = a.channels;
    let mut s = 0.0;
    let mut n = 0usize;
    for p in 0..a.pixels() {
        if kept(exclude, p) {
            for c in 0..ch {
                let d = a.data[p * ch + c].as_f64() - b.data[p * ch + c].as_f64();
                s += d * d;
            }
            n += ch;
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`; `+∞` for identical images.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, exclude: Option<&Mask>) -> Option<f64> {
    mse(a, b, exclude).map(|m| {
        if m == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * m.log10()
        }
    })
}

pub fn cap_psnr(v: f64) -> f64 {
    v.min(PSNR_CAP)
}

/// Mean SSIM with the loss kernel; excluded pixels are zeroed in both images
/// and left out of the mean.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>, exclude: Option<&Mask>) -> Option<f64> {
    assert!(a.same_shape(b), "metric on mismatched images");
    let ch = a.channels;
    let zeroed = |img: &Image<T>| {
        let mut o = img.clone();
        for p in 0..o.pixels() {
            if !kept(exclude, p) {
                o.data[p * ch..(p + 1) * ch].fill(T::zero());
            }
        }
        o
    };
    let map = ssim_map(&zeroed(a), &zeroed(b));
    let mut s = 0.0;
    let mut n = 0usize;
    for p in 0..a.pixels() {
        if kept(exclude, p) {
            for c in 0..ch {
                s += map.data[p * ch + c].as_f64();
            }
            n += ch;
        }
    }
    (n > 0).then(|| s / n as f64)
}

/// Mean angle in degrees between two normal maps over pixels set in `valid`;
/// pixels where either vector vanishes are skipped.
pub fn mean_angular_error<T: Real>(pred: &Image<T>, truth: &Image<T>, valid: &Mask) -> Option<f64> {
    assert!(pred.same_shape(truth) && pred.channels == 3);
    let mut s = 0.0;
    let mut n = 0usize;
    for p in 0..pred.pixels() {
        if !valid.data[p] {
            continue;
        }
        let a: Vec<f64> = pred.data[3 * p..3 * p + 3]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let b: Vec<f64> = truth.data[3 * p..3 * p + 3]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            continue;
        }
        let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
        s += c.clamp(-1.0, 1.0).acos().to_degrees();
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image<f64> {
        Image::from_vec(
            w,
            h,
            3,
            (0..w * h * 3).map(|i| (i % 17) as f64 / 17.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_mse_gives_20_db() {
        let a = Image::filled(8, 8, 3, 0.3);
        let b = Image::filled(8, 8, 3, 0.4);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn identical_images() {
        let a = ramp(13, 9);
        assert_eq!(psnr(&a, &a, None), Some(f64::INFINITY));
        assert_eq!(cap_psnr(f64::INFINITY), 99.0);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_restricts_pixels() {
        let a = Image::filled(2, 1, 3, 0.0);
        let mut b = a.clone();
        b.data[3..6].fill(1.0);
        let m = Mask {
            width: 2,
            height: 1,
            data: vec![false, true],
        };
        assert_eq!(mse(&a, &b, Some(&m)), Some(0.0));
        assert_eq!(mse(&a, &b, Some(&Mask::new(2, 1, true))), None);
    }

    #[test]
    fn angular_error_of_known_pair() {
        let a = Image::from_vec(1, 1, 3, vec![0.0, 0.0, -1.0]).unwrap();
        let b = Image::from_vec(1, 1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let e = mean_angular_error(&a, &b, &Mask::new(1, 1, true)).unwrap();
        assert!((e - 45.0).abs() < 1e-9);
    }
}
