//! Losses defined directly on rendered images: masked L1 + SSIM, total
//! variation and depth supervision.

use log::warn;

use super::ssim::ssim_with_grad;
use super::ImageLoss;
use crate::image::{Image, Mask};
use crate::real::{lit, Real};

fn included(mask: Option<&Mask>, p: usize) -> bool {
    mask.is_none_or(|m| !m.data[p])
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)` over pixels outside `tool_mask`.
pub fn loss_photometric<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    tool_mask: Option<&Mask>,
    lambda_ssim: T,
) -> ImageLoss<T> {
    assert!(
        pred.same_shape(target),
        "photometric loss on mismatched images"
    );
    let ch = pred.channels;
    let n_px = (0..pred.pixels())
        .filter(|&p| included(tool_mask, p))
        .count();
    let mut grad = Image::new(pred.width, pred.height, ch);
    if n_px == 0 {
        warn!("photometric loss on a fully masked image");
        return ImageLoss {
            value: T::zero(),
            grad,
        };
    }
    let inv: T = T::one() / lit((n_px * ch) as f64);
    let w_l1 = T::one() - lambda_ssim;

    let mut l1 = T::zero();
    for p in 0..pred.pixels() {
        if !included(tool_mask, p) {
            continue;
        }
        for c in 0..ch {
            let i = p * ch + c;
            let d = pred.data[i] - target.data[i];
            l1 += d.abs();
            grad.data[i] = w_l1 * inv * d.sign0();
        }
    }
    l1 /= lit((n_px * ch) as f64);

    let mut value = w_l1 * l1;
    if lambda_ssim != T::zero() {
        let keep = |img: &Image<T>| {
            let mut o = img.clone();
            for p in 0..o.pixels() {
                if !included(tool_mask, p) {
                    o.data[p * ch..(p + 1) * ch].fill(T::zero());
                }
            }
            o
        };
        let (x, y) = (keep(pred), keep(target));
        let mut weight = Image::new(pred.width, pred.height, ch);
        for p in 0..pred.pixels() {
            if included(tool_mask, p) {
                weight.data[p * ch..(p + 1) * ch].fill(inv);
            }
        }
        let (map, g) = ssim_with_grad(&x, &y, &weight);
        let mut ssim = T::zero();
        for p in 0..pred.pixels() {
            if included(tool_mask, p) {
                for c in 0..ch {
                    ssim += map.data[p * ch + c];
                }
            }
        }
        ssim /= lit((n_px * ch) as f64);
        value += lambda_ssim * (T::one() - ssim);
        for p in 0..pred.pixels() {
            if included(tool_mask, p) {
                for c in 0..ch {
                    grad.data[p * ch + c] -= lambda_ssim * g.data[p * ch + c];
                }
            }
        }
    }
    ImageLoss { value, grad }
}

/// Anisotropic L1 total variation over neighbor pairs outside the mask,
/// divided by the number of included pixels.
pub fn loss_tv<T: Real>(img: &Image<T>, tool_mask: Option<&Mask>) -> ImageLoss<T> {
    let (w, h, ch) = (img.width, img.height, img.channels);
    let mut grad = Image::new(w, h, ch);
    let n_px = (0..w * h).filter(|&p| included(tool_mask, p)).count();
    if n_px == 0 || w < 2 || h < 2 {
        return ImageLoss {
            value: T::zero(),
            grad,
        };
    }
    let inv = T::one() / lit(n_px as f64);
    let mut total = T::zero();
    let mut pair = |a: usize, b: usize, total: &mut T| {
        if !(included(tool_mask, a) && included(tool_mask, b)) {
            return;
        }
        for c in 0..ch {
            let d = img.data[a * ch + c] - img.data[b * ch + c];
            *total += d.abs();
            let s = d.sign0() * inv;
            grad.data[a * ch + c] += s;
            grad.data[b * ch + c] -= s;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x > 0 {
                pair(p, p - 1, &mut total);
            }
            if y > 0 {
                pair(p, p - w, &mut total);
            }
        }
    }
    ImageLoss {
        value: total * inv,
        grad,
    }
}

/// Mean absolute depth error where `alpha > 0.5` and the supervision is usable.
pub fn loss_depth<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    alpha: &Image<T>,
    supervision: &Mask,
) -> ImageLoss<T> {
    assert!(pred.same_shape(target) && pred.same_shape(alpha));
    let half: T = lit(0.5);
    let mut grad = Image::new(pred.width, pred.height, 1);
    let valid: Vec<usize> = (0..pred.pixels())
        .filter(|&p| supervision.data[p] && alpha.data[p] > half && target.data[p].is_finite())
        .collect();
    if valid.is_empty() {
        warn!("depth loss has no valid pixels");
        return ImageLoss {
            value: T::zero(),
            grad,
        };
    }
    let inv = T::one() / lit(valid.len() as f64);
    let mut total = T::zero();
    for p in valid {
        let d = pred.data[p] - target.data[p];
        total += d.abs();
        grad.data[p] = d.sign0() * inv;
    }
    ImageLoss {
        value: total * inv,
        grad,
    }
}
