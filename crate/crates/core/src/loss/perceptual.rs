//! Feature-space cosine distance behind a pluggable extractor.

use log::warn;

use super::{Cosine, ImageLoss};
use crate::image::{Image, Mask};
use crate::real::{lit, Real};

/// Differentiable image descriptor.
pub trait FeatureExtractor<T: Real>: Send + Sync {
    fn features(&self, img: &Image<T>) -> Vec<T>;
    /// Pulls `d_features` back onto the image.
    fn backward(&self, img: &Image<T>, d_features: &[T]) -> Image<T>;
}

/// Flattened image minus its mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct CenteredIdentity;

impl<T: Real> FeatureExtractor<T> for CenteredIdentity {
    fn features(&self, img: &Image<T>) -> Vec<T> {
        let n: T = lit(img.data.len().max(1) as f64);
        let mean = img.data.iter().copied().sum::<T>() / n;
        img.data.iter().map(|&v| v - mean).collect()
    }

    fn backward(&self, img: &Image<T>, d: &[T]) -> Image<T> {
        let n: T = lit(d.len().max(1) as f64);
        let mean = d.iter().copied().sum::<T>() / n;
        Image {
            width: img.width,
            height: img.height,
            channels: img.channels,
            data: d.iter().map(|&g| g - mean).collect(),
        }
    }
}

/// Gradient magnitudes `sqrt(gx² + gy² + ε)` of an average-pooled pyramid.
#[derive(Clone, Copy, Debug)]
pub struct GradientPyramid {
    pub levels: usize,
    pub eps: f64,
}

impl Default for GradientPyramid {
    fn default() -> Self {
        Self {
            levels: 3,
            eps: 1e-6,
        }
    }
}

fn pool<T: Real>(img: &Image<T>) -> Image<T> {
    let (w, h, ch) = (img.width / 2, img.height / 2, img.channels);
    let q: T = lit(0.25);
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s = img.get(2 * x, 2 * y, c)
                    + img.get(2 * x + 1, 2 * y, c)
                    + img.get(2 * x, 2 * y + 1, c)
                    + img.get(2 * x + 1, 2 * y + 1, c);
                out.set(x, y, c, s * q);
            }
        }
    }
    out
}

fn pool_backward<T: Real>(d: &Image<T>, w: usize, h: usize) -> Image<T> {
    let q: T = lit(0.25);
    let mut out = Image::new(w, h, d.channels);
    for y in 0..d.height {
        for x in 0..d.width {
            for c in 0..d.channels {
                let g = d.get(x, y, c) * q;
                for (u, v) in [
                    (2 * x, 2 * y),
                    (2 * x + 1, 2 * y),
                    (2 * x, 2 * y + 1),
                    (2 * x + 1, 2 * y + 1),
                ] {
                    let i = out.idx(u, v, c);
                    out.data[i] += g;
                }
            }
        }
    }
    out
}

impl GradientPyramid {
    fn pyramid<T: Real>(&self, img: &Image<T>) -> Vec<Image<T>> {
        let mut levels = vec![img.clone()];
        while levels.len() < self.levels {
            let last = levels.last().unwrap();
            if last.width < 4 || last.height < 4 {
                break;
            }
            let next = pool(last);
            levels.push(next);
        }
        levels
    }
}

impl<T: Real> FeatureExtractor<T> for GradientPyramid {
    fn features(&self, img: &Image<T>) -> Vec<T> {
        let eps: T = lit(self.eps);
        let mut f = Vec::new();
        for l in self.pyramid(img) {
            for y in 0..l.height.saturating_sub(1) {
                for x in 0..l.width.saturating_sub(1) {
                    for c in 0..l.channels {
                        let gx = l.get(x + 1, y, c) - l.get(x, y, c);
                        let gy = l.get(x, y + 1, c) - l.get(x, y, c);
                        f.push((gx * gx + gy * gy + eps).sqrt());
                    }
                }
            }
        }
        f
    }

    fn backward(&self, img: &Image<T>, d: &[T]) -> Image<T> {
        let eps: T = lit(self.eps);
        let levels = self.pyramid(img);
        let mut k = 0;
        let mut d_levels: Vec<Image<T>> = Vec::with_capacity(levels.len());
        for l in &levels {
            let mut g = Image::new(l.width, l.height, l.channels);
            for y in 0..l.height.saturating_sub(1) {
                for x in 0..l.width.saturating_sub(1) {
                    for c in 0..l.channels {
                        let gx = l.get(x + 1, y, c) - l.get(x, y, c);
                        let gy = l.get(x, y + 1, c) - l.get(x, y, c);
                        let m = (gx * gx + gy * gy + eps).sqrt();
                        let (ax, ay) = (d[k] * gx / m, d[k] * gy / m);
                        k += 1;
                        let i00 = g.idx(x, y, c);
                        let i10 = g.idx(x + 1, y, c);
                        let i01 = g.idx(x, y + 1, c);
                        g.data[i10] += ax;
                        g.data[i01] += ay;
                        g.data[i00] -= ax + ay;
                    }
                }
            }
            d_levels.push(g);
        }
        // fold coarse-level gradients back down the pyramid
        let mut acc = d_levels.pop().unwrap();
        for li in (0..d_levels.len()).rev() {
            let mut up = pool_backward(&acc, levels[li].width, levels[li].height);
            for (a, b) in up.data.iter_mut().zip(&d_levels[li].data) {
                *a += *b;
            }
            acc = up;
        }
        acc
    }
}

/// `1 − cos(φ(pred), φ(target))` with tool pixels zeroed in both images.
pub fn loss_perceptual<T: Real>(
    pred: &Image<T>,
    target: &Image<T>,
    tool_mask: Option<&Mask>,
    extractor: &dyn FeatureExtractor<T>,
) -> ImageLoss<T> {
    assert!(pred.same_shape(target));
    let ch = pred.channels;
    let zero_masked = |img: &Image<T>| {
        let mut o = img.clone();
        if let Some(m) = tool_mask {
            for p in 0..o.pixels() {
                if m.data[p] {
                    o.data[p * ch..(p + 1) * ch].fill(T::zero());
                }
            }
        }
        o
    };
    let (x, y) = (zero_masked(pred), zero_masked(target));
    let (fx, fy) = (extractor.features(&x), extractor.features(&y));
    let Some(c) = Cosine::new_slices(&fx, &fy) else {
        warn!("perceptual features vanished; term skipped");
        return ImageLoss {
            value: T::zero(),
            grad: Image::new(pred.width, pred.height, ch),
        };
    };
    let d = c.grad_a_slices(&fx, &fy, -T::one());
    let mut grad = extractor.backward(&x, &d);
    if let Some(m) = tool_mask {
        for p in 0..grad.pixels() {
            if m.data[p] {
                grad.data[p * ch..(p + 1) * ch].fill(T::zero());
            }
        }
    }
    ImageLoss {
        value: T::one() - c.value,
        grad,
    }
}
