//! Training objective: image, geometry and locality terms with gradients.

mod locality;
mod normal;
mod perceptual;
mod photometric;
pub mod ssim;

pub use locality::{loss_locality, LocalityLoss, NeighborGraph, DEFAULT_K};
pub use normal::{expected_normals, loss_normal, NormalLoss};
pub use perceptual::{loss_perceptual, CenteredIdentity, FeatureExtractor, GradientPyramid};
pub use photometric::{loss_depth, loss_photometric, loss_tv};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::real::Real;

/// Scalar loss with its gradient with respect to one image.
#[derive(Clone, Debug)]
pub struct ImageLoss<T> {
    pub value: T,
    pub grad: Image<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Coefficient of the whole photometric term (L1 + SSIM mixture).
    pub photo: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub pos: f64,
    pub cov: f64,
    pub per: f64,
    pub depth: f64,
    pub normal: f64,
    pub alpha_n: f64,
    pub beta_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photo: 1.0,
            ssim: 0.2,
            smooth: 0.006,
            pos: 1.0,
            cov: 200.0,
            per: 1.0,
            depth: 0.0001,
            normal: 1.0,
            alpha_n: 0.6,
            beta_n: 0.4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.photo,
            self.ssim,
            self.smooth,
            self.pos,
            self.cov,
            self.per,
            self.depth,
            self.normal,
            self.alpha_n,
            self.beta_n,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if self.ssim > 1.0 {
            return Err(Error::Config("ssim weight must lie in [0, 1]".into()));
        }
        if (self.alpha_n + self.beta_n - 1.0).abs() > 1e-9 {
            return Err(Error::Config("normal target weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// Unweighted value of every term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub photo: f64,
    pub tv: f64,
    pub pos: f64,
    pub cov: f64,
    pub per: f64,
    pub depth: f64,
    pub normal: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.photo * self.photo
            + w.smooth * self.tv
            + w.pos * self.pos
            + w.cov * self.cov
            + w.per * self.per
            + w.depth * self.depth
            + w.normal * self.normal
    }

    pub fn is_finite(&self) -> bool {
        [
            self.photo,
            self.tv,
            self.pos,
            self.cov,
            self.per,
            self.depth,
            self.normal,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Cosine between two vectors, kept with the norms for the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Cosine<T> {
    pub value: T,
    na: T,
    nb: T,
    a: Vec3<T>,
    b: Vec3<T>,
}

const MIN_NORM: f64 = 1e-12;

impl<T: Real> Cosine<T> {
    pub fn new(a: Vec3<T>, b: Vec3<T>) -> Option<Self> {
        let (na, nb) = (a.norm(), b.norm());
        if na <= T::lit(MIN_NORM) || nb <= T::lit(MIN_NORM) {
            return None;
        }
        Some(Self {
            value: a.dot(b) / (na * nb),
            na,
            nb,
            a,
            b,
        })
    }

    /// `scale · ∂cos/∂a` and `scale · ∂cos/∂b`.
    pub fn grad(&self, scale: T) -> (Vec3<T>, Vec3<T>) {
        let inv = T::one() / (self.na * self.nb);
        let da = self.b * inv - self.a * (self.value / (self.na * self.na));
        let db = self.a * inv - self.b * (self.value / (self.nb * self.nb));
        (da * scale, db * scale)
    }

    pub fn new_slices(a: &[T], b: &[T]) -> Option<Cosine<T>> {
        let dot: T = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
        let na = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
        let nb = b.iter().map(|x| *x * *x).sum::<T>().sqrt();
        if na <= T::lit(MIN_NORM) || nb <= T::lit(MIN_NORM) {
            return None;
        }
        Some(Cosine {
            value: dot / (na * nb),
            na,
            nb,
            a: Vec3::zero(),
            b: Vec3::zero(),
        })
    }

    /// `scale · ∂cos/∂a` for slice operands.
    pub fn grad_a_slices(&self, a: &[T], b: &[T], scale: T) -> Vec<T> {
        let inv = T::one() / (self.na * self.nb);
        let k = self.value / (self.na * self.na);
        a.iter()
            .zip(b)
            .map(|(x, y)| (*y * inv - *x * k) * scale)
            .collect()
    }
}
