//! Sinusoidal frequency encoding of normalized positions and timestamps.

use log::warn;

use crate::linalg::Vec3;
use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodingConfig {
    pub spatial_bands: usize,
    pub temporal_bands: usize,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            spatial_bands: 10,
            temporal_bands: 4,
            include_input: true,
        }
    }
}

impl EncodingConfig {
    pub fn spatial_width(&self) -> usize {
        3 * (self.include_input as usize) + 6 * self.spatial_bands
    }

    pub fn temporal_width(&self) -> usize {
        self.include_input as usize + 2 * self.temporal_bands
    }

    pub fn width(&self) -> usize {
        self.spatial_width() + self.temporal_width()
    }
}

/// Affine map from world coordinates into the `[-1, 1]³` box seen by the encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneNormalizer<T> {
    pub center: Vec3<T>,
    pub half_extent: T,
}

impl<T: Real> SceneNormalizer<T> {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zero(),
            half_extent: T::one(),
        }
    }

    /// Box around `points` padded by `margin` (relative) so deformation has room.
    pub fn fit(points: impl IntoIterator<Item = Vec3<T>>, margin: T) -> Self {
        let mut lo = Vec3::new(T::infinity(), T::infinity(), T::infinity());
        let mut hi = -lo;
        let mut any = false;
        for p in points {
            any = true;
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        if !any {
            return Self::identity();
        }
        let half: T = lit(0.5);
        let ext = (hi - lo) * half;
        let r = ext.x.max(ext.y).max(ext.z).max(lit(1e-6));
        Self {
            center: (lo + hi) * half,
            half_extent: r * (T::one() + margin),
        }
    }

    /// Normalized coordinates, clamped into the box, plus a per-axis
    /// flag telling whether the clamp was inactive.
    pub fn apply(&self, p: Vec3<T>) -> (Vec3<T>, [bool; 3]) {
        let q = (p - self.center) * (T::one() / self.half_extent);
        let mut inside = [true; 3];
        let mut c = q.to_array();
        for k in 0..3 {
            if c[k] > T::one() || c[k] < -T::one() {
                inside[k] = false;
                c[k] = c[k].max(-T::one()).min(T::one());
            }
        }
        if inside.contains(&false) {
            warn!(
                "position {:?} left the normalized scene box and was clamped",
                p.to_array()
            );
        }
        (Vec3::from_array(c), inside)
    }

    /// Pulls a gradient with respect to the normalized coordinates back to world units.
    pub fn backward(&self, inside: [bool; 3], d: Vec3<T>) -> Vec3<T> {
        let s = T::one() / self.half_extent;
        let a = d.to_array();
        Vec3::new(
            if inside[0] { a[0] * s } else { T::zero() },
            if inside[1] { a[1] * s } else { T::zero() },
            if inside[2] { a[2] * s } else { T::zero() },
        )
    }
}

/// Writes the encoding of `(p, t)` into `out` (length [`EncodingConfig::width`]).
pub fn encode_into<T: Real>(cfg: &EncodingConfig, p: Vec3<T>, t: T, out: &mut [T]) {
    debug_assert_eq!(out.len(), cfg.width());
    let pi = T::PI();
    let pa = p.to_array();
    let mut k = 0;
    if cfg.include_input {
        out[..3].copy_from_slice(&pa);
        k = 3;
    }
    let mut freq = pi;
    for _ in 0..cfg.spatial_bands {
        for v in pa {
            out[k] = (freq * v).sin();
            k += 1;
        }
        for v in pa {
            out[k] = (freq * v).cos();
            k += 1;
        }
        freq = freq + freq;
    }
    if cfg.include_input {
        out[k] = t;
        k += 1;
    }
    let mut freq = pi;
    for _ in 0..cfg.temporal_bands {
        out[k] = (freq * t).sin();
        out[k + 1] = (freq * t).cos();
        k += 2;
        freq = freq + freq;
    }
}

pub fn encode<T: Real>(cfg: &EncodingConfig, p: Vec3<T>, t: T) -> Vec<T> {
    let mut out = vec![T::zero(); cfg.width()];
    encode_into(cfg, p, t, &mut out);
    out
}

/// Gradient of `⟨d_enc, encode(p, t)⟩` with respect to `p` and `t`.
pub fn encode_backward<T: Real>(
    cfg: &EncodingConfig,
    p: Vec3<T>,
    t: T,
    d_enc: &[T],
) -> (Vec3<T>, T) {
    let pi = T::PI();
    let pa = p.to_array();
    let mut dp = [T::zero(); 3];
    let mut k = 0;
    if cfg.include_input {
        dp.copy_from_slice(&d_enc[..3]);
        k = 3;
    }
    let mut freq = pi;
    for _ in 0..cfg.spatial_bands {
        for a in 0..3 {
            dp[a] += d_enc[k + a] * freq * (freq * pa[a]).cos();
            dp[a] -= d_enc[k + 3 + a] * freq * (freq * pa[a]).sin();
        }
        k += 6;
        freq = freq + freq;
    }
    let mut dt = T::zero();
    if cfg.include_input {
        dt = d_enc[k];
        k += 1;
    }
    let mut freq = pi;
    for _ in 0..cfg.temporal_bands {
        dt += d_enc[k] * freq * (freq * t).cos() - d_enc[k + 1] * freq * (freq * t).sin();
        k += 2;
        freq = freq + freq;
    }
    (Vec3::from_array(dp), dt)
}
