//! Point-cloud initialization from masked, confidence-weighted depth and
//! color aggregated across every frame of a sequence.

use log::warn;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::linalg::{Quat, Vec3};
use crate::real::{lit, logit, Real};
use crate::sh::SH_C0;
use crate::surfel::GaussianSurfel;

/// Lower and upper depth percentiles kept by [`confidence_mask`].
pub const DEPTH_PERCENTILES: (f64, f64) = (2.0, 99.0);
pub const INITIAL_OPACITY: f64 = 0.1;
pub const DEFAULT_STRIDE: usize = 2;

/// One observation of the scene.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle<T> {
    /// Linear RGB in `[0, 1]`.
    pub image: Image<T>,
    pub depth: Image<T>,
    /// `true` where a tool occludes the tissue.
    pub tool_mask: Mask,
    pub timestamp: T,
}

impl<T: Real> FrameBundle<T> {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.image.width, self.image.height);
        if self.image.channels != 3 || self.depth.channels != 1 {
            return Err(Error::DimensionMismatch(
                "frame needs a 3-channel image and 1-channel depth".into(),
            ));
        }
        if self.depth.width != w
            || self.depth.height != h
            || self.tool_mask.width != w
            || self.tool_mask.height != h
        {
            return Err(Error::DimensionMismatch(format!(
                "image {w}x{h}, depth {}x{}, mask {}x{}",
                self.depth.width, self.depth.height, self.tool_mask.width, self.tool_mask.height
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

/// Per-pixel weighted means over the sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateMaps<T> {
    pub depth_star: Image<T>,
    pub color_star: Image<T>,
    pub weight_sum: Image<T>,
    pub valid: Mask,
}

/// Percentile of sorted data with linear interpolation between ranks.
pub fn percentile<T: Real>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac: T = lit(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Binary confidence weights: finite depth inside the frame's percentile band
/// and not covered by a tool.
pub fn confidence_mask<T: Real>(frame: &FrameBundle<T>) -> Mask {
    let (w, h) = (frame.width(), frame.height());
    let mut finite: Vec<T> = frame
        .depth
        .data
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .collect();
    if finite.is_empty() {
        warn!("frame at t={} has no finite depth", frame.timestamp);
        return Mask::new(w, h, false);
    }
    finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = percentile(&finite, DEPTH_PERCENTILES.0);
    let hi = percentile(&finite, DEPTH_PERCENTILES.1);
    let data = frame
        .depth
        .data
        .iter()
        .zip(&frame.tool_mask.data)
        .map(|(&d, &tool)| !tool && d.is_finite() && d >= lo && d <= hi)
        .collect();
    Mask {
        width: w,
        height: h,
        data,
    }
}

/// Confidence-weighted mean depth and color over all frames, summed in frame order.
pub fn aggregate<T: Real>(frames: &[FrameBundle<T>]) -> Result<AggregateMaps<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParameter("aggregation needs at least one frame".into()))?;
    let (w, h) = (first.width(), first.height());
    for f in frames {
        f.validate()?;
        if f.width() != w || f.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "frame {}x{} in a {w}x{h} sequence",
                f.width(),
                f.height()
            )));
        }
    }
    let mut depth = Image::new(w, h, 1);
    let mut color = Image::new(w, h, 3);
    let mut weight = Image::new(w, h, 1);
    for f in frames {
        let m = confidence_mask(f);
        for p in 0..w * h {
            if m.data[p] {
                weight.data[p] += T::one();
                depth.data[p] += f.depth.data[p];
                for c in 0..3 {
                    color.data[3 * p + c] += f.image.data[3 * p + c];
                }
            }
        }
    }
    let mut valid = Mask::new(w, h, false);
    for p in 0..w * h {
        let ws = weight.data[p];
        if ws > T::zero() {
            valid.data[p] = true;
            depth.data[p] /= ws;
            for c in 0..3 {
                color.data[3 * p + c] /= ws;
            }
        }
    }
    Ok(AggregateMaps {
        depth_star: depth,
        color_star: color,
        weight_sum: weight,
        valid,
    })
}

/// Back-projects every `stride`-th valid pixel into a camera-facing surfel.
pub fn build_cloud<T: Real>(
    agg: &AggregateMaps<T>,
    cam: &CameraModel<T>,
    stride: usize,
) -> Result<Vec<GaussianSurfel<T>>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    let (w, h) = (agg.valid.width, agg.valid.height);
    if w != cam.width || h != cam.height {
        return Err(Error::DimensionMismatch(format!(
            "maps {w}x{h} vs camera {}x{}",
            cam.width, cam.height
        )));
    }
    let half: T = lit(0.5);
    let footprint: T = lit(stride as f64);
    let eye = cam.eye();
    let opacity = logit::<T>(lit(INITIAL_OPACITY));
    let dc = |c: T| (c - half) / lit(SH_C0);
    let mut out = Vec::new();
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            if !agg.valid.get(x, y) {
                continue;
            }
            let d = agg.depth_star.get(x, y, 0);
            let px: T = lit(x as f64);
            let py: T = lit(y as f64);
            let pos = cam.backproject(px + half, py + half, d)?;
            let to_cam =
                (eye - pos)
                    .try_normalize()
                    .unwrap_or(Vec3::new(T::zero(), T::zero(), -T::one()));
            let s = d * footprint / cam.fx;
            let c = agg.color_star.pixel(x, y);
            out.push(GaussianSurfel {
                position: pos,
                rotation: Quat::from_z_to(to_cam),
                log_scales: [s.ln(), s.ln()],
                opacity_logit: opacity,
                sh: vec![dc(c[0]), dc(c[1]), dc(c[2])],
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Initialization(
            "no valid depth pixels to initialize from".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, depth: Vec<f64>) -> FrameBundle<f64> {
        FrameBundle {
            image: Image::filled(w, h, 3, 0.5),
            depth: Image::from_vec(w, h, 1, depth).unwrap(),
            tool_mask: Mask::new(w, h, false),
            timestamp: 0.0,
        }
    }

    #[test]
    fn constant_depth_keeps_everything() {
        let f = frame(4, 3, vec![2.5; 12]);
        assert_eq!(confidence_mask(&f).count(), 12);
    }

    #[test]
    fn outlier_is_rejected() {
        let mut d = vec![1.0; 100];
        d[37] = 1e6;
        let m = confidence_mask(&frame(10, 10, d));
        assert!(!m.data[37]);
        assert_eq!(m.count(), 99);
    }

    #[test]
    fn tool_pixels_never_selected() {
        let mut f = frame(4, 4, vec![1.0; 16]);
        f.tool_mask = Mask::new(4, 4, true);
        assert_eq!(confidence_mask(&f).count(), 0);
    }

    #[test]
    fn non_finite_frame_gives_empty_mask() {
        let f = frame(2, 2, vec![f64::NAN; 4]);
        assert_eq!(confidence_mask(&f).count(), 0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0f64, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), 2.0);
        assert!((percentile(&v, 2.0) - 0.08).abs() < 1e-12);
        assert_eq!(percentile(&v, 100.0), 4.0);
    }

    #[test]
    fn single_frame_is_identity() {
        // constant depth keeps every pixel inside the band
        let mut f = frame(4, 4, vec![1.0; 16]);
        f.image = Image::from_vec(4, 4, 3, (0..48).map(|i| i as f64 / 48.0).collect()).unwrap();
        let agg = aggregate(std::slice::from_ref(&f)).unwrap();
        assert_eq!(agg.depth_star, f.depth);
        assert_eq!(agg.color_star, f.image);
    }

    #[test]
    fn two_frame_mean() {
        let a = frame(1, 1, vec![1.0]);
        let b = frame(1, 1, vec![3.0]);
        let agg = aggregate(&[a, b]).unwrap();
        assert_eq!(agg.depth_star.data[0], 2.0);
        assert_eq!(agg.weight_sum.data[0], 2.0);
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = frame(2, 1, vec![1.0; 2]);
        let b = frame(1, 2, vec![1.0; 2]);
        assert!(matches!(
            aggregate(&[a, b]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn unit_map_gives_surfel_on_axis() {
        let agg: AggregateMaps<f64> = AggregateMaps {
            depth_star: Image::filled(1, 1, 1, 1.0),
            color_star: Image::filled(1, 1, 3, 0.5),
            weight_sum: Image::filled(1, 1, 1, 1.0),
            valid: Mask::new(1, 1, true),
        };
        let cam = CameraModel::simple(1.0, 1, 1);
        let cloud = build_cloud(&agg, &cam, 1).unwrap();
        assert_eq!(cloud.len(), 1);
        let p: Vec3<f64> = cloud[0].position;
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 1.0).abs() < 1e-12);
        assert_eq!(cloud[0].sh, vec![0.0; 3]);
        let n: Vec3<f64> = cloud[0].normal();
        assert!((n.z + 1.0).abs() < 1e-12, "normal faces the camera: {n:?}");
        assert!((sigmoid_of(cloud[0].opacity_logit) - 0.1).abs() < 1e-12);
    }

    fn sigmoid_of(x: f64) -> f64 {
        crate::real::sigmoid(x)
    }

    #[test]
    fn empty_maps_fail() {
        let agg = AggregateMaps {
            depth_star: Image::new(2, 2, 1),
            color_star: Image::new(2, 2, 3),
            weight_sum: Image::new(2, 2, 1),
            valid: Mask::new(2, 2, false),
        };
        let cam = CameraModel::simple(2.0, 2, 2);
        assert!(matches!(
            build_cloud(&agg, &cam, 2),
            Err(Error::Initialization(_))
        ));
    }
}
