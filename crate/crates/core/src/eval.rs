//! Held-out evaluation of a trained model against a dataset.

use crate::camera::CameraModel;
use crate::image::{Image, Mask};
use crate::io::dataset::Dataset;
use crate::linalg::Vec3;
use crate::metrics::{cap_psnr, mean_angular_error, psnr, ssim};
use crate::model::SceneModel;
use crate::raster::{RenderOutput, RenderSettings};
use crate::real::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean normal error in degrees, when ground-truth normals exist.
    pub normal_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    pub psnr: f64,
    pub ssim: f64,
    pub normal_error: Option<f64>,
    /// PSNR against the occluder-free images inside the occluder masks of
    /// every frame, pooled over pixels.
    pub footprint_psnr: Option<f64>,
}

/// Pixel normals normalized and flipped to face the camera; zero where the
/// accumulated normal vanishes or coverage is below one half.
pub fn facing_normals<T: Real>(out: &RenderOutput<T>, cam: &CameraModel<T>) -> Image<T> {
    let (w, h) = (out.width(), out.height());
    let mut img = Image::new(w, h, 3);
    let half: T = lit(0.5);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if out.alpha.data[p] <= half {
                continue;
            }
            let Some(mut n) = out.unit_normal(x, y) else {
                continue;
            };
            let ray = Vec3::new(
                (T::from(x).unwrap() + half - cam.cx) / cam.fx,
                (T::from(y).unwrap() + half - cam.cy) / cam.fy,
                T::one(),
            );
            if n.dot(ray) > T::zero() {
                n = -n;
            }
            img.data[3 * p..3 * p + 3].copy_from_slice(&n.to_array());
        }
    }
    img
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Scores `model` on the test frames; `clean` and `normals` are the optional
/// synthetic ground truth indexed like `data.frames`.
pub fn evaluate_model<T: Real>(
    model: &SceneModel<T>,
    data: &Dataset<T>,
    settings: &RenderSettings<T>,
    clean: Option<&[Image<T>]>,
    normals: Option<&[Image<T>]>,
) -> EvalReport {
    let cam = &data.camera;
    let render = |i: usize| model.render_at(cam, data.frames[i].timestamp, settings);
    let frames: Vec<FrameScore> = data
        .test
        .iter()
        .map(|&i| {
            let f = &data.frames[i];
            let out = render(i);
            let normal_error = normals.and_then(|gt| {
                let pred = facing_normals(&out, cam);
                let valid = Mask {
                    width: f.width(),
                    height: f.height(),
                    data: (0..f.tool_mask.data.len())
                        .map(|p| !f.tool_mask.data[p] && out.alpha.data[p] > lit(0.5))
                        .collect(),
                };
                mean_angular_error(&pred, &gt[i], &valid)
            });
            FrameScore {
                index: i,
                psnr: psnr(&out.color, &f.image, Some(&f.tool_mask)).map_or(f64::NAN, cap_psnr),
                ssim: ssim(&out.color, &f.image, Some(&f.tool_mask)).unwrap_or(f64::NAN),
                normal_error,
            }
        })
        .collect();

    let footprint_psnr = clean.and_then(|clean| {
        let (mut s, mut n) = (0.0, 0usize);
        for (i, f) in data.frames.iter().enumerate() {
            if f.tool_mask.count() == 0 {
                continue;
            }
            let out = render(i);
            for p in (0..f.tool_mask.data.len()).filter(|&p| f.tool_mask.data[p]) {
                for c in 0..3 {
                    let d = out.color.data[3 * p + c].as_f64() - clean[i].data[3 * p + c].as_f64();
                    s += d * d;
                }
                n += 3;
            }
        }
        (n > 0).then(|| {
            cap_psnr(if s == 0.0 {
                f64::INFINITY
            } else {
                -10.0 * (s / n as f64).log10()
            })
        })
    });

    EvalReport {
        psnr: mean(frames.iter().map(|f| f.psnr)).unwrap_or(f64::NAN),
        ssim: mean(frames.iter().map(|f| f.ssim)).unwrap_or(f64::NAN),
        normal_error: mean(frames.iter().filter_map(|f| f.normal_error)),
        footprint_psnr,
        frames,
    }
}

impl EvalReport {
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        let mut s = String::from("frame   psnr      ssim    normal_deg\n");
        for f in &self.frames {
            s += &format!(
                "{:>5} {:>8.3} {:>9.5} {:>10}\n",
                f.index,
                f.psnr,
                f.ssim,
                opt(f.normal_error)
            );
        }
        s += &format!(
            " mean {:>8.3} {:>9.5} {:>10}\n",
            self.psnr,
            self.ssim,
            opt(self.normal_error)
        );
        s += &format!(
            "occluder footprint psnr vs clean: {}\n",
            opt(self.footprint_psnr)
        );
        s
    }
}
