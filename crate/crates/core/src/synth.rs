//! Synthetic deforming height field seen by a fixed pinhole camera.
//!
//! The camera sits at the origin looking down `+z`; the surface is
//! `z = base + A·sin(2πf·x)·sin(2πt)` with an albedo texture attached to
//! `(x, y)`. Every pixel is traced through its center by a scalar root
//! solve, so no code is shared with the splatting renderer.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraModel;
use crate::error::Result;
use crate::image::{Image, Mask};
use crate::io::dataset::{timestamps, write_dataset, Extras};
use crate::pimi::FrameBundle;

/// Screen-space rectangle sliding across the view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    /// Width and height as fractions of the image.
    pub size: [f64; 2],
    /// Center at `t = 0` and `t = 1`, as image fractions.
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Depth in front of the tissue, as a fraction of `base`.
    pub depth_fraction: f64,
    pub color: [f64; 3],
}

impl Default for Occluder {
    fn default() -> Self {
        Self {
            size: [0.25, 0.18],
            start: [0.2, 0.62],
            end: [0.8, 0.45],
            depth_fraction: 0.6,
            color: [0.55, 0.57, 0.62],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub focal: f64,
    pub base: f64,
    pub amplitude: f64,
    /// Spatial frequency along x, in cycles per world unit.
    pub frequency: f64,
    pub texture_seed: u64,
    pub occluder: Option<Occluder>,
}

impl Default for SynthScene {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 30,
            focal: 64.0,
            base: 1.5,
            amplitude: 0.1,
            frequency: 1.0,
            texture_seed: 0,
            occluder: Some(Occluder::default()),
        }
    }
}

/// Albedo as a sum of random plane waves around a tissue tint.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

const TINT: [f64; 3] = [0.62, 0.32, 0.28];

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..8)
            .map(|_| {
                let k = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let phase = rng.random_range(0.0..TAU);
                let amp = [
                    rng.random_range(0.02..0.09),
                    rng.random_range(0.02..0.07),
                    rng.random_range(0.02..0.07),
                ];
                (k, phase, amp)
            })
            .collect();
        Self { waves }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let mut c = TINT;
        for (k, phase, amp) in &self.waves {
            let s = (TAU * (k[0] * x + k[1] * y) + phase).sin();
            for ch in 0..3 {
                c[ch] += amp[ch] * s;
            }
        }
        c.map(|v| v.clamp(0.02, 0.98))
    }
}

impl SynthScene {
    pub fn camera(&self) -> CameraModel<f64> {
        CameraModel::simple(self.focal, self.width, self.height)
    }

    fn wave(&self, t: f64) -> f64 {
        self.amplitude * (TAU * t).sin()
    }

    /// Surface height at world `x` and time `t`.
    pub fn surface_z(&self, x: f64, t: f64) -> f64 {
        self.base + self.wave(t) * (TAU * self.frequency * x).sin()
    }

    /// `∂z/∂x` of the surface.
    pub fn surface_slope(&self, x: f64, t: f64) -> f64 {
        self.wave(t) * TAU * self.frequency * (TAU * self.frequency * x).cos()
    }

    /// Camera-space unit normal facing the camera.
    pub fn surface_normal(&self, x: f64, t: f64) -> [f64; 3] {
        let hx = self.surface_slope(x, t);
        let n = (hx * hx + 1.0).sqrt();
        [hx / n, 0.0, -1.0 / n]
    }

    /// Depth along the ray `(dx, dy, 1)`: the root of `z − surface_z(z·dx) = 0`.
    /// The amplitude and slope bounds keep the root unique, so Newton from
    /// the base plane converges.
    pub fn ray_depth(&self, dx: f64, t: f64) -> f64 {
        let w = self.wave(t);
        let k = TAU * self.frequency;
        let mut z = self.base;
        for _ in 0..60 {
            let g = z - self.base - w * (k * dx * z).sin();
            let dg = 1.0 - w * k * dx * (k * dx * z).cos();
            let step = g / dg;
            z -= step;
            if step.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        z
    }

    fn ray(&self, px: usize, py: usize) -> (f64, f64) {
        let cam = self.camera();
        (
            (px as f64 + 0.5 - cam.cx) / cam.fx,
            (py as f64 + 0.5 - cam.cy) / cam.fy,
        )
    }

    fn occluded(&self, px: usize, py: usize, t: f64) -> bool {
        let Some(o) = &self.occluder else {
            return false;
        };
        let cx = o.start[0] + (o.end[0] - o.start[0]) * t;
        let cy = o.start[1] + (o.end[1] - o.start[1]) * t;
        let u = (px as f64 + 0.5) / self.width as f64;
        let v = (py as f64 + 0.5) / self.height as f64;
        (u - cx).abs() <= 0.5 * o.size[0] && (v - cy).abs() <= 0.5 * o.size[1]
    }
}

/// One rendered sequence plus the evaluation-only ground truth.
#[derive(Clone, Debug)]
pub struct SynthFrames {
    pub camera: CameraModel<f64>,
    pub frames: Vec<FrameBundle<f64>>,
    /// Tissue colors with the occluder removed.
    pub clean: Vec<Image<f64>>,
    /// Camera-space tissue normals with the occluder removed.
    pub normals: Vec<Image<f64>>,
}

pub fn generate(scene: &SynthScene) -> SynthFrames {
    let tex = Texture::new(scene.texture_seed);
    let (w, h) = (scene.width, scene.height);
    let mut out = SynthFrames {
        camera: scene.camera(),
        frames: Vec::with_capacity(scene.frames),
        clean: Vec::with_capacity(scene.frames),
        normals: Vec::with_capacity(scene.frames),
    };
    for t in timestamps(scene.frames) {
        let mut image = Image::new(w, h, 3);
        let mut clean = Image::new(w, h, 3);
        let mut depth = Image::new(w, h, 1);
        let mut normals = Image::new(w, h, 3);
        let mut mask = Mask::new(w, h, false);
        for py in 0..h {
            for px in 0..w {
                let (dx, dy) = scene.ray(px, py);
                let z = scene.ray_depth(dx, t);
                let (x, y) = (dx * z, dy * z);
                let c = tex.color(x, y);
                let p = py * w + px;
                clean.data[3 * p..3 * p + 3].copy_from_slice(&c);
                normals.data[3 * p..3 * p + 3].copy_from_slice(&scene.surface_normal(x, t));
                if scene.occluded(px, py, t) {
                    let o = scene
                        .occluder
                        .as_ref()
                        .expect("occluded implies an occluder");
                    mask.data[p] = true;
                    // mild vertical shading keeps the tool from being flat
                    let shade = 0.9 + 0.2 * (py as f64 / h as f64);
                    image.data[3 * p..3 * p + 3]
                        .copy_from_slice(&o.color.map(|v| (v * shade).min(1.0)));
                    depth.data[p] = o.depth_fraction * scene.base;
                } else {
                    image.data[3 * p..3 * p + 3].copy_from_slice(&c);
                    depth.data[p] = z;
                }
            }
        }
        out.frames.push(FrameBundle {
            image,
            depth,
            tool_mask: mask,
            timestamp: t,
        });
        out.clean.push(clean);
        out.normals.push(normals);
    }
    out
}

/// Generates the scene and writes it in the dataset layout with the
/// `clean/` and `normals/` extras.
pub fn write_scene(scene: &SynthScene, root: &Path) -> Result<SynthFrames> {
    let s = generate(scene);
    write_dataset(
        root,
        &s.camera,
        &s.frames,
        Extras {
            clean: Some(&s.clean),
            normals: Some(&s.normals),
        },
    )?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(amplitude: f64, occluder: Option<Occluder>) -> SynthScene {
        SynthScene {
            width: 16,
            height: 12,
            frames: 6,
            focal: 16.0,
            amplitude,
            occluder,
            ..SynthScene::default()
        }
    }

    #[test]
    fn flat_scene_is_static_plane() {
        let s = generate(&small(0.0, None));
        for f in &s.frames[1..] {
            assert_eq!(f.image, s.frames[0].image);
            assert_eq!(f.depth, s.frames[0].depth);
        }
        assert!(s.frames[0]
            .depth
            .data
            .iter()
            .all(|d| (d - 1.5).abs() < 1e-6));
    }

    #[test]
    fn no_occluder_no_mask() {
        let s = generate(&small(0.1, None));
        assert!(s.frames.iter().all(|f| f.tool_mask.count() == 0));
        assert!(s.frames.iter().zip(&s.clean).all(|(f, c)| f.image == *c));
    }

    #[test]
    fn occluder_moves() {
        let s = generate(&small(0.1, Some(Occluder::default())));
        let first = &s.frames[0].tool_mask;
        let last = &s.frames[5].tool_mask;
        assert!(first.count() > 0 && last.count() > 0);
        assert_ne!(first, last);
    }

    #[test]
    fn depth_is_on_the_surface() {
        let sc = small(0.1, None);
        for t in [0.1, 0.25, 0.6] {
            for dx in [-0.5, -0.1, 0.0, 0.3, 0.55] {
                let z = sc.ray_depth(dx, t);
                assert!((z - sc.surface_z(dx * z, t)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_is_orthogonal_to_surface_tangent() {
        let sc = small(0.1, None);
        let (x, t) = (0.21, 0.2);
        let n = sc.surface_normal(x, t);
        let tangent = [1.0, 0.0, sc.surface_slope(x, t)];
        assert!((n[0] * tangent[0] + n[2] * tangent[2]).abs() < 1e-12);
        assert!(n[2] < 0.0);
    }
}
