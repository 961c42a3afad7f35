//! Directory layout:
//!
//! ```text
//! root/
//!   cameras.txt          intrinsics, pose, frame count
//!   images/000000.png    8-bit sRGB
//!   depth/000000.sgsd    f32 depth
//!   masks/000000.png     nonzero = occluded
//! ```
//!
//! Synthetic datasets also carry `clean/` (occluder-free images) and
//! `normals/` (`.sgsn` camera-space normals) for evaluation.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use super::{
    create_dir, read_depth, read_mask, read_normals, read_png, write_depth, write_mask,
    write_normals, write_png,
};
use crate::camera::{CameraFile, CameraModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pimi::FrameBundle;
use crate::real::{lit, Real};

pub const CAMERAS_FILE: &str = "cameras.txt";

/// Every eighth frame is held out for testing.
pub fn is_test_frame(index: usize) -> bool {
    index % 8 == 7
}

pub fn split(count: usize) -> (Vec<usize>, Vec<usize>) {
    (0..count).partition(|&i| !is_test_frame(i))
}

/// `t_i = i / T`.
pub fn timestamps(count: usize) -> Vec<f64> {
    (0..count).map(|i| i as f64 / count as f64).collect()
}

fn frame_name(dir: &str, index: usize, ext: &str) -> PathBuf {
    PathBuf::from(dir).join(format!("{index:06}.{ext}"))
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub root: PathBuf,
    pub camera: CameraModel<T>,
    pub frames: Vec<FrameBundle<T>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn train_frames(&self) -> impl Iterator<Item = &FrameBundle<T>> {
        self.train.iter().map(|&i| &self.frames[i])
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &FrameBundle<T>> {
        self.test.iter().map(|&i| &self.frames[i])
    }

    /// Occluder-free images, present for synthetic data.
    pub fn load_clean(&self) -> Result<Vec<Image<T>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| read_png(&self.root.join(frame_name("clean", i, "png"))))
            .collect()
    }

    /// Ground-truth normals, present for synthetic data.
    pub fn load_normals(&self) -> Result<Vec<Image<T>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| read_normals(&self.root.join(frame_name("normals", i, "sgsn"))))
            .collect()
    }
}

pub fn load_camera_file(root: &Path) -> Result<CameraFile> {
    let path = root.join(CAMERAS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    CameraFile::parse(&text).map_err(|msg| Error::format(&path, msg))
}

fn load_frame<T: Real>(
    root: &Path,
    i: usize,
    t: f64,
    cam: &CameraModel<f64>,
) -> Result<FrameBundle<T>> {
    let image = read_png(&root.join(frame_name("images", i, "png")))?;
    let depth = read_depth(&root.join(frame_name("depth", i, "sgsd")))?;
    let tool_mask = read_mask(&root.join(frame_name("masks", i, "png")))?;
    let frame = FrameBundle {
        image,
        depth,
        tool_mask,
        timestamp: lit(t),
    };
    frame
        .validate()
        .map_err(|e| Error::format(root.join(frame_name("images", i, "png")), e.to_string()))?;
    if frame.width() != cam.width || frame.height() != cam.height {
        return Err(Error::DimensionMismatch(format!(
            "frame {i} is {}x{} but the camera is {}x{}",
            frame.width(),
            frame.height(),
            cam.width,
            cam.height
        )));
    }
    Ok(frame)
}

pub fn load_dataset<T: Real>(root: &Path) -> Result<Dataset<T>> {
    let file = load_camera_file(root)?;
    let count = file.timestamps.len();
    if count == 0 {
        return Err(Error::format(
            root.join(CAMERAS_FILE),
            "dataset has no frames",
        ));
    }
    let ts = timestamps(count);
    if file
        .timestamps
        .iter()
        .zip(&ts)
        .any(|(a, b)| (a - b).abs() > 1e-9)
    {
        warn!("timestamps in {CAMERAS_FILE} differ from i/T; using i/T");
    }
    let frames = ts
        .par_iter()
        .enumerate()
        .map(|(i, &t)| load_frame(root, i, t, &file.camera))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = split(count);
    Ok(Dataset {
        root: root.to_path_buf(),
        camera: file.camera.cast(),
        frames,
        train,
        test,
    })
}

/// Optional per-frame extras written next to the standard layout.
#[derive(Clone, Copy, Default)]
pub struct Extras<'a, T> {
    pub clean: Option<&'a [Image<T>]>,
    pub normals: Option<&'a [Image<T>]>,
}

pub fn write_dataset<T: Real>(
    root: &Path,
    camera: &CameraModel<T>,
    frames: &[FrameBundle<T>],
    extras: Extras<'_, T>,
) -> Result<()> {
    for dir in ["images", "depth", "masks"] {
        create_dir(&root.join(dir))?;
    }
    if extras.clean.is_some() {
        create_dir(&root.join("clean"))?;
    }
    if extras.normals.is_some() {
        create_dir(&root.join("normals"))?;
    }
    let file = CameraFile {
        camera: camera.cast(),
        timestamps: timestamps(frames.len()),
    };
    let path = root.join(CAMERAS_FILE);
    std::fs::write(&path, file.to_text()).map_err(|e| Error::io(&path, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.validate()?;
        write_png(&root.join(frame_name("images", i, "png")), &f.image)?;
        write_depth(&root.join(frame_name("depth", i, "sgsd")), &f.depth)?;
        write_mask(&root.join(frame_name("masks", i, "png")), &f.tool_mask)?;
        if let Some(c) = extras.clean {
            write_png(&root.join(frame_name("clean", i, "png")), &c[i])?;
        }
        if let Some(n) = extras.normals {
            write_normals(&root.join(frame_name("normals", i, "sgsn")), &n[i])?;
        }
    }
    Ok(())
}

/// What an image looks like after one trip through 8-bit sRGB.
pub fn quantize<T: Real>(img: &Image<T>) -> Image<T> {
    img.map(|v| lit(super::srgb_to_linear(super::linear_to_srgb(v.as_f64())) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Mask;

    #[test]
    fn split_rule() {
        let (train, test) = split(8);
        assert_eq!(train, vec![0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(test, vec![7]);
        let (train, test) = split(30);
        assert_eq!((train.len(), test.len()), (27, 3));
    }

    #[test]
    fn timestamp_rule() {
        let t = timestamps(30);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[29], 29.0 / 30.0);
        assert_eq!(t.len(), 30);
    }

    #[test]
    fn missing_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset::<f32>(dir.path()) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with(CAMERAS_FILE)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn size_mismatch_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CameraModel::<f32>::simple(4.0, 4, 4);
        let f = FrameBundle {
            image: Image::filled(4, 4, 3, 0.5f32),
            depth: Image::filled(4, 4, 1, 1.0),
            tool_mask: Mask::new(4, 4, false),
            timestamp: 0.0,
        };
        write_dataset(dir.path(), &cam, &[f], Extras::default()).unwrap();
        write_depth(
            &dir.path().join("depth/000000.sgsd"),
            &Image::filled(3, 4, 1, 1.0f32),
        )
        .unwrap();
        assert!(load_dataset::<f32>(dir.path()).is_err());
    }
}
