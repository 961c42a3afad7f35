//! Checkpoint directory:
//!
//! ```text
//! ckpt/
//!   surfels.sgsc   canonical surfels
//!   network.sgsw   deformation network
//!   meta.txt       iteration, encoder box, encoding bands, scene diagonal
//!   camera.txt     camera used for training
//! ```
//!
//! All binary payloads are little-endian `u32` headers followed by `f32` data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::create_dir;
use crate::camera::{CameraFile, CameraModel};
use crate::error::{Error, Result};
use crate::linalg::{Quat, Vec3};
use crate::mlp::{DeformationNetwork, EncodingConfig, Layer, SceneNormalizer};
use crate::model::SceneModel;
use crate::real::{lit, Real};
use crate::sh::{num_coeffs, MAX_SH_DEGREE};
use crate::surfel::GaussianSurfel;

pub const SURFEL_MAGIC: &[u8; 4] = b"SGSC";
pub const NETWORK_MAGIC: &[u8; 4] = b"SGSW";
pub const VERSION: u32 = 1;

pub const SURFELS_FILE: &str = "surfels.sgsc";
pub const NETWORK_FILE: &str = "network.sgsw";
pub const META_FILE: &str = "meta.txt";
pub const CAMERA_FILE: &str = "camera.txt";

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {}", self.at),
            ));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(
                self.path,
                format!("missing {} header", String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.at),
            ));
        }
        Ok(())
    }
}

fn put_f32<T: Real>(out: &mut Vec<u8>, v: T) {
    out.extend_from_slice(&v.as_f32().to_le_bytes());
}

pub fn encode_surfels<T: Real>(surfels: &[GaussianSurfel<T>]) -> Result<Vec<u8>> {
    let first = surfels.first().map_or(3, |s| s.sh.len());
    let degree = (0..=MAX_SH_DEGREE)
        .find(|&d| num_coeffs(d) == first)
        .ok_or_else(|| {
            Error::InvalidParameter(format!("{first} SH coefficients match no degree"))
        })?;
    if surfels.iter().any(|s| s.sh.len() != first) {
        return Err(Error::InvalidParameter(
            "surfels disagree on SH degree".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + surfels.len() * 4 * (10 + num_coeffs(degree)));
    out.extend_from_slice(SURFEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(surfels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(degree as u32).to_le_bytes());
    for s in surfels {
        for v in s.position.to_array() {
            put_f32(&mut out, v);
        }
        for v in s.rotation.to_array() {
            put_f32(&mut out, v);
        }
        put_f32(&mut out, s.log_scales[0]);
        put_f32(&mut out, s.log_scales[1]);
        put_f32(&mut out, s.opacity_logit);
        for &v in &s.sh {
            put_f32(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_surfels<T: Real>(bytes: &[u8], path: &Path) -> Result<Vec<GaussianSurfel<T>>> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(SURFEL_MAGIC)?;
    let count = r.u32()? as usize;
    let degree = r.u32()? as usize;
    if degree > MAX_SH_DEGREE {
        return Err(Error::format(path, format!("SH degree {degree} above 3")));
    }
    let nsh = num_coeffs(degree);
    let f = |r: &mut Reader| -> Result<T> { Ok(lit(r.f32()? as f64)) };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let position = Vec3::new(f(&mut r)?, f(&mut r)?, f(&mut r)?);
        let rotation = Quat::new(f(&mut r)?, f(&mut r)?, f(&mut r)?, f(&mut r)?);
        let log_scales = [f(&mut r)?, f(&mut r)?];
        let opacity_logit = f(&mut r)?;
        let sh = (0..nsh).map(|_| f(&mut r)).collect::<Result<Vec<T>>>()?;
        out.push(GaussianSurfel {
            position,
            rotation,
            log_scales,
            opacity_logit,
            sh,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_network<T: Real>(net: &DeformationNetwork<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * net.param_count() + 8 * net.layers.len());
    out.extend_from_slice(NETWORK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        out.extend_from_slice(&(l.rows as u32).to_le_bytes());
        out.extend_from_slice(&(l.cols as u32).to_le_bytes());
        for &w in &l.weights {
            put_f32(&mut out, w);
        }
        for &b in &l.biases {
            put_f32(&mut out, b);
        }
    }
    out
}

pub fn decode_network<T: Real>(bytes: &[u8], path: &Path) -> Result<DeformationNetwork<T>> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(NETWORK_MAGIC)?;
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let mut l = Layer::zeros(rows, cols);
        for w in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            *w = lit(r.f32()? as f64);
        }
        layers.push(l);
    }
    r.finish()?;
    let net = DeformationNetwork { layers };
    net.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(net)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_surfels<T: Real>(path: &Path, surfels: &[GaussianSurfel<T>]) -> Result<()> {
    write(path, &encode_surfels(surfels)?)
}

pub fn read_surfels<T: Real>(path: &Path) -> Result<Vec<GaussianSurfel<T>>> {
    decode_surfels(&read(path)?, path)
}

pub fn write_network<T: Real>(path: &Path, net: &DeformationNetwork<T>) -> Result<()> {
    write(path, &encode_network(net))
}

pub fn read_network<T: Real>(path: &Path) -> Result<DeformationNetwork<T>> {
    decode_network(&read(path)?, path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: SceneModel<T>,
    pub camera: CameraModel<T>,
    pub iteration: usize,
}

fn meta_text<T: Real>(model: &SceneModel<T>, iteration: usize) -> String {
    let c = model.normalizer.center;
    let e = &model.encoding;
    let mut s = String::new();
    let _ = writeln!(s, "iteration={iteration}");
    let _ = writeln!(s, "scene_diagonal={}", model.scene_diagonal.as_f32());
    let _ = writeln!(
        s,
        "normalizer_center={} {} {}",
        c.x.as_f32(),
        c.y.as_f32(),
        c.z.as_f32()
    );
    let _ = writeln!(
        s,
        "normalizer_half_extent={}",
        model.normalizer.half_extent.as_f32()
    );
    let _ = writeln!(s, "spatial_bands={}", e.spatial_bands);
    let _ = writeln!(s, "temporal_bands={}", e.temporal_bands);
    let _ = writeln!(s, "include_input={}", e.include_input);
    s
}

pub fn write_checkpoint<T: Real>(
    dir: &Path,
    model: &SceneModel<T>,
    camera: &CameraModel<T>,
    iteration: usize,
) -> Result<()> {
    create_dir(dir)?;
    write_surfels(&dir.join(SURFELS_FILE), &model.surfels)?;
    write_network(&dir.join(NETWORK_FILE), &model.network)?;
    write(&dir.join(META_FILE), meta_text(model, iteration).as_bytes())?;
    let cam = CameraFile {
        camera: camera.cast(),
        timestamps: Vec::new(),
    };
    write(&dir.join(CAMERA_FILE), cam.to_text().as_bytes())
}

pub fn read_checkpoint<T: Real>(dir: &Path) -> Result<Checkpoint<T>> {
    let surfels = read_surfels(&dir.join(SURFELS_FILE))?;
    let network = read_network(&dir.join(NETWORK_FILE))?;
    let meta_path = dir.join(META_FILE);
    let text =
        String::from_utf8(read(&meta_path)?).map_err(|_| Error::format(&meta_path, "not UTF-8"))?;
    let mut kv = std::collections::HashMap::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(&meta_path, format!("expected key=value, found {line:?}"))
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| Error::format(&meta_path, format!("missing {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f32>()
            .map(|v| v as f64)
            .map_err(|_| Error::format(&meta_path, format!("bad number for {k}")))
    };
    let int = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::format(&meta_path, format!("bad integer for {k}")))
    };
    let center: Vec<f64> = get("normalizer_center")?
        .split_whitespace()
        .map(|t| t.parse::<f32>().map(|v| v as f64))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(&meta_path, "bad normalizer_center"))?;
    if center.len() != 3 {
        return Err(Error::format(
            &meta_path,
            "normalizer_center needs three values",
        ));
    }
    let encoding = EncodingConfig {
        spatial_bands: int("spatial_bands")?,
        temporal_bands: int("temporal_bands")?,
        include_input: get("include_input")?
            .parse()
            .map_err(|_| Error::format(&meta_path, "bad include_input"))?,
    };
    if network.input_width() != encoding.width() {
        return Err(Error::format(
            &meta_path,
            format!(
                "encoding width {} does not match the network input {}",
                encoding.width(),
                network.input_width()
            ),
        ));
    }
    let model = SceneModel {
        surfels,
        network,
        encoding,
        normalizer: SceneNormalizer {
            center: Vec3::new(lit(center[0]), lit(center[1]), lit(center[2])),
            half_extent: lit(num("normalizer_half_extent")?),
        },
        scene_diagonal: lit(num("scene_diagonal")?),
    };
    let cam_path = dir.join(CAMERA_FILE);
    let cam_text =
        String::from_utf8(read(&cam_path)?).map_err(|_| Error::format(&cam_path, "not UTF-8"))?;
    let camera = CameraFile::parse(&cam_text)
        .map_err(|m| Error::format(&cam_path, m))?
        .camera
        .cast();
    Ok(Checkpoint {
        model,
        camera,
        iteration: int("iteration")?,
    })
}
