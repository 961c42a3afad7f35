//! Pinhole camera, view transforms and screen-space projection of surfels.
//!
//! Continuous image coordinates place the center of pixel `(i, j)` at
//! `(i + 0.5, j + 0.5)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Sym2, Vec3};
use crate::real::{lit, Real};
use crate::surfel::GaussianSurfel;

/// Points at or in front of this camera depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass dilation added to every projected covariance, in px².
pub const DILATION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    /// World-to-camera translation.
    pub translation: Vec3<T>,
}

impl<T: Real> CameraModel<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
        rotation: Mat3<T>,
        translation: Vec3<T>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Centered principal point, identity pose.
    pub fn simple(focal: T, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: T::lit(width as f64 * 0.5),
            cy: T::lit(height as f64 * 0.5),
            width,
            height,
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("image size must be nonzero".into()));
        }
        let tol: T = lit(1e-6);
        if self.rotation.orthonormality_error() > tol
            || (self.rotation.determinant() - T::one()).abs() > tol
        {
            return Err(Error::InvalidParameter(
                "world-to-camera rotation is not a proper rotation".into(),
            ));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vec3<T> {
        -self.rotation.tr_mul_vec(self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn to_world(&self, p_cam: Vec3<T>) -> Vec3<T> {
        self.rotation.tr_mul_vec(p_cam - self.translation)
    }

    /// Pixel coordinates of a camera-space point.
    #[inline]
    pub fn project_camera(&self, p: Vec3<T>) -> [T; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Pixel coordinates and camera depth of a world point, `None` behind the near plane.
    pub fn project(&self, p_world: Vec3<T>) -> Option<([T; 2], T)> {
        let p = self.to_camera(p_world);
        (p.z > lit(NEAR_PLANE)).then(|| (self.project_camera(p), p.z))
    }

    /// Camera-space point at depth `depth` through pixel coordinates `(x, y)`.
    pub fn unproject_camera(&self, x: T, y: T, depth: T) -> Vec3<T> {
        Vec3::new(
            (x - self.cx) / self.fx * depth,
            (y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// `d · K⁻¹ (x, y, 1)ᵀ` mapped back to world coordinates.
    pub fn backproject(&self, x: T, y: T, depth: T) -> Result<Vec3<T>> {
        if !(depth > T::zero()) || !depth.is_finite() {
            return Err(Error::InvalidSample(format!(
                "backprojection depth {depth}"
            )));
        }
        Ok(self.to_world(self.unproject_camera(x, y, depth)))
    }

    pub fn cast<U: Real>(&self) -> CameraModel<U> {
        CameraModel {
            fx: self.fx.cast(),
            fy: self.fy.cast(),
            cx: self.cx.cast(),
            cy: self.cy.cast(),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

/// Surfel center, covariance and normal in camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpaceSurfel<T> {
    pub position: Vec3<T>,
    pub covariance: Mat3<T>,
    pub normal: Vec3<T>,
}

/// `p' = R p + t`, `Σ' = R Σ Rᵀ`, `n' = R t_w`.
pub fn world_to_camera<T: Real>(
    cam: &CameraModel<T>,
    s: &GaussianSurfel<T>,
) -> CameraSpaceSurfel<T> {
    let r = &cam.rotation;
    CameraSpaceSurfel {
        position: cam.to_camera(s.position),
        covariance: r.mul_mat(&s.world_covariance()).mul_mat(&r.transpose()),
        normal: r.mul_vec(s.normal()),
    }
}

/// Jacobian of the pinhole projection at a camera-space point. `None` when the
/// point is at or behind the near plane.
pub fn perspective_jacobian<T: Real>(cam: &CameraModel<T>, p: Vec3<T>) -> Option<[[T; 3]; 2]> {
    if !(p.z > lit(NEAR_PLANE)) {
        return None;
    }
    let iz = T::one() / p.z;
    let iz2 = iz * iz;
    let zero = T::zero();
    Some([
        [cam.fx * iz, zero, -cam.fx * p.x * iz2],
        [zero, cam.fy * iz, -cam.fy * p.y * iz2],
    ])
}

/// `J Σ' Jᵀ + λ I` with the fixed dilation `λ`.
pub fn screen_covariance<T: Real>(j: &[[T; 3]; 2], cov: &Mat3<T>) -> Sym2<T> {
    let mut js = [[T::zero(); 3]; 2];
    for (r, row) in js.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| j[r][k] * cov.m[k][c]).sum();
        }
    }
    let e = |a: usize, b: usize| -> T { (0..3).map(|k| js[a][k] * j[b][k]).sum() };
    let d: T = lit(DILATION);
    let (xx, xy, yx, yy) = (e(0, 0), e(0, 1), e(1, 0), e(1, 1));
    Sym2::new(xx + d, (xy + yx) * lit(0.5), yy + d)
}

/// A surfel projected to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenSplat<T> {
    pub center_px: [T; 2],
    pub cov2d: Sym2<T>,
    pub cam_depth: T,
    pub cam_normal: Vec3<T>,
}

/// Projects a surfel; `None` when it is culled by the near plane.
pub fn project_surfel<T: Real>(
    cam: &CameraModel<T>,
    s: &GaussianSurfel<T>,
) -> Option<ScreenSplat<T>> {
    let cs = world_to_camera(cam, s);
    let j = perspective_jacobian(cam, cs.position)?;
    Some(ScreenSplat {
        center_px: cam.project_camera(cs.position),
        cov2d: screen_covariance(&j, &cs.covariance),
        cam_depth: cs.position.z,
        cam_normal: cs.normal,
    })
}

/// Parsed camera file: intrinsics, pose and per-frame timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFile {
    pub camera: CameraModel<f64>,
    pub timestamps: Vec<f64>,
}

impl CameraFile {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut fields: [Option<f64>; 6] = [None; 6];
        const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
        let mut w2c: Vec<f64> = Vec::new();
        let mut in_w2c = false;
        let mut frames: Option<usize> = None;
        let mut timestamps = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| format!("line {}: {what}: {raw:?}", lineno + 1);
            if let Some(v) = line.strip_prefix("t=") {
                in_w2c = false;
                timestamps.push(v.trim().parse::<f64>().map_err(|_| bad("bad timestamp"))?);
                continue;
            }
            if let Some((key, value)) = line.split_once(':') {
                let key = key.trim();
                let value = value.trim();
                in_w2c = false;
                if let Some(i) = KEYS.iter().position(|k| *k == key) {
                    fields[i] = Some(value.parse().map_err(|_| bad("bad number"))?);
                } else if key == "w2c" {
                    in_w2c = true;
                    for tok in value.split_whitespace() {
                        w2c.push(tok.parse().map_err(|_| bad("bad matrix entry"))?);
                    }
                } else if key == "frames" {
                    frames = Some(value.parse().map_err(|_| bad("bad frame count"))?);
                } else {
                    return Err(bad("unknown key"));
                }
                continue;
            }
            if in_w2c {
                for tok in line.split_whitespace() {
                    w2c.push(tok.parse().map_err(|_| bad("bad matrix entry"))?);
                }
                continue;
            }
            return Err(bad("unrecognized line"));
        }
        let get = |i: usize| fields[i].ok_or_else(|| format!("missing key {}", KEYS[i]));
        if w2c.len() != 16 {
            return Err(format!("w2c needs 16 values, found {}", w2c.len()));
        }
        let rotation = Mat3::from_rows([
            [w2c[0], w2c[1], w2c[2]],
            [w2c[4], w2c[5], w2c[6]],
            [w2c[8], w2c[9], w2c[10]],
        ]);
        let translation = Vec3::new(w2c[3], w2c[7], w2c[11]);
        if w2c[12..16] != [0.0, 0.0, 0.0, 1.0] {
            return Err("w2c bottom row must be 0 0 0 1".into());
        }
        let (width, height) = (get(4)?, get(5)?);
        if width.fract() != 0.0 || height.fract() != 0.0 || width < 1.0 || height < 1.0 {
            return Err("width and height must be positive integers".into());
        }
        let camera = CameraModel::new(
            get(0)?,
            get(1)?,
            get(2)?,
            get(3)?,
            width as usize,
            height as usize,
            rotation,
            translation,
        )
        .map_err(|e| e.to_string())?;
        let frames = frames.ok_or("missing key frames")?;
        if frames != timestamps.len() {
            return Err(format!(
                "frames: {frames} but {} timestamps listed",
                timestamps.len()
            ));
        }
        Ok(Self { camera, timestamps })
    }

    pub fn to_text(&self) -> String {
        let c = &self.camera;
        let mut s = String::new();
        let _ = writeln!(s, "fx: {}", c.fx);
        let _ = writeln!(s, "fy: {}", c.fy);
        let _ = writeln!(s, "cx: {}", c.cx);
        let _ = writeln!(s, "cy: {}", c.cy);
        let _ = writeln!(s, "width: {}", c.width);
        let _ = writeln!(s, "height: {}", c.height);
        let r = &c.rotation.m;
        let t = c.translation;
        let _ = writeln!(
            s,
            "w2c: {} {} {} {} {} {} {} {} {} {} {} {} 0 0 0 1",
            r[0][0],
            r[0][1],
            r[0][2],
            t.x,
            r[1][0],
            r[1][1],
            r[1][2],
            t.y,
            r[2][0],
            r[2][1],
            r[2][2],
            t.z
        );
        let _ = writeln!(s, "frames: {}", self.timestamps.len());
        for t in &self.timestamps {
            let _ = writeln!(s, "t={t}");
        }
        s
    }
}
