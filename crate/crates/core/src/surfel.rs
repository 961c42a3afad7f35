//! The surface-aligned Gaussian surfel and its local geometry.

use crate::error::{Error, Result};
use crate::linalg::{normalize_backward, quat_mul_backward, Mat3, Quat, Vec3};
use crate::real::{lit, sigmoid, Real};
use crate::sh;

/// Upper bound applied to the rendered opacity so transmittance stays positive.
pub const MAX_OPACITY: f64 = 0.999;

const UNIT_TOL: f64 = 1e-6;
const RENORM_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSurfel<T> {
    pub position: Vec3<T>,
    /// Orientation; the rotation's columns are `t_u`, `t_v`, `t_w`.
    pub rotation: Quat<T>,
    /// `ln s_u`, `ln s_v`. The view-aligned third scale is identically zero.
    pub log_scales: [T; 2],
    pub opacity_logit: T,
    /// `3 · (deg + 1)²` coefficients, see [`crate::sh`].
    pub sh: Vec<T>,
}

/// Orthonormal tangent frame of a surfel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentFrame<T> {
    pub t_u: Vec3<T>,
    pub t_v: Vec3<T>,
    /// `t_u × t_v`, the surfel normal.
    pub t_w: Vec3<T>,
}

/// Tangent frame of a unit quaternion.
///
/// Quaternions off the unit sphere by up to `1e-3` are renormalized; anything
/// further away is rejected.
pub fn basis_from_quaternion<T: Real>(q: Quat<T>) -> Result<TangentFrame<T>> {
    let n = q.norm();
    if !n.is_finite() || (n - T::one()).abs() > lit(RENORM_TOL) {
        return Err(Error::InvalidParameter(format!(
            "quaternion norm {n} is not within {RENORM_TOL} of 1"
        )));
    }
    let q = if (n - T::one()).abs() > lit(UNIT_TOL) {
        q.normalize()
    } else {
        q
    };
    Ok(frame_of_unit(q))
}

/// Tangent frame of `q / ‖q‖` without validation.
#[inline]
pub(crate) fn frame_of<T: Real>(q: Quat<T>) -> TangentFrame<T> {
    frame_of_unit(q.normalize())
}

#[inline]
fn frame_of_unit<T: Real>(q: Quat<T>) -> TangentFrame<T> {
    let m = q.to_matrix();
    let t_u = m.column(0);
    let t_v = m.column(1);
    TangentFrame {
        t_u,
        t_v,
        t_w: t_u.cross(t_v),
    }
}

/// Vector-Jacobian product of [`frame_of`] with respect to the raw quaternion.
pub(crate) fn frame_backward<T: Real>(
    q: Quat<T>,
    d_u: Vec3<T>,
    d_v: Vec3<T>,
    d_w: Vec3<T>,
) -> Quat<T> {
    let u = q.normalize();
    let f = frame_of_unit(u);
    // t_w = t_u × t_v
    let d_u = d_u + f.t_v.cross(d_w);
    let d_v = d_v + d_w.cross(f.t_u);
    let (w, x, y, z) = (u.w, u.x, u.y, u.z);
    let two: T = lit(2.0);
    let four: T = lit(4.0);
    let zero = T::zero();
    // columns of the rotation matrix differentiated by (w, x, y, z)
    let du_dw = Vec3::new(zero, two * z, -two * y);
    let du_dx = Vec3::new(zero, two * y, two * z);
    let du_dy = Vec3::new(-four * y, two * x, -two * w);
    let du_dz = Vec3::new(-four * z, two * w, two * x);
    let dv_dw = Vec3::new(-two * z, zero, two * x);
    let dv_dx = Vec3::new(two * y, -four * x, two * w);
    let dv_dy = Vec3::new(two * x, zero, two * z);
    let dv_dz = Vec3::new(-two * w, -four * z, two * y);
    let d_unit = Quat::new(
        d_u.dot(du_dw) + d_v.dot(dv_dw),
        d_u.dot(du_dx) + d_v.dot(dv_dx),
        d_u.dot(du_dy) + d_v.dot(dv_dy),
        d_u.dot(du_dz) + d_v.dot(dv_dz),
    );
    normalize_backward(q, d_unit)
}

/// Gaussian falloff in local tangent coordinates, `exp(-(u² + v²) / 2)`.
#[inline]
pub fn density<T: Real>(u: T, v: T) -> T {
    (-(u * u + v * v) * lit(0.5)).exp()
}

impl<T: Real> GaussianSurfel<T> {
    pub fn new(
        position: Vec3<T>,
        rotation: Quat<T>,
        scales: [T; 2],
        opacity_logit: T,
        sh: Vec<T>,
    ) -> Self {
        Self {
            position,
            rotation: rotation.normalize(),
            log_scales: [scales[0].ln(), scales[1].ln()],
            opacity_logit,
            sh,
        }
    }

    #[inline]
    pub fn scales(&self) -> [T; 2] {
        [self.log_scales[0].exp(), self.log_scales[1].exp()]
    }

    /// Opacity in `(0, MAX_OPACITY]`.
    #[inline]
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit).min(lit(MAX_OPACITY))
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh.len() {
            3 => 0,
            12 => 1,
            27 => 2,
            48 => 3,
            n => panic!("invalid SH coefficient count {n}"),
        }
    }

    pub fn frame(&self) -> TangentFrame<T> {
        frame_of(self.rotation)
    }

    pub fn normal(&self) -> Vec3<T> {
        self.frame().t_w
    }

    /// World point at tangent coordinates `(u, v)`.
    pub fn local_to_world(&self, u: T, v: T) -> Vec3<T> {
        let f = self.frame();
        let [su, sv] = self.scales();
        self.position + f.t_u * (su * u) + f.t_v * (sv * v)
    }

    /// Homogeneous local-to-world transform `[s_u t_u, s_v t_v, 0, p; 0 0 0 1]`.
    pub fn homogeneous(&self) -> [[T; 4]; 4] {
        let f = self.frame();
        let [su, sv] = self.scales();
        let a = f.t_u * su;
        let b = f.t_v * sv;
        let p = self.position;
        let (z, o) = (T::zero(), T::one());
        [
            [a.x, b.x, z, p.x],
            [a.y, b.y, z, p.y],
            [a.z, b.z, z, p.z],
            [z, z, z, o],
        ]
    }

    /// `O · diag(s_u², s_v², 0) · Oᵀ`.
    pub fn world_covariance(&self) -> Mat3<T> {
        let f = self.frame();
        let [su, sv] = self.scales();
        Mat3::outer(f.t_u, f.t_u)
            .scale(su * su)
            .add(&Mat3::outer(f.t_v, f.t_v).scale(sv * sv))
    }

    /// Keeps both scales at or below `max_scale`.
    pub fn clamp_scales(&mut self, max_scale: T) {
        let cap = max_scale.ln();
        for s in &mut self.log_scales {
            if *s > cap {
                *s = cap;
            }
        }
    }

    /// Color seen along the direction from `eye` towards the surfel center.
    pub fn color_from(&self, eye: Vec3<T>) -> [T; 3] {
        let dir = (self.position - eye).try_normalize().unwrap_or(Vec3::new(
            T::zero(),
            T::zero(),
            T::one(),
        ));
        sh::eval_color(self.sh_degree(), &self.sh, dir).0
    }

    pub fn cast<U: Real>(&self) -> GaussianSurfel<U> {
        GaussianSurfel {
            position: self.position.cast(),
            rotation: self.rotation.cast(),
            log_scales: [self.log_scales[0].cast(), self.log_scales[1].cast()],
            opacity_logit: self.opacity_logit.cast(),
            sh: self.sh.iter().map(|v| v.cast()).collect(),
        }
    }
}

/// Per-surfel deformation predicted for one timestamp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationDelta<T> {
    pub d_position: Vec3<T>,
    /// Multiplicative scale factors. Only the first two act on a surfel.
    pub d_scale: [T; 3],
    pub d_rotation: Quat<T>,
}

impl<T: Real> DeformationDelta<T> {
    pub fn identity() -> Self {
        Self {
            d_position: Vec3::zero(),
            d_scale: [T::one(); 3],
            d_rotation: Quat::identity(),
        }
    }
}

/// Applies `p' = p + δx`, `s' = s ⊙ δs`, `q' = normalize(q ⊗ δq)`.
/// An exactly identity `δq` keeps `q` as stored.
pub fn apply_deformation<T: Real>(
    s: &GaussianSurfel<T>,
    d: &DeformationDelta<T>,
) -> GaussianSurfel<T> {
    let rotation = if d.d_rotation == Quat::identity() {
        s.rotation
    } else {
        s.rotation.mul(d.d_rotation).normalize()
    };
    GaussianSurfel {
        position: s.position + d.d_position,
        rotation,
        log_scales: [
            s.log_scales[0] + d.d_scale[0].ln(),
            s.log_scales[1] + d.d_scale[1].ln(),
        ],
        opacity_logit: s.opacity_logit,
        sh: s.sh.clone(),
    }
}

/// Gradient of the geometric parameters of one surfel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryGrad<T> {
    pub position: Vec3<T>,
    pub rotation: Quat<T>,
    pub log_scales: [T; 2],
}

/// Gradient with respect to the entries of a [`DeformationDelta`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaGrad<T> {
    pub d_position: Vec3<T>,
    pub d_scale: [T; 3],
    pub d_rotation: Quat<T>,
}

/// Backward of [`apply_deformation`] for the geometric parameters; opacity and
/// SH gradients pass through unchanged.
pub fn apply_deformation_backward<T: Real>(
    s: &GaussianSurfel<T>,
    d: &DeformationDelta<T>,
    g: &GeometryGrad<T>,
) -> (GeometryGrad<T>, DeltaGrad<T>) {
    let composed = s.rotation.mul(d.d_rotation);
    let d_composed = if d.d_rotation == Quat::identity() {
        g.rotation
    } else {
        normalize_backward(composed, g.rotation)
    };
    let (d_q, d_dq) = quat_mul_backward(s.rotation, d.d_rotation, d_composed);
    (
        GeometryGrad {
            position: g.position,
            rotation: d_q,
            log_scales: g.log_scales,
        },
        DeltaGrad {
            d_position: g.position,
            d_scale: [
                g.log_scales[0] / d.d_scale[0],
                g.log_scales[1] / d.d_scale[1],
                T::zero(),
            ],
            d_rotation: d_dq,
        },
    )
}
