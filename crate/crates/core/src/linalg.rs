//! Fixed-size vector, matrix and quaternion types used by the geometry code.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn l1(self) -> T {
        self.x.abs() + self.y.abs() + self.z.abs()
    }

    /// Returns the unit vector, or `None` for a zero-length input.
    #[inline]
    pub fn try_normalize(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    #[inline]
    pub fn component_mul(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(self.x.cast(), self.y.cast(), self.z.cast())
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn zero() -> Self {
        Self::from_rows([[T::zero(); 3]; 3])
    }

    pub fn from_columns(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    /// `a bᵀ`
    pub fn outer(a: Vec3<T>, b: Vec3<T>) -> Self {
        let a = a.to_array();
        let b = b.to_array();
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i] * b[j];
            }
        }
        Self { m }
    }

    pub fn column(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn transpose(&self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[j][i];
            }
        }
        Self { m }
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// `selfᵀ v` without forming the transpose.
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        self.row(0) * v.x + self.row(1) * v.y + self.row(2) * v.z
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Self { m }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut m = self.m;
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += o.m[i][j];
            }
        }
        Self { m }
    }

    pub fn scale(&self, s: T) -> Self {
        let mut m = self.m;
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        Self { m }
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest deviation of `selfᵀ self` from the identity.
    pub fn orthonormality_error(&self) -> T {
        let g = self.transpose().mul_mat(self);
        let id = Self::identity();
        let mut e = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((g.m[i][j] - id.m[i][j]).abs());
            }
        }
        e
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut m = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.m[i][j].cast();
            }
        }
        Mat3 { m }
    }
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Real> Sym2<T> {
    pub fn new(xx: T, xy: T, yy: T) -> Self {
        Self { xx, xy, yy }
    }

    pub fn determinant(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det <= T::zero() || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some(Self::new(self.yy * inv, -self.xy * inv, self.xx * inv))
    }

    /// `dᵀ M d`
    #[inline]
    pub fn quad_form(&self, dx: T, dy: T) -> T {
        self.xx * dx * dx + (self.xy + self.xy) * dx * dy + self.yy * dy * dy
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (T, T) {
        let half = T::lit(0.5);
        let mean = (self.xx + self.yy) * half;
        let d = ((self.xx - self.yy) * half).powi(2) + self.xy * self.xy;
        let r = d.sqrt();
        (mean - r, mean + r)
    }
}

/// Unit quaternion in `(w, x, y, z)` order, Hamilton convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Default for Quat<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let axis = axis
            .try_normalize()
            .unwrap_or(Vec3::new(T::one(), T::zero(), T::zero()));
        let (s, c) = (angle * T::lit(0.5)).sin_cos();
        Self::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    /// Unit quaternion; the identity for a zero input.
    pub fn normalize(self) -> Self {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            self.scale(T::one() / n)
        } else {
            Self::identity()
        }
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(self, o: Self) -> Self {
        let (a, b) = (self, o);
        Self::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotation matrix of a unit quaternion; columns are the rotated axes.
    pub fn to_matrix(self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        Mat3::from_rows([
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ])
    }

    /// Shortest-arc rotation taking `+z` onto the unit vector `n`.
    pub fn from_z_to(n: Vec3<T>) -> Self {
        let n = n
            .try_normalize()
            .unwrap_or(Vec3::new(T::zero(), T::zero(), T::one()));
        let w = T::one() + n.z;
        if w <= T::lit(1e-12) {
            // antiparallel: half turn about x
            return Self::new(T::zero(), T::one(), T::zero(), T::zero());
        }
        // axis = z × n = (-n.y, n.x, 0)
        Self::new(w, -n.y, n.x, T::zero()).normalize()
    }

    pub fn cast<U: Real>(self) -> Quat<U> {
        Quat::new(self.w.cast(), self.x.cast(), self.y.cast(), self.z.cast())
    }
}

/// Vector-Jacobian product of `q ↦ q / ‖q‖`.
pub fn normalize_backward<T: Real>(q: Quat<T>, d_unit: Quat<T>) -> Quat<T> {
    let n = q.norm();
    if n <= T::zero() || !n.is_finite() {
        return Quat::new(T::zero(), T::zero(), T::zero(), T::zero());
    }
    let u = q.scale(T::one() / n);
    let proj = u.dot(d_unit);
    d_unit.add(u.scale(-proj)).scale(T::one() / n)
}

/// Vector-Jacobian product of `v ↦ v / ‖v‖`.
pub fn normalize3_backward<T: Real>(v: Vec3<T>, d_unit: Vec3<T>) -> Vec3<T> {
    let n = v.norm();
    if n <= T::zero() || !n.is_finite() {
        return Vec3::zero();
    }
    let u = v * (T::one() / n);
    (d_unit - u * u.dot(d_unit)) * (T::one() / n)
}

/// Gradients of `a ⊗ b` with respect to both factors.
pub fn quat_mul_backward<T: Real>(a: Quat<T>, b: Quat<T>, g: Quat<T>) -> (Quat<T>, Quat<T>) {
    // r = L(a) b = R(b) a; the partials are the transposed multiplication matrices.
    let da = Quat::new(
        g.w * b.w + g.x * b.x + g.y * b.y + g.z * b.z,
        -g.w * b.x + g.x * b.w - g.y * b.z + g.z * b.y,
        -g.w * b.y + g.x * b.z + g.y * b.w - g.z * b.x,
        -g.w * b.z - g.x * b.y + g.y * b.x + g.z * b.w,
    );
    let db = Quat::new(
        g.w * a.w + g.x * a.x + g.y * a.y + g.z * a.z,
        -g.w * a.x + g.x * a.w + g.y * a.z - g.z * a.y,
        -g.w * a.y - g.x * a.z + g.y * a.w + g.z * a.x,
        -g.w * a.z + g.x * a.y - g.y * a.x + g.z * a.w,
    );
    (da, db)
}
