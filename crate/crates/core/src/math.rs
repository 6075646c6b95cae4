//! Rigid-motion primitives and the positional encoding shared by the rest of
//! the crate.
//!
//! Rotations are stored as unit quaternions canonicalized to `w >= 0`, so a
//! rotation has exactly one stored representation. Axis-angle vectors map to
//! rotations through [`exp_so3`] and back through [`log_so3`].

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle `exp_so3` and friends switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            q: UnitQuaternion::identity(),
        }
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        if q.w < 0.0 {
            Rotation {
                q: UnitQuaternion::new_unchecked(-q.into_inner()),
            }
        } else {
            Rotation { q }
        }
    }

    /// Builds a rotation from raw quaternion components `(w, x, y, z)`,
    /// renormalizing them. Returns `None` for a zero or non-finite input.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let raw = Quaternion::new(w, x, y, z);
        let norm = raw.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self::canonical(UnitQuaternion::new_normalize(raw)))
    }

    /// Quaternion components as `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q
    }

    pub fn to_matrix(&self) -> Mat3 {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Converts an orthonormal matrix with determinant +1.
    pub fn from_matrix(m: &Mat3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*m);
        Self::canonical(UnitQuaternion::from_rotation_matrix(&rot))
    }

    pub fn from_axis_angle(v: &Vec3) -> Self {
        exp_so3(v)
    }

    pub fn to_axis_angle(&self) -> Vec3 {
        log_so3(self)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let n = self.q.imag().norm();
        2.0 * n.atan2(self.q.w)
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.q.inverse())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.q.transform_vector(v)
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self::canonical(self.q * other.q)
    }

    /// Angle of `self^-1 * other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.quaternion().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Rotation::from_quaternion(w, x, y, z)
            .ok_or_else(|| serde::de::Error::custom("degenerate quaternion"))
    }
}

/// Rigid map `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Transform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: Rotation::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Transform::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Transform::new(Rotation::identity(), translation)
    }

    /// Rotation by `rotation` about the fixed point `pivot`.
    pub fn about_pivot(rotation: Rotation, pivot: &Vec3) -> Self {
        Transform::new(rotation, pivot - rotation.apply(pivot))
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation.apply(x) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Transform::new(inv, -inv.apply(&self.translation))
    }

    /// Rotation matrix and translation, the form used in the hot loops.
    pub fn to_affine(&self) -> Affine {
        Affine {
            rot: self.rotation.to_matrix(),
            trans: self.translation,
        }
    }
}

/// `(a ∘ b)(x) = a(b(x))`.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform::new(
        a.rotation.compose(&b.rotation),
        a.rotation.apply(&b.translation) + a.translation,
    )
}

impl Mul for Transform {
    type Output = Transform;
    fn mul(self, rhs: Transform) -> Transform {
        compose(&self, &rhs)
    }
}

/// Matrix form of a rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rot * x + self.trans
    }

    pub fn compose(&self, other: &Affine) -> Affine {
        Affine {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from an axis-angle vector to a rotation.
pub fn exp_so3(v: &Vec3) -> Rotation {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (w, s) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let q = UnitQuaternion::new_normalize(Quaternion::new(w, s * v.x, s * v.y, s * v.z));
    Rotation::canonical(q)
}

/// Inverse of [`exp_so3`]; the returned angle lies in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let [w, x, y, z] = r.quaternion();
    let imag = Vec3::new(x, y, z);
    let n = imag.norm();
    if n < SMALL_ANGLE {
        // w ~ 1 here
        return imag * (2.0 / w);
    }
    let theta = 2.0 * n.atan2(w);
    imag * (theta / n)
}

/// Right Jacobian of SO(3): `exp(v + d) ≈ exp(v) exp(J_r(v) d)`.
pub fn right_jacobian(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(v);
    let k2 = k * k;
    let (a, b) = if theta < 1e-4 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() - k * a + k2 * b
}

/// Pulls a gradient with respect to the rotation matrix `exp(v)` back to the
/// axis-angle vector `v`.
pub fn exp_so3_vjp(v: &Vec3, rot: &Mat3, grad_rot: &Mat3) -> Vec3 {
    let m = rot.transpose() * grad_rot;
    let g_local = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    right_jacobian(v).transpose() * g_local
}

/// `[sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]`.
pub fn positional_encoding(x: f64, num_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * num_freqs);
    let mut scale = PI;
    for _ in 0..num_freqs {
        let arg = scale * x;
        out.push(arg.sin());
        out.push(arg.cos());
        scale *= 2.0;
    }
    out
}

/// Dense row-major matrix used for per-point, per-joint tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        RowMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(RowMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(RowMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Appends `extra` columns filled with `value`.
    pub fn append_columns(&mut self, extra: usize, value: f64) {
        let cols = self.cols + extra;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend(std::iter::repeat_n(value, extra));
        }
        self.cols = cols;
        self.data = data;
    }

    /// New matrix whose row `i` is row `sources[i]` of `self`.
    pub fn gather_rows(&self, sources: &[usize]) -> Self {
        let mut data = Vec::with_capacity(sources.len() * self.cols);
        for &s in sources {
            data.extend_from_slice(self.row(s));
        }
        RowMatrix {
            rows: sources.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps the first `cols` columns.
    pub fn leading_columns(&self, cols: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[..cols]);
        }
        RowMatrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.row_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot_x(angle: f64) -> Rotation {
        Rotation::from_quaternion((angle / 2.0).cos(), (angle / 2.0).sin(), 0.0, 0.0).unwrap()
    }

    #[test]
    fn identity_composition() {
        let t = Transform::new(exp_so3(&Vec3::new(0.3, -0.2, 0.9)), Vec3::new(1.0, 2.0, 3.0));
        let c = compose(&Transform::identity(), &t);
        assert_abs_diff_eq!(c.translation, t.translation, epsilon = 1e-15);
        assert!(c.rotation.angle_to(&t.rotation) < 1e-12);
    }

    #[test]
    fn transform_times_inverse_is_identity() {
        let t = Transform::new(exp_so3(&Vec3::new(1.1, 0.4, -2.0)), Vec3::new(-0.5, 0.25, 7.0));
        let id = compose(&t, &t.inverse());
        assert!(id.rotation.angle() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn rotate_after_translate_hand_value() {
        let a = Transform::from_rotation(rot_x(std::f64::consts::FRAC_PI_2));
        let b = Transform::from_translation(Vec3::new(0.0, 0.0, 1.0));
        let p = compose(&a, &b).apply(&Vec3::zeros());
        assert_abs_diff_eq!(p, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_zero_is_identity() {
        let r = exp_so3(&Vec3::zeros());
        assert_eq!(r.quaternion(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let r = exp_so3(&Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        assert_abs_diff_eq!(r.apply(&Vec3::z()), Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_inverse_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let id = exp_so3(&v).compose(&exp_so3(&-v));
            assert!(id.angle() < 1e-9);
        }
    }

    #[test]
    fn exp_is_smooth_at_zero() {
        let v = Vec3::new(0.3, -1.2, 0.7);
        let eps = 1e-5;
        let lin = Mat3::identity() + skew(&(v * eps));
        let err = (exp_so3(&(v * eps)).to_matrix() - lin).norm();
        // second-order term is ~ eps^2 |v|^2 / 2
        assert!(err < 2.0 * (eps * v.norm()).powi(2), "err {err}");
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let r = Rotation::from_quaternion(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .unwrap();
            let back = Rotation::from_matrix(&r.to_matrix());
            let a = r.quaternion();
            let b = back.quaternion();
            let same = (0..4).map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
            let flip = (0..4).map(|i| (a[i] + b[i]).abs()).fold(0.0, f64::max);
            worst = worst.max(same.min(flip));
            let m = r.to_matrix();
            assert!((m.transpose() * m - Mat3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
        assert!(worst < 1e-9, "worst {worst}");
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let v = dir * rng.gen_range(0.0..3.1);
            assert_abs_diff_eq!(log_so3(&exp_so3(&v)), v, epsilon = 1e-9);
        }
        let tiny = Vec3::new(1e-10, -2e-10, 0.0);
        assert_abs_diff_eq!(log_so3(&exp_so3(&tiny)), tiny, epsilon = 1e-18);
    }

    #[test]
    fn exp_vjp_matches_finite_differences() {
        let v = Vec3::new(0.4, -0.9, 0.3);
        // arbitrary linear functional of the matrix
        let g = Mat3::new(0.3, -1.0, 2.0, 0.5, 0.1, -0.7, 1.5, 0.2, -0.4);
        let f = |v: &Vec3| exp_so3(v).to_matrix().component_mul(&g).sum();
        let analytic = exp_so3_vjp(&v, &exp_so3(&v).to_matrix(), &g);
        let h = 1e-6;
        for i in 0..3 {
            let mut p = v;
            let mut m = v;
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert_abs_diff_eq!(analytic[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn encoding_examples() {
        assert_eq!(positional_encoding(0.0, 2), vec![0.0, 1.0, 0.0, 1.0]);
        let e = positional_encoding(1.0, 1);
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], -1.0, epsilon = 1e-12);
        let q = positional_encoding(0.25, 2);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(q.as_slice(), [s, s, 1.0, 0.0].as_slice(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn encoding_is_deterministic(x in -10.0f64..10.0, l in 1usize..12) {
            let a = positional_encoding(x, l);
            let b = positional_encoding(x, l);
            prop_assert_eq!(a.len(), 2 * l);
            prop_assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }

        #[test]
        fn composition_is_associative(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in prop::array::uniform3(-3.0f64..3.0),
            c in prop::array::uniform3(-3.0f64..3.0),
            x in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let ta = Transform::new(exp_so3(&Vec3::from(a)), Vec3::from(b));
            let tb = Transform::new(exp_so3(&Vec3::from(c)), Vec3::from(a));
            let tc = Transform::new(exp_so3(&Vec3::from(b)), Vec3::from(c));
            let p = Vec3::from(x);
            let lhs = compose(&compose(&ta, &tb), &tc).apply(&p);
            let rhs = compose(&ta, &compose(&tb, &tc)).apply(&p);
            prop_assert!((lhs - rhs).norm() < 1e-9);
            prop_assert!((compose(&ta, &tb).apply(&p) - ta.apply(&tb.apply(&p))).norm() < 1e-9);
        }
    }
}
