//! State layout, CGR rotation algebra and the rotation-parameter Jacobians.
//!
//! The flattened state is `[s, b_g, v, b_a, p_I | p_f1 … p_fN]`, dimension
//! `15 + 3N`. `s` is the CGR (Gibbs) vector `tan(φ/2)·û`; `C(s)` maps
//! global-frame vectors into the IMU frame:
//!
//! ```text
//! C(s) = ((1 − sᵀs)·I + 2·ssᵀ − 2·[s×]) / (1 + sᵀs)
//! ```
//!
//! The sign of the `[s×]` term is fixed by the identity
//! `∂(Cᵀu)/∂s = −Cᵀ[u×]·∂θ/∂s`, which every downstream row formula relies on.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::jet::Real;

/// Chart limit on `‖s‖` (rotation angle ≈ 168.6°).
pub const S_MAX: f64 = 10.0;

/// Dimension of the navigation part of the state (everything but features).
pub const NAV_DIM: usize = 15;

/// Offsets of the 3-blocks inside a flattened state.
pub mod block {
    pub const ROT: usize = 0;
    pub const GYRO_BIAS: usize = 3;
    pub const VEL: usize = 6;
    pub const ACCEL_BIAS: usize = 9;
    pub const POS: usize = 12;
    pub const FEATURES: usize = 15;

    #[inline]
    pub const fn feature(k: usize) -> usize {
        FEATURES + 3 * k
    }
}

/// `[v×]`, so that `skew(v) * w == v.cross(w)`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z)
}

/// Rotation matrix of a CGR vector without the chart check.
pub fn cgr_matrix<T: Real>(s: &Vector3<T>) -> Matrix3<T> {
    let one = T::one();
    let two = T::from_f64(2.0);
    let ss = s.dot(s);
    let m = Matrix3::identity() * (one - ss) + s * s.transpose() * two - skew(s) * two;
    m / (one + ss)
}

/// Rejects CGR vectors outside the chart `‖s‖ < S_MAX`.
pub fn check_chart(s: &Vector3<f64>) -> Result<()> {
    let norm = s.norm();
    if norm.is_finite() && norm < S_MAX {
        Ok(())
    } else {
        Err(Error::ChartExit { norm, limit: S_MAX })
    }
}

/// Global-to-IMU rotation `C(s)`.
pub fn cgr_rotation(s: &Vector3<f64>) -> Result<Matrix3<f64>> {
    check_chart(s)?;
    Ok(cgr_matrix(s))
}

/// `∂s/∂θ = ½(I + ssᵀ + [s×])`.
pub fn jac_s_wrt_theta<T: Real>(s: &Vector3<T>) -> Matrix3<T> {
    (Matrix3::identity() + s * s.transpose() + skew(s)) * T::from_f64(0.5)
}

/// `∂θ/∂s = 2(I − [s×]) / (1 + sᵀs)`, the inverse of [`jac_s_wrt_theta`].
pub fn jac_theta_wrt_s<T: Real>(s: &Vector3<T>) -> Matrix3<T> {
    (Matrix3::identity() - skew(s)) * T::from_f64(2.0) / (T::one() + s.dot(s))
}

/// Reads the 3-block starting at `offset`.
#[inline]
pub fn vec3_at<T: Real>(x: &[T], offset: usize) -> Vector3<T> {
    Vector3::new(x[offset], x[offset + 1], x[offset + 2])
}

#[inline]
pub(crate) fn put3<T: Real>(out: &mut [T], offset: usize, v: &Vector3<T>) {
    out[offset..offset + 3].copy_from_slice(v.as_slice());
}

/// Number of features encoded in a flattened state of length `len`.
pub fn feature_count_for(len: usize) -> Result<usize> {
    if len >= NAV_DIM && (len - NAV_DIM).is_multiple_of(3) {
        Ok((len - NAV_DIM) / 3)
    } else {
        Err(Error::BadDimension(len))
    }
}

/// Navigation state with `N` landmark positions.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    /// CGR rotation vector (dimensionless).
    pub s: Vector3<f64>,
    /// Gyroscope bias, rad/s.
    pub b_g: Vector3<f64>,
    /// Global velocity, m/s.
    pub v: Vector3<f64>,
    /// Accelerometer bias, m/s².
    pub b_a: Vector3<f64>,
    /// Global IMU position, m.
    pub p_i: Vector3<f64>,
    /// Global feature positions, m.
    pub features: Vec<Vector3<f64>>,
}

impl State {
    /// State at the origin with identity attitude and the given features.
    pub fn at_rest(features: Vec<Vector3<f64>>) -> Self {
        State {
            s: Vector3::zeros(),
            b_g: Vector3::zeros(),
            v: Vector3::zeros(),
            b_a: Vector3::zeros(),
            p_i: Vector3::zeros(),
            features,
        }
    }

    pub fn dim(&self) -> usize {
        NAV_DIM + 3 * self.features.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn rotation(&self) -> Result<Matrix3<f64>> {
        cgr_rotation(&self.s)
    }

    pub fn flatten(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        let xs = x.as_mut_slice();
        put3(xs, block::ROT, &self.s);
        put3(xs, block::GYRO_BIAS, &self.b_g);
        put3(xs, block::VEL, &self.v);
        put3(xs, block::ACCEL_BIAS, &self.b_a);
        put3(xs, block::POS, &self.p_i);
        for (k, f) in self.features.iter().enumerate() {
            put3(xs, block::feature(k), f);
        }
        x
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        let n = feature_count_for(x.len())?;
        Ok(State {
            s: vec3_at(x, block::ROT),
            b_g: vec3_at(x, block::GYRO_BIAS),
            v: vec3_at(x, block::VEL),
            b_a: vec3_at(x, block::ACCEL_BIAS),
            p_i: vec3_at(x, block::POS),
            features: (0..n).map(|k| vec3_at(x, block::feature(k))).collect(),
        })
    }
}

/// Global gravity vector, m/s².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gravity(pub Vector3<f64>);

impl Gravity {
    pub const STANDARD: f64 = 9.81;

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

impl Default for Gravity {
    fn default() -> Self {
        Gravity(Vector3::new(0.0, 0.0, -Self::STANDARD))
    }
}

/// Tangent vector in flattened state order.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector(pub DVector<f64>);

impl TangentVector {
    pub fn zeros(dim: usize) -> Self {
        TangentVector(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// 3-block at a [`block`] offset.
    pub fn block(&self, offset: usize) -> Vector3<f64> {
        vec3_at(self.0.as_slice(), offset)
    }

    pub fn feature_block(&self, k: usize) -> Vector3<f64> {
        self.block(block::feature(k))
    }

    pub fn set_block(&mut self, offset: usize, v: &Vector3<f64>) {
        put3(self.0.as_mut_slice(), offset, v);
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl From<DVector<f64>> for TangentVector {
    fn from(v: DVector<f64>) -> Self {
        TangentVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Rotation from a unit quaternion `(w, x, y, z)`, written in the
    /// active convention `R = I + 2w[q×] + 2[q×]²`; the CGR matrix is the
    /// passive (global → IMU) counterpart, i.e. `C = Rᵀ`.
    fn quaternion_rotation(w: f64, q: Vector3<f64>) -> Matrix3<f64> {
        let k = skew(&q);
        Matrix3::identity() + k * (2.0 * w) + k * k * 2.0
    }

    fn theta_to_s(theta: &Vector3<f64>) -> Vector3<f64> {
        let angle = theta.norm();
        if angle == 0.0 {
            return Vector3::zeros();
        }
        theta * ((angle / 2.0).tan() / angle)
    }

    #[test]
    fn skew_zero_and_right_hand_rule() {
        assert_eq!(skew(&Vector3::<f64>::zeros()), Matrix3::zeros());
        assert_eq!(skew(&Vector3::<f64>::z()) * Vector3::x(), Vector3::y());
        let v = Vector3::new(0.3, -1.2, 2.5);
        assert_eq!(skew(&v) * v, Vector3::zeros());
    }

    #[test]
    fn cgr_identity_at_zero() {
        assert_eq!(cgr_rotation(&Vector3::zeros()).unwrap(), Matrix3::identity());
    }

    #[test]
    fn cgr_quarter_turn_matches_quaternion() {
        let half = std::f64::consts::FRAC_PI_4;
        let r = quaternion_rotation(half.cos(), Vector3::x() * half.sin());
        let c = cgr_rotation(&Vector3::x()).unwrap();
        assert_relative_eq!(c, r.transpose(), epsilon = 1e-15);
    }

    #[test]
    fn cgr_random_axes_match_quaternion() {
        for (axis, angle) in [
            (Vector3::new(1.0, 2.0, -0.5), 0.7),
            (Vector3::new(-0.3, 0.1, 0.9), 2.5),
            (Vector3::new(0.0, -1.0, 0.2), 1.3),
        ] {
            let u = axis.normalize();
            let s = u * (angle / 2.0_f64).tan();
            let r = quaternion_rotation((angle / 2.0_f64).cos(), u * (angle / 2.0_f64).sin());
            assert_relative_eq!(cgr_rotation(&s).unwrap(), r.transpose(), epsilon = 1e-14);
        }
    }

    #[test]
    fn chart_guard() {
        assert!(cgr_rotation(&Vector3::new(10.0, 0.0, 0.0)).is_err());
        assert!(cgr_rotation(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(cgr_rotation(&Vector3::new(9.99, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn jacobians_at_zero() {
        let z = Vector3::<f64>::zeros();
        assert_eq!(jac_s_wrt_theta(&z), Matrix3::identity() * 0.5);
        assert_eq!(jac_theta_wrt_s(&z), Matrix3::identity() * 2.0);
    }

    #[test]
    fn closed_form_inverse_matches_numeric_inverse() {
        let mut seed = 0x9e3779b97f4a7c15_u64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..100 {
            let s = Vector3::new(next(), next(), next());
            let numeric = jac_s_wrt_theta(&s).try_inverse().unwrap();
            assert_relative_eq!(jac_theta_wrt_s(&s), numeric, epsilon = 1e-12, max_relative = 1e-12);
            let prod = jac_theta_wrt_s(&s) * jac_s_wrt_theta(&s);
            assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-12);
        }
    }

    fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
        let a = phi.norm();
        if a == 0.0 {
            return Matrix3::identity();
        }
        let k = skew(&(phi / a));
        Matrix3::identity() + k * a.sin() + k * k * (1.0 - a.cos())
    }

    /// Gibbs vector of a rotation matrix in the `C(s)` convention.
    fn gibbs_of(c: &Matrix3<f64>) -> Vector3<f64> {
        let a = -(c - c.transpose()) / (1.0 + c.trace());
        Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)])
    }

    #[test]
    fn jac_s_wrt_theta_matches_finite_differences() {
        // small body-frame rotation δθ acting as C ← exp(−[δθ×])·C
        let h = 1e-6;
        for s in [
            Vector3::new(0.3, -0.2, 0.5),
            Vector3::new(-1.1, 0.4, 0.9),
            Vector3::new(0.05, 1.6, -0.7),
            Vector3::new(2.5, -3.0, 1.0),
        ] {
            let c = cgr_matrix(&s);
            assert!((gibbs_of(&c) - s).norm() <= 1e-13);
            let mut fd = Matrix3::zeros();
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = h;
                let plus = gibbs_of(&(rodrigues(&-e) * c));
                let minus = gibbs_of(&(rodrigues(&e) * c));
                fd.set_column(j, &((plus - minus) / (2.0 * h)));
            }
            let analytic = jac_s_wrt_theta(&s);
            assert!((analytic - fd).norm() <= 1e-6 * analytic.norm(), "{analytic} vs {fd}");
        }
    }

    #[test]
    fn jac_s_wrt_theta_along_rotation_axis() {
        let h = 1e-6;
        for theta in [Vector3::new(0.3, -0.2, 0.5), Vector3::new(-1.1, 0.4, 0.9)] {
            let s = theta_to_s(&theta);
            let u = theta.normalize();
            let fd = (theta_to_s(&(theta + u * h)) - theta_to_s(&(theta - u * h))) / (2.0 * h);
            let analytic = jac_s_wrt_theta(&s) * u;
            assert!((analytic - fd).norm() <= 1e-6 * analytic.norm());
        }
    }

    #[test]
    fn flatten_round_trip_layout() {
        let st = State {
            s: Vector3::new(0.1, 0.2, 0.3),
            b_g: Vector3::new(1.0, 2.0, 3.0),
            v: Vector3::new(4.0, 5.0, 6.0),
            b_a: Vector3::new(7.0, 8.0, 9.0),
            p_i: Vector3::new(10.0, 11.0, 12.0),
            features: vec![Vector3::new(13.0, 14.0, 15.0), Vector3::new(16.0, 17.0, 18.0)],
        };
        let x = st.flatten();
        assert_eq!(x.len(), 21);
        assert_eq!(x[block::VEL], 4.0);
        assert_eq!(x[block::feature(1) + 2], 18.0);
        assert_eq!(State::from_flat(x.as_slice()).unwrap(), st);
        assert!(State::from_flat(&[0.0; 16]).is_err());
    }
}
