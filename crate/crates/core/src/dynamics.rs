//! Control-affine IMU kinematics and the camera / lidar observation maps.
//!
//! ```text
//! ẋ = f₀(x) + Σᵢ f₁ⁱ(x)·ωᵢ + Σᵢ f₂ⁱ(x)·aᵢ
//! f₀  = (−∂s/∂θ·b_g, 0, g − Cᵀb_a, 0, v, 0…0)
//! f₁ⁱ = (∂s/∂θ·eᵢ, 0, …)
//! f₂ⁱ = (0, 0, Cᵀeᵢ, 0, …)
//! ```
//!
//! Axis indices are zero-based throughout the crate.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::jet::Real;
use crate::lie::SmoothMap;
use crate::state::{
    block, cgr_matrix, feature_count_for, jac_s_wrt_theta, put3, vec3_at, Gravity, State,
    TangentVector,
};

/// Minimum admissible feature depth for the camera model, m.
pub const PZ_MIN: f64 = 1e-3;

/// One IMU sample: angular rate (rad/s) and specific force (m/s²).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImuInput {
    pub omega: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuInput {
    pub fn new(omega: Vector3<f64>, accel: Vector3<f64>) -> Self {
        ImuInput { omega, accel }
    }

    pub fn scaled(&self, k: f64) -> Self {
        ImuInput { omega: self.omega * k, accel: self.accel * k }
    }
}

/// A feature expressed in the IMU frame, `C(p_f − p_I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureInImu(pub Vector3<f64>);

impl FeatureInImu {
    pub fn depth(&self) -> f64 {
        self.0[2]
    }
}

fn lift<T: Real>(v: &Vector3<f64>) -> Vector3<T> {
    v.map(T::from_f64)
}

fn check_axis(axis: usize) -> Result<()> {
    if axis < 3 {
        Ok(())
    } else {
        Err(Error::InvalidAxis(axis))
    }
}

fn check_feature(x_len: usize, k: usize) -> Result<()> {
    let count = feature_count_for(x_len)?;
    if k < count {
        Ok(())
    } else {
        Err(Error::InvalidFeature { index: k, count })
    }
}

/// Drift field `f₀` on a flattened state.
pub fn drift<T: Real>(x: &[T], g: &Vector3<f64>) -> Vec<T> {
    let s = vec3_at(x, block::ROT);
    let b_g = vec3_at(x, block::GYRO_BIAS);
    let v = vec3_at(x, block::VEL);
    let b_a = vec3_at(x, block::ACCEL_BIAS);
    let c = cgr_matrix(&s);

    let mut out = vec![T::zero(); x.len()];
    put3(&mut out, block::ROT, &(-(jac_s_wrt_theta(&s) * b_g)));
    put3(&mut out, block::VEL, &(lift::<T>(g) - c.transpose() * b_a));
    put3(&mut out, block::POS, &v);
    out
}

/// Gyro input field `f₁ⁱ`.
pub fn gyro<T: Real>(x: &[T], axis: usize) -> Result<Vec<T>> {
    check_axis(axis)?;
    let s = vec3_at(x, block::ROT);
    let mut out = vec![T::zero(); x.len()];
    put3(&mut out, block::ROT, &jac_s_wrt_theta(&s).column(axis).into_owned());
    Ok(out)
}

/// Accelerometer input field `f₂ⁱ`.
pub fn accel<T: Real>(x: &[T], axis: usize) -> Result<Vec<T>> {
    check_axis(axis)?;
    let c = cgr_matrix(&vec3_at(x, block::ROT));
    let mut out = vec![T::zero(); x.len()];
    // column i of Cᵀ is row i of C
    put3(&mut out, block::VEL, &c.row(axis).transpose());
    Ok(out)
}

/// Full field `f₀ + Σ ωᵢ f₁ⁱ + Σ aᵢ f₂ⁱ` under a constant input.
pub fn full<T: Real>(x: &[T], u: &ImuInput, g: &Vector3<f64>) -> Vec<T> {
    let mut out = drift(x, g);
    let s = vec3_at(x, block::ROT);
    let c = cgr_matrix(&s);
    let rot = jac_s_wrt_theta(&s) * lift::<T>(&u.omega);
    let vel = c.transpose() * lift::<T>(&u.accel);
    for i in 0..3 {
        out[block::ROT + i] += rot[i];
        out[block::VEL + i] += vel[i];
    }
    out
}

/// `C(s)·(p_fk − p_I)` on a flattened state.
pub fn feature_in_imu_at<T: Real>(x: &[T], k: usize) -> Result<Vector3<T>> {
    check_feature(x.len(), k)?;
    let c = cgr_matrix(&vec3_at(x, block::ROT));
    Ok(c * (vec3_at(x, block::feature(k)) - vec3_at(x, block::POS)))
}

/// Normalized image coordinates `(p_x, p_y) / p_z`.
pub fn camera_at<T: Real>(x: &[T], k: usize) -> Result<Vec<T>> {
    let p = feature_in_imu_at(x, k)?;
    let depth = p[2].value();
    if depth.is_nan() || depth < PZ_MIN {
        return Err(Error::Cheirality { feature: k, depth, limit: PZ_MIN });
    }
    Ok(vec![p[0] / p[2], p[1] / p[2]])
}

pub fn lidar_at<T: Real>(x: &[T], k: usize) -> Result<Vec<T>> {
    Ok(feature_in_imu_at(x, k)?.as_slice().to_vec())
}

pub fn drift_field(x: &State, g: &Gravity) -> TangentVector {
    TangentVector(drift(x.flatten().as_slice(), g.vector()).into())
}

pub fn gyro_field(x: &State, axis: usize) -> Result<TangentVector> {
    Ok(TangentVector(gyro(x.flatten().as_slice(), axis)?.into()))
}

pub fn accel_field(x: &State, axis: usize) -> Result<TangentVector> {
    Ok(TangentVector(accel(x.flatten().as_slice(), axis)?.into()))
}

pub fn full_field(x: &State, u: &ImuInput, g: &Gravity) -> TangentVector {
    TangentVector(full(x.flatten().as_slice(), u, g.vector()).into())
}

pub fn feature_in_imu(x: &State, k: usize) -> Result<FeatureInImu> {
    Ok(FeatureInImu(feature_in_imu_at(x.flatten().as_slice(), k)?))
}

pub fn camera_observe(x: &State, k: usize) -> Result<Vector2<f64>> {
    Ok(Vector2::from_vec(camera_at(x.flatten().as_slice(), k)?))
}

pub fn lidar_observe(x: &State, k: usize) -> Result<Vector3<f64>> {
    Ok(feature_in_imu(x, k)?.0)
}

/// Which of the system's vector fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldKind {
    /// `f₀`
    Drift,
    /// `f₁ⁱ`
    Gyro(usize),
    /// `f₂ⁱ`
    Accel(usize),
}

impl FieldKind {
    pub fn label(&self) -> String {
        match self {
            FieldKind::Drift => "f0".into(),
            FieldKind::Gyro(i) => format!("f1^{}", i + 1),
            FieldKind::Accel(i) => format!("f2^{}", i + 1),
        }
    }

    /// The seven fields `f₀, f₁¹..f₁³, f₂¹..f₂³`.
    pub fn all() -> [FieldKind; 7] {
        use FieldKind::*;
        [Drift, Gyro(0), Gyro(1), Gyro(2), Accel(0), Accel(1), Accel(2)]
    }
}

/// One of `f₀, f₁ⁱ, f₂ⁱ` bound to a gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemField {
    pub kind: FieldKind,
    pub gravity: Vector3<f64>,
}

impl SystemField {
    pub fn new(kind: FieldKind, g: &Gravity) -> Self {
        SystemField { kind, gravity: g.0 }
    }
}

impl SmoothMap for SystemField {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        match self.kind {
            FieldKind::Drift => Ok(drift(x, &self.gravity)),
            FieldKind::Gyro(i) => gyro(x, i),
            FieldKind::Accel(i) => accel(x, i),
        }
    }
}

/// The full field under a fixed input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputField {
    pub input: ImuInput,
    pub gravity: Vector3<f64>,
}

impl SmoothMap for InputField {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(full(x, &self.input, &self.gravity))
    }
}

/// Sensor model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    /// Perspective camera, 2 outputs per feature.
    Vins,
    /// Lidar point, 3 outputs per feature.
    Lins,
}

impl Sensor {
    pub fn output_dim(&self) -> usize {
        match self {
            Sensor::Vins => 2,
            Sensor::Lins => 3,
        }
    }
}

impl std::fmt::Display for Sensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sensor::Vins => "vins",
            Sensor::Lins => "lins",
        })
    }
}

impl std::str::FromStr for Sensor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vins" => Ok(Sensor::Vins),
            "lins" => Ok(Sensor::Lins),
            other => Err(Error::InvalidConfig(format!("unknown system '{other}'"))),
        }
    }
}

/// Observation of feature `feature` by `sensor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub sensor: Sensor,
    pub feature: usize,
}

impl SmoothMap for Observation {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        match self.sensor {
            Sensor::Vins => camera_at(x, self.feature),
            Sensor::Lins => lidar_at(x, self.feature),
        }
    }
}
