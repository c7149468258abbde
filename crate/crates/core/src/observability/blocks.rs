//! Structural block matrices shared by the analytic rows.
//!
//! With `p = ᴵp_f`, the reduced quantities `p, Cv, b_g, b_a, Cg` have
//! differentials `K, G, J, N, M`:
//!
//! ```text
//! K_i = [[ᴵp_fi×]∂θ/∂s, 0, 0, 0, −C | 0 … C … 0]
//! G   = [[Cv×]∂θ/∂s,    0, C, 0, 0  | 0]
//! J   = [0, I, 0, 0, 0 | 0]
//! N   = [0, 0, 0, I, 0 | 0]
//! M   = [[Cg×]∂θ/∂s,    0, 0, 0, 0  | 0]
//! ```

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::dynamics::{feature_in_imu_at, PZ_MIN};
use crate::error::{Error, Result};
use crate::jet::Real;
use crate::lie::{numeric_jacobian, SmoothMap};
use crate::state::{block, jac_theta_wrt_s, skew, Gravity, State};

/// `H_c = (1/p_z)[[1, 0, −p_x/p_z], [0, 1, −p_y/p_z]]`.
pub fn projection_jacobian<T: Real>(p: &Vector3<T>) -> Matrix2x3<T> {
    let z = T::zero();
    let one = T::one();
    let inv = one / p[2];
    Matrix2x3::new(one, z, -p[0] * inv, z, one, -p[1] * inv) * inv
}

fn place(out: &mut DMatrix<f64>, col: usize, m: &Matrix3<f64>) {
    out.fixed_view_mut::<3, 3>(0, col).copy_from(m);
}

/// `K_i, G, J, N, M` at a state, plus `H_c` for one feature.
#[derive(Clone, Debug)]
pub struct StructuralBlocks {
    /// Feature the projection quantities refer to.
    pub feature: usize,
    pub rotation: Matrix3<f64>,
    /// `∂θ/∂s`.
    pub theta_wrt_s: Matrix3<f64>,
    /// `ᴵp_f` for every feature.
    pub features_in_imu: Vec<Vector3<f64>>,
    /// `H_c` for `feature`; `None` when its depth is below `PZ_MIN`.
    pub hc: Option<Matrix2x3<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub g: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// `Cv`.
    pub cv: Vector3<f64>,
    /// `Cg`.
    pub cg: Vector3<f64>,
}

impl StructuralBlocks {
    pub fn new(x: &State, feature: usize, gravity: &Gravity) -> Result<Self> {
        let count = x.feature_count();
        if feature >= count {
            return Err(Error::InvalidFeature { index: feature, count });
        }
        let c = x.rotation()?;
        let t = jac_theta_wrt_s(&x.s);
        let dim = x.dim();
        let flat = x.flatten();
        let features_in_imu = (0..count)
            .map(|i| feature_in_imu_at(flat.as_slice(), i))
            .collect::<Result<Vec<_>>>()?;

        let k = features_in_imu
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut ki = DMatrix::zeros(3, dim);
                place(&mut ki, block::ROT, &(skew(p) * t));
                place(&mut ki, block::POS, &-c);
                place(&mut ki, block::feature(i), &c);
                ki
            })
            .collect();
        let cv = c * x.v;
        let cg = c * gravity.0;
        let mut g = DMatrix::zeros(3, dim);
        place(&mut g, block::ROT, &(skew(&cv) * t));
        place(&mut g, block::VEL, &c);
        let mut j = DMatrix::zeros(3, dim);
        place(&mut j, block::GYRO_BIAS, &Matrix3::identity());
        let mut n = DMatrix::zeros(3, dim);
        place(&mut n, block::ACCEL_BIAS, &Matrix3::identity());
        let mut m = DMatrix::zeros(3, dim);
        place(&mut m, block::ROT, &(skew(&cg) * t));

        let hc = features_in_imu
            .get(feature)
            .filter(|p| p[2] >= PZ_MIN)
            .map(projection_jacobian);
        Ok(StructuralBlocks { feature, rotation: c, theta_wrt_s: t, features_in_imu, hc, k, g, j, m, n, cv, cg })
    }

    /// `H_c` for [`Self::feature`], or the cheirality error.
    pub fn hc(&self) -> Result<Matrix2x3<f64>> {
        self.hc.ok_or_else(|| Error::Cheirality {
            feature: self.feature,
            depth: self.p()[2],
            limit: PZ_MIN,
        })
    }

    /// `ᴵp_f` of [`Self::feature`].
    pub fn p(&self) -> Vector3<f64> {
        self.features_in_imu[self.feature]
    }

    /// `K` of [`Self::feature`].
    pub fn k_feature(&self) -> &DMatrix<f64> {
        &self.k[self.feature]
    }
}

/// Blocks in camera form; fails when feature `k` is too close or behind.
pub fn structural_blocks(x: &State, k: usize, gravity: &Gravity) -> Result<StructuralBlocks> {
    let b = StructuralBlocks::new(x, k, gravity)?;
    b.hc()?;
    Ok(b)
}

/// `x ↦ H_c(x)·v` for a fixed direction `v`.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedDirection {
    pub feature: usize,
    pub v: Vector3<f64>,
}

impl SmoothMap for ProjectedDirection {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        let p = feature_in_imu_at(x, self.feature)?;
        if p[2].value().is_nan() || p[2].value() < PZ_MIN {
            return Err(Error::Cheirality { feature: self.feature, depth: p[2].value(), limit: PZ_MIN });
        }
        Ok((projection_jacobian(&p) * self.v.map(T::from_f64)).as_slice().to_vec())
    }
}

/// Residual of `d(H_c)·v = −(1/p_z)(H_c v)e₃ᵀK − (e₃ᵀv/p_z)·dh`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityResidual {
    pub absolute: f64,
    /// `absolute / ‖rhs‖`, or `absolute` when the right-hand side vanishes.
    pub relative: f64,
}

/// Differentiates `x ↦ H_c(x)·v` numerically and compares with the closed form.
pub fn projection_derivative_check(x: &State, k: usize, v: &Vector3<f64>, gravity: &Gravity) -> Result<IdentityResidual> {
    let b = structural_blocks(x, k, gravity)?;
    let hc = b.hc()?;
    let kk = b.k_feature();
    let pz = b.p()[2];
    let dh = hc * kk.fixed_rows::<3>(0);
    let e3k = kk.row(2);
    let hv: Vector2<f64> = hc * v;
    let rhs = -(hv * e3k) / pz - dh * (v[2] / pz);
    let lhs = numeric_jacobian(&ProjectedDirection { feature: k, v: *v }, &x.flatten())?;
    let absolute = (lhs - &rhs).norm();
    let scale = rhs.norm();
    Ok(IdentityResidual { absolute, relative: if scale > 0.0 { absolute / scale } else { absolute } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Observation;
    use crate::dynamics::Sensor;
    use crate::lie::{jet_jacobian, numeric_jacobian};
    use crate::state::cgr_matrix;

    pub(crate) fn sample_state() -> State {
        let s = Vector3::new(0.3, -0.5, 0.2);
        let p_i = Vector3::new(1.0, -2.0, 0.5);
        let c = cgr_matrix(&s);
        State {
            s,
            b_g: Vector3::new(0.05, -0.02, 0.08),
            v: Vector3::new(1.2, 0.4, -0.9),
            b_a: Vector3::new(-0.04, 0.07, 0.01),
            p_i,
            features: vec![
                p_i + c.transpose() * Vector3::new(0.4, -0.3, 3.0),
                p_i + c.transpose() * Vector3::new(-1.5, 0.8, 6.0),
            ],
        }
    }

    #[test]
    fn hc_on_axis() {
        let hc = projection_jacobian(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(hc, Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn block_sparsity() {
        let x = sample_state();
        let b = structural_blocks(&x, 0, &Gravity::default()).unwrap();
        let nz = |m: &DMatrix<f64>| -> Vec<usize> {
            (0..m.ncols() / 3).filter(|c| m.columns(3 * c, 3).amax() != 0.0).collect()
        };
        assert_eq!(nz(&b.j), vec![1]);
        assert_eq!(nz(&b.n), vec![3]);
        assert_eq!(nz(&b.m), vec![0]);
        assert_eq!(nz(&b.g), vec![0, 2]);
        assert_eq!(nz(&b.k[0]), vec![0, 4, 5]);
        assert_eq!(nz(&b.k[1]), vec![0, 4, 6]);
        let mut e = nalgebra::DVector::zeros(x.dim());
        e.rows_mut(block::GYRO_BIAS, 3).copy_from(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(&b.j * &e, nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        e.rows_mut(block::GYRO_BIAS, 3).fill(0.0);
        e.rows_mut(block::VEL, 3).fill(1.0);
        assert_eq!((&b.j * &e).amax(), 0.0);
    }

    #[test]
    fn k_is_the_differential_of_the_feature_in_imu() {
        let x = sample_state();
        let b = StructuralBlocks::new(&x, 0, &Gravity::default()).unwrap();
        for i in 0..2 {
            let lidar = Observation { sensor: Sensor::Lins, feature: i };
            let fd = numeric_jacobian(&lidar, &x.flatten()).unwrap();
            assert!((&fd - &b.k[i]).norm() <= 1e-6 * b.k[i].norm());
            let jet = jet_jacobian(&lidar, &x.flatten()).unwrap();
            assert!((&jet - &b.k[i]).amax() <= 1e-13);
        }
    }

    #[test]
    fn g_and_m_are_differentials_of_rotated_vectors() {
        struct Rotated(Vector3<f64>, bool);
        impl SmoothMap for Rotated {
            fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
                let c = cgr_matrix(&crate::state::vec3_at(x, block::ROT));
                let w = if self.1 { crate::state::vec3_at(x, block::VEL) } else { self.0.map(T::from_f64) };
                Ok((c * w).as_slice().to_vec())
            }
        }
        let x = sample_state();
        let g = Gravity::default();
        let b = StructuralBlocks::new(&x, 0, &g).unwrap();
        let dg = jet_jacobian(&Rotated(Vector3::zeros(), true), &x.flatten()).unwrap();
        let dm = jet_jacobian(&Rotated(g.0, false), &x.flatten()).unwrap();
        assert!((dg - &b.g).amax() <= 1e-13);
        assert!((dm - &b.m).amax() <= 1e-13);
    }

    #[test]
    fn camera_gradient_is_hc_k() {
        let x = sample_state();
        let b = structural_blocks(&x, 1, &Gravity::default()).unwrap();
        let dh = b.hc().unwrap() * b.k_feature().fixed_rows::<3>(0);
        let cam = Observation { sensor: Sensor::Vins, feature: 1 };
        let fd = numeric_jacobian(&cam, &x.flatten()).unwrap();
        assert!((fd - &dh).norm() <= 1e-6 * dh.norm());
    }

    #[test]
    fn cheirality_in_camera_form() {
        let mut x = sample_state();
        x.features[1] = x.p_i + cgr_matrix(&x.s).transpose() * Vector3::new(1.0, 1.0, -1.0);
        assert!(matches!(structural_blocks(&x, 1, &Gravity::default()), Err(Error::Cheirality { feature: 1, .. })));
        assert!(StructuralBlocks::new(&x, 1, &Gravity::default()).unwrap().hc.is_none());
    }

    #[test]
    fn projection_identity_holds() {
        let x = sample_state();
        let g = Gravity::default();
        let zero = projection_derivative_check(&x, 0, &Vector3::zeros(), &g).unwrap();
        assert_eq!(zero.absolute, 0.0);
        let mut on_axis = State::at_rest(vec![Vector3::new(0.0, 0.0, 2.0)]);
        on_axis.s = Vector3::new(0.0, 0.0, 0.0);
        assert!(projection_derivative_check(&on_axis, 0, &Vector3::z(), &g).unwrap().absolute <= 1e-6);
        for v in [Vector3::new(0.3, -1.0, 2.0), Vector3::new(-4.0, 0.1, 0.5)] {
            for k in 0..2 {
                let r = projection_derivative_check(&x, k, &v, &g).unwrap();
                assert!(r.relative <= 1e-5, "{r:?}");
            }
        }
    }
}
