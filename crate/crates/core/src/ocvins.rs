//! The gravity-rotation unobservable direction `n₄`, its Lie brackets with
//! the system fields, and its invariance under the flow.
//!
//! ```text
//! n₄ = (∂s/∂θ·Cg, 0, −[v×]g, 0, [g×]p_I, [g×]p_f1, …, [g×]p_fN)
//! ```

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::dynamics::{FieldKind, SystemField};
use crate::error::Result;
use crate::jet::Real;
use crate::lie::{
    eval_at, flow_jacobian_with, lie_bracket, Differentiation, InputSchedule, SmoothMap,
};
use crate::state::{
    block, cgr_matrix, feature_count_for, jac_s_wrt_theta, jac_theta_wrt_s, put3, skew, vec3_at,
    Gravity, State, TangentVector,
};

/// Bracket residual tolerance before scaling by `1 + ‖x‖`.
pub const BRACKET_TOL: f64 = 1e-5;

/// `n₄` on a flattened state; `flip_velocity` negates the velocity block.
pub fn n4_at<T: Real>(x: &[T], g: &Vector3<f64>, flip_velocity: bool) -> Result<Vec<T>> {
    let n = feature_count_for(x.len())?;
    let s = vec3_at(x, block::ROT);
    let gv = g.map(T::from_f64);
    let gx = skew(&gv);
    let mut out = vec![T::zero(); x.len()];
    put3(&mut out, block::ROT, &(jac_s_wrt_theta(&s) * (cgr_matrix(&s) * gv)));
    let vel = -(skew(&vec3_at(x, block::VEL)) * gv);
    put3(&mut out, block::VEL, &if flip_velocity { -vel } else { vel });
    put3(&mut out, block::POS, &(gx * vec3_at(x, block::POS)));
    for k in 0..n {
        put3(&mut out, block::feature(k), &(gx * vec3_at(x, block::feature(k))));
    }
    Ok(out)
}

pub fn n4(x: &State, g: &Gravity) -> TangentVector {
    TangentVector(DVector::from_vec(n4_at(x.flatten().as_slice(), &g.0, false).expect("state dimension is valid")))
}

/// `x ↦ n₄(x)` as a vector field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct N4Field {
    pub gravity: Vector3<f64>,
    /// Mutation control: negated velocity block.
    pub flip_velocity: bool,
}

impl N4Field {
    pub fn new(g: &Gravity) -> Self {
        N4Field { gravity: g.0, flip_velocity: false }
    }

    pub fn corrupted(g: &Gravity) -> Self {
        N4Field { gravity: g.0, flip_velocity: true }
    }
}

impl SmoothMap for N4Field {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        n4_at(x, &self.gravity, self.flip_velocity)
    }
}

/// Common translation of the IMU and every feature along `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslationField {
    pub axis: usize,
}

impl SmoothMap for TranslationField {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        let n = feature_count_for(x.len())?;
        let mut out = vec![T::zero(); x.len()];
        out[block::POS + self.axis] = T::one();
        for k in 0..n {
            out[block::feature(k) + self.axis] = T::one();
        }
        Ok(out)
    }
}

/// `‖[f, n](x)‖` for `f₀`, `f₁ⁱ`, `f₂ⁱ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BracketResiduals {
    pub drift: f64,
    pub gyro: [f64; 3],
    pub accel: [f64; 3],
    /// `BRACKET_TOL·(1 + ‖x‖)`.
    pub tolerance: f64,
}

impl BracketResiduals {
    pub fn all(&self) -> [f64; 7] {
        [self.drift, self.gyro[0], self.gyro[1], self.gyro[2], self.accel[0], self.accel[1], self.accel[2]]
    }

    pub fn max(&self) -> f64 {
        self.all().into_iter().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max() <= self.tolerance
    }
}

/// Seven bracket norms of `field` with the system fields.
pub fn bracket_residuals<V: SmoothMap>(x: &State, g: &Gravity, field: &V) -> Result<BracketResiduals> {
    x.rotation()?;
    let flat = x.flatten();
    let norm = |kind| -> Result<f64> { Ok(lie_bracket(&SystemField::new(kind, g), field, &flat)?.norm()) };
    Ok(BracketResiduals {
        drift: norm(FieldKind::Drift)?,
        gyro: [norm(FieldKind::Gyro(0))?, norm(FieldKind::Gyro(1))?, norm(FieldKind::Gyro(2))?],
        accel: [norm(FieldKind::Accel(0))?, norm(FieldKind::Accel(1))?, norm(FieldKind::Accel(2))?],
        tolerance: BRACKET_TOL * (1.0 + flat.norm()),
    })
}

/// `[f₀, n₄]`, `[f₁ⁱ, n₄]`, `[f₂ⁱ, n₄]`.
pub fn verify_brackets(x: &State, g: &Gravity) -> Result<BracketResiduals> {
    bracket_residuals(x, g, &N4Field::new(g))
}

/// `‖DΦ_t(x₀)·n(x₀) − n(Φ_t(x₀))‖ / ‖n(Φ_t(x₀))‖` for a direction field `n`.
pub fn flow_invariance_residual<V: SmoothMap>(
    x0: &State,
    schedule: &InputSchedule,
    g: &Gravity,
    dt: f64,
    field: &V,
    method: Differentiation,
) -> Result<f64> {
    let sens = flow_jacobian_with(x0, schedule, g, dt, method)?;
    let pushed = &sens.jacobian * eval_at(field, &x0.flatten())?;
    let target = eval_at(field, &sens.end.flatten())?;
    let scale = target.norm();
    let diff = (pushed - &target).norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Flow invariance of `n₄`. The variational equation uses exact jet
/// Jacobians, so the residual reflects RK4 truncation down to roundoff.
pub fn verify_flow_invariance(x0: &State, schedule: &InputSchedule, g: &Gravity, dt: f64) -> Result<f64> {
    if schedule.segments().is_empty() {
        x0.rotation()?;
        return Ok(0.0);
    }
    flow_invariance_residual(x0, schedule, g, dt, &N4Field::new(g), Differentiation::Jet)
}

/// Residuals of pulling `n₄` back to rotation-vector coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransferResidual {
    /// `‖(∂θ/∂s)(∂s/∂θ)Cg − Cg‖`.
    pub first_block: f64,
    /// Largest difference between the remaining blocks and `n₄`'s.
    pub other_blocks: f64,
}

/// Applies the rotation-block change of coordinates `∂θ/∂s` to `n₄` and
/// compares with `(Cg, 0, −[v×]g, 0, [g×]p_I, …)`.
pub fn coordinate_transfer_check(x: &State, g: &Gravity) -> Result<TransferResidual> {
    let c = x.rotation()?;
    let n = n4(x, g);
    let mut pulled = n.0.clone();
    let first = jac_theta_wrt_s(&x.s) * n.block(block::ROT);
    pulled.fixed_rows_mut::<3>(block::ROT).copy_from(&first);
    let cg = c * g.0;
    let first_block = (first - cg).norm();
    let other_blocks = (block::GYRO_BIAS..x.dim()).map(|i| (pulled[i] - n.0[i]).abs()).fold(0.0, f64::max);
    Ok(TransferResidual { first_block, other_blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ImuInput;
    use crate::lie::{lie_bracket_jet, Segment, DEFAULT_DT};

    fn sample() -> State {
        State {
            s: Vector3::new(0.4, 0.1, -0.3),
            b_g: Vector3::new(0.02, -0.06, 0.03),
            v: Vector3::new(-0.5, 1.4, 0.7),
            b_a: Vector3::new(0.08, 0.01, -0.05),
            p_i: Vector3::new(2.0, -3.0, 1.0),
            features: vec![Vector3::new(4.0, 1.0, 2.0), Vector3::new(-1.0, 5.0, -2.0)],
        }
    }

    #[test]
    fn n4_at_origin() {
        let g = Gravity::default();
        let x = State::at_rest(vec![Vector3::zeros()]);
        let n = n4(&x, &g);
        assert_eq!(n.block(block::ROT), g.0 * 0.5);
        assert_eq!(n.0.rows(3, x.dim() - 3).amax(), 0.0);
    }

    #[test]
    fn n4_velocity_parallel_to_gravity() {
        let mut x = sample();
        x.v = Vector3::new(0.0, 0.0, 3.0);
        assert_eq!(n4(&x, &Gravity::default()).block(block::VEL), Vector3::zeros());
    }

    #[test]
    fn brackets_vanish() {
        let x = sample();
        let g = Gravity::default();
        let r = verify_brackets(&x, &g).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max() <= 1e-6);
        for kind in FieldKind::all() {
            let exact = lie_bracket_jet(&SystemField::new(kind, &g), &N4Field::new(&g), &x.flatten()).unwrap();
            assert!(exact.amax() <= 1e-12, "{kind:?}: {}", exact.amax());
        }
    }

    #[test]
    fn accel_brackets_at_identity() {
        let x = State::at_rest(vec![Vector3::new(1.0, 2.0, 3.0)]);
        let r = verify_brackets(&x, &Gravity::default()).unwrap();
        assert!(r.accel.iter().all(|v| *v <= 1e-8));
    }

    #[test]
    fn corrupted_n4_is_detected() {
        let x = sample();
        let g = Gravity::default();
        let r = bracket_residuals(&x, &g, &N4Field::corrupted(&g)).unwrap();
        assert!(r.max() > 1e-2);
    }

    #[test]
    fn translations_commute_with_the_dynamics() {
        let x = sample();
        let g = Gravity::default();
        for axis in 0..3 {
            assert!(bracket_residuals(&x, &g, &TranslationField { axis }).unwrap().max() <= 1e-9);
        }
    }

    #[test]
    fn flow_invariance() {
        let x = sample();
        let g = Gravity::default();
        let sched = InputSchedule::new(vec![
            Segment { duration: 0.3, input: ImuInput::new(Vector3::new(0.5, -0.2, 0.8), Vector3::new(1.0, -2.0, 9.5)) },
            Segment { duration: 0.4, input: ImuInput::new(Vector3::new(-0.7, 0.6, 0.1), Vector3::new(-3.0, 1.0, 8.0)) },
            Segment { duration: 0.3, input: ImuInput::new(Vector3::new(0.2, 0.9, -0.5), Vector3::new(2.0, 2.0, 11.0)) },
        ])
        .unwrap();
        let r = verify_flow_invariance(&x, &sched, &g, DEFAULT_DT).unwrap();
        assert!(r <= 1e-5, "{r}");
        let t = flow_invariance_residual(&x, &sched, &g, DEFAULT_DT, &TranslationField { axis: 1 }, Differentiation::Jet).unwrap();
        assert!(t <= 1e-10, "{t}");
    }

    #[test]
    fn flow_invariance_trivial_cases() {
        let g0 = Gravity(Vector3::zeros());
        let mut x = State::at_rest(vec![Vector3::new(1.0, 1.0, 4.0)]);
        x.p_i = Vector3::new(0.5, 0.0, 0.0);
        let still = InputSchedule::constant(1.0, ImuInput::default()).unwrap();
        assert!(verify_flow_invariance(&x, &still, &g0, DEFAULT_DT).unwrap() <= 1e-10);
        assert!(verify_flow_invariance(&x, &still, &Gravity::default(), DEFAULT_DT).unwrap() <= 1e-8);
        assert_eq!(verify_flow_invariance(&x, &InputSchedule::default(), &g0, DEFAULT_DT).unwrap(), 0.0);
    }

    #[test]
    fn transfer_identity() {
        let g = Gravity::default();
        let r = coordinate_transfer_check(&sample(), &g).unwrap();
        assert!(r.first_block <= 1e-12);
        assert_eq!(r.other_blocks, 0.0);
        let mut at_zero = sample();
        at_zero.s = Vector3::zeros();
        let n = n4(&at_zero, &g);
        assert!((jac_theta_wrt_s(&at_zero.s) * n.block(block::ROT) - g.0).norm() <= 1e-15);
    }
}
