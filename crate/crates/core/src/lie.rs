//! Differential-geometric machinery on the flattened state space.
//!
//! Two differentiation routes are provided and are deliberately kept
//! independent of each other:
//!
//! * [`numeric_jacobian`]: central differences with a per-coordinate step
//!   `FD_STEP · max(1, |xᵢ|)`. Used for brackets, flow sensitivities and as a
//!   first-order cross-check.
//! * jets ([`jet_jacobian`], [`LieDerivative`], [`IteratedLieDerivative`]):
//!   every Lie derivative adds one nilpotent infinitesimal, so an iterated
//!   derivative of depth `k` and its gradient are exact to rounding for
//!   `k + 1 ≤ MAX_INFINITESIMALS`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{ImuInput, InputField};
use crate::error::{Error, Result};
use crate::jet::{max_order, Dual, Jet, Real, MAX_INFINITESIMALS};
use crate::state::{block, check_chart, vec3_at, Gravity, State};

/// Relative central-difference step (≈ cube root of machine epsilon).
pub const FD_STEP: f64 = 6e-6;

/// Default fixed RK4 step, s.
pub const DEFAULT_DT: f64 = 1e-3;

/// A smooth map from the flattened state to `Rᵐ`, evaluable on any [`Real`].
///
/// Vector fields are smooth maps whose output has the state's dimension.
pub trait SmoothMap {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>>;
}

impl<M: SmoothMap> SmoothMap for &M {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        (**self).eval(x)
    }
}

/// Evaluates a map at a plain point.
pub fn eval_at<M: SmoothMap>(map: &M, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(map.eval(x.as_slice())?))
}

/// How a Jacobian is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Differentiation {
    /// Central differences, [`FD_STEP`].
    CentralDifference,
    /// Forward propagation of one infinitesimal per coordinate.
    #[default]
    Jet,
}

/// Central-difference Jacobian. Evaluation failures (for example a feature
/// crossing behind the camera inside the stencil) surface as
/// [`Error::JacobianDomain`].
pub fn numeric_jacobian<M: SmoothMap>(map: &M, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut probe = x.clone();
    let mut jac: Option<DMatrix<f64>> = None;
    for j in 0..n {
        let h = FD_STEP * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = map.eval(probe.as_slice()).map_err(Error::in_jacobian)?;
        probe[j] = x[j] - h;
        let minus = map.eval(probe.as_slice()).map_err(Error::in_jacobian)?;
        probe[j] = x[j];
        let jm = jac.get_or_insert_with(|| DMatrix::zeros(plus.len(), n));
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            jm[(i, j)] = (p - m) / (2.0 * h);
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Jacobian by dual numbers, exact to rounding.
pub fn jet_jacobian<M: SmoothMap>(map: &M, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = x.len();
    let base: Vec<Dual> = x.iter().map(|v| Dual::from_f64(*v)).collect();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut probe = base.clone();
    for j in 0..n {
        probe[j].d = 1.0;
        let out = map.eval(&probe).map_err(Error::in_jacobian)?;
        probe[j] = base[j];
        let jm = jac.get_or_insert_with(|| DMatrix::zeros(out.len(), n));
        for (i, o) in out.iter().enumerate() {
            jm[(i, j)] = o.d;
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

pub fn jacobian<M: SmoothMap>(map: &M, x: &DVector<f64>, method: Differentiation) -> Result<DMatrix<f64>> {
    match method {
        Differentiation::CentralDifference => numeric_jacobian(map, x),
        Differentiation::Jet => jet_jacobian(map, x),
    }
}

/// Applies `L_{chain[0]} L_{chain[1]} … map` at a jet point; `chain` is
/// ordered outermost first.
fn eval_chain<M: SmoothMap, V: SmoothMap>(map: &M, chain: &[V], x: &[Jet]) -> Result<Vec<Jet>> {
    let Some((outer, rest)) = chain.split_first() else {
        return map.eval(x);
    };
    let slot = max_order(x);
    if slot + chain.len() > MAX_INFINITESIMALS {
        return Err(Error::DepthExceeded { requested: slot + chain.len(), max: MAX_INFINITESIMALS });
    }
    let dir = outer.eval(x)?;
    let shifted: Vec<Jet> = x.iter().zip(&dir).map(|(xi, di)| xi.perturbed(slot, di)).collect();
    let inner = eval_chain(map, rest, &shifted)?;
    Ok(inner.iter().map(|o| o.derivative(slot)).collect())
}

fn eval_lifted<M: SmoothMap, V: SmoothMap, T: Real>(map: &M, chain: &[V], x: &[T]) -> Result<Vec<T>> {
    let lifted: Vec<Jet> = x.iter().map(|v| v.to_jet()).collect();
    Ok(eval_chain(map, chain, &lifted)?.into_iter().map(T::from_jet).collect())
}

/// `L_f F = dF · f` as a composable smooth map.
#[derive(Clone, Debug)]
pub struct LieDerivative<M, V> {
    pub map: M,
    pub field: V,
}

pub fn lie_derivative<M: SmoothMap, V: SmoothMap>(map: M, field: V) -> LieDerivative<M, V> {
    LieDerivative { map, field }
}

impl<M: SmoothMap, V: SmoothMap> SmoothMap for LieDerivative<M, V> {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        eval_lifted(&self.map, std::slice::from_ref(&self.field), x)
    }
}

/// `L_{chain[0]} ⋯ L_{chain[k-1]} map`, chain given outermost first.
#[derive(Clone, Debug)]
pub struct IteratedLieDerivative<M, V> {
    pub map: M,
    pub chain: Vec<V>,
}

impl<M: SmoothMap, V: SmoothMap> SmoothMap for IteratedLieDerivative<M, V> {
    fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        eval_lifted(&self.map, &self.chain, x)
    }
}

/// `dF(x)·f(x)` with the central-difference Jacobian.
pub fn lie_derivative_fd<M: SmoothMap, V: SmoothMap>(map: &M, field: &V, x: &DVector<f64>) -> Result<DVector<f64>> {
    let d = numeric_jacobian(map, x)?;
    Ok(d * eval_at(field, x)?)
}

/// `[f, g](x) = Dg·f − Df·g` with central-difference Jacobians.
pub fn lie_bracket<F: SmoothMap, G: SmoothMap>(f: &F, g: &G, x: &DVector<f64>) -> Result<DVector<f64>> {
    let fx = eval_at(f, x).map_err(Error::in_jacobian)?;
    let gx = eval_at(g, x).map_err(Error::in_jacobian)?;
    Ok(numeric_jacobian(g, x)? * fx - numeric_jacobian(f, x)? * gx)
}

/// `[f, g](x)` by jets; an independent second route for [`lie_bracket`].
pub fn lie_bracket_jet<F: SmoothMap, G: SmoothMap>(f: &F, g: &G, x: &DVector<f64>) -> Result<DVector<f64>> {
    let dg_f = eval_at(&lie_derivative(g, f), x)?;
    let df_g = eval_at(&lie_derivative(f, g), x)?;
    Ok(dg_f - df_g)
}

/// One constant-input segment of a schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    /// Length of the segment, s.
    pub duration: f64,
    pub input: ImuInput,
}

/// Piecewise-constant IMU input.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InputSchedule {
    segments: Vec<Segment>,
}

impl InputSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if let Some(bad) = segments.iter().find(|s| !(s.duration > 0.0 && s.duration.is_finite())) {
            return Err(Error::InvalidConfig(format!("segment duration {} must be positive", bad.duration)));
        }
        Ok(InputSchedule { segments })
    }

    /// A single segment holding `input` for `duration` seconds.
    pub fn constant(duration: f64, input: ImuInput) -> Result<Self> {
        Self::new(vec![Segment { duration, input }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Same inputs with every duration scaled so the total is `total`.
    pub fn rescaled_to(&self, total: f64) -> Result<Self> {
        let k = total / self.total_duration();
        Self::new(self.segments.iter().map(|s| Segment { duration: s.duration * k, input: s.input }).collect())
    }
}

/// Endpoint and sensitivity of a flow.
#[derive(Clone, Debug)]
pub struct FlowSensitivity {
    pub end: State,
    /// `DΦ_t(x₀)`.
    pub jacobian: DMatrix<f64>,
}

fn steps_for(duration: f64, dt: f64) -> usize {
    ((duration / dt) - 1e-9).ceil().max(1.0) as usize
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("integration step {dt} must be positive")))
    }
}

fn check_chart_flat(x: &DVector<f64>) -> Result<()> {
    check_chart(&vec3_at(x.as_slice(), block::ROT))
}

/// Integrates `ẋ = f(x, u(t))` with classical RK4. Each segment is split into
/// equal steps no longer than `dt`, so segment boundaries are hit exactly.
pub fn flow(x0: &State, schedule: &InputSchedule, g: &Gravity, dt: f64) -> Result<State> {
    check_dt(dt)?;
    let mut x = x0.flatten();
    check_chart_flat(&x)?;
    for seg in schedule.segments() {
        let field = InputField { input: seg.input, gravity: g.0 };
        let n = steps_for(seg.duration, dt);
        let h = seg.duration / n as f64;
        for _ in 0..n {
            let k1 = eval_at(&field, &x)?;
            let k2 = eval_at(&field, &(&x + &k1 * (h / 2.0)))?;
            let k3 = eval_at(&field, &(&x + &k2 * (h / 2.0)))?;
            let k4 = eval_at(&field, &(&x + &k3 * h))?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            check_chart_flat(&x)?;
        }
    }
    State::from_flat(x.as_slice())
}

/// Flow together with `DΦ_t(x₀)`, integrating `Ṁ = Df(x(t))·M`, `M(0) = I`,
/// through the same RK4 stages as the state. `Df` comes from
/// [`numeric_jacobian`].
pub fn flow_jacobian(x0: &State, schedule: &InputSchedule, g: &Gravity, dt: f64) -> Result<FlowSensitivity> {
    flow_jacobian_with(x0, schedule, g, dt, Differentiation::CentralDifference)
}

pub fn flow_jacobian_with(
    x0: &State,
    schedule: &InputSchedule,
    g: &Gravity,
    dt: f64,
    method: Differentiation,
) -> Result<FlowSensitivity> {
    check_dt(dt)?;
    let mut x = x0.flatten();
    check_chart_flat(&x)?;
    let mut m = DMatrix::identity(x.len(), x.len());
    for seg in schedule.segments() {
        let field = InputField { input: seg.input, gravity: g.0 };
        let n = steps_for(seg.duration, dt);
        let h = seg.duration / n as f64;
        for _ in 0..n {
            let x2 = &x + eval_at(&field, &x)? * (h / 2.0);
            let k1 = eval_at(&field, &x)?;
            let m1 = jacobian(&field, &x, method)? * &m;
            let k2 = eval_at(&field, &x2)?;
            let m2 = jacobian(&field, &x2, method)? * (&m + &m1 * (h / 2.0));
            let x3 = &x + &k2 * (h / 2.0);
            let k3 = eval_at(&field, &x3)?;
            let m3 = jacobian(&field, &x3, method)? * (&m + &m2 * (h / 2.0));
            let x4 = &x + &k3 * h;
            let k4 = eval_at(&field, &x4)?;
            let m4 = jacobian(&field, &x4, method)? * (&m + &m3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            m += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
            check_chart_flat(&x)?;
        }
    }
    Ok(FlowSensitivity { end: State::from_flat(x.as_slice())?, jacobian: m })
}

/// Column-by-column central differences of the flow endpoint with respect to
/// the initial state. Test oracle for [`flow_jacobian`].
pub fn flow_jacobian_fd(x0: &State, schedule: &InputSchedule, g: &Gravity, dt: f64, step: f64) -> Result<DMatrix<f64>> {
    let x = x0.flatten();
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = step * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += h;
        let mut xm = x.clone();
        xm[j] -= h;
        let fp = flow(&State::from_flat(xp.as_slice())?, schedule, g, dt)?.flatten();
        let fm = flow(&State::from_flat(xm.as_slice())?, schedule, g, dt)?.flatten();
        out.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    Ok(out)
}
