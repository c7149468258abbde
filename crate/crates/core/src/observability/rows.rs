//! Closed-form gradient rows of the observability codistribution.
//!
//! Every row is stored as coefficient matrices on the differentials
//! `K, G, J, N, M` of the reduced quantities `ᴵp_f, Cv, b_g, b_a, Cg` and
//! assembled against [`StructuralBlocks`]. Camera rows are the "bar" rows:
//! the raw gradient plus multiples of lower-order raw gradients, which span the
//! same row space. [`numeric_combination`] evaluates that same combination
//! from numerically differentiated raw rows.
//!
//! Notation below: `p = ᴵp_f`, `u = Cv`, `w = Cg`, `q = [p×]b_g + u`,
//! `a_k = e₃ᵀ[p×]e_k`, `c = [u×]b_g + b_a − w − (e₃ᵀq/p_z)u`.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, RowVector3, Vector3};

use crate::dynamics::{FieldKind, Observation, Sensor, SystemField};
use crate::error::Result;
use crate::lie::{jacobian, Differentiation, IteratedLieDerivative};
use crate::state::{skew, Gravity, State};

use super::blocks::StructuralBlocks;

/// Which iterated Lie derivative a row is the gradient of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowId {
    /// `dh`
    Output,
    /// `dL_{f1^i}h`
    Gyro(usize),
    /// `dL_{f0}h`
    Drift,
    /// `dL_{f2^i}L_{f0}h`
    AccelDrift(usize),
    /// `dL_{f1^k}L_{f0}h`
    GyroDrift(usize),
    /// `dL_{f0}L_{f0}h`
    DriftDrift,
    /// `dL_{f1^k}L_{f0}L_{f0}h`
    GyroDriftDrift(usize),
}

impl RowId {
    /// Fields of the iterated derivative, outermost first.
    pub fn chain(&self) -> Vec<FieldKind> {
        use FieldKind::*;
        match *self {
            RowId::Output => vec![],
            RowId::Gyro(i) => vec![Gyro(i)],
            RowId::Drift => vec![Drift],
            RowId::AccelDrift(i) => vec![Accel(i), Drift],
            RowId::GyroDrift(k) => vec![Gyro(k), Drift],
            RowId::DriftDrift => vec![Drift, Drift],
            RowId::GyroDriftDrift(k) => vec![Gyro(k), Drift, Drift],
        }
    }

    pub fn label(&self) -> String {
        chain_label(&self.chain())
    }

    /// Rows with a closed form for `sensor`.
    pub fn all(sensor: Sensor) -> Vec<RowId> {
        let mut out = vec![RowId::Output];
        if sensor == Sensor::Vins {
            out.extend((0..3).map(RowId::Gyro));
        }
        out.push(RowId::Drift);
        if sensor == Sensor::Vins {
            out.extend((0..3).map(RowId::AccelDrift));
        }
        out.extend((0..3).map(RowId::GyroDrift));
        out.push(RowId::DriftDrift);
        out.extend((0..3).map(RowId::GyroDriftDrift));
        out
    }
}

/// `dL_{a}L_{b}…h` for a chain given outermost first.
pub fn chain_label(chain: &[FieldKind]) -> String {
    let mut s = String::from("d");
    for f in chain {
        s.push_str(&format!("L_{{{}}}", f.label()));
    }
    s.push('h');
    s
}

/// A row as coefficients on `K, G, J, N, M`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowCoefficients {
    pub k: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl RowCoefficients {
    fn zeros(rows: usize) -> Self {
        let z = DMatrix::zeros(rows, 3);
        RowCoefficients { k: z.clone(), g: z.clone(), j: z.clone(), n: z.clone(), m: z }
    }

    /// `k·K + g·G + j·J + n·N + m·M`.
    pub fn assemble(&self, b: &StructuralBlocks) -> DMatrix<f64> {
        &self.k * b.k_feature() + &self.g * &b.g + &self.j * &b.j + &self.n * &b.n + &self.m * &b.m
    }
}

/// One closed-form row.
#[derive(Clone, Debug)]
pub struct AnalyticRow {
    pub id: RowId,
    pub feature: usize,
    pub coefficients: RowCoefficients,
    /// Only the `N`/`M` coefficients are known; valid on vectors with
    /// `Kn = Gn = Jn = 0`.
    pub partial: bool,
    pub matrix: DMatrix<f64>,
}

fn dm2(m: Matrix2x3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 3, m.as_slice())
}

fn dm3(m: Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

fn e(i: usize) -> Vector3<f64> {
    Vector3::ith(i, 1.0)
}

fn e3t() -> RowVector3<f64> {
    RowVector3::new(0.0, 0.0, 1.0)
}

/// Reduced quantities at one feature.
struct Ctx {
    p: Vector3<f64>,
    pz: f64,
    u: Vector3<f64>,
    w: Vector3<f64>,
    bg: Vector3<f64>,
    ba: Vector3<f64>,
    q: Vector3<f64>,
}

impl Ctx {
    fn new(x: &State, b: &StructuralBlocks) -> Self {
        let p = b.p();
        Ctx { p, pz: p[2], u: b.cv, w: b.cg, bg: x.b_g, ba: x.b_a, q: skew(&p) * x.b_g + b.cv }
    }

    fn a(&self, k: usize) -> f64 {
        (skew(&self.p) * e(k))[2]
    }

    fn c(&self) -> Vector3<f64> {
        skew(&self.u) * self.bg + self.ba - self.w - self.u * (self.q[2] / self.pz)
    }
}

/// Which transcription of the drift-drift camera row and the
/// gyro-drift-drift lidar row to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Form {
    Corrected,
    Literal,
}

fn camera_t2(c: &Ctx, hc: &Matrix2x3<f64>, form: Form) -> Matrix2x3<f64> {
    let px = skew(&c.p);
    let mut t2 = -hc * ((c.u / c.pz) * (e3t() * px) - skew(&c.u));
    for i in 0..3 {
        let inner = skew(&e(i)) + (px * e(i)) * e3t() / c.pz - Matrix3::identity() * (c.a(i) / c.pz);
        t2 -= (hc * inner * c.q) * e(i).transpose();
    }
    if form == Form::Corrected {
        t2 -= (hc * c.q) * (e3t() * px) * (2.0 / c.pz);
    }
    t2
}

fn camera_t3(c: &Ctx, hc: &Matrix2x3<f64>, form: Form) -> Matrix2x3<f64> {
    let pz2 = c.pz * c.pz;
    let drive = skew(&c.u) * c.bg + c.ba - c.w;
    let mut t3 = hc * (c.u * (2.0 * c.q[2] / pz2)) * e3t() - (hc * drive) * e3t() / c.pz;
    if form == Form::Corrected {
        t3 += hc * (c.q * (c.u[2] / pz2)) * e3t() + (hc * c.u) * (e3t() * skew(&c.bg)) / c.pz;
    }
    t3
}

fn camera_coefficients(id: RowId, c: &Ctx, hc: &Matrix2x3<f64>, form: Form) -> (RowCoefficients, bool) {
    let mut r = RowCoefficients::zeros(2);
    let px = skew(&c.p);
    let pz = c.pz;
    let mut partial = false;
    match id {
        RowId::Output => r.k = dm2(*hc),
        RowId::Gyro(i) => {
            r.k = dm2(-(hc * px * e(i)) * e3t() / pz - hc * skew(&e(i)));
        }
        RowId::Drift => {
            r.g = dm2(-hc);
            r.j = dm2(-hc * px);
            r.k = dm2((hc * c.u) * e3t() / pz);
        }
        RowId::AccelDrift(i) => r.k = dm2((hc * e(i)) * e3t() / pz),
        RowId::GyroDrift(k) => {
            let ak = c.a(k);
            let pek = px * e(k);
            r.g = dm2(hc * skew(&e(k)) + hc * (ak / pz) + (hc * pek) * e3t() / pz);
            let mut j = Matrix2x3::zeros();
            for i in 0..3 {
                let col = hc * skew(&e(i)) * pek + hc * px * e(i) * (ak / pz) + hc * pek * (c.a(i) / pz);
                j += col * e(i).transpose();
            }
            r.j = dm2(j);
            let pz2 = pz * pz;
            r.k = dm2(
                (hc * skew(&c.u) * e(k)) * e3t() / pz
                    - (hc * c.u) * e3t() * (2.0 * ak / pz2)
                    - (hc * c.u) * (e3t() * skew(&e(k))) / pz
                    - (hc * pek) * e3t() * (c.u[2] / pz2),
            );
        }
        RowId::DriftDrift => {
            r.n = dm2(*hc);
            r.m = dm2(-hc);
            r.g = dm2(
                -hc * (skew(&c.bg) + c.u * e3t() * (2.0 / pz) + (px * c.bg) * e3t() / pz
                    + Matrix3::identity() * (c.q[2] / pz)),
            );
            r.j = dm2(camera_t2(c, hc, form));
            r.k = dm2(camera_t3(c, hc, form));
        }
        RowId::GyroDriftDrift(k) => {
            let shape = (px * e(k)) * e3t() + Matrix3::identity() * c.a(k);
            r.n = dm2(-(hc / pz) * shape);
            r.m = dm2(hc * skew(&e(k)) + (hc / pz) * shape);
            partial = true;
        }
    }
    (r, partial)
}

fn lidar_coefficients(id: RowId, c: &Ctx, form: Form) -> Option<RowCoefficients> {
    let mut r = RowCoefficients::zeros(3);
    let px = skew(&c.p);
    let bx = skew(&c.bg);
    let i3 = Matrix3::identity();
    match id {
        RowId::Output => r.k = dm3(i3),
        RowId::Drift => {
            r.j = dm3(-px);
            r.g = dm3(-i3);
            r.k = dm3(bx);
        }
        RowId::GyroDrift(i) => {
            let ex = skew(&e(i));
            r.k = dm3(-bx * ex);
            r.j = dm3(-skew(&(px * e(i))));
            r.g = dm3(ex);
        }
        RowId::DriftDrift => {
            r.n = dm3(i3);
            r.m = dm3(-i3);
            r.g = dm3(bx * -2.0);
            r.j = dm3(skew(&(px * c.bg)) - bx * px + skew(&c.u) * 2.0);
            r.k = dm3(bx * bx);
        }
        RowId::GyroDriftDrift(i) => {
            let ex = skew(&e(i));
            r.m = dm3(ex);
            r.g = dm3(bx * ex * 2.0);
            r.k = dm3(match form {
                Form::Corrected => -bx * bx * ex,
                Form::Literal => -bx * bx,
            });
            let pe = px * e(i);
            r.j = dm3(skew(&(skew(&c.u) * e(i))) * 2.0 - bx * skew(&pe) - skew(&(bx * pe)));
        }
        RowId::Gyro(_) | RowId::AccelDrift(_) => return None,
    }
    Some(r)
}

fn analytic_row_form(x: &State, gravity: &Gravity, sensor: Sensor, k: usize, id: RowId, form: Form) -> Result<AnalyticRow> {
    let b = StructuralBlocks::new(x, k, gravity)?;
    let c = Ctx::new(x, &b);
    let (coefficients, partial) = match sensor {
        Sensor::Vins => camera_coefficients(id, &c, &b.hc()?, form),
        Sensor::Lins => (
            lidar_coefficients(id, &c, form).ok_or_else(|| {
                crate::Error::InvalidConfig(format!("row {} has no closed form for lins", id.label()))
            })?,
            false,
        ),
    };
    let matrix = coefficients.assemble(&b);
    Ok(AnalyticRow { id, feature: k, coefficients, partial, matrix })
}

/// A single closed-form row.
pub fn analytic_row(x: &State, gravity: &Gravity, sensor: Sensor, k: usize, id: RowId) -> Result<AnalyticRow> {
    analytic_row_form(x, gravity, sensor, k, id, Form::Corrected)
}

/// All closed-form camera rows for feature `k`.
pub fn analytic_vins_rows(x: &State, k: usize, gravity: &Gravity) -> Result<Vec<AnalyticRow>> {
    RowId::all(Sensor::Vins).into_iter().map(|id| analytic_row(x, gravity, Sensor::Vins, k, id)).collect()
}

/// All closed-form lidar rows for feature `k`.
pub fn analytic_lins_rows(x: &State, k: usize, gravity: &Gravity) -> Result<Vec<AnalyticRow>> {
    RowId::all(Sensor::Lins).into_iter().map(|id| analytic_row(x, gravity, Sensor::Lins, k, id)).collect()
}

/// `Σ coefficient · d(iterated Lie derivative)`, chains outermost first.
pub type Combination = Vec<(f64, Vec<FieldKind>)>;

/// The raw rows whose combination equals `id`'s closed form.
pub fn combination(x: &State, gravity: &Gravity, sensor: Sensor, k: usize, id: RowId) -> Result<Combination> {
    if sensor == Sensor::Lins {
        return Ok(vec![(1.0, id.chain())]);
    }
    let b = StructuralBlocks::new(x, k, gravity)?;
    b.hc()?;
    let c = Ctx::new(x, &b);
    let pz = c.pz;
    let uz = c.u[2] / pz;
    let gyro = |i| FieldKind::Gyro(i);
    let d = FieldKind::Drift;
    let bias_terms = |prefix: &[FieldKind], suffix: &[FieldKind]| -> Combination {
        (0..3)
            .map(|i| {
                let mut ch = prefix.to_vec();
                ch.push(gyro(i));
                ch.extend_from_slice(suffix);
                (c.bg[i], ch)
            })
            .collect()
    };
    let mut out: Combination = vec![(1.0, id.chain())];
    match id {
        RowId::Output => {}
        RowId::Gyro(i) => out.push((c.a(i) / pz, vec![])),
        RowId::Drift => {
            out.extend(bias_terms(&[], &[]));
            out.push((-uz, vec![]));
        }
        RowId::AccelDrift(i) => out.push((-e(i)[2] / pz, vec![])),
        RowId::GyroDrift(kk) => {
            out.extend(bias_terms(&[gyro(kk)], &[]));
            out.push((-uz, vec![gyro(kk)]));
            let v = -skew(&c.u) * e(kk) + c.u * (c.a(kk) / pz);
            out.push((v[2] / pz, vec![]));
        }
        RowId::DriftDrift => {
            out.extend(bias_terms(&[d], &[]));
            out.push((-uz, vec![d]));
            out.push((c.c()[2] / pz, vec![]));
        }
        RowId::GyroDriftDrift(kk) => {
            out.extend(bias_terms(&[gyro(kk), d], &[]));
            out.push((-uz, vec![gyro(kk), d]));
            out.push((c.c()[2] / pz, vec![gyro(kk)]));
        }
    }
    Ok(out)
}

/// Gradient of `L_{chain[0]} ⋯ h` for feature `k`.
pub fn chain_gradient(
    x: &State,
    gravity: &Gravity,
    sensor: Sensor,
    k: usize,
    chain: &[FieldKind],
    method: Differentiation,
) -> Result<DMatrix<f64>> {
    let map = IteratedLieDerivative {
        map: Observation { sensor, feature: k },
        chain: chain.iter().map(|f| SystemField::new(*f, gravity)).collect(),
    };
    jacobian(&map, &x.flatten(), method)
}

/// Evaluates `id`'s combination from numerically differentiated raw rows.
pub fn numeric_combination(
    x: &State,
    gravity: &Gravity,
    sensor: Sensor,
    k: usize,
    id: RowId,
    method: Differentiation,
) -> Result<DMatrix<f64>> {
    let mut acc = DMatrix::zeros(sensor.output_dim(), x.dim());
    for (coef, chain) in combination(x, gravity, sensor, k, id)? {
        acc += chain_gradient(x, gravity, sensor, k, &chain, method)? * coef;
    }
    Ok(acc)
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Outcome of comparing one closed-form row with its numeric combination.
#[derive(Clone, Debug, PartialEq)]
pub struct RowCheck {
    pub id: RowId,
    pub feature: usize,
    pub label: String,
    /// `‖numeric − analytic‖_F / max(‖numeric‖_F, ‖analytic‖_F)`; for
    /// partial rows both sides act on a basis of `null([K; G; J])`.
    pub relative_error: f64,
    pub partial: bool,
}

/// Orthonormal basis of `null([K_1; …; K_N; G; J])`.
fn kgj_null_basis(b: &StructuralBlocks) -> DMatrix<f64> {
    let mut rows: Vec<&DMatrix<f64>> = b.k.iter().collect();
    rows.push(&b.g);
    rows.push(&b.j);
    let stacked = super::linalg::vstack(&rows);
    super::linalg::null_basis(&stacked, 1e-10)
}

/// Compares every closed-form row for `sensor` with its numeric combination.
pub fn check_rows(x: &State, gravity: &Gravity, sensor: Sensor, method: Differentiation) -> Result<Vec<RowCheck>> {
    let mut out = Vec::new();
    for k in 0..x.feature_count() {
        for id in RowId::all(sensor) {
            let row = analytic_row(x, gravity, sensor, k, id)?;
            let numeric = numeric_combination(x, gravity, sensor, k, id, method)?;
            let relative_error = if row.partial {
                let basis = kgj_null_basis(&StructuralBlocks::new(x, k, gravity)?);
                relative(&(&numeric * &basis), &(&row.matrix * &basis))
            } else {
                relative(&numeric, &row.matrix)
            };
            out.push(RowCheck { id, feature: k, label: id.label(), relative_error, partial: row.partial });
        }
    }
    Ok(out)
}

/// How far a literal transcription of a printed row block is from the
/// numeric combination.
#[derive(Clone, Debug, PartialEq)]
pub struct LiteralFormCheck {
    pub label: String,
    /// Relative error of the corrected form.
    pub corrected: f64,
    /// Relative error of the literal form.
    pub literal: f64,
}

/// Checks the blocks whose literal transcription disagrees with the
/// numeric oracle: the `T₂`/`T₃` blocks of the camera drift-drift row and
/// the `K` coefficient of the lidar gyro-drift-drift rows.
pub fn literal_form_checks(x: &State, gravity: &Gravity, sensor: Sensor, method: Differentiation) -> Result<Vec<LiteralFormCheck>> {
    let mut out = Vec::new();
    for k in 0..x.feature_count() {
        let ids: Vec<RowId> = match sensor {
            Sensor::Vins => vec![RowId::DriftDrift],
            Sensor::Lins => (0..3).map(RowId::GyroDriftDrift).collect(),
        };
        for id in ids {
            let numeric = numeric_combination(x, gravity, sensor, k, id, method)?;
            let fixed = analytic_row_form(x, gravity, sensor, k, id, Form::Corrected)?;
            let literal = analytic_row_form(x, gravity, sensor, k, id, Form::Literal)?;
            out.push(LiteralFormCheck {
                label: format!("{} feature {}", id.label(), k),
                corrected: relative(&numeric, &fixed.matrix),
                literal: relative(&numeric, &literal.matrix),
            });
        }
    }
    Ok(out)
}
