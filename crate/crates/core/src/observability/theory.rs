//! Closed-form unobservable subspace, the `K/G/J/N/M` constraint matrix and
//! the per-configuration verification flags.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::Sensor;
use crate::error::{Error, Result};
use crate::lie::eval_at;
use crate::ocvins::{n4_at, TranslationField};
use crate::state::{skew, Gravity, State};

use super::blocks::StructuralBlocks;
use super::linalg::{
    full_svd, nullspace, numerical_rank, subspace_gap, vstack, CheckFlag, NullspaceReport, RankTolerance,
    TheoremFlags, RANK_TOL_ANALYTIC,
};
use super::matrix::{build_observability_matrix, RowConfig};

/// Per-row tolerance for `‖B·n‖ ≤ CHECK_TOL·‖n‖`.
pub const CHECK_TOL: f64 = 1e-6;
/// Largest admissible principal angle to the theoretical span, radians.
pub const GAP_TOL: f64 = 1e-5;
/// Left-nullspace comparison tolerance, radians.
pub const LEFT_NULL_TOL: f64 = 1e-8;
/// Two features count as collinear below this angle, radians.
pub const COLLINEAR_ANGLE: f64 = 1e-3;
/// Dimension of the theoretical unobservable subspace.
pub const THEORETICAL_NULL_DIM: usize = 4;

/// `[K_1; …; K_N; G; J; N; M]`, `(3N + 12) × (3N + 15)`.
pub fn constraint_matrix(x: &State, gravity: &Gravity) -> Result<DMatrix<f64>> {
    let b = StructuralBlocks::new(x, 0, gravity)?;
    let mut parts: Vec<&DMatrix<f64>> = b.k.iter().collect();
    parts.extend([&b.g, &b.j, &b.n, &b.m]);
    Ok(vstack(&parts))
}

/// Columns: translation along `e₁, e₂, e₃` (identity on `p_I` and every
/// feature) and the gravity-rotation direction `n₄`.
pub fn theoretical_null_basis(x: &State, gravity: &Gravity) -> Result<DMatrix<f64>> {
    let flat = x.flatten();
    let mut out = DMatrix::zeros(x.dim(), THEORETICAL_NULL_DIM);
    for axis in 0..3 {
        out.set_column(axis, &eval_at(&TranslationField { axis }, &flat)?);
    }
    out.set_column(3, &DVector::from_vec(n4_at(flat.as_slice(), &gravity.0, false)?));
    Ok(out)
}

/// Smallest angle between `ᴵp_fi` and the line through `ᴵp_fj`, radians.
pub fn feature_angle(x: &State, i: usize, j: usize) -> f64 {
    let a = x.features[i] - x.p_i;
    let b = x.features[j] - x.p_i;
    let angle = a.cross(&b).norm().atan2(a.dot(&b));
    angle.min(std::f64::consts::PI - angle)
}

/// Whether some pair of features is non-collinear as seen from the IMU.
pub fn has_non_collinear_pair(x: &State) -> bool {
    let n = x.feature_count();
    (0..n).any(|i| (i + 1..n).any(|j| feature_angle(x, i, j) > COLLINEAR_ANGLE))
}

/// Fails with [`Error::HypothesisViolation`] when the camera model lacks two
/// non-collinear features.
pub fn require_two_feature_hypothesis(x: &State, sensor: Sensor) -> Result<()> {
    if sensor == Sensor::Lins || has_non_collinear_pair(x) {
        Ok(())
    } else {
        Err(Error::HypothesisViolation(format!(
            "camera model needs two features separated by more than {COLLINEAR_ANGLE} rad"
        )))
    }
}

/// `[(x×y)×]z + [(y×z)×]x + [(z×x)×]y`, identically zero.
pub fn triple_cross(x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> Vector3<f64> {
    skew(&(skew(x) * y)) * z + skew(&(skew(y) * z)) * x + skew(&(skew(z) * x)) * y
}

/// Principal angle between the left nullspace of the constraint matrix and
/// the span of `(0, …, 0, (Cg)ᵀ)` on the `M` rows.
pub fn left_nullspace_gap(x: &State, gravity: &Gravity) -> Result<f64> {
    let a = constraint_matrix(x, gravity)?;
    let (sigma, v) = full_svd(&a.transpose());
    let r = numerical_rank(&sigma, RANK_TOL_ANALYTIC);
    let left = v.columns(r, v.ncols() - r).into_owned();
    let mut expect = DMatrix::zeros(a.nrows(), 1);
    let cg = x.rotation()? * gravity.0;
    expect.fixed_view_mut::<3, 1>(a.nrows() - 3, 0).copy_from(&cg);
    Ok(subspace_gap(&left, &expect))
}

/// Options for [`analyze`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub rows: RowConfig,
    pub rank_tolerance: RankTolerance,
    pub check_tol: f64,
    pub gap_tol: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            rows: RowConfig::default(),
            rank_tolerance: RankTolerance::Numeric,
            check_tol: CHECK_TOL,
            gap_tol: GAP_TOL,
        }
    }
}

fn max_block_action(block: &DMatrix<f64>, basis: &DMatrix<f64>) -> f64 {
    (0..basis.ncols())
        .map(|c| {
            let n = basis.column(c);
            (block * n).norm() / n.norm()
        })
        .fold(0.0, f64::max)
}

/// Builds the numeric observability matrix, takes its nullspace, compares
/// with the theoretical span and evaluates every membership check.
///
/// Checks that depend on the two-feature hypothesis are reported as
/// hypothesis violations instead of failures when it does not hold.
pub fn analyze(x: &State, gravity: &Gravity, sensor: Sensor, config: &AnalysisConfig) -> Result<NullspaceReport> {
    let o = build_observability_matrix(x, gravity, sensor, &config.rows)?;
    let mut report = nullspace(&o.rows, config.rank_tolerance);
    let theory = theoretical_null_basis(x, gravity)?;
    let o_norm = report.singular_values.first().copied().unwrap_or(0.0);
    let residual = max_block_action(&o.rows, &theory);
    let gap = subspace_gap(&report.null_basis, &theory);
    report.residual_theoretical = Some(residual);
    report.subspace_gap = Some(gap);

    let gate = require_two_feature_hypothesis(x, sensor).is_err();
    let gated = |f: CheckFlag| if gate { f.gated() } else { f };
    let b = StructuralBlocks::new(x, 0, gravity)?;
    let basis = &report.null_basis;
    let flags = &mut report.theorem_flags;
    let k_max = b.k.iter().map(|k| max_block_action(k, basis)).fold(0.0, f64::max);
    flags.insert("k_n".into(), CheckFlag::at_most(k_max, config.check_tol));
    flags.insert("g_n".into(), gated(CheckFlag::at_most(max_block_action(&b.g, basis), config.check_tol)));
    flags.insert("j_n".into(), gated(CheckFlag::at_most(max_block_action(&b.j, basis), config.check_tol)));
    flags.insert("m_n".into(), gated(CheckFlag::at_most(max_block_action(&b.m, basis), config.check_tol)));
    flags.insert("n_n".into(), gated(CheckFlag::at_most(max_block_action(&b.n, basis), config.check_tol)));
    flags.insert("null_dim".into(), gated(CheckFlag::equals(basis.ncols(), THEORETICAL_NULL_DIM)));
    flags.insert("subspace_gap".into(), gated(CheckFlag::at_most(gap, config.gap_tol)));
    let scale = if o_norm > 0.0 { o_norm } else { 1.0 };
    flags.insert("theoretical_residual".into(), CheckFlag::at_most(residual / scale, config.gap_tol));

    let a = constraint_matrix(x, gravity)?;
    let rank = nullspace(&a, RankTolerance::Analytic).numerical_rank;
    flags.insert("constraint_rank".into(), CheckFlag::equals(rank, 3 * x.feature_count() + 11));
    flags.insert("left_nullspace".into(), CheckFlag::at_most(left_nullspace_gap(x, gravity)?, LEFT_NULL_TOL));
    Ok(report)
}

/// Every membership, rank and span check with default tolerances.
pub fn verify_theorems(x: &State, gravity: &Gravity, sensor: Sensor) -> Result<TheoremFlags> {
    Ok(analyze(x, gravity, sensor, &AnalysisConfig::default())?.theorem_flags)
}
