//! SVD-based rank, nullspace and principal-angle utilities.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

/// Relative rank threshold for closed-form matrices.
pub const RANK_TOL_ANALYTIC: f64 = 1e-8;
/// Relative rank threshold for numerically differentiated matrices.
pub const RANK_TOL_NUMERIC: f64 = 1e-6;

/// How singular values are thresholded, relative to `σ₁`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum RankTolerance {
    Analytic,
    #[default]
    Numeric,
    Relative(f64),
}

impl RankTolerance {
    pub fn value(&self) -> f64 {
        match self {
            RankTolerance::Analytic => RANK_TOL_ANALYTIC,
            RankTolerance::Numeric => RANK_TOL_NUMERIC,
            RankTolerance::Relative(t) => *t,
        }
    }
}

/// Stacks matrices with equal column counts.
pub fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "column mismatch in vstack");
        out.rows_mut(r, p.nrows()).copy_from(p);
        r += p.nrows();
    }
    out
}

/// Full SVD as `(σ descending, V)` with `V` square. Wide inputs are padded
/// with zero rows so every right singular vector is available.
pub fn full_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, a.nrows()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        v.set_column(c, &vt.row(i).transpose());
    }
    (sigma, v)
}

/// Number of `σᵢ > tol·σ₁`.
pub fn numerical_rank(sigma: &[f64], tol: f64) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|s| **s > tol * top).count()
}

/// Orthonormal nullspace basis with relative threshold `tol`.
pub fn null_basis(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (sigma, v) = full_svd(a);
    let r = numerical_rank(&sigma, tol);
    v.columns(r, v.ncols() - r).into_owned()
}

/// Orthonormal basis of the column space of `a` (columns assumed independent).
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return a.clone();
    }
    a.clone().qr().q()
}

/// Largest principal angle between `span(a)` and `span(b)`, radians;
/// `π/2` when the dimensions differ.
pub fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let sin = resid.singular_values().max();
    sin.min(1.0).asin()
}

/// Outcome of a single check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The check's hypothesis does not hold for this configuration.
    HypothesisViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CheckFlag {
    pub status: CheckStatus,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckFlag {
    /// Pass iff `value <= tolerance`.
    pub fn at_most(value: f64, tolerance: f64) -> Self {
        let status = if value <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail };
        CheckFlag { status, value, tolerance }
    }

    /// Pass iff `value == expected`; `tolerance` carries the expected value.
    pub fn equals(value: usize, expected: usize) -> Self {
        let status = if value == expected { CheckStatus::Pass } else { CheckStatus::Fail };
        CheckFlag { status, value: value as f64, tolerance: expected as f64 }
    }

    /// Same value, status replaced by a hypothesis violation.
    pub fn gated(self) -> Self {
        CheckFlag { status: CheckStatus::HypothesisViolation, ..self }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

pub type TheoremFlags = BTreeMap<String, CheckFlag>;

/// SVD summary of an observability matrix.
#[derive(Clone, Debug)]
pub struct NullspaceReport {
    /// Descending; wide matrices are padded so there is one per column.
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
    pub rank_tolerance: f64,
    /// Orthonormal columns.
    pub null_basis: DMatrix<f64>,
    /// `max ‖O·b‖/‖b‖` over the theoretical basis columns `b`.
    pub residual_theoretical: Option<f64>,
    /// Largest principal angle to the theoretical span, radians.
    pub subspace_gap: Option<f64>,
    pub theorem_flags: TheoremFlags,
}

impl NullspaceReport {
    pub fn null_dimension(&self) -> usize {
        self.null_basis.ncols()
    }

    /// `σ_{rank}/σ₁`, the smallest retained singular value, relative.
    pub fn smallest_retained_ratio(&self) -> f64 {
        match (self.numerical_rank, self.singular_values.first()) {
            (0, _) | (_, None) => 0.0,
            (r, Some(top)) => self.singular_values[r - 1] / top,
        }
    }

    /// `σ_{rank+1}/σ₁`, the largest discarded singular value, relative.
    pub fn largest_discarded_ratio(&self) -> f64 {
        match (self.singular_values.get(self.numerical_rank), self.singular_values.first()) {
            (Some(s), Some(top)) if *top > 0.0 => s / top,
            _ => 0.0,
        }
    }
}

/// Full SVD, numerical rank and nullspace.
pub fn nullspace(o: &DMatrix<f64>, tol: RankTolerance) -> NullspaceReport {
    let (sigma, v) = full_svd(o);
    let r = numerical_rank(&sigma, tol.value());
    NullspaceReport {
        singular_values: sigma,
        numerical_rank: r,
        rank_tolerance: tol.value(),
        null_basis: v.columns(r, v.ncols() - r).into_owned(),
        residual_theoretical: None,
        subspace_gap: None,
        theorem_flags: TheoremFlags::new(),
    }
}
