//! Observability matrix construction, closed-form rows and nullspace analysis.

pub mod blocks;
pub mod linalg;
pub mod matrix;
pub mod rows;
pub mod theory;

pub use blocks::{projection_derivative_check, structural_blocks, IdentityResidual, StructuralBlocks};
pub use linalg::{
    nullspace, subspace_gap, CheckFlag, CheckStatus, NullspaceReport, RankTolerance, TheoremFlags, RANK_TOL_ANALYTIC,
    RANK_TOL_NUMERIC,
};
pub use matrix::{
    build_analytic_matrix, build_matched_numeric_matrix, build_observability_matrix, ObservabilityMatrix, RowConfig,
    RowSource, RowTag,
};
pub use rows::{analytic_lins_rows, analytic_vins_rows, check_rows, literal_form_checks, RowCheck, RowId};
pub use theory::{
    analyze, constraint_matrix, require_two_feature_hypothesis, theoretical_null_basis, verify_theorems,
    AnalysisConfig, CHECK_TOL, COLLINEAR_ANGLE, GAP_TOL,
};
