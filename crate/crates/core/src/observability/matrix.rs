//! Assembly of the observability matrix from iterated Lie-derivative gradients.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{FieldKind, Sensor};
use crate::error::Result;
use crate::lie::Differentiation;
use crate::state::{Gravity, State};

use super::rows::{analytic_row, chain_gradient, chain_label, RowId};

/// Which gradient rows to stack per feature.
#[derive(Clone, Debug, PartialEq)]
pub struct RowConfig {
    /// Iterated derivatives, each chain outermost first.
    pub chains: Vec<Vec<FieldKind>>,
    pub differentiation: Differentiation,
}

impl RowConfig {
    /// The 27 derivatives `h; L_{f1^i}h; L_{f0}h; L_{f1^i}L_{f1^j}h;
    /// L_{f0}L_{f1^j}h; L_{f2^i}L_{f0}h; L_{f1^i}L_{f0}h; L_{f0}L_{f0}h;
    /// L_{f1^k}L_{f0}L_{f0}h`.
    pub fn default_chains() -> Vec<Vec<FieldKind>> {
        use FieldKind::*;
        let mut c = vec![vec![]];
        c.extend((0..3).map(|i| vec![Gyro(i)]));
        c.push(vec![Drift]);
        for i in 0..3 {
            c.extend((0..3).map(|j| vec![Gyro(i), Gyro(j)]));
        }
        c.extend((0..3).map(|j| vec![Drift, Gyro(j)]));
        c.extend((0..3).map(|i| vec![Accel(i), Drift]));
        c.extend((0..3).map(|i| vec![Gyro(i), Drift]));
        c.push(vec![Drift, Drift]);
        c.extend((0..3).map(|k| vec![Gyro(k), Drift, Drift]));
        c
    }

    pub fn with_differentiation(differentiation: Differentiation) -> Self {
        RowConfig { chains: Self::default_chains(), differentiation }
    }
}

impl Default for RowConfig {
    fn default() -> Self {
        Self::with_differentiation(Differentiation::Jet)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Numeric,
    Analytic,
}

/// Provenance of one scalar row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowTag {
    pub label: String,
    pub feature: usize,
    /// Output component within the derivative.
    pub component: usize,
    /// Number of Lie derivatives applied.
    pub order: usize,
    pub source: RowSource,
}

/// Stacked gradient rows with per-row provenance.
#[derive(Clone, Debug)]
pub struct ObservabilityMatrix {
    pub rows: DMatrix<f64>,
    pub tags: Vec<RowTag>,
}

impl ObservabilityMatrix {
    fn from_blocks(blocks: Vec<(DMatrix<f64>, String, usize, usize, RowSource)>, cols: usize) -> Self {
        let total = blocks.iter().map(|b| b.0.nrows()).sum();
        let mut rows = DMatrix::zeros(total, cols);
        let mut tags = Vec::with_capacity(total);
        let mut r = 0;
        for (m, label, feature, order, source) in blocks {
            rows.rows_mut(r, m.nrows()).copy_from(&m);
            for component in 0..m.nrows() {
                tags.push(RowTag { label: label.clone(), feature, component, order, source });
            }
            r += m.nrows();
        }
        ObservabilityMatrix { rows, tags }
    }

    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.rows.ncols()
    }
}

/// Numeric gradient rows of `config.chains` for every feature, feature-major.
pub fn build_observability_matrix(
    x: &State,
    gravity: &Gravity,
    sensor: Sensor,
    config: &RowConfig,
) -> Result<ObservabilityMatrix> {
    let mut blocks = Vec::new();
    for k in 0..x.feature_count() {
        for chain in &config.chains {
            let m = chain_gradient(x, gravity, sensor, k, chain, config.differentiation)?;
            blocks.push((m, chain_label(chain), k, chain.len(), RowSource::Numeric));
        }
    }
    Ok(ObservabilityMatrix::from_blocks(blocks, x.dim()))
}

/// Every fully known closed-form row, for every feature.
pub fn build_analytic_matrix(x: &State, gravity: &Gravity, sensor: Sensor) -> Result<ObservabilityMatrix> {
    let mut blocks = Vec::new();
    for k in 0..x.feature_count() {
        for id in RowId::all(sensor) {
            let row = analytic_row(x, gravity, sensor, k, id)?;
            if !row.partial {
                blocks.push((row.matrix, id.label(), k, id.chain().len(), RowSource::Analytic));
            }
        }
    }
    Ok(ObservabilityMatrix::from_blocks(blocks, x.dim()))
}

/// Numeric gradient rows of exactly the raw derivatives that the fully known
/// closed-form rows combine.
pub fn build_matched_numeric_matrix(
    x: &State,
    gravity: &Gravity,
    sensor: Sensor,
    differentiation: Differentiation,
) -> Result<ObservabilityMatrix> {
    let mut chains: Vec<Vec<FieldKind>> = Vec::new();
    for k in 0..x.feature_count().min(1) {
        for id in RowId::all(sensor) {
            if matches!(id, RowId::GyroDriftDrift(_)) && sensor == Sensor::Vins {
                continue;
            }
            for (_, chain) in super::rows::combination(x, gravity, sensor, k, id)? {
                if !chains.contains(&chain) {
                    chains.push(chain);
                }
            }
        }
    }
    build_observability_matrix(x, gravity, sensor, &RowConfig { chains, differentiation })
}
