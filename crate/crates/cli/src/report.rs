//! Report document written by every subcommand. Field meanings are listed in
//! `docs/report-schema.md`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use obsvkit::observability::{CheckStatus, NullspaceReport, TheoremFlags};
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub system: Option<String>,
    pub features: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub degeneracy: Option<String>,
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub tolerances: BTreeMap<String, f64>,
}

/// Range and mean of one residual across trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Reported for information only; never affects `pass`.
    pub informational: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeTrial {
    pub seed: u64,
    pub numerical_rank: usize,
    pub null_dimension: usize,
    pub singular_values: Vec<f64>,
    pub smallest_retained_ratio: f64,
    pub largest_discarded_ratio: f64,
    pub residual_theoretical: f64,
    pub subspace_gap: f64,
    pub hypothesis_violation: bool,
    pub theorem_flags: TheoremFlags,
    pub pass: bool,
}

impl AnalyzeTrial {
    pub fn new(seed: u64, r: &NullspaceReport) -> Self {
        let flags = r.theorem_flags.clone();
        AnalyzeTrial {
            seed,
            numerical_rank: r.numerical_rank,
            null_dimension: r.null_dimension(),
            singular_values: r.singular_values.clone(),
            smallest_retained_ratio: r.smallest_retained_ratio(),
            largest_discarded_ratio: r.largest_discarded_ratio(),
            residual_theoretical: r.residual_theoretical.unwrap_or(f64::NAN),
            subspace_gap: r.subspace_gap.unwrap_or(f64::NAN),
            hypothesis_violation: flags.values().any(|f| f.status == CheckStatus::HypothesisViolation),
            pass: flags.values().all(|f| f.status != CheckStatus::Fail),
            theorem_flags: flags,
        }
    }
}

/// Named residuals of one verification trial.
#[derive(Clone, Debug, Serialize)]
pub struct VerifyTrial {
    pub seed: u64,
    pub residuals: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Trials {
    Analyze(Vec<AnalyzeTrial>),
    Verify(Vec<VerifyTrial>),
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config: RunConfig,
    pub trials: Trials,
    pub summaries: BTreeMap<String, ResidualSummary>,
    pub notes: Vec<String>,
    /// Whether the configuration is degenerate, so failures never set the
    /// exit status.
    pub informational: bool,
    pub pass: bool,
    pub duration_seconds: f64,
}

impl RunReport {
    pub fn exit_code(&self) -> u8 {
        if self.pass || self.informational {
            0
        } else {
            1
        }
    }

    /// Human-readable digest for standard output.
    pub fn print_summary(&self) {
        let c = &self.config;
        println!("obsvkit {} {} (trials {}, seed {})", self.tool_version, c.command, c.trials, c.seed);
        for (name, s) in &self.summaries {
            let verdict = match (s.informational, s.passed) {
                (true, _) => "info",
                (false, true) => "pass",
                (false, false) => "FAIL",
            };
            println!(
                "  {name:<28} min {:>10.3e}  max {:>10.3e}  mean {:>10.3e}  tol {:>8.1e}  {verdict}",
                s.min, s.max, s.mean, s.tolerance
            );
        }
        for n in &self.notes {
            println!("  note: {n}");
        }
        let verdict = match (self.pass, self.informational) {
            (true, _) => "PASS",
            (false, true) => "FAIL (informational run, exit 0)",
            (false, false) => "FAIL",
        };
        println!("{verdict} in {:.2} s", self.duration_seconds);
    }
}

/// Summarizes `values`; passes when every value is at most `tolerance`.
pub fn summarize_at_most(values: &[f64], tolerance: f64) -> ResidualSummary {
    let summary = summarize(values, tolerance);
    ResidualSummary { passed: values.iter().all(|v| *v <= tolerance), ..summary }
}

/// Summarizes `values`; passes when every value exceeds `tolerance`.
pub fn summarize_above(values: &[f64], tolerance: f64) -> ResidualSummary {
    let summary = summarize(values, tolerance);
    ResidualSummary { passed: values.iter().all(|v| *v > tolerance), ..summary }
}

/// Summary that never affects the aggregate.
pub fn summarize_info(values: &[f64], tolerance: f64) -> ResidualSummary {
    ResidualSummary { informational: true, passed: true, ..summarize(values, tolerance) }
}

fn summarize(values: &[f64], tolerance: f64) -> ResidualSummary {
    let count = values.len();
    let (min, max) = if count == 0 {
        (0.0, 0.0)
    } else {
        values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    };
    let mean = if count == 0 { 0.0 } else { values.iter().sum::<f64>() / count as f64 };
    ResidualSummary { min, max, mean, count, tolerance, passed: true, informational: false }
}

/// Writes `report` as pretty JSON through a temporary file in the target
/// directory, then renames it into place.
pub fn write_atomic(report: &RunReport, path: &Path) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    serde_json::to_writer_pretty(&mut tmp, report)?;
    tmp.write_all(b"\n")?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
