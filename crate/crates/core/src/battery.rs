//! Seeded trial loops shared by the command-line driver and the test suites.
//!
//! Trial `i` of a battery started at `seed` uses scenario seed
//! `seed.wrapping_add(i)`. Flow trials whose trajectory leaves the rotation
//! chart are skipped and the next seed is drawn instead; skipped seeds are
//! reported.

use serde::Serialize;

use crate::dynamics::Sensor;
use crate::error::{Error, Result};
use crate::ocvins::verify_flow_invariance;
use crate::scenario::{sample_scenario, Degeneracy, Scenario};

/// Allowance for roundoff when comparing flow residuals at `dt` and `dt/2`.
/// Both sit near machine precision once RK4 truncation is negligible.
pub const FLOW_ROUNDOFF: f64 = 1e-13;

/// Seeds drawn per requested flow trial before giving up.
const MAX_DRAWS_PER_TRIAL: usize = 100;

/// Scenario seeds for a battery of `trials` starting at `seed`.
pub fn trial_seeds(seed: u64, trials: usize) -> impl Iterator<Item = u64> {
    (0..trials as u64).map(move |i| seed.wrapping_add(i))
}

/// Samples every scenario of a battery.
pub fn scenarios(seed: u64, trials: usize, mode: Sensor, features: usize, degeneracy: Degeneracy) -> Result<Vec<Scenario>> {
    trial_seeds(seed, trials).map(|s| sample_scenario(s, mode, features, degeneracy)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowTrial {
    pub seed: u64,
    /// Relative residual at step `dt`.
    pub residual: f64,
    /// Relative residual at step `dt/2`.
    pub residual_half_step: f64,
}

impl FlowTrial {
    /// Halving the step did not increase the residual beyond roundoff.
    pub fn halving_ok(&self) -> bool {
        self.residual_half_step <= self.residual + FLOW_ROUNDOFF
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlowBattery {
    pub trials: Vec<FlowTrial>,
    /// Seeds whose flow left the rotation chart.
    pub chart_exits: Vec<u64>,
}

impl FlowBattery {
    pub fn max_residual(&self) -> f64 {
        self.trials.iter().map(|t| t.residual).fold(0.0, f64::max)
    }
}

/// Flow-invariance trials with each schedule rescaled to `duration`.
pub fn flow_battery(seed: u64, trials: usize, duration: f64, dt: f64) -> Result<FlowBattery> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidConfig(format!("duration {duration} must be positive")));
    }
    let mut out = FlowBattery::default();
    for s in trial_seeds(seed, trials.saturating_mul(MAX_DRAWS_PER_TRIAL)) {
        if out.trials.len() == trials {
            break;
        }
        let sc = sample_scenario(s, Sensor::Vins, 2, Degeneracy::None)?;
        let schedule = sc.schedule.rescaled_to(duration)?;
        let run = |step| verify_flow_invariance(&sc.state, &schedule, &sc.gravity, step);
        match run(dt).and_then(|r| Ok((r, run(dt / 2.0)?))) {
            Ok((residual, residual_half_step)) => out.trials.push(FlowTrial { seed: s, residual, residual_half_step }),
            Err(Error::ChartExit { .. }) => out.chart_exits.push(s),
            Err(e) => return Err(e),
        }
    }
    if out.trials.len() < trials {
        return Err(Error::InvalidConfig(format!("only {} of {trials} flow trials stayed in the chart", out.trials.len())));
    }
    Ok(out)
}
