//! Map and trajectory evaluation: OSPA/MOSPA for MVA position sets, agent
//! RMSE over converged runs, and convergence classification.

pub mod assignment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scenario::AgentState;

pub use assignment::min_cost_assignment;

/// OSPA cutoff `c` (m) and order `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    pub cutoff_c: f64,
    pub order_p: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            cutoff_c: 5.0,
            order_p: 1.0,
        }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_c > 0.0) || !(self.order_p >= 1.0) {
            return Err(Error::config(format!("invalid OSPA parameters {self:?}")));
        }
        Ok(())
    }
}

/// Optimal subpattern assignment distance between two finite point sets.
/// Two empty sets are at distance 0.
pub fn ospa(estimated: &[Point2], truth: &[Point2], params: &OspaParams) -> f64 {
    let (small, large) = if estimated.len() <= truth.len() {
        (estimated, truth)
    } else {
        (truth, estimated)
    };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let (c, p) = (params.cutoff_c, params.order_p);
    let m = small.len();
    let cost: Vec<f64> = small
        .iter()
        .flat_map(|a| large.iter().map(move |b| a.distance(*b).min(c).powf(p)))
        .collect();
    let (_, matched) = min_cost_assignment(&cost, m, n);
    let total = matched + c.powf(p) * (n - m) as f64;
    (total / n as f64).powf(1.0 / p)
}

/// Per-time-step mean of several runs' OSPA series.
pub fn mospa(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if runs.iter().any(|r| r.len() != len) {
        return Err(Error::config("OSPA series have different lengths"));
    }
    Ok((0..len)
        .map(|n| runs.iter().map(|r| r[n]).sum::<f64>() / runs.len() as f64)
        .collect())
}

/// Per-time-step root-mean-square agent position error over the runs whose
/// `converged_mask` entry is set. Empty when no run qualifies.
pub fn agent_rmse(
    estimates: &[Vec<Point2>],
    truth: &[Vec<Point2>],
    converged_mask: &[bool],
) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() || estimates.len() != converged_mask.len() {
        return Err(Error::config("estimate, truth and mask run counts differ"));
    }
    let selected: Vec<usize> = (0..estimates.len())
        .filter(|&r| converged_mask[r])
        .collect();
    let Some(&first) = selected.first() else {
        return Ok(Vec::new());
    };
    let len = estimates[first].len();
    for &r in &selected {
        if estimates[r].len() != len || truth[r].len() != len {
            return Err(Error::config("position series have different lengths"));
        }
    }
    Ok((0..len)
        .map(|n| {
            let sum_sq: f64 = selected
                .iter()
                .map(|&r| (estimates[r][n] - truth[r][n]).norm_squared())
                .sum();
            (sum_sq / selected.len() as f64).sqrt()
        })
        .collect())
}

/// Whether the position error stays strictly below `threshold` at every step.
pub fn is_converged(estimates: &[Point2], truth: &[Point2], threshold: f64) -> bool {
    estimates.len() == truth.len()
        && estimates
            .iter()
            .zip(truth)
            .all(|(e, t)| e.distance(*t) < threshold)
}

/// Which components enter the convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCriterion {
    /// Position error only (m).
    #[default]
    Position,
    /// Euclidean norm of the full position/velocity error vector.
    FullState,
}

pub fn is_converged_states(
    estimates: &[AgentState],
    truth: &[AgentState],
    threshold: f64,
    criterion: ConvergenceCriterion,
) -> bool {
    estimates.len() == truth.len()
        && estimates.iter().zip(truth).all(|(e, t)| {
            let err = match criterion {
                ConvergenceCriterion::Position => (e.position - t.position).norm_squared(),
                ConvergenceCriterion::FullState => {
                    (e.position - t.position).norm_squared()
                        + (e.velocity - t.velocity).norm_squared()
                }
            };
            err.sqrt() < threshold
        })
}
