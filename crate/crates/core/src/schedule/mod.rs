//! Device selection policies.
//!
//! Every policy maps one [`RoundContext`] to a [`ScheduleDecision`]. A
//! decision with `feasible == false` carries an empty selection and means
//! the round is skipped.

use serde::{Deserialize, Serialize};

use crate::allocation::{min_max_latency_allocation, AllocationResult, DEADLINE_SLACK};
use crate::error::{Error, Result};
use crate::system::{DeviceId, RoundContext, SystemConfig};

pub mod baselines;
pub mod greedy;
pub mod lp;

pub use baselines::{schedule_cm, schedule_cp, schedule_dm, schedule_ps, schedule_uniform, tune_ps_size, CmSearch};
pub use greedy::{available_subset, descent_threshold, schedule_round, schedule_round_traced, GreedyStep};
pub use lp::{build_lp, min_bandwidth_at_threshold, round_lp_solution, schedule_lp, solve_lp, LpInstance, LpSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    /// Sorted ascending.
    pub selected: Vec<DeviceId>,
    /// `(device, hertz)` aligned with `selected`.
    pub bandwidth_hz: Vec<(DeviceId, f64)>,
    pub t_star_s: f64,
    /// `(1/M + γ/M²)·Σ 1/τ`; infinite for an empty selection.
    pub objective: f64,
    pub feasible: bool,
}

impl ScheduleDecision {
    pub fn skipped() -> Self {
        Self {
            selected: Vec::new(),
            bandwidth_hz: Vec::new(),
            t_star_s: f64::INFINITY,
            objective: f64::INFINITY,
            feasible: false,
        }
    }

    /// Wraps a feasible allocation; falls back to [`Self::skipped`] otherwise.
    pub fn from_allocation(alloc: AllocationResult, ctx: &RoundContext, gamma: f64) -> Self {
        if !alloc.feasible || alloc.bandwidth_hz.is_empty() {
            return Self::skipped();
        }
        let selected: Vec<DeviceId> = alloc.bandwidth_hz.iter().map(|&(id, _)| id).collect();
        let objective = objective_of(&selected, ctx, gamma);
        Self {
            selected,
            bandwidth_hz: alloc.bandwidth_hz,
            t_star_s: alloc.t_star_s,
            objective,
            feasible: true,
        }
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.bandwidth_hz.iter().map(|&(_, b)| b).sum()
    }
}

/// `(1/M + γ/M²)·Σ 1/τᵢ` over a selected set with iteration counts `taus`.
pub fn scheduling_objective(taus: &[u32], gamma: f64) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::EmptySelection);
    }
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("gamma must be >= 0, got {gamma}")));
    }
    if taus.contains(&0) {
        return Err(Error::domain("local iteration counts must be >= 1"));
    }
    let m = taus.len() as f64;
    let inv_sum: f64 = taus.iter().map(|&t| 1.0 / f64::from(t)).sum();
    Ok((1.0 / m + gamma / (m * m)) * inv_sum)
}

pub(crate) fn objective_of(ids: &[DeviceId], ctx: &RoundContext, gamma: f64) -> f64 {
    let taus: Vec<u32> = ids.iter().map(|&id| ctx.tau(id)).collect();
    scheduling_objective(&taus, gamma).unwrap_or(f64::INFINITY)
}

/// Checks the constraints every feasible decision must meet: non-empty,
/// positive bandwidths within the budget, deadline met.
pub fn check_decision(d: &ScheduleDecision, ctx: &RoundContext, cfg: &SystemConfig) -> Result<()> {
    if !d.feasible {
        return if d.selected.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("infeasible decision with a non-empty selection"))
        };
    }
    if d.selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    if d.bandwidth_hz.iter().any(|&(_, b)| !(b > 0.0)) {
        return Err(Error::invalid("non-positive bandwidth"));
    }
    let total = d.total_bandwidth();
    if total > cfg.total_bandwidth_hz * (1.0 + 1e-9) {
        return Err(Error::invalid(format!("bandwidth {total} exceeds budget")));
    }
    let t = crate::system::round_latency(&d.bandwidth_hz, ctx, cfg)?;
    if t > cfg.t_thr_s * (1.0 + DEADLINE_SLACK) + 1e-12 {
        return Err(Error::invalid(format!("round latency {t} exceeds deadline {}", cfg.t_thr_s)));
    }
    Ok(())
}

/// Allocation for a subset wrapped as a decision.
pub fn decide(subset: &[DeviceId], ctx: &RoundContext, cfg: &SystemConfig, gamma: f64) -> Result<ScheduleDecision> {
    if subset.is_empty() {
        return Ok(ScheduleDecision::skipped());
    }
    let alloc = min_max_latency_allocation(subset, ctx, cfg)?;
    Ok(ScheduleDecision::from_allocation(alloc, ctx, gamma))
}

/// Scheduling policy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policy {
    /// Threshold-gated greedy selection with min-max allocation.
    Greedy,
    /// LP relaxation for small γ, rounded and repaired.
    Lp,
    /// Fixed-size uniformly random subset with min-max allocation.
    RandomSubset { m: usize },
    /// Best channels first until the deadline breaks.
    BestChannel,
    /// Smallest latency growth first under an even bandwidth split.
    EvenSplit,
    /// Largest prefix in order of computation time.
    FastestCompute,
    /// `m` devices uniformly at random, even split, no deadline.
    Uniform { m: usize },
}

impl Policy {
    pub fn schedule(
        &self,
        ctx: &RoundContext,
        cfg: &SystemConfig,
        gamma: f64,
        seed: u64,
    ) -> Result<ScheduleDecision> {
        match *self {
            Policy::Greedy => schedule_round(ctx, cfg, gamma),
            Policy::Lp => schedule_lp(ctx, cfg, gamma),
            Policy::RandomSubset { m } => schedule_ps(ctx, cfg, m, gamma, seed),
            Policy::BestChannel => schedule_cp(ctx, cfg, gamma),
            Policy::EvenSplit => schedule_dm(ctx, cfg, gamma),
            Policy::FastestCompute => schedule_cm(ctx, cfg, gamma, CmSearch::Linear),
            Policy::Uniform { m } => schedule_uniform(ctx, cfg, m, gamma, seed),
        }
    }
}
