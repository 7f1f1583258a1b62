//! Iterative greedy selection gated by a descent threshold.
//!
//! Starting from one device, each iteration keeps only candidates whose
//! `1/τ` is below [`descent_threshold`] (those are exactly the ones that
//! lower the objective), allocates bandwidth for every `selected ∪ {y}`
//! and accepts the candidate with the smallest common finish time, as long
//! as it still meets the deadline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{objective_of, ScheduleDecision};
use crate::allocation::{feasibility_check, min_max_latency_allocation, AllocationResult};
use crate::error::{Error, Result};
use crate::system::{DeviceId, RoundContext, SystemConfig};

/// Candidate pools at least this large are allocated in parallel.
const PARALLEL_POOL: usize = 16;

/// Admission bound on `1/τᵢ` for a selected set of size `q` with
/// `delta_sum = Σ_{selected} 1/τ`.
pub fn descent_threshold(q: usize, gamma: f64, delta_sum: f64) -> Result<f64> {
    if q == 0 {
        return Err(Error::invalid("descent threshold needs a non-empty selection"));
    }
    let q = q as f64;
    Ok((q * q + (2.0 * gamma + 1.0) * q + gamma) / (q * q * (q + gamma + 1.0)) * delta_sum)
}

/// Indices into `candidate_taus` that pass the descent threshold.
pub fn available_subset(selected_taus: &[u32], candidate_taus: &[u32], gamma: f64) -> Result<Vec<usize>> {
    let delta: f64 = selected_taus.iter().map(|&t| 1.0 / f64::from(t)).sum();
    let thr = descent_threshold(selected_taus.len(), gamma, delta)?;
    Ok(candidate_taus
        .iter()
        .enumerate()
        .filter(|&(_, &t)| 1.0 / f64::from(t) < thr)
        .map(|(i, _)| i)
        .collect())
}

/// One greedy iteration as seen in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub iteration: usize,
    /// Candidates passing the threshold (for the seed step: devices scanned).
    pub pool_size: usize,
    pub accepted: Option<DeviceId>,
    /// Finish time of the best candidate, accepted or not.
    pub t_star_s: f64,
    /// Objective after this step.
    pub objective: f64,
}

pub fn schedule_round(ctx: &RoundContext, cfg: &SystemConfig, gamma: f64) -> Result<ScheduleDecision> {
    schedule_round_traced(ctx, cfg, gamma).map(|(d, _)| d)
}

pub fn schedule_round_traced(
    ctx: &RoundContext,
    cfg: &SystemConfig,
    gamma: f64,
) -> Result<(ScheduleDecision, Vec<GreedyStep>)> {
    if ctx.is_empty() {
        return Err(Error::invalid("no devices in round"));
    }
    let mut trace = Vec::new();

    // Seed: largest τ, lowest id on ties, among devices that can finish alone.
    let mut order = ctx.all_ids();
    order.sort_by(|&a, &b| ctx.tau(b).cmp(&ctx.tau(a)).then(a.cmp(&b)));
    let mut scanned = 0;
    let seed = order.iter().copied().find(|&id| {
        scanned += 1;
        feasibility_check(&[id], ctx, cfg)
    });
    let Some(seed) = seed else {
        trace.push(GreedyStep {
            iteration: 0,
            pool_size: scanned,
            accepted: None,
            t_star_s: f64::INFINITY,
            objective: f64::INFINITY,
        });
        return Ok((ScheduleDecision::skipped(), trace));
    };
    let mut selected = vec![seed];
    let mut current: AllocationResult = min_max_latency_allocation(&selected, ctx, cfg)?;
    let mut objective = objective_of(&selected, ctx, gamma);
    trace.push(GreedyStep {
        iteration: 0,
        pool_size: scanned,
        accepted: Some(seed),
        t_star_s: current.t_star_s,
        objective,
    });

    let mut remaining: Vec<DeviceId> = ctx.all_ids().into_iter().filter(|&id| id != seed).collect();
    for iteration in 1..ctx.len() {
        let selected_taus: Vec<u32> = selected.iter().map(|&id| ctx.tau(id)).collect();
        let remaining_taus: Vec<u32> = remaining.iter().map(|&id| ctx.tau(id)).collect();
        let pool: Vec<DeviceId> = available_subset(&selected_taus, &remaining_taus, gamma)?
            .into_iter()
            .map(|i| remaining[i])
            .collect();
        if pool.is_empty() {
            trace.push(GreedyStep {
                iteration,
                pool_size: 0,
                accepted: None,
                t_star_s: f64::NAN,
                objective,
            });
            break;
        }

        let evaluate = |&y: &DeviceId| -> Result<(DeviceId, AllocationResult)> {
            let mut subset = selected.clone();
            subset.push(y);
            Ok((y, min_max_latency_allocation(&subset, ctx, cfg)?))
        };
        let results: Vec<(DeviceId, AllocationResult)> = if pool.len() >= PARALLEL_POOL {
            pool.par_iter().map(evaluate).collect::<Result<_>>()?
        } else {
            pool.iter().map(evaluate).collect::<Result<_>>()?
        };
        // Pool is in ascending id order, so strict `<` keeps the lowest id on ties.
        let mut best: Option<(DeviceId, AllocationResult)> = None;
        for (y, a) in results {
            if a.feasible && best.as_ref().is_none_or(|(_, b)| a.t_star_s < b.t_star_s) {
                best = Some((y, a));
            }
        }
        let Some((z, alloc)) = best else {
            trace.push(GreedyStep {
                iteration,
                pool_size: pool.len(),
                accepted: None,
                t_star_s: f64::INFINITY,
                objective,
            });
            break;
        };
        selected.push(z);
        selected.sort_unstable();
        remaining.retain(|&id| id != z);
        objective = objective_of(&selected, ctx, gamma);
        trace.push(GreedyStep {
            iteration,
            pool_size: pool.len(),
            accepted: Some(z),
            t_star_s: alloc.t_star_s,
            objective,
        });
        current = alloc;
    }
    Ok((ScheduleDecision::from_allocation(current, ctx, gamma), trace))
}
