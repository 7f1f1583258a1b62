//! Linear-programming selection for small γ.
//!
//! With `γ → 0` the objective is the mean of `1/τ` over the selected set.
//! Writing `α = a/M`, `β = b/M` and `θ = 1/M` turns selection into
//!
//! ```text
//! min  Σ νᵢ·αᵢ
//! s.t. αᵢ·cᵢ ≤ βᵢ ≤ αᵢ·B,   Σ βᵢ ≤ θ·B,   Σ αᵢ = 1,   0 ≤ αᵢ,   0 ≤ θ ≤ 1
//! ```
//!
//! where `cᵢ` is the bandwidth device `i` needs to finish exactly at the
//! deadline. The solution is mapped back with `aᵢ = round(αᵢ/θ)` and
//! repaired until the min-max allocation meets the deadline.

use serde::{Deserialize, Serialize};

use super::{decide, ScheduleDecision};
use crate::allocation::device_bandwidth_for_deadline;
use crate::error::{Error, Result};
use crate::simplex::{Constraint, LinearProgram, LpStatus, Relation};
use crate::system::{DeviceId, RoundContext, SystemConfig};

pub const LP_TOL: f64 = 1e-11;

/// Bandwidth needed to finish exactly at `t_thr`; infinite if unreachable.
pub fn min_bandwidth_at_threshold(id: DeviceId, ctx: &RoundContext, cfg: &SystemConfig) -> f64 {
    let d = ctx.device(id);
    device_bandwidth_for_deadline(
        d.tx_power_w,
        d.channel.gain_sq,
        cfg.noise_psd_w_per_hz,
        cfg.model_bits,
        cfg.t_thr_s - ctx.t_comp(id, cfg),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    /// `1/τᵢ` for every device.
    pub nu: Vec<f64>,
    /// Per-device minimum bandwidth, `f64::INFINITY` for unreachable devices.
    pub c_min: Vec<f64>,
    pub budget_hz: f64,
}

impl LpInstance {
    pub fn k(&self) -> usize {
        self.nu.len()
    }

    /// Devices with a finite minimum bandwidth; these are the LP columns.
    pub fn reachable(&self) -> Vec<DeviceId> {
        (0..self.k()).filter(|&i| self.c_min[i].is_finite()).collect()
    }

    /// Variables are `[α (n), β/B (n), θ]` over the `n` reachable devices;
    /// bandwidth columns are in units of `B` to keep coefficients near one.
    /// Rows: `n` lower bandwidth bounds, `n` upper bounds, the budget row,
    /// the simplex sum, then the bound `θ ≤ 1`.
    pub fn to_program(&self) -> LinearProgram {
        let ids = self.reachable();
        let n = ids.len();
        let nv = 2 * n + 1;
        let b = self.budget_hz;
        let mut objective = vec![0.0; nv];
        for (j, &id) in ids.iter().enumerate() {
            objective[j] = self.nu[id];
        }
        let mut rows = Vec::with_capacity(2 * n + 3);
        for (j, &id) in ids.iter().enumerate() {
            let mut r = vec![0.0; nv];
            r[j] = self.c_min[id] / b;
            r[n + j] = -1.0;
            rows.push(Constraint::new(r, Relation::Le, 0.0));
        }
        for j in 0..n {
            let mut r = vec![0.0; nv];
            r[n + j] = 1.0;
            r[j] = -1.0;
            rows.push(Constraint::new(r, Relation::Le, 0.0));
        }
        let mut budget = vec![0.0; nv];
        budget[n..2 * n].iter_mut().for_each(|v| *v = 1.0);
        budget[2 * n] = -1.0;
        rows.push(Constraint::new(budget, Relation::Le, 0.0));
        let mut simplex = vec![0.0; nv];
        simplex[..n].iter_mut().for_each(|v| *v = 1.0);
        rows.push(Constraint::new(simplex, Relation::Eq, 1.0));
        let mut theta = vec![0.0; nv];
        theta[2 * n] = 1.0;
        rows.push(Constraint::new(theta, Relation::Le, 1.0));
        LinearProgram {
            objective,
            constraints: rows,
        }
    }
}

pub fn build_lp(ctx: &RoundContext, cfg: &SystemConfig) -> Result<LpInstance> {
    let nu = ctx.devices.iter().map(|d| 1.0 / f64::from(d.tau)).collect();
    let c_min: Vec<f64> = ctx
        .all_ids()
        .into_iter()
        .map(|id| min_bandwidth_at_threshold(id, ctx, cfg))
        .collect();
    if c_min.iter().all(|c| !c.is_finite()) {
        return Err(Error::invalid("no device can meet the deadline"));
    }
    Ok(LpInstance {
        nu,
        c_min,
        budget_hz: cfg.total_bandwidth_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub feasible: bool,
    /// Length `K`; zero for excluded devices.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub theta: f64,
    pub objective: f64,
    /// Reduced costs of all LP columns at the optimal basis.
    pub reduced_costs: Vec<f64>,
}

pub fn solve_lp(instance: &LpInstance, tol: f64) -> Result<LpSolution> {
    let ids = instance.reachable();
    let n = ids.len();
    let k = instance.k();
    let sol = instance.to_program().solve(tol)?;
    match sol.status {
        LpStatus::Optimal => {
            let mut alpha = vec![0.0; k];
            let mut beta = vec![0.0; k];
            for (j, &id) in ids.iter().enumerate() {
                alpha[id] = sol.x[j];
                beta[id] = sol.x[n + j] * instance.budget_hz;
            }
            Ok(LpSolution {
                feasible: true,
                alpha,
                beta,
                theta: sol.x[2 * n],
                objective: sol.objective,
                reduced_costs: sol.reduced_costs,
            })
        }
        LpStatus::Infeasible => Ok(LpSolution {
            feasible: false,
            alpha: vec![0.0; k],
            beta: vec![0.0; k],
            theta: 0.0,
            objective: f64::INFINITY,
            reduced_costs: Vec::new(),
        }),
        // The objective is bounded below by zero on the simplex.
        LpStatus::Unbounded => Err(Error::invalid("selection LP reported unbounded")),
    }
}

/// `aᵢ = round(αᵢ/θ)` (half away from zero) clamped to `{0, 1}`, then the
/// selected device with the largest `1/τ` is dropped until the min-max
/// allocation meets the deadline.
pub fn round_lp_solution(
    solution: &LpSolution,
    ctx: &RoundContext,
    cfg: &SystemConfig,
    gamma: f64,
) -> Result<ScheduleDecision> {
    if !solution.feasible || !(solution.theta > 0.0) {
        return Ok(ScheduleDecision::skipped());
    }
    let mut selected: Vec<DeviceId> = solution
        .alpha
        .iter()
        .enumerate()
        .filter(|&(_, &a)| (a / solution.theta).round().clamp(0.0, 1.0) == 1.0)
        .map(|(i, _)| i)
        .collect();
    while !selected.is_empty() {
        let d = decide(&selected, ctx, cfg, gamma)?;
        if d.feasible {
            return Ok(d);
        }
        // smallest τ first; on ties the lowest id goes
        let worst = selected
            .iter()
            .enumerate()
            .min_by(|a, b| ctx.tau(*a.1).cmp(&ctx.tau(*b.1)).then(a.1.cmp(b.1)))
            .map(|(pos, _)| pos)
            .expect("non-empty");
        selected.remove(worst);
    }
    Ok(ScheduleDecision::skipped())
}

pub fn schedule_lp(ctx: &RoundContext, cfg: &SystemConfig, gamma: f64) -> Result<ScheduleDecision> {
    let instance = match build_lp(ctx, cfg) {
        Ok(i) => i,
        Err(Error::InvalidArgument(_)) => return Ok(ScheduleDecision::skipped()),
        Err(e) => return Err(e),
    };
    let sol = solve_lp(&instance, LP_TOL)?;
    round_lp_solution(&sol, ctx, cfg, gamma)
}
