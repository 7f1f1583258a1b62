//! Min-max latency bandwidth allocation over an FDMA uplink.
//!
//! For a fixed subset the optimum equalises every device's finish time at a
//! common deadline `t*`. Given `t*`, each device's bandwidth has a closed
//! form through the lower Lambert-W branch; `t*` itself is the unique point
//! where those bandwidths exhaust the budget. The summed demand is strictly
//! decreasing in `t*`, so a bracketed search always finds it.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambert::lambert_wm1;
use crate::system::{device_latency, DeviceId, RoundContext, SystemConfig};

/// Relative slack under which `t* ≤ t_thr` is still considered met.
pub const DEADLINE_SLACK: f64 = 1e-9;
/// Relative bracket width at which the deadline search stops.
pub const T_STAR_REL_TOL: f64 = 1e-13;
pub const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Common finish time; `f64::INFINITY` when infeasible.
    pub t_star_s: f64,
    /// `(device, hertz)`, sorted by device id. Empty when infeasible.
    pub bandwidth_hz: Vec<(DeviceId, f64)>,
    pub feasible: bool,
}

impl AllocationResult {
    pub fn infeasible() -> Self {
        Self {
            t_star_s: f64::INFINITY,
            bandwidth_hz: Vec::new(),
            feasible: false,
        }
    }

    pub fn total_bandwidth(&self) -> f64 {
        self.bandwidth_hz.iter().map(|&(_, b)| b).sum()
    }
}

/// Smallest bandwidth that lets a device upload `model_bits` within
/// `delta_t_s` seconds, i.e. the positive root of
/// `b·log2(1 + p·h²/(b·N₀)) = S/Δt`.
///
/// With `υ = S·N₀·ln2 / (p·h²·Δt)` the root is
/// `S·ln2 / (Δt·(−υ − W₋₁(−υ·e^{−υ})))`. The principal branch returns the
/// trivial root `−υ` (infinite bandwidth). Returns `f64::INFINITY` when
/// `Δt ≤ 0` or `υ ≥ 1`, the latter because no finite bandwidth beats the
/// wideband capacity `p·h²/(N₀·ln2)`.
pub fn device_bandwidth_for_deadline(
    tx_power_w: f64,
    gain_sq: f64,
    noise_psd: f64,
    model_bits: f64,
    delta_t_s: f64,
) -> f64 {
    if !(delta_t_s > 0.0) {
        return f64::INFINITY;
    }
    let snr_hz = tx_power_w * gain_sq / noise_psd;
    let upsilon = model_bits * LN_2 / (snr_hz * delta_t_s);
    if !(upsilon < 1.0) {
        return f64::INFINITY;
    }
    let w = match lambert_wm1(-upsilon * (-upsilon).exp()) {
        Ok(w) => w,
        Err(_) => return f64::INFINITY,
    };
    let denom = -upsilon - w;
    if denom > 0.0 {
        model_bits * LN_2 / (delta_t_s * denom)
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    id: DeviceId,
    t_comp: f64,
    tx_power_w: f64,
    gain_sq: f64,
}

struct Demand<'a> {
    links: Vec<Link>,
    cfg: &'a SystemConfig,
}

impl<'a> Demand<'a> {
    fn new(subset: &[DeviceId], ctx: &RoundContext, cfg: &'a SystemConfig) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut ids = subset.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&bad) = ids.iter().find(|&&id| id >= ctx.len()) {
            return Err(Error::invalid(format!("device {bad} not in round context")));
        }
        let links = ids
            .iter()
            .map(|&id| {
                let d = ctx.device(id);
                Link {
                    id,
                    t_comp: ctx.t_comp(id, cfg),
                    tx_power_w: d.tx_power_w,
                    gain_sq: d.channel.gain_sq,
                }
            })
            .collect();
        Ok(Self { links, cfg })
    }

    fn min_deadline(&self) -> f64 {
        self.links.iter().map(|l| l.t_comp).fold(0.0, f64::max) * (1.0 + 1e-12)
    }

    /// Whether a common deadline `t` fits in the budget.
    fn fits(&self, t: f64) -> bool {
        t > self.min_deadline() && self.total(t) <= self.cfg.total_bandwidth_hz
    }

    fn bandwidth(&self, link: &Link, t: f64) -> f64 {
        device_bandwidth_for_deadline(
            link.tx_power_w,
            link.gain_sq,
            self.cfg.noise_psd_w_per_hz,
            self.cfg.model_bits,
            t - link.t_comp,
        )
    }

    fn total(&self, t: f64) -> f64 {
        self.links.iter().map(|l| self.bandwidth(l, t)).sum()
    }

    /// `Σb(t)` and its derivative. Differentiating `b·ln(1 + s/b) = S·ln2/Δt`
    /// gives `db/dt = -S·ln2 / (Δt²·(ln(1+x) - x/(1+x)))` with `x = s/b`.
    fn total_with_slope(&self, t: f64) -> (f64, f64) {
        let s_ln2 = self.cfg.model_bits * LN_2;
        let mut sum = 0.0;
        let mut slope = 0.0;
        for l in &self.links {
            let b = self.bandwidth(l, t);
            if !b.is_finite() {
                return (f64::INFINITY, f64::NAN);
            }
            let dt = t - l.t_comp;
            let x = l.tx_power_w * l.gain_sq / (self.cfg.noise_psd_w_per_hz * b);
            let dr = x.ln_1p() - x / (1.0 + x);
            sum += b;
            slope -= s_ln2 / (dt * dt * dr);
        }
        (sum, slope)
    }
}

/// Min-max allocation with the deadline searched in `(max t_comp, t_thr]`
/// (up to [`DEADLINE_SLACK`]).
pub fn min_max_latency_allocation(
    subset: &[DeviceId],
    ctx: &RoundContext,
    cfg: &SystemConfig,
) -> Result<AllocationResult> {
    allocate_within(subset, ctx, cfg, cfg.t_thr_s * (1.0 + DEADLINE_SLACK))
}

/// Min-max allocation with an explicit upper end for the deadline search.
/// Feasible iff some `t* ≤ horizon_s` fits within the bandwidth budget.
pub fn allocate_within(
    subset: &[DeviceId],
    ctx: &RoundContext,
    cfg: &SystemConfig,
    horizon_s: f64,
) -> Result<AllocationResult> {
    let demand = Demand::new(subset, ctx, cfg)?;
    let budget = cfg.total_bandwidth_hz;
    let mut lo = demand.min_deadline();
    let mut hi = horizon_s;
    if !demand.fits(hi) {
        return Ok(AllocationResult::infeasible());
    }

    // Bracketed Newton: Σb(t) - B is decreasing and convex, so Newton steps
    // converge fast once inside the bracket; anything outside falls back to
    // bisection.
    let mut t = hi;
    let mut converged = false;
    for _ in 0..MAX_BISECTION_STEPS {
        if hi - lo <= T_STAR_REL_TOL * hi {
            converged = true;
            break;
        }
        let (sum, slope) = demand.total_with_slope(t);
        let excess = sum - budget;
        if excess <= 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let newton = t - excess / slope;
        t = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (t - hi).abs() <= 0.5 * T_STAR_REL_TOL * hi || (t - lo).abs() <= 0.5 * T_STAR_REL_TOL * hi {
            // Newton has settled; probe just above to close the bracket.
            let probe = (t * (1.0 + T_STAR_REL_TOL)).min(hi);
            if demand.total(probe) <= budget {
                hi = probe;
            } else {
                lo = probe;
            }
            t = 0.5 * (lo + hi);
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "deadline search",
            iterations: MAX_BISECTION_STEPS,
        });
    }

    // `hi` is on the feasible side (Σb ≤ B); hand the sliver of leftover
    // budget out proportionally so the budget is met exactly.
    let raw: Vec<f64> = demand.links.iter().map(|l| demand.bandwidth(l, hi)).collect();
    let sum: f64 = raw.iter().sum();
    let scale = budget / sum;
    let bandwidth_hz: Vec<(DeviceId, f64)> = demand
        .links
        .iter()
        .zip(raw)
        .map(|(l, b)| (l.id, b * scale))
        .collect();
    let t_star_s = bandwidth_hz
        .iter()
        .map(|&(id, b)| device_latency(id, b, ctx, cfg))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AllocationResult {
        t_star_s,
        bandwidth_hz,
        feasible: true,
    })
}

/// True iff the subset can meet `t_thr` under the optimal allocation.
/// The empty subset is vacuously feasible.
pub fn feasibility_check(subset: &[DeviceId], ctx: &RoundContext, cfg: &SystemConfig) -> bool {
    if subset.is_empty() {
        return true;
    }
    // Σb is decreasing in the deadline, so checking the horizon is enough.
    match Demand::new(subset, ctx, cfg) {
        Ok(d) => d.fits(cfg.t_thr_s * (1.0 + DEADLINE_SLACK)),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{uplink_rate, ChannelState, DeviceRound};
    use approx::assert_relative_eq;

    /// Inner oracle: bisection on the raw rate equation, no Lambert-W.
    fn oracle_bandwidth(snr_hz: f64, bits: f64, dt: f64) -> f64 {
        let need = bits / dt;
        if snr_hz / LN_2 <= need || dt <= 0.0 {
            return f64::INFINITY;
        }
        let rate = |b: f64| uplink_rate(b, snr_hz, 1.0, 1.0);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while rate(hi) < need {
            hi *= 2.0;
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < need {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn ctx(devs: &[(f64, f64)]) -> (RoundContext, SystemConfig) {
        // (snr_hz, t_comp) with p = 1, N0 = 1, D = 1, C = 1, tau = 1 so t_comp = 1/f.
        let cfg = SystemConfig {
            noise_psd_w_per_hz: 1.0,
            batch_size: 1,
            total_bandwidth_hz: 1e6,
            model_bits: 1e6,
            t_thr_s: 10.0,
            ..SystemConfig::default()
        };
        let devices = devs
            .iter()
            .enumerate()
            .map(|(id, &(snr, tc))| DeviceRound {
                id,
                cpu_freq_hz: 1.0 / tc,
                channel: ChannelState { gain_sq: snr },
                tau: 1,
                tx_power_w: 1.0,
                cycles_per_sample: 1.0,
            })
            .collect();
        (RoundContext { round: 1, devices }, cfg)
    }

    #[test]
    fn closed_form_matches_frozen_oracle() {
        // 40-digit bisection on b·ln(1+2e6/b) = 1e6·ln2
        let b = device_bandwidth_for_deadline(1.0, 2e6, 1.0, 1e6, 1.0);
        assert_relative_eq!(b, 375_959.470_479_697_4, max_relative = 1e-12);
        assert_relative_eq!(b, oracle_bandwidth(2e6, 1e6, 1.0), max_relative = 1e-9);
    }

    #[test]
    fn capacity_boundary_is_infeasible() {
        // υ = S·ln2/(snr·Δt) = 1
        let snr = 1e6 * LN_2;
        assert!(device_bandwidth_for_deadline(1.0, snr, 1.0, 1e6, 1.0).is_infinite());
        assert!(device_bandwidth_for_deadline(1.0, snr, 1.0, 1e6, 0.5).is_infinite());
        assert!(device_bandwidth_for_deadline(1.0, 1e9, 1.0, 1e6, 0.0).is_infinite());
        assert!(device_bandwidth_for_deadline(1.0, 1e9, 1.0, 1e6, -1.0).is_infinite());
    }

    #[test]
    fn longer_deadline_needs_less_bandwidth() {
        let mut prev = f64::INFINITY;
        for k in 1..20 {
            let b = device_bandwidth_for_deadline(1.0, 2e6, 1.0, 1e6, 0.5 * f64::from(k));
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn singleton_gets_whole_band() {
        let (ctx, cfg) = ctx(&[(5e6, 0.1)]);
        let a = min_max_latency_allocation(&[0], &ctx, &cfg).unwrap();
        assert!(a.feasible);
        assert_relative_eq!(a.bandwidth_hz[0].1, 1e6, max_relative = 1e-12);
        let expect = 0.1 + 1e6 / uplink_rate(1e6, 5e6, 1.0, 1.0);
        assert_relative_eq!(a.t_star_s, expect, max_relative = 1e-9);
    }

    #[test]
    fn identical_devices_split_evenly() {
        let (ctx, cfg) = ctx(&[(5e6, 0.1), (5e6, 0.1)]);
        let a = min_max_latency_allocation(&[0, 1], &ctx, &cfg).unwrap();
        assert_relative_eq!(a.bandwidth_hz[0].1, 5e5, max_relative = 1e-9);
        assert_relative_eq!(a.bandwidth_hz[1].1, 5e5, max_relative = 1e-9);
    }

    #[test]
    fn matches_nested_bisection_oracle() {
        let devs = [(3e6, 0.05), (8e6, 0.2), (2e6, 0.01), (1.2e7, 0.3), (4e6, 0.15)];
        let (ctx, cfg) = ctx(&devs);
        let a = allocate_within(&[0, 1, 2, 3, 4], &ctx, &cfg, 100.0).unwrap();
        assert!(a.feasible);
        let total = |t: f64| devs.iter().map(|&(s, tc)| oracle_bandwidth(s, 1e6, t - tc)).sum::<f64>();
        let (mut lo, mut hi) = (0.3, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > 1e6 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(a.t_star_s, hi, max_relative = 1e-6);
        assert_relative_eq!(a.total_bandwidth(), 1e6, max_relative = 1e-9);
        for &(id, b) in &a.bandwidth_hz {
            assert_relative_eq!(device_latency(id, b, &ctx, &cfg), a.t_star_s, max_relative = 1e-6);
        }
    }

    #[test]
    fn feasibility_edges() {
        let (ctx, mut cfg) = ctx(&[(5e6, 0.1), (5e6, 2.0)]);
        assert!(feasibility_check(&[], &ctx, &cfg));
        cfg.t_thr_s = 1.5;
        // device 1 computes for 2 s alone
        assert!(!feasibility_check(&[1], &ctx, &cfg));
        assert!(feasibility_check(&[0], &ctx, &cfg));
        assert_eq!(min_max_latency_allocation(&[], &ctx, &cfg), Err(Error::EmptySelection));
    }

    #[test]
    fn deadline_boundary_uses_relative_slack() {
        let (ctx, mut cfg) = ctx(&[(5e6, 0.1), (7e6, 0.05)]);
        let exact = allocate_within(&[0, 1], &ctx, &cfg, 100.0).unwrap().t_star_s;
        cfg.t_thr_s = exact;
        assert!(feasibility_check(&[0, 1], &ctx, &cfg));
        cfg.t_thr_s = exact * (1.0 - 1e-9);
        assert!(feasibility_check(&[0, 1], &ctx, &cfg));
        cfg.t_thr_s = exact * (1.0 - 1e-6);
        assert!(!feasibility_check(&[0, 1], &ctx, &cfg));
    }

    #[test]
    fn adding_devices_never_speeds_up_the_round() {
        let devs = [(3e6, 0.05), (8e6, 0.2), (2e6, 0.01), (1.2e7, 0.3), (4e6, 0.15)];
        let (ctx, cfg) = ctx(&devs);
        let mut prev = 0.0;
        for n in 1..=devs.len() {
            let ids: Vec<_> = (0..n).collect();
            let t = allocate_within(&ids, &ctx, &cfg, 1e3).unwrap().t_star_s;
            assert!(t >= prev);
            prev = t;
        }
    }
}
