//! Comparison policies: random subset, best channel, even split, fastest
//! compute, and plain uniform sampling.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{decide, objective_of, ScheduleDecision};
use crate::allocation::{feasibility_check, DEADLINE_SLACK};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::system::{
    comm_latency, round_latency, sample_round_context, uplink_rate, DeviceId, DeviceProfile, RoundContext, SystemConfig,
};

fn random_subset(ctx: &RoundContext, m: usize, seed: u64, salt: u64) -> Result<Vec<DeviceId>> {
    if m == 0 || m > ctx.len() {
        return Err(Error::invalid(format!("subset size {m} outside 1..={}", ctx.len())));
    }
    let mut rng = stream(seed, Stream::Schedule, u64::from(ctx.round), salt);
    let mut ids = sample(&mut rng, ctx.len(), m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `m` devices uniformly at random with min-max allocation. If that subset
/// misses the deadline the round is skipped rather than redrawn.
pub fn schedule_ps(ctx: &RoundContext, cfg: &SystemConfig, m: usize, gamma: f64, seed: u64) -> Result<ScheduleDecision> {
    let ids = random_subset(ctx, m, seed, 0)?;
    decide(&ids, ctx, cfg, gamma)
}

/// Offsets the seed used for pilot rounds so tuning never sees the channel
/// and `τ` draws of the training run itself.
const PILOT_SEED_OFFSET: u64 = 0x5053_7475_6e65;

/// Picks the random-subset size that maximises the expected number of
/// participants, `m · P(feasible)`, over `pilot_rounds` independently drawn
/// rounds. Ties go to the smaller `m`.
pub fn tune_ps_size(profiles: &[DeviceProfile], cfg: &SystemConfig, pilot_rounds: u32, seed: u64) -> Result<usize> {
    if pilot_rounds == 0 {
        return Err(Error::invalid("pilot_rounds must be positive"));
    }
    let pilot_seed = seed.wrapping_add(PILOT_SEED_OFFSET);
    let contexts = (0..pilot_rounds)
        .map(|r| sample_round_context(profiles, cfg, r, pilot_seed))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (1, 0usize);
    for m in 1..=profiles.len() {
        let mut feasible = 0;
        for ctx in &contexts {
            if feasibility_check(&random_subset(ctx, m, pilot_seed, 0)?, ctx, cfg) {
                feasible += 1;
            }
        }
        if m * feasible > best.1 {
            best = (m, m * feasible);
        }
    }
    Ok(best.0)
}

/// `m` devices uniformly at random sharing the band evenly, with no
/// deadline. Models the case where bandwidth is not the bottleneck.
pub fn schedule_uniform(
    ctx: &RoundContext,
    cfg: &SystemConfig,
    m: usize,
    gamma: f64,
    seed: u64,
) -> Result<ScheduleDecision> {
    let ids = random_subset(ctx, m, seed, 1)?;
    let share = cfg.total_bandwidth_hz / m as f64;
    let bandwidth_hz: Vec<(DeviceId, f64)> = ids.iter().map(|&id| (id, share)).collect();
    let t_star_s = round_latency(&bandwidth_hz, ctx, cfg)?;
    Ok(ScheduleDecision {
        objective: objective_of(&ids, ctx, gamma),
        selected: ids,
        bandwidth_hz,
        t_star_s,
        feasible: true,
    })
}

/// Adds devices in decreasing channel gain and stops before the first
/// addition that breaks the deadline.
pub fn schedule_cp(ctx: &RoundContext, cfg: &SystemConfig, gamma: f64) -> Result<ScheduleDecision> {
    let mut order = ctx.all_ids();
    order.sort_by(|&a, &b| {
        let (ga, gb) = (ctx.device(a).channel.gain_sq, ctx.device(b).channel.gain_sq);
        gb.total_cmp(&ga).then(a.cmp(&b))
    });
    let mut best = ScheduleDecision::skipped();
    let mut chosen = Vec::new();
    for id in order {
        chosen.push(id);
        let d = decide(&chosen, ctx, cfg, gamma)?;
        if !d.feasible {
            break;
        }
        best = d;
    }
    Ok(best)
}

fn even_split_latency(id: DeviceId, share: f64, ctx: &RoundContext, cfg: &SystemConfig) -> f64 {
    let d = ctx.device(id);
    let rate = uplink_rate(share, d.tx_power_w, d.channel.gain_sq, cfg.noise_psd_w_per_hz);
    ctx.t_comp(id, cfg) + comm_latency(cfg.model_bits, rate)
}

/// Even bandwidth split; each step adds the device that grows the round
/// latency the least and stops once the deadline would be missed.
pub fn schedule_dm(ctx: &RoundContext, cfg: &SystemConfig, gamma: f64) -> Result<ScheduleDecision> {
    let limit = cfg.t_thr_s * (1.0 + DEADLINE_SLACK);
    let mut chosen: Vec<DeviceId> = Vec::new();
    let mut remaining = ctx.all_ids();
    let mut latency = 0.0;
    while !remaining.is_empty() {
        let share = cfg.total_bandwidth_hz / (chosen.len() + 1) as f64;
        let base = chosen
            .iter()
            .map(|&id| even_split_latency(id, share, ctx, cfg))
            .fold(0.0, f64::max);
        let (pos, next) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &id)| (pos, base.max(even_split_latency(id, share, ctx, cfg))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if next > limit {
            break;
        }
        chosen.push(remaining.remove(pos));
        latency = next;
    }
    if chosen.is_empty() {
        return Ok(ScheduleDecision::skipped());
    }
    chosen.sort_unstable();
    let share = cfg.total_bandwidth_hz / chosen.len() as f64;
    Ok(ScheduleDecision {
        objective: objective_of(&chosen, ctx, gamma),
        bandwidth_hz: chosen.iter().map(|&id| (id, share)).collect(),
        selected: chosen,
        t_star_s: latency,
        feasible: true,
    })
}

/// How the fastest-compute policy finds its prefix length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CmSearch {
    /// Largest feasible prefix over all lengths.
    #[default]
    Linear,
    /// Binary search; exact only when prefix feasibility is monotone.
    Binary,
    /// Runs both, logs a warning when they disagree, returns the linear result.
    Checked,
}

fn cm_order(ctx: &RoundContext, cfg: &SystemConfig) -> Vec<DeviceId> {
    let mut order = ctx.all_ids();
    order.sort_by(|&a, &b| ctx.t_comp(a, cfg).total_cmp(&ctx.t_comp(b, cfg)).then(a.cmp(&b)));
    order
}

fn cm_linear(order: &[DeviceId], ctx: &RoundContext, cfg: &SystemConfig) -> usize {
    (1..=order.len())
        .rev()
        .find(|&n| feasibility_check(&order[..n], ctx, cfg))
        .unwrap_or(0)
}

fn cm_binary(order: &[DeviceId], ctx: &RoundContext, cfg: &SystemConfig) -> usize {
    let (mut lo, mut hi) = (0, order.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if feasibility_check(&order[..mid], ctx, cfg) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Sorts by computation time and keeps the longest prefix that meets the
/// deadline under min-max allocation.
pub fn schedule_cm(ctx: &RoundContext, cfg: &SystemConfig, gamma: f64, search: CmSearch) -> Result<ScheduleDecision> {
    let order = cm_order(ctx, cfg);
    let n = match search {
        CmSearch::Linear => cm_linear(&order, ctx, cfg),
        CmSearch::Binary => cm_binary(&order, ctx, cfg),
        CmSearch::Checked => {
            let (lin, bin) = (cm_linear(&order, ctx, cfg), cm_binary(&order, ctx, cfg));
            if lin != bin {
                log::warn!(
                    "round {}: prefix feasibility is not monotone (linear {lin}, binary {bin})",
                    ctx.round
                );
            }
            lin
        }
    };
    decide(&order[..n], ctx, cfg, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::check_decision;
    use crate::system::{ChannelState, DeviceRound};
    use proptest::prelude::*;

    /// (snr, t_comp) devices, p = N0 = 1, S = 1e6, B = 1e6, t_thr = 1.
    fn ctx(devs: &[(f64, f64)]) -> (RoundContext, SystemConfig) {
        let cfg = SystemConfig {
            noise_psd_w_per_hz: 1.0,
            batch_size: 1,
            total_bandwidth_hz: 1e6,
            model_bits: 1e6,
            t_thr_s: 1.0,
            ..SystemConfig::default()
        };
        let devices = devs
            .iter()
            .enumerate()
            .map(|(id, &(snr, tc))| DeviceRound {
                id,
                cpu_freq_hz: 1.0 / tc,
                channel: ChannelState { gain_sq: snr },
                tau: 1 + id as u32,
                tx_power_w: 1.0,
                cycles_per_sample: 1.0,
            })
            .collect();
        (RoundContext { round: 3, devices }, cfg)
    }

    #[test]
    fn ps_is_deterministic_and_full_size_works() {
        let (c, cfg) = ctx(&[(1e8, 1e-3); 5]);
        let a = schedule_ps(&c, &cfg, 3, 0.0, 11).unwrap();
        let b = schedule_ps(&c, &cfg, 3, 0.0, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.selected.len(), 3);
        let full = schedule_ps(&c, &cfg, 5, 0.0, 11).unwrap();
        assert_eq!(full.selected, vec![0, 1, 2, 3, 4]);
        assert!(schedule_ps(&c, &cfg, 6, 0.0, 11).is_err());
    }

    #[test]
    fn ps_subsets_are_uniform() {
        // χ² over the 10 two-subsets of five devices
        let (base, _) = ctx(&[(1e8, 1e-3); 5]);
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for r in 0..n {
            let mut c = base.clone();
            c.round = r;
            *counts.entry(random_subset(&c, 2, 5, 0).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 10);
        let expect = n as f64 / 10.0;
        let chi2: f64 = counts.values().map(|&o| (o as f64 - expect).powi(2) / expect).sum();
        // 9 degrees of freedom, p = 0.001 critical value
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn tuned_ps_size_matches_brute_force() {
        let spec = crate::system::PopulationSpec::default();
        let profiles = crate::system::generate_population(&spec, 4).unwrap();
        let cfg = SystemConfig {
            fading_sigma_db: Some(8.0),
            t_thr_s: 0.4,
            ..SystemConfig::default()
        };
        let m = tune_ps_size(&profiles, &cfg, 20, 4).unwrap();
        // replay: expected participants for each size
        let seed = 4u64.wrapping_add(PILOT_SEED_OFFSET);
        let score = |m: usize| {
            (0..20)
                .filter(|&r| {
                    let c = sample_round_context(&profiles, &cfg, r, seed).unwrap();
                    let mut rng = stream(seed, Stream::Schedule, u64::from(r), 0);
                    let ids = sample(&mut rng, c.len(), m).into_vec();
                    feasibility_check(&ids, &c, &cfg)
                })
                .count()
                * m
        };
        let scores: Vec<usize> = (1..=40).map(score).collect();
        let top = *scores.iter().max().unwrap();
        assert_eq!(m, 1 + scores.iter().position(|&s| s == top).unwrap());
        assert!(tune_ps_size(&profiles, &cfg, 0, 4).is_err());
    }

    #[test]
    fn cp_orders_by_gain_then_id() {
        let (c, cfg) = ctx(&[(1.5e6, 1e-3), (1.5e6, 1e-3), (9e6, 1e-3), (1e3, 1e-3)]);
        let d = schedule_cp(&c, &cfg, 0.0).unwrap();
        check_decision(&d, &c, &cfg).unwrap();
        // hand simulation: {2} ok, {2,0} ok, {2,0,1} needs > 1 MHz, stop
        assert_eq!(d.selected, vec![0, 2]);
    }

    #[test]
    fn dm_identical_devices_fill_even_split() {
        let (c, cfg) = ctx(&[(4e6, 1e-3); 6]);
        let d = schedule_dm(&c, &cfg, 0.0).unwrap();
        check_decision(&d, &c, &cfg).unwrap();
        // largest n with (1e6/n)·log2(1 + 4n) ≥ 1e6/(1 - 1e-3)
        let fits = |n: f64| (1e6 / n) * (1.0 + 4.0 * n).log2() * (1.0 - 1e-3) >= 1e6;
        let expect = (1..=6).filter(|&n| fits(n as f64)).max().unwrap();
        assert_eq!(d.selected.len(), expect);
        let share = 1e6 / expect as f64;
        assert!(d.bandwidth_hz.iter().all(|&(_, b)| b == share));
    }

    #[test]
    fn dm_matches_replay() {
        let devs = [(5e6, 0.2), (2e7, 0.05), (3e6, 0.01), (8e6, 0.3), (1.5e7, 0.1)];
        let (c, cfg) = ctx(&devs);
        let d = schedule_dm(&c, &cfg, 0.0).unwrap();
        // replay with the raw rate formula; device i runs i + 1 local steps
        let lat = |i: usize, b: f64| (i + 1) as f64 * devs[i].1 + 1e6 / (b * (1.0 + devs[i].0 / b).log2());
        let mut chosen: Vec<usize> = vec![];
        loop {
            let share = 1e6 / (chosen.len() + 1) as f64;
            let mut best: Option<(usize, f64)> = None;
            for i in (0..5).filter(|i| !chosen.contains(i)) {
                let mut all = chosen.clone();
                all.push(i);
                let t = all.iter().map(|&j| lat(j, share)).fold(0.0, f64::max);
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
            match best {
                Some((i, t)) if t <= 1.0 => chosen.push(i),
                _ => break,
            }
        }
        chosen.sort();
        assert_eq!(d.selected, chosen);
    }

    #[test]
    fn cm_edges() {
        let (c, cfg) = ctx(&[(1e8, 1e-3); 3]);
        assert_eq!(schedule_cm(&c, &cfg, 0.0, CmSearch::Linear).unwrap().selected, vec![0, 1, 2]);
        let (c, cfg) = ctx(&[(1.0, 1e-3); 3]);
        assert!(!schedule_cm(&c, &cfg, 0.0, CmSearch::Linear).unwrap().feasible);
    }

    #[test]
    fn cm_linear_handles_non_monotone_prefixes() {
        // fastest compute device has a hopeless channel: prefix 1 fails, prefix 2 too
        let (c, cfg) = ctx(&[(1.0, 1e-4), (1e8, 1e-3), (1e8, 2e-3)]);
        let lin = schedule_cm(&c, &cfg, 0.0, CmSearch::Linear).unwrap();
        assert!(!lin.feasible);
        // a device with t_comp ≥ t_thr sitting behind good ones breaks only later prefixes
        let (c, cfg) = ctx(&[(1e8, 1e-3), (1e8, 2e-3), (1e8, 2.0)]);
        assert_eq!(schedule_cm(&c, &cfg, 0.0, CmSearch::Binary).unwrap().selected, vec![0, 1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cm_binary_agrees_with_linear_on_monotone_instances(
            snr_exp in prop::collection::vec(6.3f64..8.0, 2..9),
        ) {
            // equal t_comp: prefix feasibility is monotone in length
            let devs: Vec<(f64, f64)> = snr_exp.iter().map(|e| (10f64.powf(*e), 1e-3)).collect();
            let (c, cfg) = ctx(&devs);
            let order = cm_order(&c, &cfg);
            prop_assert_eq!(cm_linear(&order, &c, &cfg), cm_binary(&order, &c, &cfg));
        }

        #[test]
        fn baselines_are_feasible(
            snr_exp in prop::collection::vec(5.5f64..8.0, 1..9),
            tc in prop::collection::vec(1e-4f64..0.5, 9),
            seed in 0u64..1000,
        ) {
            let devs: Vec<(f64, f64)> = snr_exp.iter().zip(&tc).map(|(e, t)| (10f64.powf(*e), *t)).collect();
            let (c, cfg) = ctx(&devs);
            for d in [
                schedule_ps(&c, &cfg, 1, 0.0, seed).unwrap(),
                schedule_cp(&c, &cfg, 0.0).unwrap(),
                schedule_dm(&c, &cfg, 0.0).unwrap(),
                schedule_cm(&c, &cfg, 0.0, CmSearch::Checked).unwrap(),
            ] {
                check_decision(&d, &c, &cfg).unwrap();
            }
        }
    }
}
