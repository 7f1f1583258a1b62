//! Human-readable dump of one sampled round under every policy.

use std::fmt::Write as _;

use wfl_core::schedule::{schedule_round_traced, ScheduleDecision};
use wfl_core::system::sample_round_context;
use wfl_core::Policy;

use crate::config::ExperimentConfig;
use crate::runner::RunError;

fn policies(cfg: &ExperimentConfig, ps_m: usize) -> Vec<(&'static str, Policy)> {
    vec![
        ("greedy", Policy::Greedy),
        ("lp", Policy::Lp),
        ("ps", Policy::RandomSubset { m: ps_m }),
        ("cp", Policy::BestChannel),
        ("dm", Policy::EvenSplit),
        ("cm", Policy::FastestCompute),
        ("uniform", Policy::Uniform { m: cfg.scheduler_params.uniform_m }),
    ]
}

fn ids(d: &ScheduleDecision) -> String {
    let v: Vec<String> = d.selected.iter().map(ToString::to_string).collect();
    format!("[{}]", v.join(","))
}

/// `gamma` is the scheduler objective weight to use.
pub fn schedule_debug(cfg: &ExperimentConfig, round: u32, gamma: f64) -> Result<String, RunError> {
    let profiles = crate::runner::build_profiles(cfg)?;
    let ps_m = crate::runner::ps_size(cfg, &profiles)?;
    let sys = &cfg.system;
    let ctx = sample_round_context(&profiles, sys, round, cfg.seed)?;
    let mut s = String::new();
    let _ = writeln!(s, "round {round}  seed {}  K {}  B {} Hz  t_thr {} s  gamma {gamma}", cfg.seed, ctx.len(), sys.total_bandwidth_hz, sys.t_thr_s);
    let _ = writeln!(s, "\n{:>4} {:>9} {:>5} {:>12} {:>12}", "id", "dist_m", "tau", "t_comp_s", "snr_hz");
    for d in &ctx.devices {
        let _ = writeln!(
            s,
            "{:>4} {:>9.1} {:>5} {:>12.4e} {:>12.4e}",
            d.id,
            profiles[d.id].distance_m,
            d.tau,
            ctx.t_comp(d.id, sys),
            ctx.snr_hz(d.id, sys)
        );
    }
    let _ = writeln!(s, "\n{:<8} {:>8} {:>10} {:>12} {:>12}  selected", "policy", "feasible", "count", "t_star_s", "objective");
    for (name, p) in policies(cfg, ps_m) {
        let d = p.schedule(&ctx, sys, gamma, cfg.seed)?;
        let _ = writeln!(
            s,
            "{:<8} {:>8} {:>10} {:>12.6} {:>12.6}  {}",
            name,
            d.feasible,
            d.selected.len(),
            d.t_star_s,
            d.objective,
            ids(&d)
        );
    }
    let (_, trace) = schedule_round_traced(&ctx, sys, gamma)?;
    let _ = writeln!(s, "\ngreedy trace\n{:>4} {:>6} {:>8} {:>12} {:>12}", "iter", "pool", "accepted", "t_star_s", "objective");
    for st in &trace {
        let _ = writeln!(
            s,
            "{:>4} {:>6} {:>8} {:>12.6} {:>12.6}",
            st.iteration,
            st.pool_size,
            st.accepted.map_or_else(|| "-".to_string(), |a| a.to_string()),
            st.t_star_s,
            st.objective
        );
    }
    Ok(s)
}
