//! The selection LP solved by the built-in simplex against `minilp`, on the
//! same relaxation written out in MHz.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use wfl_core::schedule::{build_lp, check_decision, schedule_lp, solve_lp, LpInstance};
use wfl_core::system::{generate_population, sample_round_context, PopulationSpec};
use wfl_core::SystemConfig;

const MHZ: f64 = 1e6;

fn oracle_objective(inst: &LpInstance) -> f64 {
    let ids = inst.reachable();
    let b = inst.budget_hz / MHZ;
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let alpha: Vec<_> = ids.iter().map(|&i| p.add_var(inst.nu[i], (0.0, f64::INFINITY))).collect();
    let beta: Vec<_> = ids.iter().map(|_| p.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let theta = p.add_var(0.0, (0.0, 1.0));
    for (j, &i) in ids.iter().enumerate() {
        p.add_constraint([(alpha[j], inst.c_min[i] / MHZ), (beta[j], -1.0)], ComparisonOp::Le, 0.0);
        p.add_constraint([(beta[j], 1.0), (alpha[j], -b)], ComparisonOp::Le, 0.0);
    }
    let mut budget: Vec<_> = beta.iter().map(|&v| (v, 1.0)).collect();
    budget.push((theta, -b));
    p.add_constraint(&budget, ComparisonOp::Le, 0.0);
    let sum: Vec<_> = alpha.iter().map(|&v| (v, 1.0)).collect();
    p.add_constraint(&sum, ComparisonOp::Eq, 1.0);
    p.solve().expect("oracle solves").objective()
}

fn instance(k: usize, seed: u64) -> Option<(wfl_core::RoundContext, SystemConfig)> {
    let cfg = SystemConfig::default();
    let spec = PopulationSpec {
        num_devices: k,
        ..PopulationSpec::default()
    };
    let profiles = generate_population(&spec, seed).ok()?;
    let ctx = sample_round_context(&profiles, &cfg, 1 + (seed % 7) as u32, seed).ok()?;
    Some((ctx, cfg))
}

#[test]
fn simplex_matches_external_solver() {
    let mut compared = 0;
    for seed in 0..120u64 {
        let k = 2 + (seed as usize % 19);
        let Some((ctx, cfg)) = instance(k, seed) else { continue };
        let Ok(inst) = build_lp(&ctx, &cfg) else { continue };
        let ours = solve_lp(&inst, 1e-11).unwrap();
        assert!(ours.feasible);
        let theirs = oracle_objective(&inst);
        let rel = (ours.objective - theirs).abs() / theirs.abs().max(1e-300);
        assert!(rel <= 1e-7, "seed {seed}: {} vs {theirs}", ours.objective);
        compared += 1;
    }
    assert!(compared >= 100);
}

#[test]
fn rounded_decisions_meet_the_deadline() {
    for seed in 0..60u64 {
        let Some((ctx, cfg)) = instance(5 + (seed as usize % 30), seed) else { continue };
        let d = schedule_lp(&ctx, &cfg, 1e-4).unwrap();
        check_decision(&d, &ctx, &cfg).unwrap();
    }
}

