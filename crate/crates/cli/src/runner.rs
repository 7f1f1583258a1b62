//! Builds the federation for a config, runs training and writes the
//! artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wfl_core::diagnostics::{self, BoundConstants};
use wfl_core::fl::{
    adjusted_lr, gaussian_mixture, partition_dataset, run_training, Dataset, Federation, TrainingConfig, TrainingRun,
};
use wfl_core::system::generate_population;

use wfl_core::schedule::tune_ps_size;
use wfl_core::system::DeviceProfile;

use crate::config::{ExperimentConfig, PsSize};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] wfl_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Other(String),
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Device profiles with any `τ` groups applied to ids in order.
pub fn build_profiles(cfg: &ExperimentConfig) -> Result<Vec<DeviceProfile>, RunError> {
    let mut profiles = generate_population(&cfg.population, cfg.seed)?;
    if let Some(groups) = &cfg.tau_groups {
        let mut ids = profiles.iter_mut();
        for g in groups {
            for p in ids.by_ref().take(g.count) {
                p.mean_tau = g.mean_tau;
            }
        }
    }
    Ok(profiles)
}

pub fn build_federation(cfg: &ExperimentConfig) -> Result<Federation, RunError> {
    let (train, test) = gaussian_mixture(&cfg.data, cfg.seed)?;
    let partitions = partition_dataset(&train, cfg.population.num_devices, cfg.training.partition, cfg.seed)?;
    let profiles = build_profiles(cfg)?;
    Ok(Federation {
        task: cfg.training.task.build(cfg.data.features, cfg.data.classes),
        train: Dataset::concat(&partitions)?,
        partitions,
        test,
        profiles,
        system: cfg.system.clone(),
    })
}

pub fn estimate(cfg: &ExperimentConfig, fed: &Federation) -> Result<BoundConstants, RunError> {
    let mut c = diagnostics::estimate_constants(
        fed.task.as_ref(),
        &fed.partitions,
        cfg.diagnostics.probes,
        cfg.training.batch_size,
        cfg.seed,
    )?;
    c.q = cfg.diagnostics.q;
    Ok(c)
}

/// Smoothness used for `γ` and the step-size warning: configured, else
/// estimated.
pub fn smoothness(cfg: &ExperimentConfig, constants: &BoundConstants) -> f64 {
    cfg.training.smoothness.unwrap_or(constants.l)
}

/// Random-subset size, tuned on pilot rounds when configured as `"auto"`.
pub fn ps_size(cfg: &ExperimentConfig, profiles: &[DeviceProfile]) -> Result<usize, RunError> {
    match cfg.scheduler_params.ps_m {
        PsSize::Fixed(m) => Ok(m),
        PsSize::Auto => {
            let m = tune_ps_size(profiles, &cfg.system, cfg.scheduler_params.ps_pilot_rounds, cfg.seed)?;
            log::info!("tuned random-subset size: {m}");
            Ok(m)
        }
    }
}

pub fn training_config(cfg: &ExperimentConfig, constants: &BoundConstants, ps_m: usize) -> TrainingConfig {
    let (policy, tau_bar) = cfg.policy(ps_m);
    let l = smoothness(cfg, constants);
    let t = &cfg.training;
    TrainingConfig {
        eta_l: t.eta_l,
        eta_g: t.eta_g,
        rounds: t.rounds,
        batch_size: t.batch_size,
        tau_bar,
        policy,
        gamma: t.gamma.unwrap_or(if l > 0.0 { t.eta_g / l } else { 0.0 }),
        aggregation: t.aggregation,
        time_budget_s: t.time_budget_s,
        smoothness: (l > 0.0).then_some(l),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub constants: BoundConstants,
    pub smoothness: f64,
    pub gamma: f64,
    pub q_upper_limit: f64,
    pub q_admissible: bool,
    /// `F(w₀) − min_r F(w_r)`, a lower bound on the true optimality gap.
    pub observed_gap: f64,
    pub mean_selected: f64,
    pub convergence_bound: Option<f64>,
    pub asymptotic_rate: f64,
}

pub struct RunOutput {
    pub run: TrainingRun,
    pub training: TrainingConfig,
    pub report: BoundReport,
}

fn report(cfg: &ExperimentConfig, c: BoundConstants, tc: &TrainingConfig, run: &TrainingRun) -> Result<BoundReport, RunError> {
    let done: Vec<_> = run.records.iter().filter(|r| !r.skipped).collect();
    let mut c = c;
    let mut tau_bar_ref: u32 = 1;
    for r in &done {
        let tb = r.tau_bar.unwrap_or_else(|| *r.taus.iter().max().expect("non-empty"));
        tau_bar_ref = tau_bar_ref.max(tb);
        c.kappa = c.kappa.max(diagnostics::kappa(tb, &r.taus)?);
    }
    let mean_selected = if done.is_empty() {
        0.0
    } else {
        done.iter().map(|r| r.selected.len() as f64).sum::<f64>() / done.len() as f64
    };
    let min_loss = run.records.iter().map(|r| r.train_loss).fold(run.initial_loss, f64::min);
    let gap = run.initial_loss - min_loss;
    let m = mean_selected.round().max(1.0) as usize;
    let rounds = (done.len() as u32).max(1);
    let t2 = diagnostics::convergence_bound(&c, gap, rounds, tau_bar_ref, tc.eta_g, tc.eta_l, m, c.kappa).ok();
    Ok(BoundReport {
        smoothness: smoothness(cfg, &c),
        gamma: tc.gamma,
        q_upper_limit: diagnostics::q_upper_limit(&c, tau_bar_ref, tc.eta_g, tc.eta_l),
        q_admissible: diagnostics::check_q(&c, tau_bar_ref, tc.eta_g, tc.eta_l),
        observed_gap: gap,
        mean_selected,
        convergence_bound: t2,
        asymptotic_rate: diagnostics::asymptotic_rate(tau_bar_ref, m, rounds),
        constants: c,
    })
}

/// Runs one experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let fed = build_federation(cfg)?;
    let constants = estimate(cfg, &fed)?;
    let ps_m = if cfg.scheduler == crate::config::SchedulerId::Ps {
        ps_size(cfg, &fed.profiles)?
    } else {
        1
    };
    let training = training_config(cfg, &constants, ps_m);
    let run = run_training(&fed, &training, cfg.seed)?;
    let report = report(cfg, constants, &training, &run)?;
    Ok(RunOutput { run, training, report })
}

/// Shortest round-trip decimal; empty for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub const RESULTS_HEADER: [&str; 7] = [
    "round",
    "selected_count",
    "tau_bar",
    "t_star_s",
    "objective",
    "train_loss",
    "test_accuracy",
];
pub const TRACE_HEADER: [&str; 5] = ["round", "device", "tau", "bandwidth_hz", "learning_rate"];
pub const PLOT_HEADER: [&str; 4] = ["round", "elapsed_s", "train_loss", "test_accuracy"];

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let run = &out.run;
    let skip_blank = |r: &wfl_core::fl::RoundRecord, v: f64| if r.skipped { String::new() } else { fmt_f64(v) };
    write_csv(
        &dir.join("results.csv"),
        &RESULTS_HEADER,
        run.records.iter().map(|r| {
            vec![
                r.round.to_string(),
                r.selected.len().to_string(),
                fmt_opt(r.tau_bar),
                skip_blank(r, r.t_star_s),
                skip_blank(r, r.objective),
                fmt_f64(r.train_loss),
                fmt_opt(r.test_accuracy.map(fmt_f64)),
            ]
        }),
    )?;
    let eta_l = out.training.eta_l;
    write_csv(
        &dir.join("schedule_trace.csv"),
        &TRACE_HEADER,
        run.records.iter().flat_map(|r| {
            r.selected.iter().zip(&r.taus).zip(&r.bandwidth_hz).map(move |((&id, &tau), &b)| {
                let lr = r.tau_bar.map_or(eta_l, |tb| adjusted_lr(eta_l, tb, tau));
                vec![r.round.to_string(), id.to_string(), tau.to_string(), fmt_f64(b), fmt_f64(lr)]
            })
        }),
    )?;
    let first = vec![
        "0".to_string(),
        "0".to_string(),
        fmt_f64(run.initial_loss),
        fmt_opt(run.initial_accuracy.map(fmt_f64)),
    ];
    write_csv(
        &dir.join("plotdata.csv"),
        &PLOT_HEADER,
        std::iter::once(first).chain(run.records.iter().map(|r| {
            vec![
                r.round.to_string(),
                fmt_f64(r.elapsed_s),
                fmt_f64(r.train_loss),
                fmt_opt(r.test_accuracy.map(fmt_f64)),
            ]
        })),
    )?;
    let path = dir.join("constants.json");
    let json = serde_json::to_string_pretty(&out.report).map_err(|e| RunError::Other(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(io_err(&path))
}

pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput, RunError> {
    let out = execute(cfg)?;
    write_artifacts(&out, dir)?;
    Ok(out)
}
