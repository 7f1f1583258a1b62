use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use wfl_cli::config::{self, ConfigError, ExperimentConfig, SchedulerId};
use wfl_cli::runner::{self, RunError};
use wfl_cli::{compare, debug, SweepError};
use wfl_core::diagnostics;

#[derive(Parser)]
#[command(name = "wfl", version, about = "Wireless federated learning scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scheduler: spf, sp, ps, cp, dm, cm, lp, uniform.
    #[arg(long)]
    scheduler: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write results.csv, schedule_trace.csv, plotdata.csv, constants.json.
    Run(Common),
    /// Run once per value of a dotted config key, e.g. `--key system.t_thr_s --values 0.4,1`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        key: String,
        /// Comma-separated; each value is read as JSON, falling back to a string.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Summarise result directories side by side as CSV.
    Compare {
        dirs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one sampled round and every policy's decision.
    ScheduleDebug {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        round: u32,
    },
    /// Estimate the bound constants and print the bound quantities as JSON.
    Bounds(Common),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(c) => c.into(),
            SweepError::Run(r) => r.into(),
        }
    }
}

fn load_doc(common: &Common) -> Result<serde_json::Value, Failure> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(ConfigError::from)?;
    if let Some(seed) = common.seed {
        config::set_path(&mut doc, "seed", json!(seed))?;
    }
    if let Some(s) = &common.scheduler {
        let id = SchedulerId::parse(s).ok_or_else(|| Failure::Config(format!("scheduler: unknown id {s:?}")))?;
        config::set_path(&mut doc, "scheduler", json!(id.name()))?;
    }
    if let Some(out) = &common.out {
        config::set_path(&mut doc, "out_dir", json!(out))?;
    }
    Ok(doc)
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    Ok(config::from_value(load_doc(common)?)?)
}

fn bounds(cfg: &ExperimentConfig) -> Result<serde_json::Value, Failure> {
    let fed = runner::build_federation(cfg)?;
    let c = runner::estimate(cfg, &fed)?;
    let ps_m = runner::ps_size(cfg, &fed.profiles)?;
    let tc = runner::training_config(cfg, &c, ps_m);
    let tau_bar = cfg
        .tau_groups
        .as_ref()
        .map_or(cfg.population.mean_tau, |g| g.iter().map(|g| g.mean_tau).fold(0.0, f64::max))
        .round()
        .max(1.0) as u32;
    Ok(json!({
        "constants": c,
        "smoothness": runner::smoothness(cfg, &c),
        "gamma": tc.gamma,
        "tau_bar": tau_bar,
        "step_size_limit": 0.58 / (runner::smoothness(cfg, &c) * f64::from(tau_bar)),
        "local_drift_bound": diagnostics::local_drift_bound(tc.eta_l, tau_bar, c.g, c.sigma2),
        "q_upper_limit": diagnostics::q_upper_limit(&c, tau_bar, tc.eta_g, tc.eta_l),
        "q_admissible": diagnostics::check_q(&c, tau_bar, tc.eta_g, tc.eta_l),
        "asymptotic_rate": diagnostics::asymptotic_rate(tau_bar, ps_m, tc.rounds),
    }))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let out = runner::run_experiment(&cfg, &cfg.out_dir)?;
            let last = out.run.records.last();
            println!(
                "{} rounds, final train loss {}, final test accuracy {}, artifacts in {}",
                out.run.records.len(),
                out.run.final_loss(),
                out.run.final_accuracy().map_or_else(|| "-".into(), |a| a.to_string()),
                cfg.out_dir.display()
            );
            if let Some(r) = last {
                log::info!("simulated time {} s", r.elapsed_s);
            }
        }
        Command::Sweep { common, key, values } => {
            let doc = load_doc(&common)?;
            let out_root = config::from_value(doc.clone())?.out_dir;
            let parsed: Vec<serde_json::Value> = values
                .iter()
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| json!(v)))
                .collect();
            for dir in wfl_cli::run_sweep(&doc, &key, &parsed, &out_root)? {
                println!("{}", dir.display());
            }
        }
        Command::Compare { dirs, out } => {
            let table = compare::render_csv(&compare::compare(&dirs)?);
            match out {
                Some(p) => fs::write(&p, table).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?,
                None => print!("{table}"),
            }
        }
        Command::ScheduleDebug { common, round } => {
            let cfg = load(&common)?;
            let gamma = match cfg.training.gamma {
                Some(g) => g,
                None => {
                    let fed = runner::build_federation(&cfg)?;
                    runner::training_config(&cfg, &runner::estimate(&cfg, &fed)?, 1).gamma
                }
            };
            print!("{}", debug::schedule_debug(&cfg, round, gamma)?);
        }
        Command::Bounds(common) => {
            let cfg = load(&common)?;
            let report = bounds(&cfg)?;
            let text = serde_json::to_string_pretty(&report).expect("json values serialise");
            if common.out.is_some() {
                fs::create_dir_all(&cfg.out_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
                let p = cfg.out_dir.join("constants.json");
                fs::write(&p, format!("{text}\n")).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
            }
            println!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
