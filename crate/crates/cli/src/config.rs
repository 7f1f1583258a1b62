//! JSON experiment configuration.
//!
//! Unknown keys are rejected at every level. Physical quantities accept
//! either a plain number in SI units or a string with a unit, e.g.
//! `"20 dBm"`, `"-114 dBm/MHz"`, `"-15.3 dB"`. Conversion to linear SI
//! happens here; nothing downstream sees decibels.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wfl_core::fl::{AggregationWeights, MixtureSpec, PartitionMode, TaskKind, TauBarStrategy};
use wfl_core::system::{db_to_linear, dbm_per_mhz_to_w_per_hz, dbm_to_watts, PopulationSpec, TauSampling};
use wfl_core::{Policy, SystemConfig};

/// Unit suffix and its conversion to SI.
type Unit = (&'static str, fn(f64) -> f64);

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {msg}")]
    Field { field: String, msg: String },
}

fn field_err(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// A number in SI units or a string carrying its own unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Number(f64),
    Text(String),
}

impl Quantity {
    fn split(s: &str) -> Option<(f64, String)> {
        let s = s.trim();
        let idx = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
        let v: f64 = s[..idx].trim().parse().ok()?;
        Some((v, s[idx..].trim().to_string()))
    }

    fn convert(&self, field: &str, units: &[Unit]) -> Result<f64, ConfigError> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::Text(s) => {
                let (v, unit) = Self::split(s).ok_or_else(|| field_err(field, format!("cannot parse {s:?}")))?;
                units
                    .iter()
                    .find(|(u, _)| u.eq_ignore_ascii_case(&unit))
                    .map(|(_, f)| f(v))
                    .ok_or_else(|| {
                        let known: Vec<&str> = units.iter().map(|u| u.0).collect();
                        field_err(field, format!("unit {unit:?} not one of {known:?}"))
                    })
            }
        }
    }

    pub fn watts(&self, field: &str) -> Result<f64, ConfigError> {
        self.convert(field, &[("W", |v| v), ("mW", |v| v * 1e-3), ("dBm", dbm_to_watts), ("dBW", db_to_linear)])
    }

    pub fn psd(&self, field: &str) -> Result<f64, ConfigError> {
        self.convert(
            field,
            &[("W/Hz", |v| v), ("dBm/MHz", dbm_per_mhz_to_w_per_hz), ("dBm/Hz", |v| dbm_to_watts(v))],
        )
    }

    pub fn ratio(&self, field: &str) -> Result<f64, ConfigError> {
        self.convert(field, &[("dB", db_to_linear)])
    }

    pub fn hertz(&self, field: &str) -> Result<f64, ConfigError> {
        self.convert(field, &[("Hz", |v| v), ("kHz", |v| v * 1e3), ("MHz", |v| v * 1e6), ("GHz", |v| v * 1e9)])
    }
}

/// Devices `[start, start + count)` share a mean local iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGroup {
    pub count: usize,
    pub mean_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSection {
    pub num_devices: usize,
    pub distance_range_m: (f64, f64),
    pub tx_power: Quantity,
    pub cpu_freq_range: (Quantity, Quantity),
    pub cycles_per_sample: f64,
    pub mean_tau: f64,
    /// Overrides `mean_tau` for consecutive id ranges; counts must sum to
    /// `num_devices`.
    pub tau_groups: Option<Vec<TauGroup>>,
}

impl Default for PopulationSection {
    fn default() -> Self {
        Self {
            num_devices: 40,
            distance_range_m: (100.0, 500.0),
            tx_power: Quantity::Text("20 dBm".into()),
            cpu_freq_range: (Quantity::Text("2 GHz".into()), Quantity::Text("4 GHz".into())),
            cycles_per_sample: 110.0,
            mean_tau: 5.0,
            tau_groups: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub pathloss_exponent: f64,
    pub ref_gain: Quantity,
    pub noise_psd: Quantity,
    pub fading_sigma_db: Option<f64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            pathloss_exponent: 3.76,
            ref_gain: Quantity::Text("-15.3 dB".into()),
            noise_psd: Quantity::Text("-114 dBm/MHz".into()),
            fading_sigma_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub bandwidth: Quantity,
    pub model_bits: f64,
    pub t_thr_s: f64,
    pub tau_sampling: TauSampling,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            bandwidth: Quantity::Text("10 MHz".into()),
            model_bits: 1e7,
            t_thr_s: 1.0,
            tau_sampling: TauSampling::Exponential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub task: TaskKind,
    pub rounds: u32,
    pub eta_l: f64,
    pub eta_g: f64,
    pub batch_size: usize,
    pub tau_bar: TauBarStrategy,
    pub partition: PartitionMode,
    pub aggregation: AggregationWeights,
    pub time_budget_s: Option<f64>,
    /// Known smoothness; estimated when absent.
    pub smoothness: Option<f64>,
    /// Scheduler objective weight; `eta_g / L` when absent.
    pub gamma: Option<f64>,
    /// Apply the `tau_bar` strategy to the comparison schedulers too.
    pub adjust_baselines: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            task: TaskKind::Logistic,
            rounds: 200,
            eta_l: 0.05,
            eta_g: 1.0,
            batch_size: 40,
            tau_bar: TauBarStrategy::Max,
            partition: PartitionMode::LabelSorted { shards_per_device: 2 },
            aggregation: AggregationWeights::Uniform,
            time_budget_s: None,
            smoothness: None,
            gamma: None,
            adjust_baselines: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerId {
    /// Greedy selection with the learning-rate adjustment.
    Spf,
    /// Greedy selection without it.
    Sp,
    Ps,
    Cp,
    Dm,
    Cm,
    Lp,
    /// `m` uniformly random devices, no bandwidth constraint.
    Uniform,
}

impl SchedulerId {
    pub const ALL: [SchedulerId; 8] = [
        SchedulerId::Spf,
        SchedulerId::Sp,
        SchedulerId::Ps,
        SchedulerId::Cp,
        SchedulerId::Dm,
        SchedulerId::Cm,
        SchedulerId::Lp,
        SchedulerId::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerId::Spf => "spf",
            SchedulerId::Sp => "sp",
            SchedulerId::Ps => "ps",
            SchedulerId::Cp => "cp",
            SchedulerId::Dm => "dm",
            SchedulerId::Cm => "cm",
            SchedulerId::Lp => "lp",
            SchedulerId::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    /// Subset size for `ps`, or `"auto"` to tune it on pilot rounds.
    pub ps_m: PsSize,
    /// Pilot rounds used when `ps_m` is `"auto"`.
    pub ps_pilot_rounds: u32,
    /// Subset size for `uniform`.
    pub uniform_m: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        Self {
            ps_m: PsSize::Fixed(6),
            ps_pilot_rounds: 50,
            uniform_m: 10,
        }
    }
}

/// Random-subset size: a count, or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsSize {
    Fixed(usize),
    Auto,
}

impl Serialize for PsSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PsSize::Fixed(m) => s.serialize_u64(*m as u64),
            PsSize::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for PsSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(m) => Ok(PsSize::Fixed(m)),
            Raw::Text(t) if t == "auto" => Ok(PsSize::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a count or \"auto\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub probes: usize,
    pub q: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { probes: 10, q: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    #[serde(default)]
    population: PopulationSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    data: MixtureSpec,
    #[serde(default)]
    training: TrainingSection,
    #[serde(default = "default_scheduler")]
    scheduler: SchedulerId,
    #[serde(default)]
    scheduler_params: SchedulerSection,
    #[serde(default)]
    diagnostics: DiagnosticsSection,
    #[serde(default = "default_out")]
    out_dir: PathBuf,
}

fn default_scheduler() -> SchedulerId {
    SchedulerId::Spf
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// A validated experiment with every quantity in linear SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub population: PopulationSpec,
    pub tau_groups: Option<Vec<TauGroup>>,
    pub system: SystemConfig,
    pub data: MixtureSpec,
    pub training: TrainingSection,
    pub scheduler: SchedulerId,
    pub scheduler_params: SchedulerSection,
    pub diagnostics: DiagnosticsSection,
    pub out_dir: PathBuf,
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(field_err(field, format!("must be a positive finite number, got {v}")))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    from_value(value)
}

pub fn from_value(value: serde_json::Value) -> Result<ExperimentConfig, ConfigError> {
    if value.get("seed").is_none() {
        return Err(field_err("seed", "required"));
    }
    let raw: RawConfig = serde_json::from_value(value)?;
    let p = &raw.population;
    if p.num_devices == 0 {
        return Err(field_err("population.num_devices", "must be >= 1"));
    }
    let (dlo, dhi) = p.distance_range_m;
    positive("population.distance_range_m[0]", dlo)?;
    if dhi < dlo {
        return Err(field_err("population.distance_range_m", "max must be >= min"));
    }
    let f_lo = positive("population.cpu_freq_range[0]", p.cpu_freq_range.0.hertz("population.cpu_freq_range[0]")?)?;
    let f_hi = positive("population.cpu_freq_range[1]", p.cpu_freq_range.1.hertz("population.cpu_freq_range[1]")?)?;
    if f_hi < f_lo {
        return Err(field_err("population.cpu_freq_range", "max must be >= min"));
    }
    let population = PopulationSpec {
        num_devices: p.num_devices,
        distance_range_m: (dlo, dhi),
        tx_power_w: positive("population.tx_power", p.tx_power.watts("population.tx_power")?)?,
        cpu_freq_range_hz: (f_lo, f_hi),
        cycles_per_sample: positive("population.cycles_per_sample", p.cycles_per_sample)?,
        mean_tau: positive("population.mean_tau", p.mean_tau)?,
    };
    if let Some(groups) = &p.tau_groups {
        let total: usize = groups.iter().map(|g| g.count).sum();
        if total != p.num_devices {
            return Err(field_err(
                "population.tau_groups",
                format!("counts sum to {total}, expected {}", p.num_devices),
            ));
        }
        for g in groups {
            positive("population.tau_groups.mean_tau", g.mean_tau)?;
        }
    }

    let c = &raw.channel;
    if !(c.pathloss_exponent >= 2.0) {
        return Err(field_err("channel.pathloss_exponent", "must be >= 2"));
    }
    if let Some(s) = c.fading_sigma_db {
        if !(s >= 0.0) {
            return Err(field_err("channel.fading_sigma_db", "must be >= 0"));
        }
    }
    let t = &raw.training;
    positive("training.eta_l", t.eta_l)?;
    positive("training.eta_g", t.eta_g)?;
    if t.rounds == 0 {
        return Err(field_err("training.rounds", "must be >= 1"));
    }
    if t.batch_size == 0 {
        return Err(field_err("training.batch_size", "must be >= 1"));
    }
    if let Some(b) = t.time_budget_s {
        positive("training.time_budget_s", b)?;
    }
    if let Some(l) = t.smoothness {
        positive("training.smoothness", l)?;
    }
    if let Some(g) = t.gamma {
        if !(g >= 0.0) {
            return Err(field_err("training.gamma", "must be >= 0"));
        }
    }
    if let TauBarStrategy::Fixed(0) = t.tau_bar {
        return Err(field_err("training.tau_bar", "fixed value must be >= 1"));
    }
    if let PartitionMode::LabelSorted { shards_per_device: 0 } = t.partition {
        return Err(field_err("training.partition.shards_per_device", "must be >= 1"));
    }

    let system = SystemConfig {
        total_bandwidth_hz: positive("system.bandwidth", raw.system.bandwidth.hertz("system.bandwidth")?)?,
        noise_psd_w_per_hz: positive("channel.noise_psd", c.noise_psd.psd("channel.noise_psd")?)?,
        model_bits: positive("system.model_bits", raw.system.model_bits)?,
        t_thr_s: positive("system.t_thr_s", raw.system.t_thr_s)?,
        batch_size: t.batch_size,
        pathloss_exponent: c.pathloss_exponent,
        ref_gain: positive("channel.ref_gain", c.ref_gain.ratio("channel.ref_gain")?)?,
        fading_sigma_db: c.fading_sigma_db,
        tau_sampling: raw.system.tau_sampling,
    };

    let d = &raw.data;
    if d.features == 0 || d.classes < 2 || d.train_samples < p.num_devices || d.test_samples == 0 {
        return Err(field_err(
            "data",
            "need features >= 1, classes >= 2, test_samples >= 1 and at least one training sample per device",
        ));
    }
    positive("data.noise", d.noise)?;
    if !(d.separation >= 0.0) {
        return Err(field_err("data.separation", "must be >= 0"));
    }
    let sp = &raw.scheduler_params;
    if sp.ps_pilot_rounds == 0 {
        return Err(field_err("scheduler_params.ps_pilot_rounds", "must be positive"));
    }
    let ps_fixed = match sp.ps_m {
        PsSize::Fixed(m) => Some(m),
        PsSize::Auto => None,
    };
    let sizes = [("scheduler_params.ps_m", ps_fixed), ("scheduler_params.uniform_m", Some(sp.uniform_m))];
    for (name, m) in sizes.into_iter().filter_map(|(n, m)| m.map(|m| (n, m))) {
        if m == 0 || m > p.num_devices {
            return Err(field_err(name, format!("must lie in 1..={}", p.num_devices)));
        }
    }
    if raw.diagnostics.probes < 10 {
        return Err(field_err("diagnostics.probes", "must be >= 10"));
    }
    if !(raw.diagnostics.q > 0.0 && raw.diagnostics.q < 1.0) {
        return Err(field_err("diagnostics.q", "must lie in (0, 1)"));
    }

    Ok(ExperimentConfig {
        seed: raw.seed,
        population,
        tau_groups: p.tau_groups.clone(),
        system,
        data: raw.data,
        training: raw.training,
        scheduler: raw.scheduler,
        scheduler_params: raw.scheduler_params,
        diagnostics: raw.diagnostics,
        out_dir: raw.out_dir,
    })
}

/// Sets a dotted key (`system.t_thr_s`) in a JSON document, creating
/// intermediate objects as needed.
pub fn set_path(doc: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<(), ConfigError> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| field_err(key, format!("{part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(field_err(key, "empty key"))
}

impl ExperimentConfig {
    /// Scheduling policy and `τ̄` strategy the scheduler id stands for.
    /// `ps_m` is the resolved random-subset size.
    pub fn policy(&self, ps_m: usize) -> (Policy, TauBarStrategy) {
        let t = &self.training;
        let baseline = if t.adjust_baselines { t.tau_bar } else { TauBarStrategy::Off };
        match self.scheduler {
            SchedulerId::Spf => (Policy::Greedy, t.tau_bar),
            SchedulerId::Sp => (Policy::Greedy, TauBarStrategy::Off),
            SchedulerId::Ps => (Policy::RandomSubset { m: ps_m }, baseline),
            SchedulerId::Cp => (Policy::BestChannel, baseline),
            SchedulerId::Dm => (Policy::EvenSplit, baseline),
            SchedulerId::Cm => (Policy::FastestCompute, baseline),
            SchedulerId::Lp => (Policy::Lp, t.tau_bar),
            SchedulerId::Uniform => (Policy::Uniform { m: self.scheduler_params.uniform_m }, t.tau_bar),
        }
    }
}
