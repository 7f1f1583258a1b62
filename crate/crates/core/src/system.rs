//! Device, channel and latency model for an FDMA uplink.
//!
//! All quantities are SI (Hz, W, s, bits). Decibel conversions live here too
//! but are only meant to be used at configuration boundaries.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

pub type DeviceId = usize;

/// Reference gain for `15.3 + 37.6·log10(d[m])` dB path loss, i.e. the usual
/// `128.1 + 37.6·log10(d[km])` macro-cell model.
pub const DEFAULT_REF_GAIN_DB: f64 = -15.3;
pub const DEFAULT_PATHLOSS_EXPONENT: f64 = 3.76;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Noise PSD given in dBm/MHz to W/Hz.
pub fn dbm_per_mhz_to_w_per_hz(dbm_per_mhz: f64) -> f64 {
    dbm_to_watts(dbm_per_mhz) / 1e6
}

/// Static per-device capabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: DeviceId,
    pub distance_m: f64,
    pub tx_power_w: f64,
    pub cycles_per_sample: f64,
    pub cpu_freq_range_hz: (f64, f64),
    pub mean_tau: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.cpu_freq_range_hz;
        if !(self.distance_m > 0.0) {
            return Err(Error::domain(format!("device {}: distance must be > 0", self.id)));
        }
        if !(self.tx_power_w > 0.0) {
            return Err(Error::domain(format!("device {}: tx power must be > 0", self.id)));
        }
        if !(self.cycles_per_sample >= 1.0) {
            return Err(Error::domain(format!("device {}: cycles per sample must be >= 1", self.id)));
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::domain(format!("device {}: cpu range must satisfy 0 < min <= max", self.id)));
        }
        if !(self.mean_tau > 0.0) {
            return Err(Error::domain(format!("device {}: mean tau must be > 0", self.id)));
        }
        Ok(())
    }
}

/// Linear power gain `h²` of one uplink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub gain_sq: f64,
}

/// What a device reports to the base station at the start of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRound {
    pub id: DeviceId,
    pub cpu_freq_hz: f64,
    pub channel: ChannelState,
    pub tau: u32,
    pub tx_power_w: f64,
    pub cycles_per_sample: f64,
}

/// Per-round realisation of every device. `devices[i].id == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundContext {
    pub round: u32,
    pub devices: Vec<DeviceRound>,
}

impl RoundContext {
    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device(&self, id: DeviceId) -> &DeviceRound {
        &self.devices[id]
    }

    pub fn tau(&self, id: DeviceId) -> u32 {
        self.devices[id].tau
    }

    pub fn t_comp(&self, id: DeviceId, cfg: &SystemConfig) -> f64 {
        let d = &self.devices[id];
        comp_latency(d.tau, d.cycles_per_sample, cfg.batch_size, d.cpu_freq_hz)
    }

    /// `p·h²/N₀` in Hz: the SNR numerator that, divided by bandwidth, gives SNR.
    pub fn snr_hz(&self, id: DeviceId, cfg: &SystemConfig) -> f64 {
        let d = &self.devices[id];
        d.tx_power_w * d.channel.gain_sq / cfg.noise_psd_w_per_hz
    }

    pub fn all_ids(&self) -> Vec<DeviceId> {
        (0..self.devices.len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauSampling {
    /// `max(1, round(x))`, `x ~ Exp(mean = mean_tau)`, resampled every round.
    #[default]
    Exponential,
    /// Always `max(1, round(mean_tau))`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub total_bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub model_bits: f64,
    pub t_thr_s: f64,
    pub batch_size: usize,
    pub pathloss_exponent: f64,
    pub ref_gain: f64,
    /// Log-normal shadowing standard deviation in dB; `None` disables fading.
    pub fading_sigma_db: Option<f64>,
    pub tau_sampling: TauSampling,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 10e6,
            noise_psd_w_per_hz: dbm_per_mhz_to_w_per_hz(-114.0),
            model_bits: 1e7,
            t_thr_s: 1.0,
            batch_size: 40,
            pathloss_exponent: DEFAULT_PATHLOSS_EXPONENT,
            ref_gain: db_to_linear(DEFAULT_REF_GAIN_DB),
            fading_sigma_db: None,
            tau_sampling: TauSampling::Exponential,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_bandwidth_hz", self.total_bandwidth_hz),
            ("noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("model_bits", self.model_bits),
            ("t_thr_s", self.t_thr_s),
            ("ref_gain", self.ref_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1"));
        }
        if !(self.pathloss_exponent >= 2.0) {
            return Err(Error::domain("pathloss_exponent must be >= 2"));
        }
        if let Some(s) = self.fading_sigma_db {
            if !(s >= 0.0) {
                return Err(Error::domain("fading_sigma_db must be >= 0"));
            }
        }
        Ok(())
    }
}

pub fn path_loss_gain(distance_m: f64, exponent: f64, ref_gain: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::domain(format!("distance must be > 0, got {distance_m}")));
    }
    Ok(ref_gain * distance_m.powf(-exponent))
}

/// Shannon rate `b·log2(1 + p·h²/(b·N₀))`. Zero bandwidth gives zero rate.
pub fn uplink_rate(bandwidth_hz: f64, tx_power_w: f64, gain_sq: f64, noise_psd: f64) -> f64 {
    if bandwidth_hz <= 0.0 {
        return 0.0;
    }
    let snr = tx_power_w * gain_sq / (bandwidth_hz * noise_psd);
    bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
}

pub fn comp_latency(tau: u32, cycles_per_sample: f64, batch_size: usize, cpu_freq_hz: f64) -> f64 {
    f64::from(tau) * cycles_per_sample * batch_size as f64 / cpu_freq_hz
}

/// `S / u`; a non-positive rate yields `f64::INFINITY`.
pub fn comm_latency(model_bits: f64, rate_bps: f64) -> f64 {
    if rate_bps <= 0.0 {
        f64::INFINITY
    } else {
        model_bits / rate_bps
    }
}

/// Total latency of one device given its bandwidth slice.
pub fn device_latency(id: DeviceId, bandwidth_hz: f64, ctx: &RoundContext, cfg: &SystemConfig) -> f64 {
    let d = ctx.device(id);
    let rate = uplink_rate(bandwidth_hz, d.tx_power_w, d.channel.gain_sq, cfg.noise_psd_w_per_hz);
    ctx.t_comp(id, cfg) + comm_latency(cfg.model_bits, rate)
}

/// Round latency of a bandwidth assignment: the slowest selected device.
pub fn round_latency(allocation: &[(DeviceId, f64)], ctx: &RoundContext, cfg: &SystemConfig) -> Result<f64> {
    if allocation.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(allocation
        .iter()
        .map(|&(id, b)| device_latency(id, b, ctx, cfg))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Integerise a continuous iteration count: `max(1, round(x))`.
pub fn integerize_tau(x: f64) -> u32 {
    let r = x.round();
    if r.is_nan() || r < 1.0 {
        1
    } else if r >= f64::from(u32::MAX) {
        u32::MAX
    } else {
        r as u32
    }
}

pub fn sample_local_iterations<R: Rng + ?Sized>(mean_tau: f64, rng: &mut R) -> u32 {
    let exp = Exp::new(1.0 / mean_tau).expect("mean_tau must be > 0");
    integerize_tau(exp.sample(rng))
}

/// Draws round `round` for every profile. Each quantity comes from its own
/// `(stream, round, device)` generator, so contexts are reproducible per round.
pub fn sample_round_context(
    profiles: &[DeviceProfile],
    cfg: &SystemConfig,
    round: u32,
    seed: u64,
) -> Result<RoundContext> {
    if profiles.is_empty() {
        return Err(Error::invalid("no device profiles"));
    }
    let r = u64::from(round);
    let devices = profiles
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            if p.id != idx {
                return Err(Error::invalid(format!("profile at index {idx} has id {}", p.id)));
            }
            let dev = idx as u64;
            let (lo, hi) = p.cpu_freq_range_hz;
            let cpu_freq_hz = if hi > lo {
                stream(seed, Stream::Cpu, r, dev).random_range(lo..=hi)
            } else {
                lo
            };
            let mut gain_sq = path_loss_gain(p.distance_m, cfg.pathloss_exponent, cfg.ref_gain)?;
            if let Some(sigma_db) = cfg.fading_sigma_db {
                let z: f64 = StandardNormal.sample(&mut stream(seed, Stream::Channel, r, dev));
                gain_sq *= db_to_linear(sigma_db * z);
            }
            let tau = match cfg.tau_sampling {
                TauSampling::Exponential => sample_local_iterations(p.mean_tau, &mut stream(seed, Stream::Tau, r, dev)),
                TauSampling::Fixed => integerize_tau(p.mean_tau),
            };
            Ok(DeviceRound {
                id: idx,
                cpu_freq_hz,
                channel: ChannelState { gain_sq },
                tau,
                tx_power_w: p.tx_power_w,
                cycles_per_sample: p.cycles_per_sample,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RoundContext { round, devices })
}

/// Population description used to draw device profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub num_devices: usize,
    pub distance_range_m: (f64, f64),
    pub tx_power_w: f64,
    pub cpu_freq_range_hz: (f64, f64),
    pub cycles_per_sample: f64,
    pub mean_tau: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            num_devices: 40,
            distance_range_m: (100.0, 500.0),
            tx_power_w: dbm_to_watts(20.0),
            cpu_freq_range_hz: (2e9, 4e9),
            cycles_per_sample: 110.0,
            mean_tau: 5.0,
        }
    }
}

/// Devices placed uniformly at random in the distance annulus.
pub fn generate_population(spec: &PopulationSpec, seed: u64) -> Result<Vec<DeviceProfile>> {
    if spec.num_devices == 0 {
        return Err(Error::invalid("population must contain at least one device"));
    }
    let (dlo, dhi) = spec.distance_range_m;
    if !(dlo > 0.0 && dlo <= dhi) {
        return Err(Error::domain("distance range must satisfy 0 < min <= max"));
    }
    let mut rng = stream(seed, Stream::Population, 0, 0);
    (0..spec.num_devices)
        .map(|id| {
            let distance_m = if dhi > dlo { rng.random_range(dlo..=dhi) } else { dlo };
            let p = DeviceProfile {
                id,
                distance_m,
                tx_power_w: spec.tx_power_w,
                cycles_per_sample: spec.cycles_per_sample,
                cpu_freq_range_hz: spec.cpu_freq_range_hz,
                mean_tau: spec.mean_tau,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}
