//! Round loop: sample the round, schedule, run scaled local SGD on the
//! selected devices, aggregate, evaluate.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::task::Task;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream, StreamRng};
use crate::schedule::{Policy, ScheduleDecision};
use crate::system::{sample_round_context, DeviceId, DeviceProfile, SystemConfig};

/// How the round's reference iteration count `τ̄` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauBarStrategy {
    /// Max over this round's selected devices.
    #[default]
    Max,
    /// Mean over this round's selected devices, rounded half up.
    Mean,
    /// `Max` from the first trained round, reused afterwards.
    FirstMax,
    /// `Mean` from the first trained round, reused afterwards.
    FirstMean,
    Fixed(u32),
    /// No scaling: every device uses the base learning rate.
    Off,
}

/// `τ̄` for the selected iteration counts. `Off` gives `None`. The `First*`
/// strategies return the memo and fail without one.
pub fn select_tau_bar(strategy: TauBarStrategy, taus: &[u32], first_round_memo: Option<u32>) -> Result<Option<u32>> {
    if taus.is_empty() {
        return Err(Error::EmptySelection);
    }
    let v = match strategy {
        TauBarStrategy::Max => *taus.iter().max().expect("non-empty"),
        TauBarStrategy::Mean => {
            let sum: u64 = taus.iter().map(|&t| u64::from(t)).sum();
            let n = taus.len() as u64;
            ((2 * sum + n) / (2 * n)).max(1) as u32
        }
        TauBarStrategy::FirstMax | TauBarStrategy::FirstMean => {
            first_round_memo.ok_or_else(|| Error::invalid("first-round reference not set yet"))?
        }
        TauBarStrategy::Fixed(v) => v.max(1),
        TauBarStrategy::Off => return Ok(None),
    };
    Ok(Some(v))
}

/// `η_l·τ̄/τᵢ`. Equal counts leave `η_l` bit-for-bit unchanged.
pub fn adjusted_lr(eta_l: f64, tau_bar: u32, tau_i: u32) -> f64 {
    eta_l * (f64::from(tau_bar) / f64::from(tau_i))
}

/// Shuffles once per pass over the data and hands out consecutive batches;
/// a short tail is dropped. A batch at least as large as the data is the
/// whole dataset in index order.
pub struct MinibatchSampler {
    perm: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: StreamRng,
}

impl MinibatchSampler {
    pub fn new(n: usize, batch: usize, mut rng: StreamRng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        if batch < n {
            perm.shuffle(&mut rng);
        }
        Self {
            perm,
            pos: 0,
            batch: batch.max(1),
            rng,
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        let n = self.perm.len();
        if self.batch >= n {
            return &self.perm;
        }
        if self.pos + self.batch > n {
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = &self.perm[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        b
    }
}

/// `tau` SGD steps from `w0` with step size `lr`; returns `w_final − w0`.
pub fn local_sgd(
    task: &dyn Task,
    w0: &[f64],
    data: &Dataset,
    tau: u32,
    lr: f64,
    sampler: &mut MinibatchSampler,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::invalid("device has no data"));
    }
    let mut w = w0.to_vec();
    let mut g = vec![0.0; w.len()];
    for _ in 0..tau {
        task.grad(&w, data, sampler.next_batch(), &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("local gradient".into()));
        }
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= lr * gj;
        }
    }
    Ok(w.iter().zip(w0).map(|(a, b)| a - b).collect())
}

/// `w + η_g·Σ cᵢ·Δᵢ`, summed in the given order.
pub fn aggregate(global: &[f64], updates: &[(f64, Vec<f64>)], eta_g: f64) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut acc = vec![0.0; global.len()];
    for (c, delta) in updates {
        if delta.len() != global.len() {
            return Err(Error::DimensionMismatch {
                expected: global.len(),
                got: delta.len(),
            });
        }
        for (a, d) in acc.iter_mut().zip(delta) {
            *a += d * c;
        }
    }
    let out: Vec<f64> = global.iter().zip(&acc).map(|(w, a)| w + eta_g * a).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("global model".into()));
    }
    Ok(out)
}

/// Mean loss and, for classifiers, accuracy over the whole dataset.
pub fn evaluate(task: &dyn Task, w: &[f64], data: &Dataset) -> (f64, Option<f64>) {
    let all = data.all_indices();
    (task.loss(w, data, &all), task.accuracy(w, data, &all))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationWeights {
    /// `1/M` for every selected device.
    #[default]
    Uniform,
    /// Proportional to local sample counts within the selected set.
    DataSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub eta_l: f64,
    pub eta_g: f64,
    pub rounds: u32,
    pub batch_size: usize,
    pub tau_bar: TauBarStrategy,
    pub policy: Policy,
    /// Objective weight `η_g/L` passed to the scheduler.
    pub gamma: f64,
    pub aggregation: AggregationWeights,
    /// Stop once the simulated clock would pass this many seconds.
    pub time_budget_s: Option<f64>,
    /// Smoothness estimate used only for the step-size warning.
    pub smoothness: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta_l: 0.05,
            eta_g: 1.0,
            rounds: 200,
            batch_size: 40,
            tau_bar: TauBarStrategy::Max,
            policy: Policy::Greedy,
            gamma: 1.0,
            aggregation: AggregationWeights::Uniform,
            time_budget_s: None,
            smoothness: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_l > 0.0) || !(self.eta_g > 0.0) {
            return Err(Error::domain("learning rates must be > 0"));
        }
        if self.rounds == 0 {
            return Err(Error::domain("rounds must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::domain("gamma must be >= 0"));
        }
        Ok(())
    }
}

/// Everything that stays fixed across rounds.
pub struct Federation {
    pub task: Box<dyn Task>,
    /// Indexed by device id.
    pub partitions: Vec<Dataset>,
    /// Union of all partitions; training loss is reported on it.
    pub train: Dataset,
    pub test: Dataset,
    pub profiles: Vec<DeviceProfile>,
    pub system: SystemConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub skipped: bool,
    pub selected: Vec<DeviceId>,
    /// Iteration counts of the selected devices, aligned with `selected`.
    pub taus: Vec<u32>,
    pub bandwidth_hz: Vec<f64>,
    pub tau_bar: Option<u32>,
    pub t_star_s: f64,
    pub objective: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Simulated clock after this round.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub initial_loss: f64,
    pub initial_accuracy: Option<f64>,
    pub records: Vec<RoundRecord>,
    pub model: Vec<f64>,
}

impl TrainingRun {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.train_loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map_or(self.initial_accuracy, |r| r.test_accuracy)
    }
}

fn check_step_size(cfg: &TrainingConfig, tau_bar: u32, warned: &mut bool) {
    if let Some(l) = cfg.smoothness {
        let limit = 0.58 / (l * f64::from(tau_bar));
        if !*warned && cfg.eta_l > limit {
            log::warn!(
                "eta_l = {} exceeds 0.58/(L*tau_bar) = {limit:.4e} (L = {l:.4}, tau_bar = {tau_bar}); the convergence bound does not apply",
                cfg.eta_l
            );
            *warned = true;
        }
    }
}

pub fn run_training(fed: &Federation, cfg: &TrainingConfig, seed: u64) -> Result<TrainingRun> {
    cfg.validate()?;
    fed.system.validate()?;
    if fed.partitions.len() != fed.profiles.len() {
        return Err(Error::DimensionMismatch {
            expected: fed.profiles.len(),
            got: fed.partitions.len(),
        });
    }
    let task = fed.task.as_ref();
    let mut w = task.init(seed);
    let initial_loss = evaluate(task, &w, &fed.train).0;
    let initial_accuracy = evaluate(task, &w, &fed.test).1;
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    let mut elapsed = 0.0;
    let mut memo: Option<u32> = None;
    let mut warned = false;
    let (mut loss, mut acc) = (initial_loss, initial_accuracy);

    for round in 1..=cfg.rounds {
        let ctx = sample_round_context(&fed.profiles, &fed.system, round, seed).map_err(|e| e.in_round(round))?;
        let decision: ScheduleDecision = cfg
            .policy
            .schedule(&ctx, &fed.system, cfg.gamma, seed)
            .map_err(|e| e.in_round(round))?;

        if !decision.feasible {
            let cost = fed.system.t_thr_s;
            if cfg.time_budget_s.is_some_and(|b| elapsed + cost > b) {
                break;
            }
            elapsed += cost;
            log::info!("round {round}: no feasible selection, skipped");
            records.push(RoundRecord {
                round,
                skipped: true,
                selected: Vec::new(),
                taus: Vec::new(),
                bandwidth_hz: Vec::new(),
                tau_bar: None,
                t_star_s: f64::INFINITY,
                objective: f64::INFINITY,
                train_loss: loss,
                test_accuracy: acc,
                elapsed_s: elapsed,
            });
            continue;
        }

        let cost = decision.t_star_s.min(fed.system.t_thr_s);
        if cfg.time_budget_s.is_some_and(|b| elapsed + cost > b) {
            break;
        }

        let taus: Vec<u32> = decision.selected.iter().map(|&id| ctx.tau(id)).collect();
        if memo.is_none() {
            memo = match cfg.tau_bar {
                TauBarStrategy::FirstMax => select_tau_bar(TauBarStrategy::Max, &taus, None)?,
                TauBarStrategy::FirstMean => select_tau_bar(TauBarStrategy::Mean, &taus, None)?,
                _ => None,
            };
        }
        let tau_bar = select_tau_bar(cfg.tau_bar, &taus, memo)?;
        if let Some(tb) = tau_bar {
            check_step_size(cfg, tb, &mut warned);
        }

        let total_samples: usize = decision.selected.iter().map(|&id| fed.partitions[id].len()).sum();
        let m = decision.selected.len() as f64;
        let updates: Vec<(f64, Vec<f64>)> = decision
            .selected
            .par_iter()
            .zip(taus.par_iter())
            .map(|(&id, &tau)| {
                let lr = tau_bar.map_or(cfg.eta_l, |tb| adjusted_lr(cfg.eta_l, tb, tau));
                let data = &fed.partitions[id];
                let rng = stream(seed, Stream::Sgd, u64::from(round), id as u64);
                let mut sampler = MinibatchSampler::new(data.len(), cfg.batch_size, rng);
                let delta = local_sgd(task, &w, data, tau, lr, &mut sampler)?;
                let c = match cfg.aggregation {
                    AggregationWeights::Uniform => 1.0 / m,
                    AggregationWeights::DataSize => data.len() as f64 / total_samples as f64,
                };
                Ok((c, delta))
            })
            .collect::<Result<_>>()
            .map_err(|e: Error| e.in_round(round))?;
        w = aggregate(&w, &updates, cfg.eta_g).map_err(|e| e.in_round(round))?;
        elapsed += cost;
        loss = evaluate(task, &w, &fed.train).0;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()).in_round(round));
        }
        acc = evaluate(task, &w, &fed.test).1;
        records.push(RoundRecord {
            round,
            skipped: false,
            bandwidth_hz: decision.bandwidth_hz.iter().map(|&(_, b)| b).collect(),
            selected: decision.selected,
            taus,
            tau_bar,
            t_star_s: decision.t_star_s,
            objective: decision.objective,
            train_loss: loss,
            test_accuracy: acc,
            elapsed_s: elapsed,
        });
    }
    Ok(TrainingRun {
        initial_loss,
        initial_accuracy,
        records,
        model: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::{gaussian_mixture, partition_dataset, MixtureSpec, PartitionMode};
    use crate::fl::task::{Logistic, Quadratic, TaskKind};
    use crate::system::{PopulationSpec, TauSampling};
    use approx::assert_relative_eq;

    #[test]
    fn tau_bar_examples() {
        let t = [3, 7, 5];
        assert_eq!(select_tau_bar(TauBarStrategy::Max, &t, None).unwrap(), Some(7));
        assert_eq!(select_tau_bar(TauBarStrategy::Mean, &t, None).unwrap(), Some(5));
        assert_eq!(select_tau_bar(TauBarStrategy::Mean, &[1, 2], None).unwrap(), Some(2));
        assert_eq!(select_tau_bar(TauBarStrategy::FirstMax, &[1], Some(7)).unwrap(), Some(7));
        assert!(select_tau_bar(TauBarStrategy::FirstMean, &t, None).is_err());
        assert_eq!(select_tau_bar(TauBarStrategy::Off, &t, None).unwrap(), None);
    }

    #[test]
    fn adjusted_lr_examples() {
        assert_relative_eq!(adjusted_lr(0.005, 12, 3), 0.02, max_relative = 1e-15);
        assert_eq!(adjusted_lr(0.005, 6, 6), 0.005);
        assert_eq!(adjusted_lr(0.01, 4, 8), 0.005);
    }

    #[test]
    fn aggregate_examples() {
        let w = [0.5, -1.0];
        let two = [(0.5, vec![1.0, 1.0]), (0.5, vec![3.0, 3.0])];
        assert_eq!(aggregate(&w, &two, 1.0).unwrap(), vec![2.5, 1.0]);
        assert_eq!(aggregate(&w, &[(1.0, vec![1.0, 2.0])], 2.0).unwrap(), vec![2.5, 3.0]);
        assert_eq!(aggregate(&w, &two, 0.0).unwrap(), w.to_vec());
        assert!(aggregate(&w, &[(1.0, vec![1.0])], 1.0).is_err());
    }

    #[test]
    fn aggregate_is_affine_in_each_update() {
        let w = [0.3, 0.1, -0.2];
        let a = vec![1.0, -2.0, 0.5];
        let b = vec![0.25, 0.5, 4.0];
        let base = aggregate(&w, &[(0.5, a.clone()), (0.5, b.clone())], 1.5).unwrap();
        let doubled = aggregate(&w, &[(0.5, a.iter().map(|v| 2.0 * v).collect()), (0.5, b.clone())], 1.5).unwrap();
        let zero = aggregate(&w, &[(0.5, vec![0.0; 3]), (0.5, b)], 1.5).unwrap();
        for j in 0..3 {
            assert_relative_eq!(doubled[j] - base[j], base[j] - zero[j], max_relative = 1e-12);
        }
    }

    fn origin_data() -> Dataset {
        Dataset::new(vec![0.0, 0.0], vec![0], 2, 1).unwrap()
    }

    #[test]
    fn quadratic_single_step() {
        let data = origin_data();
        let mut s = MinibatchSampler::new(1, 40, stream(0, Stream::Sgd, 0, 0));
        let d = local_sgd(&Quadratic { dim: 2 }, &[2.0, 0.0], &data, 1, 0.5, &mut s).unwrap();
        assert_eq!(d, vec![-1.0, 0.0]);
        let d = local_sgd(&Quadratic { dim: 2 }, &[2.0, 0.0], &data, 5, 0.0, &mut s).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn local_sgd_matches_straight_line_replay() {
        let spec = MixtureSpec {
            train_samples: 300,
            test_samples: 10,
            ..MixtureSpec::default()
        };
        let (data, _) = gaussian_mixture(&spec, 4).unwrap();
        let task = Logistic { features: 5, classes: 10 };
        let w0: Vec<f64> = (0..task.dim()).map(|j| 0.01 * j as f64).collect();
        let mut s = MinibatchSampler::new(data.len(), 40, stream(9, Stream::Sgd, 2, 3));
        let got = local_sgd(&task, &w0, &data, 17, 0.1, &mut s).unwrap();

        // replay: same permutation stream, explicit epochs, explicit steps
        let mut rng = stream(9, Stream::Sgd, 2, 3);
        let mut perm: Vec<usize> = (0..300).collect();
        perm.shuffle(&mut rng);
        let mut w = w0.clone();
        let mut pos = 0;
        for _ in 0..17 {
            if pos + 40 > 300 {
                perm.shuffle(&mut rng);
                pos = 0;
            }
            let mut g = vec![0.0; w.len()];
            task.grad(&w, &data, &perm[pos..pos + 40], &mut g);
            pos += 40;
            for j in 0..w.len() {
                w[j] -= 0.1 * g[j];
            }
        }
        let want: Vec<f64> = w.iter().zip(&w0).map(|(a, b)| a - b).collect();
        assert_eq!(got, want);
    }

    fn quadratic_federation(k: usize, mean_tau: f64) -> Federation {
        let spec = MixtureSpec {
            train_samples: 400,
            test_samples: 10,
            features: 3,
            classes: 4,
            ..MixtureSpec::default()
        };
        let (train, test) = gaussian_mixture(&spec, 1).unwrap();
        let partitions = partition_dataset(&train, k, PartitionMode::LabelSorted { shards_per_device: 1 }, 1).unwrap();
        let profiles = crate::system::generate_population(
            &PopulationSpec {
                num_devices: k,
                mean_tau,
                ..PopulationSpec::default()
            },
            1,
        )
        .unwrap();
        Federation {
            task: TaskKind::Quadratic.build(3, 4),
            train: Dataset::concat(&partitions).unwrap(),
            partitions,
            test,
            profiles,
            system: SystemConfig {
                tau_sampling: TauSampling::Exponential,
                ..SystemConfig::default()
            },
        }
    }

    #[test]
    fn zero_rate_keeps_loss_constant() {
        let fed = quadratic_federation(4, 3.0);
        let cfg = TrainingConfig {
            eta_l: 1e-300,
            rounds: 1,
            policy: Policy::Uniform { m: 2 },
            ..TrainingConfig::default()
        };
        let run = run_training(&fed, &cfg, 3).unwrap();
        assert_eq!(run.records[0].train_loss, run.initial_loss);
    }

    #[test]
    fn quadratic_loss_never_increases_with_small_steps() {
        // full batch, equal τ, every device selected: each round shrinks
        // the distance to the global minimiser by the same factor
        let mut fed = quadratic_federation(4, 3.0);
        fed.system.tau_sampling = TauSampling::Fixed;
        let cfg = TrainingConfig {
            eta_l: 0.02,
            rounds: 40,
            batch_size: 1000,
            policy: Policy::Uniform { m: 4 },
            ..TrainingConfig::default()
        };
        let run = run_training(&fed, &cfg, 5).unwrap();
        let mut prev = run.initial_loss;
        for r in &run.records {
            assert!(r.train_loss <= prev + 1e-12);
            prev = r.train_loss;
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let fed = quadratic_federation(6, 4.0);
        let cfg = TrainingConfig {
            rounds: 5,
            ..TrainingConfig::default()
        };
        let a = run_training(&fed, &cfg, 8).unwrap();
        let b = run_training(&fed, &cfg, 8).unwrap();
        assert_eq!(a, b);
    }
}
