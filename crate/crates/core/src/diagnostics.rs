//! Convergence bound quantities and empirical estimates of the constants
//! they depend on.
//!
//! The estimates come from finitely many probes, so they are lower bounds
//! on the true worst-case constants.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::{Dataset, MinibatchSampler, Task};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Smoothness.
    pub l: f64,
    /// Minibatch gradient variance.
    pub sigma2: f64,
    /// Largest squared local gradient norm seen.
    pub g: f64,
    /// Dissimilarity offset: `‖∇fᵢ‖² ≤ G² + H²‖∇F‖²`.
    pub g2: f64,
    /// Dissimilarity slope, at least 1.
    pub h2: f64,
    pub rho: f64,
    pub q: f64,
    /// Largest `τ̄/τᵢ` over the run.
    pub kappa: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            l: 0.0,
            sigma2: 0.0,
            g: 0.0,
            g2: 0.0,
            h2: 1.0,
            rho: 1.0,
            q: 0.5,
            kappa: 1.0,
        }
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn full_grad(task: &dyn Task, w: &[f64], data: &Dataset) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    task.grad(w, data, &data.all_indices(), &mut g);
    g
}

/// Probes `probes` random points around the task's initial model.
///
/// - `L̂`: largest gradient-difference ratio over nearby pairs, with the
///   pair direction refined by power iteration, across all devices.
/// - `σ̂²`: largest mean squared deviation of a size-`batch` minibatch
///   gradient from the full local gradient (8 draws per device and probe).
/// - `ĝ`: largest squared local gradient norm.
/// - `Ĝ²`, `Ĥ²`: least-squares line through `(‖∇F‖², maxᵢ‖∇fᵢ‖²)` with the
///   slope clamped to at least 1, then the offset raised until the line
///   covers every sample.
pub fn estimate_constants(
    task: &dyn Task,
    partitions: &[Dataset],
    probes: usize,
    batch: usize,
    seed: u64,
) -> Result<BoundConstants> {
    if probes < 10 {
        return Err(Error::domain(format!("need at least 10 probes, got {probes}")));
    }
    if partitions.is_empty() || partitions.iter().any(Dataset::is_empty) {
        return Err(Error::invalid("every device needs data"));
    }
    const DRAWS: u64 = 8;
    let dim = task.dim();
    let base = task.init(seed);
    let mut out = BoundConstants::default();
    let mut samples = Vec::with_capacity(probes);
    for p in 0..probes as u64 {
        let mut rng = stream(seed, Stream::Diagnostics, p, 0);
        let w: Vec<f64> = base.iter().map(|b| b + rng.sample::<f64, _>(StandardNormal)).collect();
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut global = vec![0.0; dim];
        let mut local_max: f64 = 0.0;
        for (i, data) in partitions.iter().enumerate() {
            let g1 = full_grad(task, &w, data);
            out.l = out.l.max(curvature(task, &w, &g1, data, dir.clone()));
            let n1 = sq_norm(&g1);
            local_max = local_max.max(n1);
            out.g = out.g.max(n1);
            for (a, v) in global.iter_mut().zip(&g1) {
                *a += v / partitions.len() as f64;
            }
            let mut sampler = MinibatchSampler::new(data.len(), batch, stream(seed, Stream::Diagnostics, p, 1 + i as u64));
            let mut var = 0.0;
            let mut gb = vec![0.0; dim];
            for _ in 0..DRAWS {
                let mut idx = sampler.next_batch().to_vec();
                idx.sort_unstable();
                task.grad(&w, data, &idx, &mut gb);
                var += sq_dist(&gb, &g1) / DRAWS as f64;
            }
            out.sigma2 = out.sigma2.max(var);
        }
        samples.push((sq_norm(&global), local_max));
    }

    if out.g == 0.0 {
        log::warn!("all probed gradients are zero; constant estimates are zero");
        return Ok(out);
    }
    let (h2, _) = least_squares_line(&samples);
    out.h2 = h2.max(1.0);
    out.g2 = samples.iter().map(|&(x, y)| y - out.h2 * x).fold(0.0, f64::max);
    out.rho = 1.0 / out.h2.sqrt();
    Ok(out)
}

/// Largest `‖∇f(w + h·v) − ∇f(w)‖ / ‖h·v‖` over a few power-iteration
/// steps that steer `v` toward the direction of strongest curvature.
fn curvature(task: &dyn Task, w: &[f64], grad_w: &[f64], data: &Dataset, mut v: Vec<f64>) -> f64 {
    const STEP: f64 = 1e-2;
    const ITERS: usize = 8;
    let mut best: f64 = 0.0;
    for _ in 0..ITERS {
        let norm = sq_norm(&v).sqrt();
        if !(norm > 0.0) {
            break;
        }
        let w2: Vec<f64> = w.iter().zip(&v).map(|(a, d)| a + STEP * d / norm).collect();
        let dist = sq_dist(w, &w2).sqrt();
        if dist == 0.0 {
            break;
        }
        let g2 = full_grad(task, &w2, data);
        let diff: Vec<f64> = g2.iter().zip(grad_w).map(|(a, b)| a - b).collect();
        best = best.max(sq_norm(&diff).sqrt() / dist);
        v = diff;
    }
    best
}

/// Slope and intercept of the ordinary least-squares fit `y = a·x + b`.
fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, my - a * mx)
}

/// `8·η_l²·τ̄²·(g + σ²)`.
pub fn local_drift_bound(eta_l: f64, tau_bar: u32, g: f64, sigma2: f64) -> f64 {
    let t = f64::from(tau_bar);
    8.0 * eta_l * eta_l * t * t * (g + sigma2)
}

/// One trial of the scaled-vs-reference trajectory comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseTrial {
    /// `‖w̃ − w‖²` at the end of both trajectories.
    pub sq_error: f64,
    /// Largest `‖∇f‖²` at any iterate either trajectory visited.
    pub g_hat: f64,
    /// Largest `‖g − ∇f‖²` over the minibatch gradients actually used.
    pub sigma2_hat: f64,
}

impl MseTrial {
    pub fn bound(&self, eta_l: f64, tau_bar: u32) -> f64 {
        local_drift_bound(eta_l, tau_bar, self.g_hat, self.sigma2_hat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSetup {
    pub eta_l: f64,
    pub tau_bar: u32,
    pub tau: u32,
    pub batch: usize,
    pub trials: u64,
    /// Both trajectories draw minibatches from the same stream.
    pub shared_stream: bool,
}

struct Path {
    w: Vec<f64>,
    g_hat: f64,
    sigma2_hat: f64,
}

fn trajectory(task: &dyn Task, data: &Dataset, start: &[f64], steps: u32, lr: f64, sampler: &mut MinibatchSampler) -> Result<Path> {
    let mut w = start.to_vec();
    let mut g = vec![0.0; w.len()];
    let (mut g_hat, mut sigma2_hat) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let full = full_grad(task, &w, data);
        let mut idx = sampler.next_batch().to_vec();
        idx.sort_unstable();
        task.grad(&w, data, &idx, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory gradient".into()));
        }
        g_hat = g_hat.max(sq_norm(&full));
        sigma2_hat = sigma2_hat.max(sq_dist(&g, &full));
        for (wj, gj) in w.iter_mut().zip(&g) {
            *wj -= lr * gj;
        }
    }
    Ok(Path { w, g_hat, sigma2_hat })
}

/// Runs `τ̄` steps at `η_l` and `τ` steps at `η_l·τ̄/τ` from `start` and
/// reports the squared distance between the end points, once per trial.
pub fn empirical_mse_pair(task: &dyn Task, data: &Dataset, start: &[f64], setup: &MseSetup, seed: u64) -> Result<Vec<MseTrial>> {
    if setup.tau == 0 || setup.tau_bar == 0 {
        return Err(Error::domain("iteration counts must be >= 1"));
    }
    if start.len() != task.dim() {
        return Err(Error::DimensionMismatch {
            expected: task.dim(),
            got: start.len(),
        });
    }
    let scaled_lr = setup.eta_l * (f64::from(setup.tau_bar) / f64::from(setup.tau));
    (0..setup.trials)
        .map(|t| {
            let other = if setup.shared_stream { 0 } else { 1 };
            let mut s_ref = MinibatchSampler::new(data.len(), setup.batch, stream(seed, Stream::Diagnostics, t, 0));
            let mut s_new = MinibatchSampler::new(data.len(), setup.batch, stream(seed, Stream::Diagnostics, t, other));
            let a = trajectory(task, data, start, setup.tau_bar, setup.eta_l, &mut s_ref)?;
            let b = trajectory(task, data, start, setup.tau, scaled_lr, &mut s_new)?;
            Ok(MseTrial {
                sq_error: sq_dist(&a.w, &b.w),
                g_hat: a.g_hat.max(b.g_hat),
                sigma2_hat: a.sigma2_hat.max(b.sigma2_hat),
            })
        })
        .collect()
}

/// `(φ₁, φ₂)` of the one-round progress bound for `m` selected devices with
/// iteration counts `taus`.
#[allow(clippy::too_many_arguments)]
pub fn round_progress_terms(
    l: f64,
    tau_bar: u32,
    eta_g: f64,
    eta_l: f64,
    g2: f64,
    sigma2: f64,
    m: usize,
    taus: &[u32],
) -> Result<(f64, f64)> {
    if taus.is_empty() || m == 0 {
        return Err(Error::EmptySelection);
    }
    if [l, eta_g, eta_l, g2, sigma2].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("bound inputs must be >= 0"));
    }
    if taus.contains(&0) {
        return Err(Error::domain("iteration counts must be >= 1"));
    }
    let t = f64::from(tau_bar);
    let m = m as f64;
    let inv_sum: f64 = taus.iter().map(|&x| 1.0 / f64::from(x)).sum();
    let phi1 = 1.2 * l * l * t.powi(3) * eta_g * eta_l.powi(3) * g2;
    let phi2 = (l * t * t * eta_g * eta_l * eta_l / 2.0) * (l * t * eta_l / m + eta_g / (m * m)) * sigma2 * inv_sum;
    Ok((phi1, phi2))
}

/// Upper bound on the average squared global gradient norm after `r`
/// rounds: an optimisation term decaying in `r` plus two floor terms.
#[allow(clippy::too_many_arguments)]
pub fn convergence_bound(c: &BoundConstants, f_gap: f64, r: u32, tau_bar: u32, eta_g: f64, eta_l: f64, m: usize, kappa: f64) -> Result<f64> {
    if !(c.q > 0.0 && c.q < 1.0) {
        return Err(Error::domain(format!("q must lie in (0, 1), got {}", c.q)));
    }
    if r == 0 || m == 0 || tau_bar == 0 {
        return Err(Error::domain("rounds, selected count and tau_bar must be >= 1"));
    }
    let t = f64::from(tau_bar);
    let decay = 2.0 * f_gap / (t * eta_g * eta_l * c.q * f64::from(r));
    let phi1 = 2.4 / c.q * c.l * c.l * t * t * eta_l * eta_l * c.g2;
    let phi2 = c.l * eta_l / c.q * (c.l * t * eta_l + kappa * eta_g / m as f64) * c.sigma2;
    Ok(decay + phi1 + phi2)
}

/// Largest `q` the bound admits: `1 − τ̄η_gη_l/ρ² − 2.4·H²L²τ̄²η_l²`.
pub fn q_upper_limit(c: &BoundConstants, tau_bar: u32, eta_g: f64, eta_l: f64) -> f64 {
    let t = f64::from(tau_bar);
    1.0 - t * eta_g * eta_l / (c.rho * c.rho) - 2.4 * c.h2 * c.l * c.l * t * t * eta_l * eta_l
}

/// Whether the configured `q` is admissible; logs a warning if not.
pub fn check_q(c: &BoundConstants, tau_bar: u32, eta_g: f64, eta_l: f64) -> bool {
    let limit = q_upper_limit(c, tau_bar, eta_g, eta_l);
    let ok = c.q > 0.0 && c.q < limit;
    if !ok {
        log::warn!("q = {} outside (0, {limit:.4}); the round bound does not apply", c.q);
    }
    ok
}

/// `1/√(τ̄·M·R) + 1/R`, order only.
pub fn asymptotic_rate(tau_bar: u32, m: usize, r: u32) -> f64 {
    let (t, m, r) = (f64::from(tau_bar), m as f64, f64::from(r));
    1.0 / (t * m * r).sqrt() + 1.0 / r
}

/// `max τ̄/τᵢ` over the given counts, never below 1.
pub fn kappa(tau_bar: u32, taus: &[u32]) -> Result<f64> {
    if taus.contains(&0) {
        return Err(Error::domain("iteration counts must be >= 1"));
    }
    Ok(taus
        .iter()
        .map(|&x| f64::from(tau_bar) / f64::from(x))
        .fold(1.0, f64::max))
}
