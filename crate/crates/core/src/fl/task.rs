//! Learning tasks with analytic gradients.
//!
//! Losses and gradients are means over the given sample indices and are
//! accumulated in index order, so results depend only on the batch.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::rng::{stream, Stream};

pub trait Task: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> f64;
    /// Writes the mean gradient over `batch` into `out`.
    fn grad(&self, w: &[f64], data: &Dataset, batch: &[usize], out: &mut [f64]);
    /// Classification accuracy; `None` for tasks without classes.
    fn accuracy(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Option<f64>;
    fn init(&self, seed: u64) -> Vec<f64>;
    /// Known smoothness constant, if the task has one in closed form.
    fn smoothness(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    Mlp { hidden: usize },
}

impl TaskKind {
    pub fn build(self, features: usize, classes: usize) -> Box<dyn Task> {
        match self {
            TaskKind::Quadratic => Box::new(Quadratic { dim: features }),
            TaskKind::Logistic => Box::new(Logistic { features, classes }),
            TaskKind::Mlp { hidden } => Box::new(Mlp {
                features,
                hidden,
                classes,
            }),
        }
    }
}

/// `½‖w − x‖²` per sample; the model lives in feature space.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub dim: usize,
}

impl Task for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> f64 {
        let s: f64 = batch
            .iter()
            .map(|&i| 0.5 * w.iter().zip(data.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        s / batch.len() as f64
    }

    fn grad(&self, w: &[f64], data: &Dataset, batch: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for &i in batch {
            for ((g, a), b) in out.iter_mut().zip(w).zip(data.row(i)) {
                *g += a - b;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|g| *g *= inv);
    }

    fn accuracy(&self, _: &[f64], _: &Dataset, _: &[usize]) -> Option<f64> {
        None
    }

    fn init(&self, _: u64) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn smoothness(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Softmax regression. Layout: `classes × features` weights, then biases.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub features: usize,
    pub classes: usize,
}

/// In-place softmax; returns `log Σ exp`.
fn softmax(z: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
    m + s.ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

impl Logistic {
    fn logits(&self, w: &[f64], x: &[f64], z: &mut [f64]) {
        let bias = &w[self.classes * self.features..];
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w[c * self.features..(c + 1) * self.features];
            *zc = bias[c] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Task for Logistic {
    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> f64 {
        let mut z = vec![0.0; self.classes];
        let mut s = 0.0;
        for &i in batch {
            self.logits(w, data.row(i), &mut z);
            let y = data.labels[i] as usize;
            let zy = z[y];
            s += softmax(&mut z) - zy;
        }
        s / batch.len() as f64
    }

    fn grad(&self, w: &[f64], data: &Dataset, batch: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; self.classes];
        let nb = self.classes * self.features;
        for &i in batch {
            let x = data.row(i);
            self.logits(w, x, &mut z);
            softmax(&mut z);
            z[data.labels[i] as usize] -= 1.0;
            for (c, &e) in z.iter().enumerate() {
                let g = &mut out[c * self.features..(c + 1) * self.features];
                for (gj, xj) in g.iter_mut().zip(x) {
                    *gj += e * xj;
                }
                out[nb + c] += e;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|g| *g *= inv);
    }

    fn accuracy(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Option<f64> {
        let mut z = vec![0.0; self.classes];
        let hits = batch
            .iter()
            .filter(|&&i| {
                self.logits(w, data.row(i), &mut z);
                argmax(&z) == data.labels[i] as usize
            })
            .count();
        Some(hits as f64 / batch.len() as f64)
    }

    fn init(&self, _: u64) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// One tanh hidden layer followed by softmax.
/// Layout: `W1 (hidden × features)`, `b1`, `W2 (classes × hidden)`, `b2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.features;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, w: &[f64], x: &[f64], h: &mut [f64], z: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        for (k, hk) in h.iter_mut().enumerate() {
            let row = &w[k * self.features..(k + 1) * self.features];
            *hk = (w[b1 + k] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &w[w2 + c * self.hidden..w2 + (c + 1) * self.hidden];
            *zc = w[b2 + c] + row.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Task for Mlp {
    fn dim(&self) -> usize {
        let (_, _, b2) = self.offsets();
        b2 + self.classes
    }

    fn loss(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let mut s = 0.0;
        for &i in batch {
            self.forward(w, data.row(i), &mut h, &mut z);
            let zy = z[data.labels[i] as usize];
            s += softmax(&mut z) - zy;
        }
        s / batch.len() as f64
    }

    fn grad(&self, w: &[f64], data: &Dataset, batch: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let (b1, w2, b2) = self.offsets();
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        for &i in batch {
            let x = data.row(i);
            self.forward(w, x, &mut h, &mut z);
            softmax(&mut z);
            z[data.labels[i] as usize] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, &e) in z.iter().enumerate() {
                out[b2 + c] += e;
                for k in 0..self.hidden {
                    out[w2 + c * self.hidden + k] += e * h[k];
                    dh[k] += e * w[w2 + c * self.hidden + k];
                }
            }
            for k in 0..self.hidden {
                let d = dh[k] * (1.0 - h[k] * h[k]);
                out[b1 + k] += d;
                for (j, xj) in x.iter().enumerate() {
                    out[k * self.features + j] += d * xj;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|g| *g *= inv);
    }

    fn accuracy(&self, w: &[f64], data: &Dataset, batch: &[usize]) -> Option<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let hits = batch
            .iter()
            .filter(|&&i| {
                self.forward(w, data.row(i), &mut h, &mut z);
                argmax(&z) == data.labels[i] as usize
            })
            .count();
        Some(hits as f64 / batch.len() as f64)
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, Stream::Init, 0, 0);
        let (b1, w2, b2) = self.offsets();
        let s1 = 1.0 / (self.features as f64).sqrt();
        let s2 = 1.0 / (self.hidden as f64).sqrt();
        (0..self.dim())
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                if j < b1 {
                    s1 * z
                } else if (w2..b2).contains(&j) {
                    s2 * z
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::data::{gaussian_mixture, MixtureSpec};

    fn small_data() -> Dataset {
        let spec = MixtureSpec {
            train_samples: 200,
            test_samples: 10,
            features: 4,
            classes: 3,
            ..MixtureSpec::default()
        };
        gaussian_mixture(&spec, 3).unwrap().0
    }

    fn check_gradient(task: &dyn Task, data: &Dataset) {
        let batch: Vec<usize> = (0..37).collect();
        let mut rng = stream(1, Stream::Diagnostics, 0, 0);
        let mut g = vec![0.0; task.dim()];
        for _ in 0..100 {
            let w: Vec<f64> = (0..task.dim()).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
            task.grad(&w, data, &batch, &mut g);
            let h = 1e-5;
            let fd: Vec<f64> = (0..task.dim())
                .map(|j| {
                    let (mut a, mut b) = (w.clone(), w.clone());
                    a[j] += h;
                    b[j] -= h;
                    (task.loss(&a, data, &batch) - task.loss(&b, data, &batch)) / (2.0 * h)
                })
                .collect();
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den < 1e-4, "relative gradient error {}", num / den);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = small_data();
        check_gradient(&Quadratic { dim: 4 }, &data);
        check_gradient(&Logistic { features: 4, classes: 3 }, &data);
        check_gradient(
            &Mlp {
                features: 4,
                hidden: 6,
                classes: 3,
            },
            &data,
        );
    }

    #[test]
    fn batch_gradients_average_to_full_gradient() {
        let data = small_data();
        let task = Logistic { features: 4, classes: 3 };
        let w = vec![0.1; task.dim()];
        let mut full = vec![0.0; task.dim()];
        task.grad(&w, &data, &data.all_indices(), &mut full);
        let mut mean = vec![0.0; task.dim()];
        let mut g = vec![0.0; task.dim()];
        for chunk in data.all_indices().chunks(40) {
            task.grad(&w, &data, chunk, &mut g);
            for (m, v) in mean.iter_mut().zip(&g) {
                *m += v / 5.0;
            }
        }
        for (a, b) in mean.iter().zip(&full) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn separable_fit_is_perfect_and_random_is_chance() {
        // two well separated 1-D clusters
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { -5.0 } else { 5.0 }).collect();
        let ys: Vec<u32> = (0..100).map(|i| (i % 2) as u32).collect();
        let data = Dataset::new(xs, ys, 1, 2).unwrap();
        let task = Logistic { features: 1, classes: 2 };
        let w = vec![-1.0, 1.0, 0.0, 0.0];
        assert_eq!(task.accuracy(&w, &data, &data.all_indices()), Some(1.0));

        let spec = MixtureSpec {
            train_samples: 4_000,
            test_samples: 10,
            features: 4,
            classes: 2,
            ..MixtureSpec::default()
        };
        let (big, _) = gaussian_mixture(&spec, 8).unwrap();
        let task = Logistic { features: 4, classes: 2 };
        let mut rng = stream(2, Stream::Diagnostics, 0, 0);
        let mut total = 0.0;
        for _ in 0..400 {
            let w: Vec<f64> = (0..task.dim()).map(|_| rng.sample(StandardNormal)).collect();
            total += task.accuracy(&w, &big, &big.all_indices()).unwrap();
        }
        assert!((total / 400.0 - 0.5).abs() < 0.05);
        assert_eq!(Quadratic { dim: 4 }.accuracy(&[0.0; 4], &big, &[0]), None);
    }
}
