//! Synthetic labelled data and per-device partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Row-major features with one integer label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u32>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes.max(1)) {
            return Err(Error::invalid(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Concatenation of several datasets with the same layout.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut out = Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            dim: first.dim,
            num_classes: first.num_classes,
        };
        for p in parts {
            if p.dim != out.dim {
                return Err(Error::DimensionMismatch {
                    expected: out.dim,
                    got: p.dim,
                });
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    pub train_samples: usize,
    pub test_samples: usize,
    pub features: usize,
    pub classes: usize,
    /// Standard deviation of the class centres.
    pub separation: f64,
    /// Within-class standard deviation.
    pub noise: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            train_samples: 10_000,
            test_samples: 2_000,
            features: 5,
            classes: 10,
            separation: 1.0,
            noise: 1.0,
        }
    }
}

/// Train and test sets drawn from the same mixture; classes are balanced.
pub fn gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.features == 0 || spec.classes == 0 || spec.train_samples == 0 || spec.test_samples == 0 {
        return Err(Error::invalid("mixture needs features, classes and samples"));
    }
    let mut rng = stream(seed, Stream::Data, 0, 0);
    let centres: Vec<f64> = (0..spec.features * spec.classes)
        .map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let draw = |n: usize, part: u64| {
        let mut rng = stream(seed, Stream::Data, part, 0);
        let mut features = Vec::with_capacity(n * spec.features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            labels.push(c as u32);
            for j in 0..spec.features {
                let z: f64 = rng.sample(StandardNormal);
                features.push(centres[c * spec.features + j] + spec.noise * z);
            }
        }
        Dataset::new(features, labels, spec.features, spec.classes)
    };
    Ok((draw(spec.train_samples, 1)?, draw(spec.test_samples, 2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionMode {
    /// Shuffle, then equal contiguous split.
    Iid,
    /// Sort by label, cut into `devices·shards_per_device` contiguous
    /// shards, deal the shards out at random.
    LabelSorted { shards_per_device: usize },
}

/// Splits sample indices `0..n` between `k` devices. Sizes differ by at
/// most one sample (per shard for the label-sorted mode).
pub fn partition_indices(labels: &[u32], k: usize, mode: PartitionMode, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k == 0 {
        return Err(Error::invalid("need at least one device"));
    }
    let mut rng = stream(seed, Stream::Partition, 0, 0);
    match mode {
        PartitionMode::Iid => {
            if k > n {
                return Err(Error::invalid(format!("{k} devices but only {n} samples")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            Ok(split_even(&idx, k))
        }
        PartitionMode::LabelSorted { shards_per_device } => {
            let shards = k * shards_per_device.max(1);
            if shards > n {
                return Err(Error::invalid(format!("{shards} shards but only {n} samples")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| labels[i]);
            let pieces = split_even(&idx, shards);
            let mut order: Vec<usize> = (0..shards).collect();
            order.shuffle(&mut rng);
            let per = shards / k;
            Ok((0..k)
                .map(|d| {
                    let mut mine: Vec<usize> = order[d * per..(d + 1) * per]
                        .iter()
                        .flat_map(|&s| pieces[s].iter().copied())
                        .collect();
                    mine.sort_unstable();
                    mine
                })
                .collect())
        }
    }
}

fn split_even(idx: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let n = idx.len();
    let (base, extra) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[at..at + len].to_vec());
        at += len;
    }
    out
}

pub fn partition_dataset(data: &Dataset, k: usize, mode: PartitionMode, seed: u64) -> Result<Vec<Dataset>> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(partition_indices(&data.labels, k, mode, seed)?
        .iter()
        .map(|idx| data.select(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(labels: Vec<u32>, classes: usize) -> Dataset {
        let n = labels.len();
        Dataset::new((0..n).map(|i| i as f64).collect(), labels, 1, classes).unwrap()
    }

    #[test]
    fn two_devices_get_one_label_each() {
        let d = labelled(vec![1, 0, 1, 0], 2);
        for seed in 0..20 {
            let parts = partition_dataset(&d, 2, PartitionMode::LabelSorted { shards_per_device: 1 }, seed).unwrap();
            for p in &parts {
                assert_eq!(p.len(), 2);
                assert!(p.labels.iter().all(|&l| l == p.labels[0]));
            }
        }
    }

    #[test]
    fn single_device_is_identity() {
        let d = labelled(vec![2, 0, 1, 1, 0], 3);
        for mode in [PartitionMode::Iid, PartitionMode::LabelSorted { shards_per_device: 1 }] {
            let parts = partition_dataset(&d, 1, mode, 3).unwrap();
            let mut got = parts[0].features.clone();
            got.sort_by(f64::total_cmp);
            assert_eq!(got, d.features);
        }
    }

    #[test]
    fn iid_histograms_track_global() {
        let (train, _) = gaussian_mixture(
            &MixtureSpec {
                train_samples: 10_000,
                test_samples: 10,
                classes: 4,
                ..MixtureSpec::default()
            },
            9,
        )
        .unwrap();
        let global = train.label_histogram();
        for p in partition_dataset(&train, 4, PartitionMode::Iid, 1).unwrap() {
            for (c, &cnt) in p.label_histogram().iter().enumerate() {
                let share = cnt as f64 / p.len() as f64;
                let expect = global[c] as f64 / train.len() as f64;
                assert!((share - expect).abs() <= 0.1 * expect);
            }
        }
    }

    #[test]
    fn partitions_cover_every_sample_once() {
        let labels: Vec<u32> = (0..103).map(|i| (i * 7 % 10) as u32).collect();
        for mode in [PartitionMode::Iid, PartitionMode::LabelSorted { shards_per_device: 2 }] {
            let parts = partition_indices(&labels, 10, mode, 4).unwrap();
            let mut all: Vec<usize> = parts.concat();
            all.sort_unstable();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
        }
        assert!(partition_indices(&labels, 200, PartitionMode::Iid, 0).is_err());
    }

    #[test]
    fn mixture_is_reproducible_and_balanced() {
        let spec = MixtureSpec::default();
        let (a, ta) = gaussian_mixture(&spec, 5).unwrap();
        let (b, _) = gaussian_mixture(&spec, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10_000);
        assert_eq!(ta.len(), 2_000);
        assert!(a.label_histogram().iter().all(|&c| c == 1_000));
    }
}
