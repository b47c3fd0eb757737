//! Synthetic heterogeneous federations.
//!
//! Base data are Gaussian class blobs around centred simplex vertices. Two
//! federation builders sit on top: a Dirichlet label-skew partition of one
//! base set, and a cluster generator whose clusters differ only by a feature
//! scale factor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::data::{ClientBundle, DataSet, Federation};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::sampling::{shuffle, Gaussian};

/// Distance between every pair of class means of the base blobs.
pub const DEFAULT_CLASS_SEPARATION: f64 = 4.0;

/// Attempts before [`dirichlet_partition`] gives up on `min_per_client`.
pub const PARTITION_RETRIES: usize = 200;

/// Class means: centred vertices of a regular simplex with pairwise distance
/// `separation` when there are enough features, otherwise evenly spaced
/// points on the first axis.
pub fn class_means(num_classes: usize, num_features: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; num_features]; num_classes];
    if num_classes == 1 {
        return means;
    }
    if num_features >= num_classes {
        let s = separation / libm::sqrt(2.0);
        let centre = s / num_classes as f64;
        for (c, m) in means.iter_mut().enumerate() {
            for (j, v) in m.iter_mut().take(num_classes).enumerate() {
                *v = if j == c { s - centre } else { -centre };
            }
        }
    } else {
        let mid = (num_classes - 1) as f64 / 2.0;
        for (c, m) in means.iter_mut().enumerate() {
            m[0] = separation * (c as f64 - mid);
        }
    }
    means
}

/// Balanced Gaussian class blobs with unit covariance.
pub fn make_base_dataset(num_classes: usize, num_features: usize, num_examples: usize, seed: u64) -> Result<DataSet> {
    make_blobs(num_classes, num_features, num_examples, DEFAULT_CLASS_SEPARATION, seed)
}

pub fn make_blobs(
    num_classes: usize,
    num_features: usize,
    num_examples: usize,
    separation: f64,
    seed: u64,
) -> Result<DataSet> {
    if num_classes == 0 || num_features == 0 || num_examples == 0 {
        return Err(Error::InvalidConfig("blob counts must be at least 1".into()));
    }
    let means = class_means(num_classes, num_features, separation);
    let mut rng = rng_for(seed, "blobs", &[]);
    let mut labels: Vec<usize> = (0..num_examples).map(|i| i % num_classes).collect();
    shuffle(&mut labels, &mut rng);
    let mut gauss = Gaussian::new();
    let mut features = Vec::with_capacity(num_examples * num_features);
    for &y in &labels {
        for m in &means[y] {
            features.push(m + gauss.sample(&mut rng));
        }
    }
    DataSet::new(features, labels, num_features, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n: usize,
    pub alpha: f64,
    pub min_per_client: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("partition.n must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "partition.alpha must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Draws a point of the probability simplex from `Dir(alpha * 1_n)` by
/// normalizing independent `Gamma(alpha, 1)` draws.
pub fn dirichlet<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 && s.is_finite() {
        for v in &mut g {
            *v /= s;
        }
    } else {
        // Every draw underflowed (tiny alpha): the limit is a vertex.
        let k = rng.random_range(0..n);
        g.iter_mut().enumerate().for_each(|(i, v)| *v = (i == k) as u8 as f64);
    }
    g
}

/// Dirichlet label-skew partition of `base` into `spec.n` client sets.
///
/// For each class, shares `p ~ Dir(alpha)` split the (shuffled) examples of
/// that class by rounded cumulative shares. Partitions leaving a client with
/// fewer than `min_per_client` examples are redrawn. Each client's rows keep
/// their base order.
pub fn dirichlet_partition(base: &DataSet, spec: &PartitionSpec) -> Result<Vec<DataSet>> {
    spec.validate()?;
    if base.len() < spec.n * spec.min_per_client {
        return Err(Error::InvalidConfig(format!(
            "base set of {} examples cannot give {} clients {} examples each",
            base.len(),
            spec.n,
            spec.min_per_client
        )));
    }
    let mut by_class = vec![Vec::new(); base.num_classes()];
    for i in 0..base.len() {
        by_class[base.label(i)].push(i);
    }
    let mut rng = rng_for(spec.seed, "dirichlet-partition", &[]);
    for _ in 0..PARTITION_RETRIES {
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); spec.n];
        for members in &by_class {
            let mut members = members.clone();
            shuffle(&mut members, &mut rng);
            let p = dirichlet(spec.n, spec.alpha, &mut rng);
            let m = members.len() as f64;
            let mut cum = 0.0;
            let mut start = 0usize;
            for (k, pk) in p.iter().enumerate() {
                cum += pk;
                let end = if k + 1 == spec.n {
                    members.len()
                } else {
                    (libm::round(cum * m) as usize).clamp(start, members.len())
                };
                assigned[k].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if assigned.iter().all(|a| a.len() >= spec.min_per_client.max(1)) {
            return Ok(assigned
                .into_iter()
                .map(|mut idx| {
                    idx.sort_unstable();
                    base.subset(&idx)
                })
                .collect());
        }
    }
    Err(Error::RetriesExhausted(PARTITION_RETRIES))
}

/// Train/valid/test fractions of each client's data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatio {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|p| p.is_nan() || *p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        if self.train <= 0.0 || self.valid <= 0.0 {
            return Err(Error::InvalidConfig("train and valid ratios must be positive".into()));
        }
        Ok(())
    }
}

/// Splits one client's data, stratified by label: within each class the
/// shuffled examples go `round(n_c * train)` to train, `round(n_c * valid)` to
/// valid and the rest to test. A client ending with no validation example
/// gets one moved from its training split.
pub fn stratified_split(data: &DataSet, ratio: &SplitRatio, seed: u64) -> Result<(DataSet, DataSet, DataSet)> {
    ratio.validate()?;
    if data.len() < 2 {
        return Err(Error::InvalidDataset(
            "a client needs at least two examples to split".into(),
        ));
    }
    let mut rng = rng_for(seed, "split", &[]);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for i in 0..data.len() {
        by_class[data.label(i)].push(i);
    }
    for mut members in by_class {
        shuffle(&mut members, &mut rng);
        let n = members.len() as f64;
        let n_train = (libm::round(n * ratio.train) as usize).min(members.len());
        let n_valid = (libm::round(n * ratio.valid) as usize).min(members.len() - n_train);
        parts[0].extend_from_slice(&members[..n_train]);
        parts[1].extend_from_slice(&members[n_train..n_train + n_valid]);
        parts[2].extend_from_slice(&members[n_train + n_valid..]);
    }
    if parts[1].is_empty() {
        let donor = if parts[0].len() > 1 { 0 } else { 2 };
        parts[donor].sort_unstable();
        let moved = parts[donor].pop().ok_or(Error::EmptyDataset)?;
        parts[1].push(moved);
    }
    if parts[0].is_empty() {
        let moved = parts[2].pop().ok_or(Error::EmptyDataset)?;
        parts[0].push(moved);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((data.subset(&parts[0]), data.subset(&parts[1]), data.subset(&parts[2])))
}

/// Builds a federation from per-client data by splitting each client.
pub fn federation_from_partition(parts: &[DataSet], ratio: &SplitRatio, seed: u64) -> Result<Federation> {
    let clients = parts
        .iter()
        .enumerate()
        .map(|(id, d)| {
            let (train, valid, test) = stratified_split(d, ratio, derive_seed(seed, "client-split", &[id as u64]))?;
            Ok(ClientBundle {
                id,
                train,
                valid,
                test,
                encoding: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Federation::new(clients)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletSpec {
    pub num_classes: usize,
    pub num_features: usize,
    pub num_examples: usize,
    pub class_separation: f64,
    pub partition: PartitionSpec,
    pub split: SplitRatio,
    pub seed: u64,
}

/// Base blobs partitioned by [`dirichlet_partition`], then split per client.
pub fn make_dirichlet_federation(spec: &DirichletSpec) -> Result<Federation> {
    let base = make_blobs(
        spec.num_classes,
        spec.num_features,
        spec.num_examples,
        spec.class_separation,
        derive_seed(spec.seed, "base", &[]),
    )?;
    let parts = dirichlet_partition(&base, &spec.partition)?;
    federation_from_partition(&parts, &spec.split, derive_seed(spec.seed, "splits", &[]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub num_clusters: usize,
    pub clients_per_cluster: usize,
    /// One positive scale per cluster.
    pub feature_scales: Vec<f64>,
    pub num_features: usize,
    pub num_classes: usize,
    pub examples_per_client: usize,
    pub class_separation: f64,
    pub split: SplitRatio,
    pub seed: u64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.clients_per_cluster == 0 {
            return Err(Error::InvalidConfig("cluster counts must be at least 1".into()));
        }
        if self.feature_scales.len() != self.num_clusters {
            return Err(Error::InvalidConfig(format!(
                "expected {} feature scales, got {}",
                self.num_clusters,
                self.feature_scales.len()
            )));
        }
        if let Some(s) = self.feature_scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "feature scales must be positive, got {s}"
            )));
        }
        self.split.validate()
    }
}

/// Clients grouped into clusters; cluster `k`'s data are base blobs with every
/// feature multiplied by `feature_scales[k]`. Client ids run cluster by
/// cluster. Returns the federation and each client's cluster.
pub fn make_cluster_federation(spec: &ClusterSpec) -> Result<(Federation, Vec<usize>)> {
    spec.validate()?;
    let mut clients = Vec::new();
    let mut cluster_of = Vec::new();
    for (k, &scale) in spec.feature_scales.iter().enumerate() {
        for _ in 0..spec.clients_per_cluster {
            let id = clients.len();
            let data = make_blobs(
                spec.num_classes,
                spec.num_features,
                spec.examples_per_client,
                spec.class_separation,
                derive_seed(spec.seed, "client-data", &[id as u64]),
            )?
            .scaled(scale);
            let (train, valid, test) =
                stratified_split(&data, &spec.split, derive_seed(spec.seed, "client-split", &[id as u64]))?;
            clients.push(ClientBundle {
                id,
                train,
                valid,
                test,
                encoding: Vec::new(),
            });
            cluster_of.push(k);
        }
    }
    Ok((Federation::new(clients)?, cluster_of))
}
