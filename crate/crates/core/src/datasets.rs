//! Datasets, Dirichlet non-IID partitioning and empirical label distributions.
//!
//! Every distribution estimate in the crate identifies a data point with its
//! class label, so a [`LabelDistribution`] is a smoothed label histogram.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

use crate::rng::{rng_from, SimRng};

/// Maximum number of Dirichlet re-draws before a partition is declared infeasible.
pub const MAX_PARTITION_RETRIES: usize = 100;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{file} file: bad {field}: {detail}")]
    Format {
        file: &'static str,
        field: &'static str,
        detail: String,
    },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("partition infeasible: some client received no samples after {retries} draws")]
    PartitionInfeasible { retries: usize },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Dense row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(DatasetError::InvalidArgument(
                "feature_dim and num_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(DatasetError::InvalidArgument(format!(
                "{} feature values for {} rows of dimension {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DatasetError::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Gaussian-mixture stand-in for an image dataset: one unit-variance spherical
/// Gaussian per class. When `num_classes <= feature_dim` the class means sit on
/// scaled coordinate axes so every pair of means is exactly `class_separation`
/// apart; otherwise the means are random directions of norm
/// `class_separation / sqrt(2)`. Labels are exactly balanced (round robin) and
/// shuffled.
pub fn generate_synthetic(
    num_samples: usize,
    feature_dim: usize,
    num_classes: usize,
    class_separation: f64,
    rng_seed: u64,
) -> Result<Dataset> {
    if num_samples == 0 || feature_dim == 0 || num_classes == 0 {
        return Err(DatasetError::InvalidArgument(
            "num_samples, feature_dim and num_classes must be positive".into(),
        ));
    }
    if !(class_separation > 0.0) || !class_separation.is_finite() {
        return Err(DatasetError::InvalidArgument(
            "class_separation must be a positive finite number".into(),
        ));
    }
    let mut rng = rng_from(rng_seed, &[0x5157]);
    let radius = class_separation / std::f64::consts::SQRT_2;
    let mut means = vec![0.0; num_classes * feature_dim];
    if num_classes <= feature_dim {
        for c in 0..num_classes {
            means[c * feature_dim + c] = radius;
        }
    } else {
        for c in 0..num_classes {
            let dir: Vec<f64> = (0..feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (j, v) in dir.iter().enumerate() {
                means[c * feature_dim + j] = radius * v / norm;
            }
        }
    }

    let mut labels: Vec<usize> = (0..num_samples).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(num_samples * feature_dim);
    for &l in &labels {
        for j in 0..feature_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(means[l * feature_dim + j] + noise);
        }
    }
    Dataset::new(features, feature_dim, labels, num_classes)
}

fn read_u32_be(bytes: &[u8], offset: usize, file: &'static str, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Format {
            file,
            field,
            detail: format!("file truncated before byte {}", offset + 4),
        })
}

/// Parse an IDX image/label pair already held in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(images, 0, "images", "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatasetError::Format {
            file: "images",
            field: "magic",
            detail: format!("expected 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let n_images = read_u32_be(images, 4, "images", "count")? as usize;
    let rows = read_u32_be(images, 8, "images", "rows")? as usize;
    let cols = read_u32_be(images, 12, "images", "cols")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(DatasetError::Format {
            file: "images",
            field: "dims",
            detail: format!("{rows}x{cols} image has no pixels"),
        });
    }
    let pixels = &images[16..];
    if pixels.len() < n_images * dim {
        return Err(DatasetError::Format {
            file: "images",
            field: "pixels",
            detail: format!(
                "truncated: expected {} pixel bytes, found {}",
                n_images * dim,
                pixels.len()
            ),
        });
    }

    let magic = read_u32_be(labels, 0, "labels", "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatasetError::Format {
            file: "labels",
            field: "magic",
            detail: format!("expected 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let n_labels = read_u32_be(labels, 4, "labels", "count")? as usize;
    if n_labels != n_images {
        return Err(DatasetError::Format {
            file: "labels",
            field: "count",
            detail: format!("{n_labels} labels for {n_images} images"),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(DatasetError::Format {
            file: "labels",
            field: "labels",
            detail: format!(
                "truncated: expected {n_labels} label bytes, found {}",
                label_bytes.len()
            ),
        });
    }
    let labels: Vec<usize> = label_bytes[..n_labels].iter().map(|&b| b as usize).collect();
    if n_labels == 0 {
        return Err(DatasetError::Format {
            file: "labels",
            field: "count",
            detail: "dataset is empty".into(),
        });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let features = pixels[..n_images * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Dataset::new(features, dim, labels, num_classes)
}

/// Load an IDX image/label file pair (the MNIST container format).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| DatasetError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

/// Where client test sets are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestSampling {
    /// Each client's own Dirichlet-skewed samples are split train/test.
    #[default]
    Local,
    /// A uniform global hold-out pool is dealt to clients IID.
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub dirichlet_sigma: f64,
    pub train_fraction: f64,
    pub smoothing_eps: f64,
    pub rng_seed: u64,
    pub test_sampling: TestSampling,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            dirichlet_sigma: 5.0,
            train_fraction: 0.8,
            smoothing_eps: 0.5,
            rng_seed: 0,
            test_sampling: TestSampling::Local,
        }
    }
}

impl PartitionConfig {
    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(DatasetError::InvalidArgument("num_clients must be >= 1".into()));
        }
        if !(self.dirichlet_sigma > 0.0) || !self.dirichlet_sigma.is_finite() {
            return Err(DatasetError::InvalidArgument("dirichlet_sigma must be > 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DatasetError::InvalidArgument(
                "train_fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.smoothing_eps >= 0.0) {
            return Err(DatasetError::InvalidArgument("smoothing_eps must be >= 0".into()));
        }
        Ok(())
    }
}

/// One client's local train and test index lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientSplit {
    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(self.test.iter()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPartition {
    pub clients: Vec<ClientSplit>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Union of all clients' test sets, in client order.
    pub fn global_test(&self) -> Vec<usize> {
        self.clients.iter().flat_map(|c| c.test.iter().copied()).collect()
    }

    /// Union of all clients' train sets, in client order.
    pub fn global_train(&self) -> Vec<usize> {
        self.clients.iter().flat_map(|c| c.train.iter().copied()).collect()
    }
}

/// Integer apportionment of `total` items by `weights` (largest remainder,
/// ties broken by lower index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut out = vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Symmetric Dirichlet(σ·1) draw via normalized Gamma variates.
pub fn sample_dirichlet(sigma: f64, n: usize, rng: &mut SimRng) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(sigma, 1.0).expect("sigma validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

fn dirichlet_assign(
    dataset: &Dataset,
    pool: &[usize],
    config: &PartitionConfig,
) -> Result<(Vec<Vec<usize>>, SimRng)> {
    let n = config.num_clients;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for &i in pool {
        by_class[dataset.label(i)].push(i);
    }
    for attempt in 0..MAX_PARTITION_RETRIES {
        let mut rng = rng_from(config.rng_seed, &[0xD1D1, attempt as u64]);
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); n];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let shares = sample_dirichlet(config.dirichlet_sigma, n, &mut rng);
            let counts = largest_remainder(&shares, members.len());
            let mut cursor = 0;
            for (client, &k) in clients.iter_mut().zip(&counts) {
                client.extend_from_slice(&members[cursor..cursor + k]);
                cursor += k;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            return Ok((clients, rng));
        }
    }
    Err(DatasetError::PartitionInfeasible {
        retries: MAX_PARTITION_RETRIES,
    })
}

fn train_count(len: usize, fraction: f64) -> usize {
    if len < 2 {
        return len;
    }
    ((len as f64 * fraction).round() as usize).clamp(1, len - 1)
}

/// Dirichlet non-IID partition followed by per-client train/test splitting.
pub fn partition_dirichlet(dataset: &Dataset, config: &PartitionConfig) -> Result<ClientPartition> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(DatasetError::InvalidArgument("dataset is empty".into()));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    match config.test_sampling {
        TestSampling::Local => {
            let (owned, mut rng) = dirichlet_assign(dataset, &all, config)?;
            let clients = owned
                .into_iter()
                .map(|mut idx| {
                    idx.shuffle(&mut rng);
                    let k = train_count(idx.len(), config.train_fraction);
                    let test = idx.split_off(k);
                    ClientSplit { train: idx, test }
                })
                .collect();
            Ok(ClientPartition { clients })
        }
        TestSampling::Global => {
            let mut rng = rng_from(config.rng_seed, &[0x6E0B]);
            let mut pool = all;
            pool.shuffle(&mut rng);
            let k = train_count(pool.len(), config.train_fraction);
            let test_pool = pool.split_off(k);
            let (owned, _) = dirichlet_assign(dataset, &pool, config)?;
            let sizes: Vec<f64> = owned.iter().map(|c| c.len() as f64).collect();
            let test_counts = largest_remainder(&sizes, test_pool.len());
            let mut cursor = 0;
            let clients = owned
                .into_iter()
                .zip(test_counts)
                .map(|(train, k)| {
                    let test = test_pool[cursor..cursor + k].to_vec();
                    cursor += k;
                    ClientSplit { train, test }
                })
                .collect();
            Ok(ClientPartition { clients })
        }
    }
}

/// Smoothed empirical probability mass over class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
    counts: Vec<u64>,
    least_freq_prob: f64,
}

impl LabelDistribution {
    /// `probs[c] = (count_c + eps) / (total + C * eps)`.
    pub fn from_counts(counts: &[u64], smoothing_eps: f64) -> Result<Self> {
        if counts.is_empty() {
            return Err(DatasetError::InvalidArgument("no classes".into()));
        }
        if !(smoothing_eps >= 0.0) || !smoothing_eps.is_finite() {
            return Err(DatasetError::InvalidArgument("smoothing_eps must be >= 0".into()));
        }
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + counts.len() as f64 * smoothing_eps;
        if !(denom > 0.0) {
            return Err(DatasetError::InvalidArgument(
                "empty histogram with zero smoothing".into(),
            ));
        }
        let probs: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + smoothing_eps) / denom)
            .collect();
        Ok(Self::assemble(probs, counts.to_vec()))
    }

    /// Wrap an explicit probability vector (no sample counts behind it; the
    /// counts are reported as zeros). The vector is renormalized after a
    /// 1e-9 sum check.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(DatasetError::InvalidArgument("no classes".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(DatasetError::InvalidArgument(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidArgument(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        let counts = vec![0; probs.len()];
        Ok(Self::assemble(probs, counts))
    }

    fn assemble(probs: Vec<f64>, counts: Vec<u64>) -> Self {
        let least_freq_prob = probs
            .iter()
            .copied()
            .filter(|&p| p > 0.0)
            .fold(f64::INFINITY, f64::min);
        Self {
            probs,
            counts,
            least_freq_prob,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Smallest nonzero class probability, p′.
    pub fn least_freq_prob(&self) -> f64 {
        self.least_freq_prob
    }

    /// Total-variation distance `Σ|p - q| / 2`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

pub fn label_histogram(
    dataset: &Dataset,
    index_list: &[usize],
    smoothing_eps: f64,
) -> Result<LabelDistribution> {
    if index_list.is_empty() {
        return Err(DatasetError::InvalidArgument("empty index list".into()));
    }
    let mut counts = vec![0u64; dataset.num_classes()];
    for &i in index_list {
        if i >= dataset.len() {
            return Err(DatasetError::InvalidArgument(format!(
                "index {i} out of range for dataset of {} rows",
                dataset.len()
            )));
        }
        counts[dataset.label(i)] += 1;
    }
    LabelDistribution::from_counts(&counts, smoothing_eps)
}

/// Draw `k` indices uniformly with replacement from `pool`.
pub fn sample_with_replacement(pool: &[usize], k: usize, rng: &mut SimRng) -> Vec<usize> {
    (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}
