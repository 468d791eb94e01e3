//! Train/validation/test splitting, input standardization, and the persisted
//! processed-dataset format.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use ndarray_npy::{NpzReader, NpzWriter};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_direction_len, extract_metadata, extract_timing_len, METADATA_LEN, SEQ_LEN};
use crate::model::{sidecar_path, Variant};
use crate::synthgen::derive_seed;
use crate::traces::{Corpus, TraceLabel};

/// Smallest number of traces a monitored site needs to be split.
pub const MIN_TRACES_PER_SITE: usize = 10;
/// Lower bound applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-8;
/// Name of the class that collects unmonitored traces.
pub const UNMONITORED_CLASS: &str = "unmonitored";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot split: {0}")]
    Split(String),
    #[error("training partition is empty")]
    EmptyTrain,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("dataset {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

fn format_err(path: &Path, reason: impl std::fmt::Display) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Sizes of the unmonitored train and test pools. The pools are taken from
/// the unmonitored entries in corpus order: the first `train` entries, then
/// the next `test`. Remaining unmonitored entries are left out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmonitoredPools {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train_idx.len() + self.val_idx.len() + self.test_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits monitored traces per site (10% to test), then draws 5% of the
/// remaining monitored pool for validation regardless of site. The
/// unmonitored train pool gives 5% to validation; the unmonitored test pool
/// goes to test. Percentages round down. Index lists are sorted.
pub fn split_corpus(
    labels: &[TraceLabel],
    n_mon: usize,
    unmonitored: UnmonitoredPools,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10, 0));
    let mut per_site: Vec<Vec<usize>> = vec![Vec::new(); n_mon];
    let mut unmon = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if label.class_id < n_mon {
            per_site[label.class_id].push(i);
        } else if label.class_id == n_mon {
            unmon.push(i);
        } else {
            return Err(DatasetError::Split(format!(
                "entry {i} has class {} beyond the unmonitored sentinel {n_mon}",
                label.class_id
            )));
        }
    }

    let mut test = Vec::new();
    let mut pool = Vec::new();
    for (site, mut idx) in per_site.into_iter().enumerate() {
        if idx.len() < MIN_TRACES_PER_SITE {
            return Err(DatasetError::Split(format!(
                "site {site} has {} traces, need at least {MIN_TRACES_PER_SITE}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_test = idx.len() / 10;
        test.extend_from_slice(&idx[..n_test]);
        pool.extend_from_slice(&idx[n_test..]);
    }
    pool.shuffle(&mut rng);
    let n_val = pool.len() / 20;
    let mut val = pool[..n_val].to_vec();
    let mut train = pool[n_val..].to_vec();

    let wanted = unmonitored.train + unmonitored.test;
    if wanted > unmon.len() {
        return Err(DatasetError::Split(format!(
            "requested {} unmonitored train + {} test traces, corpus has {}",
            unmonitored.train,
            unmonitored.test,
            unmon.len()
        )));
    }
    let mut unmon_train = unmon[..unmonitored.train].to_vec();
    test.extend_from_slice(&unmon[unmonitored.train..wanted]);
    unmon_train.shuffle(&mut rng);
    let n_val = unmon_train.len() / 20;
    val.extend_from_slice(&unmon_train[..n_val]);
    train.extend_from_slice(&unmon_train[n_val..]);

    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train_idx: train,
        val_idx: val,
        test_idx: test,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub timing_mean: f64,
    pub timing_std: f64,
    pub metadata_mean: [f64; METADATA_LEN],
    pub metadata_std: [f64; METADATA_LEN],
}

/// Unscaled per-entry features, one row per corpus entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub seq_len: usize,
    /// `[rows][seq_len]` of +1/-1/0.
    pub direction: Vec<i8>,
    /// `[rows][seq_len]` inter-packet delays, zero padded.
    pub timing: Vec<f64>,
    /// `[rows][METADATA_LEN]`.
    pub metadata: Vec<f64>,
    /// Number of non-pad positions in each row.
    pub lengths: Vec<usize>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.lengths.len()
    }
}

pub fn extract_features(corpus: &Corpus, seq_len: usize) -> FeatureMatrix {
    let n = corpus.len();
    let mut m = FeatureMatrix {
        seq_len,
        direction: Vec::with_capacity(n * seq_len),
        timing: Vec::with_capacity(n * seq_len),
        metadata: Vec::with_capacity(n * METADATA_LEN),
        lengths: Vec::with_capacity(n),
    };
    for (trace, _) in &corpus.entries {
        m.direction.extend(extract_direction_len(trace, seq_len).0);
        m.timing.extend(extract_timing_len(trace, seq_len).0);
        m.metadata.extend(extract_metadata(trace).0);
        m.lengths.push(trace.len().min(seq_len));
    }
    m
}

/// Population standard deviation from a sum of squared deviations, floored.
fn floored_std(sum_sq_dev: f64, count: usize) -> f64 {
    (sum_sq_dev / count as f64).sqrt().max(STD_FLOOR)
}

/// Fits z-scoring parameters over the training rows only. Timing statistics
/// pool the non-pad prefix of every training row; metadata statistics are per
/// feature. Standard deviations are population values floored at 1e-8.
pub fn fit_standardization(features: &FeatureMatrix, train_idx: &[usize]) -> Result<Standardization, DatasetError> {
    if train_idx.is_empty() {
        return Err(DatasetError::EmptyTrain);
    }
    if let Some(&bad) = train_idx.iter().find(|&&i| i >= features.rows()) {
        return Err(DatasetError::Invalid(format!("training index {bad} out of range")));
    }
    let l = features.seq_len;
    let prefix = |i: usize| &features.timing[i * l..i * l + features.lengths[i]];

    let count: usize = train_idx.iter().map(|&i| features.lengths[i]).sum();
    let sum: f64 = train_idx.iter().flat_map(|&i| prefix(i)).sum();
    let timing_mean = sum / count as f64;
    let dev: f64 = train_idx
        .iter()
        .flat_map(|&i| prefix(i))
        .map(|&t| (t - timing_mean).powi(2))
        .sum();
    let timing_std = floored_std(dev, count);

    let mut metadata_mean = [0.0; METADATA_LEN];
    let mut metadata_std = [0.0; METADATA_LEN];
    for f in 0..METADATA_LEN {
        let value = |i: usize| features.metadata[i * METADATA_LEN + f];
        let mean = train_idx.iter().map(|&i| value(i)).sum::<f64>() / train_idx.len() as f64;
        let dev: f64 = train_idx.iter().map(|&i| (value(i) - mean).powi(2)).sum();
        metadata_mean[f] = mean;
        metadata_std[f] = floored_std(dev, train_idx.len());
    }
    Ok(Standardization {
        timing_mean,
        timing_std,
        metadata_mean,
        metadata_std,
    })
}

/// Persisted header of a processed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub n_mon: usize,
    pub seq_len: usize,
    pub splits: Splits,
    pub standardization: Standardization,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Model-ready tensors for every corpus entry plus the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedDataset {
    pub manifest: Manifest,
    /// `[rows][seq_len]`, raw +1/-1/0.
    pub direction: Vec<f32>,
    /// `[rows][seq_len]`, standardized.
    pub timing: Vec<f32>,
    /// `[rows][METADATA_LEN]`, standardized.
    pub metadata: Vec<f32>,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

/// Class names for `n_mon` monitored sites, plus the unmonitored class when
/// the experiment uses unmonitored traces.
pub fn class_names(n_mon: usize, open_world: bool) -> Vec<String> {
    let mut classes: Vec<String> = (0..n_mon).map(|i| format!("site{i}")).collect();
    if open_world {
        classes.push(UNMONITORED_CLASS.to_string());
    }
    classes
}

/// Standardizes `features` with `standardization` and attaches the manifest.
pub fn build_dataset(
    features: &FeatureMatrix,
    labels: &[TraceLabel],
    n_mon: usize,
    split: &DatasetSplit,
    standardization: Standardization,
) -> Result<ProcessedDataset, DatasetError> {
    if labels.len() != features.rows() {
        return Err(DatasetError::Invalid(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    let open_world = [&split.train_idx, &split.val_idx, &split.test_idx]
        .iter()
        .any(|idx| idx.iter().any(|&i| labels[i].class_id == n_mon));
    let st = &standardization;
    let timing = features
        .timing
        .iter()
        .map(|&t| ((t - st.timing_mean) / st.timing_std) as f32)
        .collect();
    let metadata = features
        .metadata
        .chunks(METADATA_LEN)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(f, &v)| ((v - st.metadata_mean[f]) / st.metadata_std[f]) as f32)
        })
        .collect();
    let dataset = ProcessedDataset {
        manifest: Manifest {
            classes: class_names(n_mon, open_world),
            n_mon,
            seq_len: features.seq_len,
            splits: Splits {
                train: split.train_idx.clone(),
                val: split.val_idx.clone(),
                test: split.test_idx.clone(),
            },
            standardization,
            seed: split.seed,
        },
        direction: features.direction.iter().map(|&d| d as f32).collect(),
        timing,
        metadata,
        labels: labels.iter().map(|l| l.class_id).collect(),
        lengths: features.lengths.clone(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Extraction, split, fit, and standardization in one pass.
pub fn process_corpus(corpus: &Corpus, unmonitored: UnmonitoredPools, seed: u64) -> Result<ProcessedDataset, DatasetError> {
    let labels = corpus.labels();
    let split = split_corpus(&labels, corpus.n_mon, unmonitored, seed)?;
    let features = extract_features(corpus, SEQ_LEN);
    let standardization = fit_standardization(&features, &split.train_idx)?;
    build_dataset(&features, &labels, corpus.n_mon, &split, standardization)
}

impl ProcessedDataset {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn seq_len(&self) -> usize {
        self.manifest.seq_len
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.classes.len()
    }

    /// The input sequence a model variant reads.
    pub fn sequences(&self, variant: Variant) -> &[f32] {
        match variant {
            Variant::Direction => &self.direction,
            Variant::Time => &self.timing,
        }
    }

    /// Gathers the sequence and metadata rows at `idx` into contiguous buffers.
    pub fn gather(&self, variant: Variant, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let l = self.seq_len();
        let seq = self.sequences(variant);
        let mut s = Vec::with_capacity(idx.len() * l);
        let mut m = Vec::with_capacity(idx.len() * METADATA_LEN);
        for &i in idx {
            s.extend_from_slice(&seq[i * l..(i + 1) * l]);
            m.extend_from_slice(&self.metadata[i * METADATA_LEN..(i + 1) * METADATA_LEN]);
        }
        (s, m)
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Invalid(m));
        let n = self.rows();
        let (l, man) = (self.seq_len(), &self.manifest);
        if self.direction.len() != n * l || self.timing.len() != n * l {
            return bad(format!("sequence tensors do not hold {n} rows of {l}"));
        }
        if self.metadata.len() != n * METADATA_LEN || self.lengths.len() != n {
            return bad(format!("metadata or lengths do not hold {n} rows"));
        }
        if let Some(&label) = self.labels.iter().find(|&&c| c > man.n_mon) {
            return bad(format!("label {label} exceeds {}", man.n_mon));
        }
        let open_world = man.classes.len() == man.n_mon + 1;
        if !open_world && man.classes.len() != man.n_mon {
            return bad(format!("{} classes for {} monitored sites", man.classes.len(), man.n_mon));
        }
        let mut seen = vec![false; n];
        for &i in man.splits.train.iter().chain(&man.splits.val).chain(&man.splits.test) {
            if i >= n {
                return bad(format!("split index {i} out of range"));
            }
            if seen[i] {
                return bad(format!("index {i} appears in more than one split"));
            }
            seen[i] = true;
            if !open_world && self.labels[i] == man.n_mon {
                return bad(format!("unmonitored entry {i} in a closed-world split"));
            }
        }
        let st = &man.standardization;
        if !(st.timing_std > 0.0) || st.metadata_std.iter().any(|&s| !(s > 0.0)) {
            return bad("standard deviations must be positive".into());
        }
        Ok(())
    }

    /// Writes the tensor archive at `path` and the manifest at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        self.validate()?;
        let (n, l) = (self.rows(), self.seq_len());
        let err = |e: &dyn std::fmt::Display| format_err(path, e);
        let direction: Vec<i8> = self.direction.iter().map(|&d| d as i8).collect();
        let file = File::create(path).map_err(|e| err(&e))?;
        let mut npz = NpzWriter::new(BufWriter::new(file));
        let shaped = |v: Vec<f32>, cols: usize| Array2::from_shape_vec((n, cols), v);
        npz.add_array("direction", &Array2::from_shape_vec((n, l), direction).map_err(|e| err(&e))?)
            .map_err(|e| err(&e))?;
        npz.add_array("timing", &shaped(self.timing.clone(), l).map_err(|e| err(&e))?)
            .map_err(|e| err(&e))?;
        npz.add_array("metadata", &shaped(self.metadata.clone(), METADATA_LEN).map_err(|e| err(&e))?)
            .map_err(|e| err(&e))?;
        let labels: Array1<u64> = self.labels.iter().map(|&v| v as u64).collect();
        let lengths: Array1<u64> = self.lengths.iter().map(|&v| v as u64).collect();
        npz.add_array("labels", &labels).map_err(|e| err(&e))?;
        npz.add_array("lengths", &lengths).map_err(|e| err(&e))?;
        npz.finish().map_err(|e| err(&e))?;
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| err(&e))?;
        std::fs::write(sidecar_path(path), json + "\n").map_err(|e| err(&e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| format_err(&side, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| format_err(&side, e))?;
        let err = |e: &dyn std::fmt::Display| format_err(path, e);
        let file = File::open(path).map_err(|e| err(&e))?;
        let mut npz = NpzReader::new(file).map_err(|e| err(&e))?;
        let direction: Array2<i8> = npz.by_name("direction").map_err(|e| err(&e))?;
        let timing: Array2<f32> = npz.by_name("timing").map_err(|e| err(&e))?;
        let metadata: Array2<f32> = npz.by_name("metadata").map_err(|e| err(&e))?;
        let labels: Array1<u64> = npz.by_name("labels").map_err(|e| err(&e))?;
        let lengths: Array1<u64> = npz.by_name("lengths").map_err(|e| err(&e))?;
        if direction.ncols() != manifest.seq_len || timing.ncols() != manifest.seq_len {
            return Err(err(&format!("sequence width differs from seq_len {}", manifest.seq_len)));
        }
        if metadata.ncols() != METADATA_LEN {
            return Err(err(&format!("metadata has {} columns", metadata.ncols())));
        }
        let dataset = ProcessedDataset {
            manifest,
            direction: direction.iter().map(|&d| d as f32).collect(),
            timing: timing.iter().copied().collect(),
            metadata: metadata.iter().copied().collect(),
            labels: labels.iter().map(|&v| v as usize).collect(),
            lengths: lengths.iter().map(|&v| v as usize).collect(),
        };
        dataset.validate().map_err(|e| err(&e))?;
        Ok(dataset)
    }
}
