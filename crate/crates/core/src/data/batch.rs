use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{encode_text, TextEncoding, Vocabulary};
use crate::error::{Error, Result};
use crate::stroke::{HandwritingSample, OffsetPoint};

/// Default cap on training sequence length, in points.
pub const DEFAULT_MAX_LEN: usize = 800;

/// Default held-out fraction.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

/// Disjoint train/validation partition of a corpus.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<HandwritingSample>,
    pub validation: Vec<HandwritingSample>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Shuffles sample indices with `seed` and holds out
    /// `floor(n * validation_fraction)` of them. Each side keeps corpus order.
    pub fn new(samples: Vec<HandwritingSample>, validation_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction must be in [0, 1), got {validation_fraction}"
            )));
        }
        let n = samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (n as f64 * validation_fraction).floor() as usize;
        let mut is_val = vec![false; n];
        for &i in &order[..n_val] {
            is_val[i] = true;
        }
        let (mut train, mut validation) = (Vec::new(), Vec::new());
        for (s, v) in samples.into_iter().zip(is_val) {
            if v {
                validation.push(s)
            } else {
                train.push(s)
            }
        }
        Ok(Self {
            train,
            validation,
            seed,
        })
    }
}

/// A group of training sequences in offset form.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub sequences: Vec<Vec<OffsetPoint>>,
    /// True (unpadded) length of each sequence.
    pub lengths: Vec<usize>,
    pub texts: Vec<Option<TextEncoding>>,
    /// Positions of the members in `DatasetSplit::train`.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Builds a batch from `samples[i]` for each of `indices`.
    pub fn gather(samples: &[HandwritingSample], indices: &[usize], max_len: usize) -> Self {
        let vocab = Vocabulary;
        let mut batch = Batch {
            sequences: Vec::with_capacity(indices.len()),
            lengths: Vec::with_capacity(indices.len()),
            texts: Vec::with_capacity(indices.len()),
            indices: indices.to_vec(),
        };
        for &i in indices {
            let s = &samples[i];
            let seq = truncated_offsets(s, max_len);
            batch.lengths.push(seq.len());
            batch.sequences.push(seq);
            batch.texts.push(s.text().map(|t| encode_text(t, &vocab)));
        }
        batch
    }
}

/// Offset sequence capped at `max_len` points. A cut inside a stroke closes
/// that stroke at the last retained point, so eos count always equals the
/// stroke count of the retained prefix.
pub fn truncated_offsets(sample: &HandwritingSample, max_len: usize) -> Vec<OffsetPoint> {
    let mut seq = sample.to_offsets();
    if seq.len() > max_len {
        seq.truncate(max_len);
        if let Some(last) = seq.last_mut() {
            last.eos = true;
        }
    }
    seq
}

/// Deterministic pass over the training side of a split.
pub struct BatchIter<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    max_len: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let batch = Batch::gather(&self.split.train, &indices, self.max_len);
        Some(batch)
    }
}

/// One epoch of batches over `split.train` in a seeded shuffled order.
pub fn make_batches(
    split: &DatasetSplit,
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 || max_len == 0 {
        return Err(Error::InvalidConfig(
            "batch size and max length must be at least 1".into(),
        ));
    }
    if split.train.is_empty() {
        return Err(Error::EmptyDataset("training split has no samples".into()));
    }
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(BatchIter {
        split,
        order,
        pos: 0,
        batch_size,
        max_len,
    })
}
