use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{rng_from, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchMeta {
    pub dataset: String,
    pub split: Split,
    pub norm: Option<NormStats>,
}

/// Sequences sharing one time grid.
///
/// `values` holds the observed values `m ⊙ x` and is zero wherever `mask` is.
/// `targets`, when present, is the complete ground truth on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesBatch {
    pub values: Tensor,
    pub mask: Tensor,
    pub timestamps: Vec<f64>,
    pub labels: Option<Vec<usize>>,
    pub targets: Option<Tensor>,
    pub ids: Vec<u64>,
    pub meta: BatchMeta,
}

impl TimeSeriesBatch {
    /// A fully observed batch; `values` is `[T, B, D]`.
    pub fn observed(
        values: Tensor,
        timestamps: Vec<f64>,
        labels: Option<Vec<usize>>,
        ids: Vec<u64>,
        meta: BatchMeta,
    ) -> Result<Self> {
        let mask = Tensor::ones(values.shape().to_vec());
        let batch = Self {
            targets: Some(values.clone()),
            values,
            mask,
            timestamps,
            labels,
            ids,
            meta,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// A batch whose non-finite entries are treated as missing.
    pub fn with_missing(
        raw: Tensor,
        timestamps: Vec<f64>,
        labels: Option<Vec<usize>>,
        ids: Vec<u64>,
        meta: BatchMeta,
    ) -> Result<Self> {
        let mask = raw.map(|x| if x.is_finite() { 1.0 } else { 0.0 });
        let values = raw.map(|x| if x.is_finite() { x } else { 0.0 });
        let batch = Self {
            values,
            mask,
            timestamps,
            labels,
            targets: None,
            ids,
            meta,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[2]
    }

    /// Checks shapes, the mask/value invariant, and the time grid.
    pub fn validate(&self) -> Result<()> {
        let shape = self.values.shape();
        if shape.len() != 3 || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "batch values must be non-empty [T, B, D], got {shape:?}"
            )));
        }
        let (t, b) = (shape[0], shape[1]);
        if self.mask.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "batch mask",
                left: shape.to_vec(),
                right: self.mask.shape().to_vec(),
            });
        }
        if let Some(tg) = &self.targets {
            if tg.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "batch targets",
                    left: shape.to_vec(),
                    right: tg.shape().to_vec(),
                });
            }
        }
        if self.timestamps.len() != t {
            return Err(Error::invalid(format!(
                "{} timestamps for {t} steps",
                self.timestamps.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) || self.timestamps[0] < 0.0 {
            return Err(Error::invalid(
                "timestamps must be non-negative and strictly increasing",
            ));
        }
        if self.ids.len() != b || self.labels.as_ref().is_some_and(|l| l.len() != b) {
            return Err(Error::invalid("ids and labels must have one entry per sequence"));
        }
        for (&m, &v) in self.mask.data().iter().zip(self.values.data()) {
            if m != 0.0 && m != 1.0 {
                return Err(Error::invalid(format!("mask entry {m} is not binary")));
            }
            if m == 0.0 && v != 0.0 {
                return Err(Error::invalid("value present at a masked position"));
            }
        }
        Ok(())
    }

    /// The sub-batch of sequences at `indices` (in that order).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (t, b, d) = (self.steps(), self.batch_size(), self.dims());
        if let Some(&bad) = indices.iter().find(|&&i| i >= b) {
            return Err(Error::IndexOutOfRange {
                op: "select sequences",
                index: bad,
                extent: b,
            });
        }
        let pick = |x: &Tensor| {
            let mut out = Vec::with_capacity(t * indices.len() * d);
            for k in 0..t {
                for &i in indices {
                    let off = (k * b + i) * d;
                    out.extend_from_slice(&x.data()[off..off + d]);
                }
            }
            Tensor::new([t, indices.len(), d], out).expect("selected shape")
        };
        Ok(Self {
            values: pick(&self.values),
            mask: pick(&self.mask),
            timestamps: self.timestamps.clone(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            targets: self.targets.as_ref().map(pick),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            meta: self.meta.clone(),
        })
    }

    pub fn observed_fraction(&self) -> f64 {
        self.mask.sum() / self.mask.numel() as f64
    }

    /// Whether sequence `b` has any observed channel at step `k`.
    pub fn step_observed(&self, k: usize, b: usize) -> bool {
        let d = self.dims();
        let off = (k * self.batch_size() + b) * d;
        self.mask.data()[off..off + d].iter().any(|&m| m != 0.0)
    }
}

/// Train and test splits, each a list of grid-aligned groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Vec<TimeSeriesBatch>,
    pub test: Vec<TimeSeriesBatch>,
    pub num_classes: Option<usize>,
    pub dims: usize,
    /// Generator or loader settings, echoed into results.
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TimeSeriesBatch] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<TimeSeriesBatch> {
        match split {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        self.split(split).iter().map(TimeSeriesBatch::batch_size).sum()
    }

    /// Longest sequence in either split.
    pub fn max_steps(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .map(TimeSeriesBatch::steps)
            .max()
            .unwrap_or(0)
    }

    /// Applies `f` to every group of both splits.
    pub fn try_map_groups(
        &self,
        mut f: impl FnMut(Split, &TimeSeriesBatch) -> Result<TimeSeriesBatch>,
    ) -> Result<Self> {
        let mut out = self.clone();
        for split in [Split::Train, Split::Test] {
            *out.split_mut(split) = self.split(split).iter().map(|g| f(split, g)).collect::<Result<_>>()?;
        }
        Ok(out)
    }
}

/// Draws training mini-batches: a random group, then up to `batch_size` of
/// its sequences without replacement.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    groups: &'a [TimeSeriesBatch],
    batch_size: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> BatchSampler<'a> {
    pub fn new(groups: &'a [TimeSeriesBatch], batch_size: usize, seed: u64) -> Result<Self> {
        if groups.is_empty() || batch_size == 0 {
            return Err(Error::invalid(
                "sampler needs at least one group and a positive batch size",
            ));
        }
        Ok(Self {
            groups,
            batch_size,
            rng: rng_from(crate::seed::derive_seed(seed, Stream::Shuffle, 0)),
        })
    }

    pub fn next_batch(&mut self) -> Result<TimeSeriesBatch> {
        let g = &self.groups[self.rng.gen_range(0..self.groups.len())];
        let n = g.batch_size();
        if n <= self.batch_size {
            return Ok(g.clone());
        }
        let mut idx = index::sample(&mut self.rng, n, self.batch_size).into_vec();
        idx.sort_unstable();
        g.select(&idx)
    }
}

/// Splits a group into consecutive chunks of at most `size` sequences.
pub fn chunk(batch: &TimeSeriesBatch, size: usize) -> Result<Vec<TimeSeriesBatch>> {
    let n = batch.batch_size();
    (0..n)
        .step_by(size.max(1))
        .map(|s| batch.select(&(s..(s + size).min(n)).collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
pub(crate) fn test_meta() -> BatchMeta {
    BatchMeta {
        dataset: "test".into(),
        split: Split::Train,
        norm: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> TimeSeriesBatch {
        TimeSeriesBatch::observed(
            Tensor::from_fn([3, 4, 2], |i| i as f64 + 1.0),
            vec![0.0, 0.5, 1.0],
            Some(vec![0, 1, 0, 1]),
            vec![10, 11, 12, 13],
            test_meta(),
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        let b = batch();
        let mut bad = b.clone();
        bad.timestamps = vec![0.0, 0.5, 0.5];
        assert!(bad.validate().is_err());
        let mut bad = b.clone();
        bad.mask.data_mut()[0] = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = b;
        bad.mask.data_mut()[0] = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_entries_become_mask_zeros() {
        let raw = Tensor::new([2, 1, 1], vec![f64::NAN, 2.0]).unwrap();
        let b = TimeSeriesBatch::with_missing(raw, vec![0.0, 1.0], None, vec![0], test_meta()).unwrap();
        assert_eq!(b.values.data(), &[0.0, 2.0]);
        assert_eq!(b.mask.data(), &[0.0, 1.0]);
        assert!(!b.step_observed(0, 0));
    }

    #[test]
    fn select_and_chunk() {
        let b = batch();
        let s = b.select(&[2, 0]).unwrap();
        assert_eq!(s.ids, vec![12, 10]);
        assert_eq!(s.labels, Some(vec![0, 0]));
        assert_eq!(&s.values.data()[..4], &[5.0, 6.0, 1.0, 2.0]);
        let parts = chunk(&b, 3).unwrap();
        assert_eq!(parts.iter().map(|p| p.batch_size()).collect::<Vec<_>>(), vec![3, 1]);
    }

    #[test]
    fn sampler_is_seeded() {
        let groups = vec![batch(), batch()];
        let mut a = BatchSampler::new(&groups, 2, 5).unwrap();
        let mut b = BatchSampler::new(&groups, 2, 5).unwrap();
        for _ in 0..5 {
            let (x, y) = (a.next_batch().unwrap(), b.next_batch().unwrap());
            assert_eq!(x.ids, y.ids);
            assert_eq!(x.batch_size(), 2);
        }
    }
}
