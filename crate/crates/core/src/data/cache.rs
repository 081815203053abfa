//! Binary cache for generated datasets.
//!
//! Layout (all integers little-endian `u64`, floats little-endian `f64`):
//!
//! ```text
//! magic "SDEADS01"
//! seed
//! spec echo          : string
//! name               : string
//! dims, num_classes+1 (0 = unlabelled)
//! meta entry count, then (key: string, value: string) pairs
//! per split (train, test): group count, then per group:
//!     T, B, D, timestamps[T], values[T*B*D], mask[T*B*D],
//!     has_targets, targets[T*B*D]?, ids[B], has_labels, labels[B]?
//! ```
//!
//! A string is its byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use super::batch::{BatchMeta, Dataset, Split, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SDEADS01";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::invalid("dataset cache is truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::invalid("dataset cache count overflows"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::invalid("dataset cache size overflows"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::invalid("dataset cache holds invalid UTF-8"))
    }
}

pub fn encode_dataset(ds: &Dataset, seed: u64, spec_echo: &str) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u64(seed);
    w.str(spec_echo);
    w.str(&ds.name);
    w.u64(ds.dims as u64);
    w.u64(ds.num_classes.map_or(0, |c| c as u64 + 1));
    w.u64(ds.meta.len() as u64);
    for (k, v) in &ds.meta {
        w.str(k);
        w.str(v);
    }
    for split in [Split::Train, Split::Test] {
        let groups = ds.split(split);
        w.u64(groups.len() as u64);
        for g in groups {
            for n in g.values.shape() {
                w.u64(*n as u64);
            }
            w.f64s(&g.timestamps);
            w.f64s(g.values.data());
            w.f64s(g.mask.data());
            match &g.targets {
                Some(t) => {
                    w.u64(1);
                    w.f64s(t.data());
                }
                None => w.u64(0),
            }
            for id in &g.ids {
                w.u64(*id);
            }
            match &g.labels {
                Some(l) => {
                    w.u64(1);
                    l.iter().for_each(|&x| w.u64(x as u64));
                }
                None => w.u64(0),
            }
        }
    }
    w.0
}

/// Decodes a cache, returning the dataset, its seed and the generator settings echo.
pub fn decode_dataset(buf: &[u8]) -> Result<(Dataset, u64, String)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::invalid("not a dataset cache (bad magic)"));
    }
    let seed = r.u64()?;
    let spec = r.str()?;
    let name = r.str()?;
    let dims = r.usize()?;
    let classes = r.usize()?;
    let mut meta = BTreeMap::new();
    for _ in 0..r.usize()? {
        let k = r.str()?;
        meta.insert(k, r.str()?);
    }
    let mut splits = Vec::new();
    for split in [Split::Train, Split::Test] {
        let n = r.usize()?;
        let mut groups = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let shape = [r.usize()?, r.usize()?, r.usize()?];
            let numel = shape[0]
                .checked_mul(shape[1])
                .and_then(|x| x.checked_mul(shape[2]))
                .ok_or_else(|| Error::invalid("dataset cache size overflows"))?;
            let timestamps = r.f64s(shape[0])?;
            let values = Tensor::new(shape, r.f64s(numel)?)?;
            let mask = Tensor::new(shape, r.f64s(numel)?)?;
            let targets = match r.u64()? {
                0 => None,
                _ => Some(Tensor::new(shape, r.f64s(numel)?)?),
            };
            let ids = (0..shape[1]).map(|_| r.u64()).collect::<Result<_>>()?;
            let labels = match r.u64()? {
                0 => None,
                _ => Some((0..shape[1]).map(|_| r.usize()).collect::<Result<_>>()?),
            };
            let g = TimeSeriesBatch {
                values,
                mask,
                timestamps,
                labels,
                targets,
                ids,
                meta: BatchMeta {
                    dataset: name.clone(),
                    split,
                    norm: None,
                },
            };
            g.validate()?;
            groups.push(g);
        }
        splits.push(groups);
    }
    if r.pos != buf.len() {
        return Err(Error::invalid("trailing bytes after dataset cache"));
    }
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok((
        Dataset {
            name,
            train,
            test,
            num_classes: classes.checked_sub(1),
            dims,
            meta,
        },
        seed,
        spec,
    ))
}

pub fn save_dataset(path: &Path, ds: &Dataset, seed: u64, spec_echo: &str) -> Result<()> {
    std::fs::write(path, encode_dataset(ds, seed, spec_echo)).map_err(|e| Error::io(path, e))
}

pub fn load_cached(path: &Path) -> Result<(Dataset, u64, String)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_frequency, generate_periodic, FrequencySpec, PeriodicSpec};

    #[test]
    fn round_trip() {
        let ds = generate_periodic(&PeriodicSpec {
            trajectories: 20,
            points: 7,
            group_size: 8,
            ..Default::default()
        })
        .unwrap();
        let bytes = encode_dataset(&ds, 42, "periodic points=7");
        let (back, seed, spec) = decode_dataset(&bytes).unwrap();
        assert_eq!((seed, spec.as_str()), (42, "periodic points=7"));
        assert_eq!(back, ds);

        let cls = generate_frequency(&FrequencySpec {
            train: 4,
            test: 2,
            points: 5,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(decode_dataset(&encode_dataset(&cls, 1, "")).unwrap().0, cls);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let ds = generate_frequency(&FrequencySpec {
            train: 2,
            test: 2,
            points: 3,
            ..Default::default()
        })
        .unwrap();
        let bytes = encode_dataset(&ds, 0, "");
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_dataset(&long).is_err());
    }
}
