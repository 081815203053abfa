//! Readers for labelled, equal-length series collections.
//!
//! # Repository text format (`.ts`)
//!
//! Header lines start with `@` and precede a single `@data` line:
//!
//! ```text
//! # comment
//! @problemName BasicMotions
//! @timeStamps false
//! @missing false
//! @univariate false
//! @dimensions 6
//! @equalLength true
//! @seriesLength 100
//! @classLabel true Standing Running Walking Badminton
//! @data
//! 0.1,0.2,...:0.3,0.1,...:Standing
//! ```
//!
//! Each data line holds the dimensions separated by `:`, each a comma-separated
//! list of values, followed by the class label when `@classLabel true`. A `?`
//! marks a missing value. Directive names are case-insensitive; unknown
//! directives are ignored. Time-stamped series are not supported.
//!
//! # CSV fallback
//!
//! One series per line: `label,v(0,0),v(0,1),..,v(0,D-1),v(1,0),..` (time-major,
//! `T·D` values). `?` is missing. An optional first line `#classes=a,b,c` fixes
//! the class order; otherwise classes are sorted. [`write_csv`] always emits
//! that line and uses shortest round-trip formatting, so reading back its output
//! reproduces the tensors bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::batch::{BatchMeta, Dataset, NormStats, Split, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Raw series as read from disk: `values` is `[N, T, D]` with NaN for missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    pub name: String,
    pub classes: Vec<String>,
    pub values: Tensor,
    pub labels: Vec<usize>,
}

impl SeriesSet {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dims(&self) -> usize {
        self.values.shape()[2]
    }

    /// Bitwise comparison that treats NaN entries as equal.
    pub fn same_bits(&self, other: &SeriesSet) -> bool {
        self.classes == other.classes
            && self.labels == other.labels
            && self.values.shape() == other.values.shape()
            && self
                .values
                .data()
                .iter()
                .zip(other.values.data())
                .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ts,
    Csv { dims: usize },
}

impl Format {
    /// Picks the format from the file extension; CSV needs the channel count.
    pub fn from_path(path: &Path, csv_dims: usize) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ts") => Format::Ts,
            _ => Format::Csv { dims: csv_dims },
        }
    }
}

fn parse_value(tok: &str) -> std::result::Result<f64, String> {
    let tok = tok.trim();
    if tok == "?" || tok.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    tok.parse::<f64>().map_err(|_| format!("cannot parse value {tok:?}"))
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

pub fn parse_ts(text: &str, path: &Path) -> Result<SeriesSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let mut classes: Option<Vec<String>> = None;
    let mut declared_dims: Option<usize> = None;
    let mut declared_len: Option<usize> = None;
    let mut univariate = None;
    let mut in_data = false;
    let mut rows: Vec<(Vec<Vec<f64>>, Option<String>, usize)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let Some(rest) = line.strip_prefix('@') else {
                return Err(err(lineno, "expected a header directive before @data".into()));
            };
            let mut parts = rest.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            let args: Vec<&str> = parts.collect();
            let flag = |args: &[&str]| {
                args.first()
                    .and_then(|a| parse_bool(a))
                    .ok_or_else(|| err(lineno, format!("@{key} needs true or false")))
            };
            match key.as_str() {
                "problemname" => {
                    name = args
                        .first()
                        .ok_or_else(|| err(lineno, "@problemName needs a value".into()))?
                        .to_string()
                }
                "timestamps" => {
                    if flag(&args)? {
                        return Err(err(lineno, "time-stamped series are not supported".into()));
                    }
                }
                "univariate" => univariate = Some(flag(&args)?),
                "dimensions" | "dimension" => {
                    declared_dims = Some(
                        args.first()
                            .and_then(|a| a.parse().ok())
                            .filter(|&d: &usize| d > 0)
                            .ok_or_else(|| err(lineno, "@dimensions needs a positive integer".into()))?,
                    )
                }
                "serieslength" => {
                    declared_len = Some(
                        args.first()
                            .and_then(|a| a.parse().ok())
                            .ok_or_else(|| err(lineno, "@seriesLength needs an integer".into()))?,
                    )
                }
                "classlabel" => {
                    if flag(&args)? {
                        if args.len() < 2 {
                            return Err(err(lineno, "@classLabel true lists no classes".into()));
                        }
                        classes = Some(args[1..].iter().map(|s| s.to_string()).collect());
                    }
                }
                "data" => in_data = true,
                _ => {}
            }
            continue;
        }
        let mut fields: Vec<&str> = line.split(':').collect();
        let label = if classes.is_some() {
            Some(fields.pop().unwrap().trim().to_string())
        } else {
            None
        };
        let dims = fields
            .iter()
            .map(|f| {
                f.split(',')
                    .map(parse_value)
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| err(lineno, m))?;
        if dims.is_empty() {
            return Err(err(lineno, "series line holds no values".into()));
        }
        rows.push((dims, label, lineno));
    }
    if !in_data {
        return Err(err(0, "missing @data section".into()));
    }

    let dims = declared_dims.unwrap_or(if univariate == Some(true) {
        1
    } else {
        rows.first().map_or(1, |r| r.0.len())
    });
    if univariate == Some(true) && dims != 1 {
        return Err(err(0, format!("@univariate true but {dims} dimensions declared")));
    }
    let len = declared_len.or_else(|| rows.first().map(|r| r.0[0].len())).unwrap_or(0);
    let classes = classes.unwrap_or_default();
    let mut values = Vec::with_capacity(rows.len() * len * dims);
    let mut labels = Vec::with_capacity(rows.len());
    for (series, label, lineno) in rows {
        if series.len() != dims {
            return Err(err(
                lineno,
                format!("expected {dims} dimensions, found {}", series.len()),
            ));
        }
        if let Some(bad) = series.iter().find(|s| s.len() != len) {
            return Err(err(lineno, format!("expected length {len}, found {}", bad.len())));
        }
        for t in 0..len {
            for s in &series {
                values.push(s[t]);
            }
        }
        labels.push(match label {
            Some(l) => classes
                .iter()
                .position(|c| *c == l)
                .ok_or_else(|| err(lineno, format!("unknown class label {l:?}")))?,
            None => 0,
        });
    }
    let n = labels.len();
    Ok(SeriesSet {
        name,
        classes,
        values: Tensor::new([n, len, dims], values)?,
        labels,
    })
}

pub fn parse_csv(text: &str, path: &Path, dims: usize) -> Result<SeriesSet> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if dims == 0 {
        return Err(err(0, "CSV channel count must be positive".into()));
    }
    let mut declared: Option<Vec<String>> = None;
    let mut rows: Vec<(String, Vec<f64>, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(list) = rest.trim().strip_prefix("classes=") {
                declared = Some(list.split(',').map(|s| s.trim().to_string()).collect());
            }
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap().trim().to_string();
        let vals = fields
            .map(parse_value)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| err(i + 1, m))?;
        if vals.is_empty() || vals.len() % dims != 0 {
            return Err(err(
                i + 1,
                format!("{} values do not split into {dims} channels", vals.len()),
            ));
        }
        rows.push((label, vals, i + 1));
    }
    let classes = declared.unwrap_or_else(|| {
        let mut c: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        c.sort();
        c.dedup();
        c
    });
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut values = Vec::with_capacity(rows.len() * width);
    let mut labels = Vec::with_capacity(rows.len());
    for (label, vals, lineno) in rows {
        if vals.len() != width {
            return Err(err(lineno, format!("expected {width} values, found {}", vals.len())));
        }
        labels.push(
            classes
                .iter()
                .position(|c| *c == label)
                .ok_or_else(|| err(lineno, format!("unknown class label {label:?}")))?,
        );
        values.extend(vals);
    }
    let n = labels.len();
    Ok(SeriesSet {
        name: path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("dataset")
            .to_string(),
        classes,
        values: Tensor::new([n, width / dims, dims], values)?,
        labels,
    })
}

pub fn write_csv(set: &SeriesSet) -> String {
    let mut out = format!("#classes={}\n", set.classes.join(","));
    let row = set.steps() * set.dims();
    for (i, &label) in set.labels.iter().enumerate() {
        out.push_str(set.classes.get(label).map_or("", String::as_str));
        for v in &set.values.data()[i * row..(i + 1) * row] {
            if v.is_nan() {
                out.push_str(",?");
            } else {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_series(path: &Path, format: Format) -> Result<SeriesSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::Ts => parse_ts(&text, path),
        Format::Csv { dims } => parse_csv(&text, path, dims),
    }
}

impl NormStats {
    /// Per-channel mean and population standard deviation over finite entries
    /// of a `[N, T, D]` set. Constant channels get unit scale.
    pub fn fit(set: &SeriesSet) -> Self {
        let d = set.dims();
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for (i, &v) in set.values.data().iter().enumerate() {
            if v.is_finite() {
                sum[i % d] += v;
                count[i % d] += 1;
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let mut sq = vec![0.0; d];
        for (i, &v) in set.values.data().iter().enumerate() {
            if v.is_finite() {
                sq[i % d] += (v - mean[i % d]).powi(2);
            }
        }
        let std = sq
            .iter()
            .zip(&count)
            .map(|(s, &c)| {
                let sd = if c > 0 { (s / c as f64).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, set: &SeriesSet) -> SeriesSet {
        let d = set.dims();
        let mut out = set.clone();
        for (i, v) in out.values.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        out
    }
}

/// Regular timestamps `k / (T - 1)` on `[0, 1]`.
pub fn regular_grid(steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.0];
    }
    (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect()
}

/// One time-major batch holding every series of `set`; ids start at `first_id`.
pub fn to_batch(set: &SeriesSet, split: Split, first_id: u64, norm: Option<NormStats>) -> Result<TimeSeriesBatch> {
    let (n, t, d) = (set.len(), set.steps(), set.dims());
    let mut raw = vec![0.0; n * t * d];
    for i in 0..n {
        for k in 0..t {
            let src = (i * t + k) * d;
            let dst = (k * n + i) * d;
            raw[dst..dst + d].copy_from_slice(&set.values.data()[src..src + d]);
        }
    }
    let labels = if set.classes.is_empty() {
        None
    } else {
        Some(set.labels.clone())
    };
    TimeSeriesBatch::with_missing(
        Tensor::new([t, n, d], raw)?,
        regular_grid(t),
        labels,
        (first_id..first_id + n as u64).collect(),
        BatchMeta {
            dataset: set.name.clone(),
            split,
            norm,
        },
    )
}

/// Loads train and test files, z-normalizing both with train statistics.
pub fn load_dataset(train: &Path, test: &Path, format: Format) -> Result<Dataset> {
    let tr = read_series(train, format)?;
    let te = read_series(test, format)?;
    if tr.is_empty() || te.is_empty() {
        return Err(Error::invalid(
            "train and test files must each hold at least one series",
        ));
    }
    if tr.classes != te.classes || tr.dims() != te.dims() || tr.steps() != te.steps() {
        return Err(Error::invalid(format!(
            "train and test files disagree on classes, channels or length ({}x{} vs {}x{})",
            tr.steps(),
            tr.dims(),
            te.steps(),
            te.dims()
        )));
    }
    let stats = NormStats::fit(&tr);
    let mut meta = BTreeMap::new();
    meta.insert("source".into(), train.display().to_string());
    meta.insert(
        "normalization".into(),
        "z-score, train statistics, before masking".into(),
    );
    Ok(Dataset {
        name: tr.name.clone(),
        train: vec![to_batch(&stats.apply(&tr), Split::Train, 0, Some(stats.clone()))?],
        test: vec![to_batch(
            &stats.apply(&te),
            Split::Test,
            tr.len() as u64,
            Some(stats.clone()),
        )?],
        num_classes: if tr.classes.is_empty() {
            None
        } else {
            Some(tr.classes.len())
        },
        dims: tr.dims(),
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
# two dims, three steps
@problemName Tiny
@univariate false
@dimensions 2
@equalLength true
@seriesLength 3
@classLabel true a b
@data
1,2,3:4,5,6:b
0.5,?,1:2,2,2:a
";

    #[test]
    fn parses_repository_format() {
        let s = parse_ts(SMALL, Path::new("x.ts")).unwrap();
        assert_eq!(s.name, "Tiny");
        assert_eq!(s.values.shape(), &[2, 3, 2]);
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(&s.values.data()[..6], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(s.values.data()[8].is_nan());
    }

    #[test]
    fn rejects_malformed_input() {
        let p = Path::new("x.ts");
        assert!(parse_ts("@problemName x\n1,2:a\n", p).is_err());
        assert!(parse_ts(&SMALL.replace(":b\n", ":c\n"), p).is_err());
        assert!(parse_ts(&SMALL.replace("1,2,3:4", "1,2:4"), p).is_err());
        assert!(parse_ts(&SMALL.replace("@classLabel true a b", "@classLabel true"), p).is_err());
        assert!(parse_ts(&SMALL.replace("0.5,?", "0.5,x"), p).is_err());
        assert!(parse_csv("a,1,2,3\n", Path::new("x.csv"), 2).is_err());
        assert!(parse_csv("#classes=a\nb,1,2\n", Path::new("x.csv"), 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = parse_ts(SMALL, Path::new("Tiny.ts")).unwrap();
        let mut odd = s.clone();
        odd.values.data_mut()[0] = 0.1 + 0.2;
        odd.values.data_mut()[1] = -1e-300;
        let back = parse_csv(&write_csv(&odd), Path::new("Tiny.csv"), 2).unwrap();
        assert!(back.same_bits(&odd));
    }

    #[test]
    fn normalization_uses_observed_entries() {
        let s = parse_ts(SMALL, Path::new("x.ts")).unwrap();
        let stats = NormStats::fit(&s);
        let z = stats.apply(&s);
        let chan0: Vec<f64> = z
            .values
            .data()
            .iter()
            .step_by(2)
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        let m = chan0.iter().sum::<f64>() / chan0.len() as f64;
        let v = chan0.iter().map(|x| (x - m).powi(2)).sum::<f64>() / chan0.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        let b = to_batch(&z, Split::Train, 0, Some(stats)).unwrap();
        assert_eq!(b.values.shape(), &[3, 2, 2]);
        assert_eq!(b.timestamps, vec![0.0, 0.5, 1.0]);
        b.validate().unwrap();
        assert_eq!(b.mask.sum(), 11.0);
    }
}
