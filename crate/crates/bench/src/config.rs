//! Experiment configuration: INI-style sections of `key = value` pairs.
//!
//! ```text
//! [experiment]
//! name = periodic-sweep
//! task = interpolation
//! variants = sde-rnn,sde-tvf-l
//! seeds = 0,1,2
//!
//! [dataset]
//! source = periodic
//! trajectories = 200
//!
//! [model]
//! latent = 16
//!
//! [train]
//! iterations = 300
//! ```
//!
//! Several datasets are declared as `[dataset.<name>]` sections. Every key has
//! a default, and [`ExperimentConfig::to_ini`] writes all of them back out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sdeattn::data::{
    generate_frequency, generate_periodic, load_cached, load_dataset, Dataset, Format, FrequencySpec, PeriodicSpec,
};
use sdeattn::model::{ModelConfig, Variant};
use sdeattn::optim::AdamConfig;
use sdeattn::train::{model_config_pairs, set_model_key, TaskKind, TrainConfig};

use crate::error::{BenchError, Result};

pub const DEFAULT_MISSING_RATES: [f64; 4] = [0.0, 0.3, 0.6, 0.9];
pub const DEFAULT_OBSERVED_RATES: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Model keys filled in from the dataset unless set explicitly.
const DERIVED_MODEL_KEYS: [&str; 3] = ["input_dim", "num_classes", "max_len"];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Periodic(PeriodicSpec),
    Frequency(FrequencySpec),
    /// A pair of train/test files in `.ts` or CSV form.
    Files {
        train: PathBuf,
        test: PathBuf,
        format: Format,
    },
    /// A dataset cache written by `generate-data`.
    Cache(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DatasetSource,
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset> {
        let mut ds = match &self.source {
            DatasetSource::Periodic(spec) => generate_periodic(spec)?,
            DatasetSource::Frequency(spec) => generate_frequency(spec)?,
            DatasetSource::Files { train, test, format } => load_dataset(train, test, *format)?,
            DatasetSource::Cache(path) => load_cached(path)?.0,
        };
        ds.name = self.name.clone();
        Ok(ds)
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let pair = |a: f64, b: f64| format!("{a},{b}");
        match &self.source {
            DatasetSource::Periodic(s) => vec![
                ("source", "periodic".into()),
                ("trajectories", s.trajectories.to_string()),
                ("points", s.points.to_string()),
                ("amplitude", pair(s.amplitude.0, s.amplitude.1)),
                ("frequency", pair(s.frequency.0, s.frequency.1)),
                ("offset", pair(s.offset.0, s.offset.1)),
                ("ou_theta", s.noise.theta.to_string()),
                ("ou_mu", s.noise.mu.to_string()),
                ("ou_sigma", s.noise.sigma.to_string()),
                ("group_size", s.group_size.to_string()),
                ("train_fraction", s.train_fraction.to_string()),
                ("seed", s.seed.to_string()),
            ],
            DatasetSource::Frequency(s) => vec![
                ("source", "frequency".into()),
                ("train", s.train.to_string()),
                ("test", s.test.to_string()),
                ("points", s.points.to_string()),
                ("frequencies", pair(s.frequencies.0, s.frequencies.1)),
                ("span", s.span.to_string()),
                ("seed", s.seed.to_string()),
            ],
            DatasetSource::Files { train, test, format } => {
                let (fmt, dims) = match format {
                    Format::Ts => ("ts", 1),
                    Format::Csv { dims } => ("csv", *dims),
                };
                vec![
                    ("source", "files".into()),
                    ("train", train.display().to_string()),
                    ("test", test.display().to_string()),
                    ("format", fmt.into()),
                    ("csv_dims", dims.to_string()),
                ]
            }
            DatasetSource::Cache(path) => vec![("source", "cache".into()), ("path", path.display().to_string())],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskKind,
    pub variants: Vec<Variant>,
    /// Classification sweep rates.
    pub missing_rates: Vec<f64>,
    /// Interpolation sweep rates.
    pub observed_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub workers: usize,
    pub datasets: Vec<DatasetConfig>,
    /// Explicit `[model]` keys; everything else keeps its default.
    pub model: BTreeMap<String, String>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            task: TaskKind::Classification,
            variants: Variant::ALL.to_vec(),
            missing_rates: DEFAULT_MISSING_RATES.to_vec(),
            observed_rates: DEFAULT_OBSERVED_RATES.to_vec(),
            seeds: vec![0, 1, 2],
            output: PathBuf::from("runs/experiment"),
            workers: 1,
            datasets: vec![DatasetConfig {
                name: "frequency".into(),
                source: DatasetSource::Frequency(FrequencySpec::default()),
            }],
            model: BTreeMap::new(),
            train: TrainConfig::default(),
        }
    }
}

fn bad(section: &str, key: &str, value: &str) -> BenchError {
    BenchError::Config(format!("[{section}] {key} = {value:?} is not valid"))
}

fn parse<V: FromStr>(section: &str, key: &str, value: &str) -> Result<V> {
    value.trim().parse().map_err(|_| bad(section, key, value))
}

fn parse_list<V: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn parse_pair(section: &str, key: &str, value: &str) -> Result<(f64, f64)> {
    match parse_list::<f64>(section, key, value)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(bad(section, key, value)),
    }
}

fn parse_optional<V: FromStr>(section: &str, key: &str, value: &str) -> Result<Option<V>> {
    if value.trim() == "none" {
        Ok(None)
    } else {
        parse(section, key, value).map(Some)
    }
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn optional<V: ToString>(v: Option<V>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn parse_dataset(name: &str, pairs: &[(String, String)]) -> Result<DatasetConfig> {
    let section = if name.is_empty() {
        "dataset".to_string()
    } else {
        format!("dataset.{name}")
    };
    let source = pairs
        .iter()
        .find(|(k, _)| k == "source")
        .map_or("frequency", |(_, v)| v.as_str());
    let s = section.as_str();
    let source = match source {
        "periodic" => {
            let mut spec = PeriodicSpec::default();
            for (k, v) in pairs {
                match k.as_str() {
                    "source" => {}
                    "trajectories" => spec.trajectories = parse(s, k, v)?,
                    "points" => spec.points = parse(s, k, v)?,
                    "amplitude" => spec.amplitude = parse_pair(s, k, v)?,
                    "frequency" => spec.frequency = parse_pair(s, k, v)?,
                    "offset" => spec.offset = parse_pair(s, k, v)?,
                    "ou_theta" => spec.noise.theta = parse(s, k, v)?,
                    "ou_mu" => spec.noise.mu = parse(s, k, v)?,
                    "ou_sigma" => spec.noise.sigma = parse(s, k, v)?,
                    "group_size" => spec.group_size = parse(s, k, v)?,
                    "train_fraction" => spec.train_fraction = parse(s, k, v)?,
                    "seed" => spec.seed = parse(s, k, v)?,
                    _ => return Err(BenchError::Config(format!("unknown key {k:?} in [{s}] (periodic)"))),
                }
            }
            DatasetSource::Periodic(spec)
        }
        "frequency" => {
            let mut spec = FrequencySpec::default();
            for (k, v) in pairs {
                match k.as_str() {
                    "source" => {}
                    "train" => spec.train = parse(s, k, v)?,
                    "test" => spec.test = parse(s, k, v)?,
                    "points" => spec.points = parse(s, k, v)?,
                    "frequencies" => spec.frequencies = parse_pair(s, k, v)?,
                    "span" => spec.span = parse(s, k, v)?,
                    "seed" => spec.seed = parse(s, k, v)?,
                    _ => return Err(BenchError::Config(format!("unknown key {k:?} in [{s}] (frequency)"))),
                }
            }
            DatasetSource::Frequency(spec)
        }
        "files" => {
            let (mut train, mut test, mut format, mut dims) = (None, None, None, 1usize);
            for (k, v) in pairs {
                match k.as_str() {
                    "source" => {}
                    "train" => train = Some(PathBuf::from(v)),
                    "test" => test = Some(PathBuf::from(v)),
                    "format" => format = Some(v.clone()),
                    "csv_dims" => dims = parse(s, k, v)?,
                    _ => return Err(BenchError::Config(format!("unknown key {k:?} in [{s}] (files)"))),
                }
            }
            let (train, test) = train
                .zip(test)
                .ok_or_else(|| BenchError::Config(format!("[{s}] needs both train and test paths")))?;
            let format = match format.as_deref() {
                Some("ts") => Format::Ts,
                Some("csv") => Format::Csv { dims },
                None => Format::from_path(&train, dims),
                Some(other) => return Err(bad(s, "format", other)),
            };
            DatasetSource::Files { train, test, format }
        }
        "cache" => {
            let mut path = None;
            for (k, v) in pairs {
                match k.as_str() {
                    "source" => {}
                    "path" => path = Some(PathBuf::from(v)),
                    _ => return Err(BenchError::Config(format!("unknown key {k:?} in [{s}] (cache)"))),
                }
            }
            DatasetSource::Cache(path.ok_or_else(|| BenchError::Config(format!("[{s}] needs a path")))?)
        }
        other => return Err(bad(s, "source", other)),
    };
    let name = if name.is_empty() {
        match &source {
            DatasetSource::Periodic(_) => "periodic".to_string(),
            DatasetSource::Frequency(_) => "frequency".to_string(),
            DatasetSource::Files { train, .. } | DatasetSource::Cache(train) => train
                .file_stem()
                .and_then(|s| s.to_str())
                .map(|s| s.trim_end_matches("_TRAIN").to_string())
                .unwrap_or_else(|| "dataset".into()),
        }
    } else {
        name.to_string()
    };
    Ok(DatasetConfig { name, source })
}

impl ExperimentConfig {
    pub fn from_ini(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        let mut datasets = Vec::new();
        for (section, props) in ini.iter() {
            let pairs: Vec<(String, String)> = props.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            match section {
                None if pairs.is_empty() => {}
                None => return Err(BenchError::Config("keys must appear inside a section".into())),
                Some("experiment") => {
                    for (k, v) in &pairs {
                        cfg.set_experiment_key(k, v)?;
                    }
                }
                Some("model") => {
                    for (k, v) in &pairs {
                        cfg.set_model(k, v)?;
                    }
                }
                Some("train") => {
                    for (k, v) in &pairs {
                        cfg.set_train_key(k, v)?;
                    }
                }
                Some("dataset") => datasets.push(parse_dataset("", &pairs)?),
                Some(s) if s.starts_with("dataset.") => datasets.push(parse_dataset(&s["dataset.".len()..], &pairs)?),
                Some(s) => return Err(BenchError::Config(format!("unknown section [{s}]"))),
            }
        }
        if !datasets.is_empty() {
            cfg.datasets = datasets;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_ini(&text)
    }

    /// Applies a `section.key=value` override; `key=value` means `[experiment]`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (lhs, value) = assignment
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("override {assignment:?} is not key=value")))?;
        let (lhs, value) = (lhs.trim(), value.trim());
        let (section, key) = lhs.split_once('.').unwrap_or(("experiment", lhs));
        match section {
            "experiment" => self.set_experiment_key(key, value)?,
            "model" => self.set_model(key, value)?,
            "train" => self.set_train_key(key, value)?,
            "dataset" => {
                if self.datasets.len() != 1 {
                    return Err(BenchError::Config("dataset overrides need exactly one dataset".into()));
                }
                let d = &self.datasets[0];
                let mut pairs: Vec<(String, String)> = d.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                if key == "source" {
                    pairs = Vec::new();
                }
                match pairs.iter_mut().find(|(k, _)| k == key) {
                    Some(slot) => slot.1 = value.to_string(),
                    None => pairs.push((key.to_string(), value.to_string())),
                }
                self.datasets[0] = parse_dataset(&d.name, &pairs)?;
            }
            _ => return Err(BenchError::Config(format!("unknown override section {section:?}"))),
        }
        self.validate()
    }

    fn set_experiment_key(&mut self, k: &str, v: &str) -> Result<()> {
        let s = "experiment";
        match k {
            "name" => self.name = v.to_string(),
            "task" => self.task = parse(s, k, v)?,
            "variants" => self.variants = parse_list(s, k, v)?,
            "missing_rates" => self.missing_rates = parse_list(s, k, v)?,
            "observed_rates" => self.observed_rates = parse_list(s, k, v)?,
            "seeds" => self.seeds = parse_list(s, k, v)?,
            "output" => self.output = PathBuf::from(v),
            "workers" => self.workers = parse(s, k, v)?,
            _ => return Err(BenchError::Config(format!("unknown key {k:?} in [experiment]"))),
        }
        Ok(())
    }

    fn set_model(&mut self, k: &str, v: &str) -> Result<()> {
        if k == "attention" {
            return Err(BenchError::Config(
                "the attention kind follows the variant; set [experiment] variants".into(),
            ));
        }
        if v == "auto" && DERIVED_MODEL_KEYS.contains(&k) {
            self.model.remove(k);
            return Ok(());
        }
        let mut probe = ModelConfig::default();
        set_model_key(&mut probe, k, v).map_err(|e| BenchError::Config(format!("[model] {e}")))?;
        // Keys set to their default are not kept, so an echoed config parses
        // back to the same value.
        if probe == ModelConfig::default() && !DERIVED_MODEL_KEYS.contains(&k) {
            self.model.remove(k);
        } else {
            self.model.insert(k.to_string(), v.to_string());
        }
        Ok(())
    }

    fn set_train_key(&mut self, k: &str, v: &str) -> Result<()> {
        let s = "train";
        let t = &mut self.train;
        match k {
            "iterations" => t.iterations = parse(s, k, v)?,
            "epochs" => t.epochs = parse_optional(s, k, v)?,
            "batch_size" => t.batch_size = parse(s, k, v)?,
            "lr" => t.adam.lr = parse(s, k, v)?,
            "beta1" => t.adam.beta1 = parse(s, k, v)?,
            "beta2" => t.adam.beta2 = parse(s, k, v)?,
            "eps" => t.adam.eps = parse(s, k, v)?,
            "clip_norm" => t.clip_norm = parse_optional(s, k, v)?,
            "resample_brownian" => t.resample_brownian = parse(s, k, v)?,
            "eval_batch_size" => t.eval_batch_size = parse(s, k, v)?,
            _ => return Err(BenchError::Config(format!("unknown key {k:?} in [train]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(BenchError::Config(m));
        if self.seeds.is_empty() {
            return err("at least one seed is required".into());
        }
        if self.variants.is_empty() {
            return err("at least one variant is required".into());
        }
        if self.rates().is_empty() {
            return err(format!("no rates configured for the {} task", self.task));
        }
        for &r in self.missing_rates.iter().chain(&self.observed_rates) {
            if !(0.0..=1.0).contains(&r) {
                return err(format!("rate {r} lies outside [0, 1]"));
            }
        }
        if self.observed_rates.contains(&0.0) {
            return err("observed rates must be positive".into());
        }
        if self.workers == 0 || self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return err("workers and batch sizes must be positive".into());
        }
        if self.datasets.is_empty() {
            return err("at least one dataset is required".into());
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return err("dataset names must be unique".into());
        }
        for (label, list) in [
            (
                "variants",
                has_duplicates(&self.variants.iter().map(|v| v.as_str().to_string()).collect::<Vec<_>>()),
            ),
            (
                "seeds",
                has_duplicates(&self.seeds.iter().map(u64::to_string).collect::<Vec<_>>()),
            ),
            (
                "rates",
                has_duplicates(&self.rates().iter().map(f64::to_string).collect::<Vec<_>>()),
            ),
        ] {
            if list {
                return err(format!("{label} contain duplicates"));
            }
        }
        Ok(())
    }

    /// Rates swept for the configured task.
    pub fn rates(&self) -> &[f64] {
        match self.task {
            TaskKind::Interpolation => &self.observed_rates,
            TaskKind::Classification => &self.missing_rates,
        }
    }

    /// Model configuration for one variant on one dataset.
    pub fn model_config(&self, variant: Variant, data: &Dataset) -> Result<ModelConfig> {
        let mut cfg = ModelConfig {
            input_dim: data.dims,
            num_classes: match self.task {
                TaskKind::Classification => data.num_classes,
                TaskKind::Interpolation => None,
            },
            max_len: data.max_steps().max(1),
            ..Default::default()
        };
        for (k, v) in &self.model {
            set_model_key(&mut cfg, k, v)?;
        }
        cfg.attention.kind = variant.attention();
        Ok(cfg)
    }

    /// The full configuration, defaults included, in the same format.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, pairs: &[(&str, String)]| {
            let _ = writeln!(out, "[{title}]");
            for (k, v) in pairs {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        };
        section(
            "experiment",
            &[
                ("name", self.name.clone()),
                ("task", self.task.to_string()),
                ("variants", join(&self.variants)),
                ("missing_rates", join(&self.missing_rates)),
                ("observed_rates", join(&self.observed_rates)),
                ("seeds", join(&self.seeds)),
                ("output", self.output.display().to_string()),
                ("workers", self.workers.to_string()),
            ],
        );
        for d in &self.datasets {
            section(&format!("dataset.{}", d.name), &d.pairs());
        }
        let model: Vec<(&str, String)> = model_config_pairs(&ModelConfig::default())
            .into_iter()
            .filter(|(k, _)| *k != "attention")
            .map(|(k, default)| {
                let v = match self.model.get(k) {
                    Some(v) => v.clone(),
                    None if DERIVED_MODEL_KEYS.contains(&k) => "auto".into(),
                    None => default,
                };
                (k, v)
            })
            .collect();
        section("model", &model);
        let t = &self.train;
        let AdamConfig { lr, beta1, beta2, eps } = t.adam;
        section(
            "train",
            &[
                ("iterations", t.iterations.to_string()),
                ("epochs", optional(t.epochs)),
                ("batch_size", t.batch_size.to_string()),
                ("lr", lr.to_string()),
                ("beta1", beta1.to_string()),
                ("beta2", beta2.to_string()),
                ("eps", eps.to_string()),
                ("clip_norm", optional(t.clip_norm)),
                ("resample_brownian", t.resample_brownian.to_string()),
                ("eval_batch_size", t.eval_batch_size.to_string()),
            ],
        );
        out.pop();
        out
    }

    /// The configuration with `output` and `workers` cleared; two runs with
    /// equal keys produce the same results.
    pub fn result_key(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = 1;
        c.to_ini()
    }
}

fn has_duplicates(items: &[String]) -> bool {
    let mut v = items.to_vec();
    v.sort_unstable();
    v.windows(2).any(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_echo() {
        let cfg = ExperimentConfig::default();
        let again = ExperimentConfig::from_ini(&cfg.to_ini()).unwrap();
        assert_eq!(again, cfg);
        assert!(cfg.to_ini().contains("max_len = auto"));
    }

    #[test]
    fn sections_and_overrides() {
        let text = "[experiment]\ntask = interpolation\nvariants = sde-rnn, sde-pyr\nseeds = 4\n\n\
                    [dataset.toy]\nsource = periodic\ntrajectories = 40\npoints = 12\n\n\
                    [model]\nlatent = 6\n\n[train]\niterations = 7\nclip_norm = none\n";
        let mut cfg = ExperimentConfig::from_ini(text).unwrap();
        assert_eq!(cfg.task, TaskKind::Interpolation);
        assert_eq!(cfg.variants, vec![Variant::SdeRnn, Variant::SdePyr]);
        assert_eq!(cfg.rates(), &DEFAULT_OBSERVED_RATES);
        assert_eq!(cfg.datasets[0].name, "toy");
        assert_eq!(cfg.train.clip_norm, None);
        cfg.apply_override("train.iterations=9").unwrap();
        cfg.apply_override("dataset.points=20").unwrap();
        cfg.apply_override("seeds=1,2").unwrap();
        assert_eq!(cfg.train.iterations, 9);
        assert_eq!(cfg.seeds, vec![1, 2]);
        match &cfg.datasets[0].source {
            DatasetSource::Periodic(s) => assert_eq!((s.trajectories, s.points), (40, 20)),
            other => panic!("{other:?}"),
        }
        assert_eq!(ExperimentConfig::from_ini(&cfg.to_ini()).unwrap(), cfg);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        for text in [
            "[experiment]\nseeds =\n",
            "[experiment]\nvariants = sde-lstm\n",
            "[experiment]\nmissing_rates = 0.2,1.5\n",
            "[experiment]\ncolour = red\n",
            "[model]\nattention = pyramidal\n",
            "[model]\nlatent = many\n",
            "[dataset]\nsource = files\ntrain = a.ts\n",
            "[weather]\nrain = 1\n",
        ] {
            assert!(ExperimentConfig::from_ini(text).is_err(), "{text}");
        }
    }

    #[test]
    fn model_keys_follow_the_dataset() {
        let cfg = ExperimentConfig::default();
        let data = cfg.datasets[0].load().unwrap();
        let m = cfg.model_config(Variant::SdeTvfL, &data).unwrap();
        assert_eq!((m.input_dim, m.num_classes, m.max_len), (1, Some(2), 32));
        assert_eq!(m.attention.kind, sdeattn::attention::AttentionKind::TvfLstm);
    }
}
