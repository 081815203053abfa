//! Seeded training and evaluation of [`SdeRnn`] models.
//!
//! All randomness in a run derives from one master seed: parameter
//! initialization, batch sampling, missingness masks and Brownian paths each
//! draw from their own [`Stream`].

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::attention::AttentionKind;
use crate::data::{apply_mcar_keep_first, chunk, hold_out_observation, BatchSampler, Dataset, Split, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, cross_entropy, interpolation_loss, ModelConfig, Readout, SdeRnn};
use crate::nn::ParameterStore;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::seed::{derive_seed, Stream};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    /// Condition on a fraction `observed_rate` of each sequence's time points
    /// and predict the full grid; scored by MSE.
    Interpolation { observed_rate: f64 },
    /// Drop entries completely at random with probability `missing_rate` and
    /// predict the label; scored by accuracy.
    Classification { missing_rate: f64 },
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Interpolation { .. } => TaskKind::Interpolation,
            Task::Classification { .. } => TaskKind::Classification,
        }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            Task::Interpolation { observed_rate } => observed_rate,
            Task::Classification { missing_rate } => missing_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Interpolation,
    Classification,
}

impl TaskKind {
    pub fn with_rate(self, rate: f64) -> Task {
        match self {
            TaskKind::Interpolation => Task::Interpolation { observed_rate: rate },
            TaskKind::Classification => Task::Classification { missing_rate: rate },
        }
    }

    /// Name of the reported metric.
    pub fn metric(self) -> &'static str {
        match self {
            TaskKind::Interpolation => "mse",
            TaskKind::Classification => "accuracy",
        }
    }

    /// Whether a larger metric is better.
    pub fn higher_is_better(self) -> bool {
        self == TaskKind::Classification
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Interpolation => "interpolation",
            TaskKind::Classification => "classification",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(TaskKind::Interpolation),
            "classification" => Ok(TaskKind::Classification),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Optimizer steps, one mini-batch each.
    pub iterations: usize,
    /// When set, overrides `iterations` with `epochs × ⌈N_train / batch⌉`.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Draw fresh Brownian paths every iteration instead of one fixed path per
    /// sequence.
    pub resample_brownian: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 100,
            epochs: None,
            batch_size: 32,
            adam: AdamConfig::default(),
            clip_norm: Some(5.0),
            resample_brownian: true,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn total_iterations(&self, train_len: usize) -> usize {
        match self.epochs {
            Some(e) => e * train_len.div_ceil(self.batch_size.max(1)),
            None => self.iterations,
        }
    }
}

/// Trained (or initial) parameters together with everything needed to rebuild
/// and evaluate the model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub seed: u64,
    pub store: ParameterStore<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub seed: u64,
    pub iterations: usize,
    pub batch_size: usize,
    pub losses: Vec<f64>,
    /// Cumulative wall-clock milliseconds at the end of each iteration.
    pub wall_ms: Vec<f64>,
    /// Diverged trajectories per iteration.
    pub diverged: Vec<usize>,
    /// Updates skipped because the loss or a gradient was not finite.
    pub skipped_updates: usize,
}

impl TrainRun {
    pub fn diverged_count(&self) -> usize {
        self.diverged.iter().sum::<usize>() + self.skipped_updates
    }

    pub fn total_wall_ms(&self) -> f64 {
        self.wall_ms.last().copied().unwrap_or(0.0)
    }

    /// One `iteration,loss,wall_ms,diverged` record per line, with a header.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,loss,wall_ms,diverged\n");
        for (i, ((l, w), d)) in self.losses.iter().zip(&self.wall_ms).zip(&self.diverged).enumerate() {
            let _ = writeln!(s, "{},{l},{w:.3},{d}", i + 1);
        }
        s
    }
}

/// Seed of the missingness masks for a run.
pub fn mask_seed(master: u64) -> u64 {
    derive_seed(master, Stream::Mask, 0)
}

/// Base seed of the fixed Brownian paths for a run.
pub fn brownian_seed(master: u64) -> u64 {
    derive_seed(master, Stream::Brownian, 0)
}

/// Applies the task's missingness to every group of one split. The masks are
/// keyed per sequence id, so they do not depend on grouping.
pub fn prepare_split(data: &Dataset, split: Split, task: Task, master: u64) -> Result<Vec<TimeSeriesBatch>> {
    let seed = mask_seed(master);
    data.split(split)
        .iter()
        .map(|g| match task {
            Task::Interpolation { observed_rate } => hold_out_observation(g, observed_rate, seed).map(|(c, _)| c),
            Task::Classification { missing_rate } => apply_mcar_keep_first(g, missing_rate, seed),
        })
        .collect()
}

/// Builds the model and its initial parameters for `seed`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<(SdeRnn, ParameterStore<f64>)> {
    let mut store = ParameterStore::new(derive_seed(seed, Stream::Init, 0));
    let model = SdeRnn::new(&mut store, cfg.clone())?;
    Ok((model, store))
}

fn loss_and_grads(
    model: &SdeRnn,
    store: &ParameterStore,
    batch: &TimeSeriesBatch,
    task: Task,
    path_seed: u64,
) -> Result<(f64, usize, Vec<Tensor>)> {
    let tape = Tape::lenient();
    let p = store.bind(&tape);
    let path = model.brownian_path(batch, path_seed)?;
    let trace = model.forward(&p, batch, &path)?;
    let loss = match task {
        Task::Interpolation { .. } => {
            let targets = batch.targets.as_ref().unwrap_or(&batch.values);
            interpolation_loss(&trace, targets)?
        }
        Task::Classification { .. } => {
            let labels = batch
                .labels
                .as_ref()
                .ok_or_else(|| Error::invalid("classification batch has no labels"))?;
            cross_entropy(model.classification_logits(&p, &trace)?, labels, &trace.diverged)?
        }
    };
    let value = loss.value().item()?;
    let diverged = trace.num_diverged();
    let mut g = tape.backward(loss)?;
    let collected = p.vars().iter().map(|v| g.take(v.id())).collect();
    Ok((value, diverged, collected))
}

/// Trains a fresh model on the training split of `data`.
pub fn train(model_cfg: &ModelConfig, data: &Dataset, task: Task, cfg: &TrainConfig) -> Result<(Checkpoint, TrainRun)> {
    train_with_log(model_cfg, data, task, cfg, |_, _| {})
}

/// [`train`] calling `on_iteration(index, loss)` after every step.
pub fn train_with_log(
    model_cfg: &ModelConfig,
    data: &Dataset,
    task: Task,
    cfg: &TrainConfig,
    on_iteration: impl FnMut(usize, f64),
) -> Result<(Checkpoint, TrainRun)> {
    let (_, store) = init_model(model_cfg, cfg.seed)?;
    let start = Checkpoint {
        model: model_cfg.clone(),
        seed: cfg.seed,
        store,
    };
    train_from(start, data, task, cfg, on_iteration)
}

/// Continues training from `start`; sampling, masks and paths follow `cfg.seed`.
pub fn train_from(
    start: Checkpoint,
    data: &Dataset,
    task: Task,
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, f64),
) -> Result<(Checkpoint, TrainRun)> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if task.kind() == TaskKind::Classification && start.model.num_classes.is_none() {
        return Err(Error::invalid(
            "classification needs a model with a classification head",
        ));
    }
    let model = start.build()?;
    let Checkpoint {
        model: model_cfg,
        mut store,
        ..
    } = start;
    let groups = prepare_split(data, Split::Train, task, cfg.seed)?;
    let iterations = cfg.total_iterations(data.len(Split::Train));
    let mut run = TrainRun {
        seed: cfg.seed,
        iterations,
        batch_size: cfg.batch_size,
        losses: Vec::with_capacity(iterations),
        wall_ms: Vec::with_capacity(iterations),
        diverged: Vec::with_capacity(iterations),
        skipped_updates: 0,
    };
    if iterations > 0 {
        let mut sampler = BatchSampler::new(&groups, cfg.batch_size, derive_seed(cfg.seed, Stream::Shuffle, 0))?;
        let mut adam = Adam::new(cfg.adam, store.values());
        let mut skipped = 0;
        let clock = Instant::now();
        for it in 0..iterations {
            let batch = sampler.next_batch()?;
            let path_seed = if cfg.resample_brownian {
                derive_seed(cfg.seed, Stream::Brownian, it as u64)
            } else {
                brownian_seed(cfg.seed)
            };
            let (loss, diverged, mut grads) = match loss_and_grads(&model, &store, &batch, task, path_seed) {
                Err(Error::AllDiverged(n)) => {
                    return Err(Error::invalid(format!(
                        "training aborted at iteration {}: all {n} trajectories in the batch diverged",
                        it + 1
                    )))
                }
                other => other?,
            };
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            if loss.is_finite() {
                adam.step(store.values_mut(), &grads)?;
            } else {
                skipped += 1;
            }
            run.losses.push(loss);
            run.diverged.push(diverged);
            run.wall_ms.push(clock.elapsed().as_secs_f64() * 1e3);
            on_iteration(it + 1, loss);
        }
        run.skipped_updates = adam.skipped() + skipped;
    }
    let checkpoint = Checkpoint {
        model: model_cfg,
        seed: cfg.seed,
        store,
    };
    Ok((checkpoint, run))
}

/// Test-split score of one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub task: TaskKind,
    /// Accuracy or MSE over the non-diverged sequences.
    pub value: f64,
    pub sequences: usize,
    pub diverged: usize,
}

/// Scores `checkpoint` on `split` of `data` under `task`.
pub fn evaluate(
    checkpoint: &Checkpoint,
    data: &Dataset,
    split: Split,
    task: Task,
    batch_size: usize,
) -> Result<Evaluation> {
    let model = checkpoint.build()?;
    let groups = prepare_split(data, split, task, checkpoint.seed)?;
    let path_seed = brownian_seed(checkpoint.seed);
    let store = &checkpoint.store;
    let (mut total, mut weight, mut sequences, mut diverged) = (0.0, 0.0, 0usize, 0usize);
    for g in &groups {
        for b in chunk(g, batch_size.max(1))? {
            sequences += b.batch_size();
            let tape = Tape::lenient();
            let p = store.bind(&tape);
            let path = model.brownian_path(&b, path_seed)?;
            let trace = model.forward(&p, &b, &path)?;
            let bad = trace.diverged.clone();
            let n_ok = bad.iter().filter(|&&d| !d).count();
            diverged += b.batch_size() - n_ok;
            if n_ok == 0 {
                continue;
            }
            match task {
                Task::Interpolation { .. } => {
                    let targets = b.targets.as_ref().unwrap_or(&b.values);
                    let mse = interpolation_loss(&trace, targets)?.value().item()?;
                    total += mse * n_ok as f64;
                    weight += n_ok as f64;
                }
                Task::Classification { .. } => {
                    let labels = b
                        .labels
                        .as_ref()
                        .ok_or_else(|| Error::invalid("evaluation batch has no labels"))?;
                    let pred = argmax_rows(&model.classification_logits(&p, &trace)?.value());
                    for ((pr, l), d) in pred.iter().zip(labels).zip(&bad) {
                        if !d {
                            total += (pr == l) as u8 as f64;
                            weight += 1.0;
                        }
                    }
                }
            }
        }
    }
    if sequences == 0 {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if weight == 0.0 {
        return Err(Error::AllDiverged(sequences));
    }
    Ok(Evaluation {
        task: task.kind(),
        value: total / weight,
        sequences,
        diverged,
    })
}

/// Mean and population standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // One corrective pass keeps the mean of identical values exact.
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Summary {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

/// Per-seed metric values for one configuration, with their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub summary: Summary,
}

impl MetricsReport {
    pub fn new(task: TaskKind, runs: &[(u64, f64)]) -> Result<Self> {
        let values: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let summary = summarize(&values).ok_or_else(|| Error::invalid("no runs to report"))?;
        Ok(Self {
            task,
            seeds: runs.iter().map(|r| r.0).collect(),
            values,
            summary,
        })
    }
}

/// Trains and evaluates one configuration for each seed.
pub fn train_and_evaluate(
    model_cfg: &ModelConfig,
    data: &Dataset,
    task: Task,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<MetricsReport> {
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let (ckpt, _) = train(model_cfg, data, task, &run_cfg)?;
        runs.push((
            seed,
            evaluate(&ckpt, data, Split::Test, task, cfg.eval_batch_size)?.value,
        ));
    }
    MetricsReport::new(task.kind(), &runs)
}

const CHECKPOINT_MAGIC: &str = "# sdeattn checkpoint v1";

fn join_usizes(v: &[usize]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_usizes(s: &str) -> Result<Vec<usize>> {
    if s == "-" || s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| parse_value(x.trim())).collect()
}

fn parse_value<V: FromStr>(s: &str) -> Result<V> {
    s.parse().map_err(|_| Error::invalid(format!("cannot parse {s:?}")))
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn parse_opt_usize(s: &str) -> Result<Option<usize>> {
    if s == "none" {
        Ok(None)
    } else {
        parse_value(s).map(Some)
    }
}

/// `key = value` pairs describing a model configuration.
pub fn model_config_pairs(cfg: &ModelConfig) -> Vec<(&'static str, String)> {
    let a = &cfg.attention;
    vec![
        ("input_dim", cfg.input_dim.to_string()),
        ("latent", cfg.latent.to_string()),
        ("dynamics_hidden", join_usizes(&cfg.dynamics_hidden)),
        ("diffusion", cfg.diffusion.to_string()),
        ("attention", a.kind.to_string()),
        ("heads", a.heads.to_string()),
        ("reduction", a.reduction.to_string()),
        ("tvf_hidden", opt_usize(a.tvf_hidden)),
        ("tvf_depth", a.tvf_depth.to_string()),
        ("pyramid_levels", opt_usize(a.pyramid_levels)),
        ("stride_base", a.stride_base.to_string()),
        ("gate_bias", format!("{:?}", a.gate_bias)),
        ("output_hidden", join_usizes(&cfg.output_hidden)),
        ("feed_mask", cfg.feed_mask.to_string()),
        ("num_classes", opt_usize(cfg.num_classes)),
        ("readout", cfg.readout.to_string()),
        ("substeps", cfg.substeps.to_string()),
        ("max_len", cfg.max_len.to_string()),
        ("skip_unobserved", cfg.skip_unobserved.to_string()),
    ]
}

/// Applies one `key = value` pair to a model configuration.
pub fn set_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    let a = &mut cfg.attention;
    match key {
        "input_dim" => cfg.input_dim = parse_value(value)?,
        "latent" => cfg.latent = parse_value(value)?,
        "dynamics_hidden" => cfg.dynamics_hidden = parse_usizes(value)?,
        "diffusion" => cfg.diffusion = parse_value(value)?,
        "attention" => a.kind = value.parse::<AttentionKind>()?,
        "heads" => a.heads = parse_value(value)?,
        "reduction" => a.reduction = parse_value(value)?,
        "tvf_hidden" => a.tvf_hidden = parse_opt_usize(value)?,
        "tvf_depth" => a.tvf_depth = parse_value(value)?,
        "pyramid_levels" => a.pyramid_levels = parse_opt_usize(value)?,
        "stride_base" => a.stride_base = parse_value(value)?,
        "gate_bias" => a.gate_bias = parse_value(value)?,
        "output_hidden" => cfg.output_hidden = parse_usizes(value)?,
        "feed_mask" => cfg.feed_mask = parse_value(value)?,
        "num_classes" => cfg.num_classes = parse_opt_usize(value)?,
        "readout" => cfg.readout = value.parse::<Readout>()?,
        "substeps" => cfg.substeps = parse_value(value)?,
        "max_len" => cfg.max_len = parse_value(value)?,
        "skip_unobserved" => cfg.skip_unobserved = parse_value(value)?,
        _ => return Err(Error::invalid(format!("unknown model key {key:?}"))),
    }
    Ok(())
}

impl Checkpoint {
    pub fn build(&self) -> Result<SdeRnn> {
        let mut scratch = ParameterStore::<f64>::new(0);
        let model = SdeRnn::new(&mut scratch, self.model.clone())?;
        if scratch.names() != self.store.names() {
            return Err(Error::invalid(
                "checkpoint parameters do not match the model configuration",
            ));
        }
        Ok(model)
    }

    /// Text form: a `[model]` section of `key = value` lines, a `[run]` section
    /// with the seed, and a `[params]` section with one
    /// `name dims... : values...` line per tensor (values round-trip exactly).
    pub fn to_text(&self) -> String {
        let mut s = format!("{CHECKPOINT_MAGIC}\n[model]\n");
        for (k, v) in model_config_pairs(&self.model) {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "[run]\nseed = {}\n[params]", self.seed);
        for (name, value) in self.store.names().iter().zip(self.store.values()) {
            s.push_str(name);
            for d in value.shape() {
                let _ = write!(s, " {d}");
            }
            s.push_str(" :");
            for v in value.data() {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(Error::invalid("not a checkpoint file"));
        }
        let mut model = ModelConfig::default();
        let mut seed = None;
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut section = "";
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name {
                    "model" | "run" | "params" => name,
                    _ => return Err(Error::invalid(format!("unknown checkpoint section {name:?}"))),
                };
                continue;
            }
            match section {
                "model" | "run" => {
                    let (k, v) = line
                        .split_once('=')
                        .ok_or_else(|| Error::invalid(format!("expected key = value, got {line:?}")))?;
                    let (k, v) = (k.trim(), v.trim());
                    if section == "model" {
                        set_model_key(&mut model, k, v)?;
                    } else if k == "seed" {
                        seed = Some(parse_value(v)?);
                    } else {
                        return Err(Error::invalid(format!("unknown run key {k:?}")));
                    }
                }
                "params" => {
                    let (head, vals) = line
                        .split_once(':')
                        .ok_or_else(|| Error::invalid(format!("parameter line without ':' in {line:?}")))?;
                    let mut head = head.split_whitespace();
                    let name = head
                        .next()
                        .ok_or_else(|| Error::invalid("parameter line without a name"))?;
                    let shape: Vec<usize> = head.map(parse_value).collect::<Result<_>>()?;
                    let data: Vec<f64> = vals.split_whitespace().map(parse_value).collect::<Result<_>>()?;
                    params.push((name.to_string(), Tensor::new(shape, data)?));
                }
                _ => return Err(Error::invalid("checkpoint entry before any section")),
            }
        }
        let seed = seed.ok_or_else(|| Error::invalid("checkpoint has no seed"))?;
        let mut store = ParameterStore::new(derive_seed(seed, Stream::Init, 0));
        for (name, value) in params {
            store.register(name, value)?;
        }
        let ckpt = Self { model, seed, store };
        ckpt.build()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
