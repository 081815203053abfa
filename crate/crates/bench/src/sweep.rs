//! Sweeps over dataset × variant × rate × seed.
//!
//! Output directory layout:
//!
//! ```text
//! config.ini             every setting, defaults included
//! results.csv            one row per cell, canonical order, deterministic
//! timings.csv            wall-clock per cell (not deterministic)
//! logs/<cell>.csv        per-iteration training loss
//! checkpoints/<cell>.ckpt
//! ```
//!
//! Rows are appended and flushed as cells finish, so an interrupted sweep
//! resumes by skipping every cell already present in `results.csv`. The file
//! is rewritten in canonical order whenever a sweep invocation ends.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use sdeattn::data::{Dataset, Split};
use sdeattn::model::Variant;
use sdeattn::train::{evaluate, train, TaskKind, TrainConfig};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};

pub const RESULTS_HEADER: [&str; 13] = [
    "dataset",
    "task",
    "variant",
    "rate",
    "seed",
    "metric",
    "value",
    "sequences",
    "eval_diverged",
    "train_diverged",
    "skipped_updates",
    "status",
    "error",
];

pub const TIMINGS_HEADER: [&str; 6] = ["dataset", "variant", "rate", "seed", "train_ms", "eval_ms"];

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub dataset: String,
    pub variant: Variant,
    pub rate: f64,
    pub seed: u64,
}

impl Cell {
    /// File-name stem for the cell's log and checkpoint.
    pub fn id(&self) -> String {
        format!("{}__{}__r{}__s{}", self.dataset, self.variant, self.rate, self.seed)
    }

    fn key(&self) -> (String, Variant, u64, u64) {
        (self.dataset.clone(), self.variant, self.rate.to_bits(), self.seed)
    }
}

/// Outcome of one cell: a metric value or the error that stopped it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub task: TaskKind,
    pub value: Option<f64>,
    pub sequences: usize,
    /// Test sequences whose trajectory diverged during evaluation.
    pub eval_diverged: usize,
    /// Diverged trajectories summed over training iterations.
    pub train_diverged: usize,
    pub skipped_updates: usize,
    pub error: Option<String>,
}

impl CellResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    fn record(&self) -> Vec<String> {
        let c = &self.cell;
        vec![
            c.dataset.clone(),
            self.task.to_string(),
            c.variant.to_string(),
            c.rate.to_string(),
            c.seed.to_string(),
            self.task.metric().to_string(),
            self.value.map(|v| v.to_string()).unwrap_or_default(),
            self.sequences.to_string(),
            self.eval_diverged.to_string(),
            self.train_diverged.to_string(),
            self.skipped_updates.to_string(),
            if self.is_ok() { "ok" } else { "error" }.to_string(),
            self.error.clone().unwrap_or_default(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> std::result::Result<Self, String> {
        if r.len() != RESULTS_HEADER.len() {
            return Err(format!("expected {} fields, found {}", RESULTS_HEADER.len(), r.len()));
        }
        let field = |i: usize| r.get(i).unwrap_or_default();
        fn num<V: std::str::FromStr>(s: &str, what: &str) -> std::result::Result<V, String> {
            s.parse().map_err(|_| format!("bad {what} {s:?}"))
        }
        let cell = Cell {
            dataset: field(0).to_string(),
            variant: num(field(2), "variant")?,
            rate: num(field(3), "rate")?,
            seed: num(field(4), "seed")?,
        };
        let (value, error) = match field(11) {
            "ok" => (Some(num(field(6), "value")?), None),
            "error" => (None, Some(field(12).to_string())),
            s => return Err(format!("bad status {s:?}")),
        };
        Ok(Self {
            cell,
            task: num(field(1), "task")?,
            value,
            sequences: num(field(7), "sequences")?,
            eval_diverged: num(field(8), "eval_diverged")?,
            train_diverged: num(field(9), "train_diverged")?,
            skipped_updates: num(field(10), "skipped_updates")?,
            error,
        })
    }
}

/// Wall-clock of one cell, kept apart from the deterministic results.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub cell: Cell,
    pub train_ms: f64,
    pub eval_ms: f64,
}

impl Timing {
    fn record(&self) -> Vec<String> {
        let c = &self.cell;
        vec![
            c.dataset.clone(),
            c.variant.to_string(),
            c.rate.to_string(),
            c.seed.to_string(),
            format!("{:.3}", self.train_ms),
            format!("{:.3}", self.eval_ms),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Option<Self> {
        if r.len() != TIMINGS_HEADER.len() {
            return None;
        }
        Some(Self {
            cell: Cell {
                dataset: r[0].to_string(),
                variant: r[1].parse().ok()?,
                rate: r[2].parse().ok()?,
                seed: r[3].parse().ok()?,
            },
            train_ms: r[4].parse().ok()?,
            eval_ms: r[5].parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Stop after this many new cells, leaving the rest for a later run.
    pub max_cells: Option<usize>,
    /// Print one line per finished cell to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Every finished cell, in canonical order.
    pub results: Vec<CellResult>,
    pub timings: Vec<Timing>,
    /// Cells run by this invocation.
    pub executed: usize,
    /// Cells found finished in the output directory.
    pub reused: usize,
    /// Cells still to run.
    pub remaining: usize,
}

impl SweepOutcome {
    pub fn is_complete(&self) -> bool {
        self.remaining == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.results.iter().filter(|r| !r.is_ok())
    }
}

/// The full cross-product in canonical order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for d in &cfg.datasets {
        for &variant in &cfg.variants {
            for &rate in cfg.rates() {
                for &seed in &cfg.seeds {
                    out.push(Cell {
                        dataset: d.name.clone(),
                        variant,
                        rate,
                        seed,
                    });
                }
            }
        }
    }
    out
}

/// Trains and evaluates one cell. Logs and checkpoints go under `out` when given.
pub fn run_cell(cfg: &ExperimentConfig, data: &Dataset, cell: &Cell, out: Option<&Path>) -> (CellResult, Timing) {
    let task = cfg.task.with_rate(cell.rate);
    let mut result = CellResult {
        cell: cell.clone(),
        task: cfg.task,
        value: None,
        sequences: 0,
        eval_diverged: 0,
        train_diverged: 0,
        skipped_updates: 0,
        error: None,
    };
    let mut timing = Timing {
        cell: cell.clone(),
        train_ms: 0.0,
        eval_ms: 0.0,
    };
    let outcome = (|| -> Result<()> {
        let model = cfg.model_config(cell.variant, data)?;
        let train_cfg = TrainConfig {
            seed: cell.seed,
            ..cfg.train.clone()
        };
        let clock = Instant::now();
        let (ckpt, run) = train(&model, data, task, &train_cfg)?;
        timing.train_ms = clock.elapsed().as_secs_f64() * 1e3;
        result.train_diverged = run.diverged.iter().sum();
        result.skipped_updates = run.skipped_updates;
        if let Some(out) = out {
            let log = out.join("logs").join(format!("{}.csv", cell.id()));
            fs::write(&log, run.log_csv()).map_err(|e| BenchError::io(&log, e))?;
            ckpt.save(&out.join("checkpoints").join(format!("{}.ckpt", cell.id())))?;
        }
        let clock = Instant::now();
        let eval = evaluate(&ckpt, data, Split::Test, task, cfg.train.eval_batch_size)?;
        timing.eval_ms = clock.elapsed().as_secs_f64() * 1e3;
        result.value = Some(eval.value);
        result.sequences = eval.sequences;
        result.eval_diverged = eval.diverged;
        Ok(())
    })();
    if let Err(e) = outcome {
        result.error = Some(e.to_string());
    }
    (result, timing)
}

fn read_csv_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    // A sweep killed mid-write can leave a partial last line; drop it.
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(complete.as_bytes());
    reader.records().map(|r| r.map_err(BenchError::from)).collect()
}

/// Reads a `results.csv`.
pub fn read_results(path: &Path) -> Result<Vec<CellResult>> {
    read_csv_records(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            CellResult::from_record(r)
                .map_err(|m| BenchError::Results(path.to_path_buf(), format!("row {}: {m}", i + 1)))
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

struct Appender {
    path: PathBuf,
    file: File,
}

impl Appender {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| BenchError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn append(&mut self, record: Vec<String>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&record)?;
        let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
        self.file.write_all(&bytes).map_err(|e| BenchError::io(&self.path, e))?;
        self.file.flush().map_err(|e| BenchError::io(&self.path, e))
    }
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output;
    for dir in [out.clone(), out.join("logs"), out.join("checkpoints")] {
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    }
    let echo = out.join("config.ini");
    if echo.exists() {
        let previous = ExperimentConfig::load(&echo)?;
        if previous.result_key() != cfg.result_key() {
            return Err(BenchError::Config(format!(
                "{} holds results of a different experiment; use a fresh output directory",
                out.display()
            )));
        }
    }
    fs::write(&echo, cfg.to_ini()).map_err(|e| BenchError::io(&echo, e))
}

/// Runs every unfinished cell of `cfg` and returns all results so far.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<SweepOutcome> {
    cfg.validate()?;
    prepare_output(cfg)?;
    let out = cfg.output.as_path();
    let grid = cells(cfg);
    let order: BTreeMap<_, usize> = grid.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();

    let results_path = out.join("results.csv");
    let timings_path = out.join("timings.csv");
    let mut results: BTreeMap<usize, CellResult> = BTreeMap::new();
    for r in read_results(&results_path)? {
        let slot = order.get(&r.cell.key()).copied().ok_or_else(|| {
            BenchError::Results(
                results_path.clone(),
                format!("cell {} is not part of this experiment", r.cell.id()),
            )
        })?;
        if r.task != cfg.task {
            return Err(BenchError::Results(
                results_path.clone(),
                format!("cell {} has task {}", r.cell.id(), r.task),
            ));
        }
        results.insert(slot, r);
    }
    let mut timings: BTreeMap<usize, Timing> = read_csv_records(&timings_path)?
        .iter()
        .filter_map(Timing::from_record)
        .filter_map(|t| order.get(&t.cell.key()).map(|&i| (i, t)))
        .filter(|(i, _)| results.contains_key(i))
        .collect();
    let finish = |results: &BTreeMap<usize, CellResult>, timings: &BTreeMap<usize, Timing>| -> Result<()> {
        write_csv(&results_path, &RESULTS_HEADER, results.values().map(CellResult::record))?;
        write_csv(&timings_path, &TIMINGS_HEADER, timings.values().map(Timing::record))
    };
    finish(&results, &timings)?;

    let reused = results.len();
    let mut pending: Vec<usize> = (0..grid.len()).filter(|i| !results.contains_key(i)).collect();
    if let Some(max) = opts.max_cells {
        pending.truncate(max);
    }
    let needed: Vec<&str> = {
        let mut n: Vec<&str> = pending.iter().map(|&i| grid[i].dataset.as_str()).collect();
        n.dedup();
        n
    };
    let mut data: BTreeMap<&str, Dataset> = BTreeMap::new();
    for d in &cfg.datasets {
        if needed.contains(&d.name.as_str()) {
            data.insert(d.name.as_str(), d.load()?);
        }
    }

    let mut results_out = Appender::open(&results_path)?;
    let mut timings_out = Appender::open(&timings_path)?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut write_error = None;
    let total = grid.len();
    std::thread::scope(|s| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..cfg.workers.min(pending.len()) {
            let tx = tx.clone();
            let (next, stop, pending, grid, data) = (&next, &stop, &pending, &grid, &data);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= pending.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let cell = &grid[pending[k]];
                let ds = &data[cell.dataset.as_str()];
                let done =
                    catch_unwind(AssertUnwindSafe(|| run_cell(cfg, ds, cell, Some(out)))).unwrap_or_else(|panic| {
                        let msg = panic
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "unknown panic".into());
                        let (mut r, t) = failed(cfg, cell);
                        r.error = Some(format!("panic: {msg}"));
                        (r, t)
                    });
                if tx.send((pending[k], done)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (slot, (result, timing)) in rx {
            if write_error.is_some() {
                continue;
            }
            let written = results_out
                .append(result.record())
                .and_then(|_| timings_out.append(timing.record()));
            if let Err(e) = written {
                stop.store(true, Ordering::SeqCst);
                write_error = Some(e);
                continue;
            }
            if opts.progress {
                let status = match (&result.value, &result.error) {
                    (Some(v), _) => format!("{} {v:.4}", result.task.metric()),
                    (_, Some(e)) => format!("failed: {e}"),
                    _ => String::new(),
                };
                eprintln!(
                    "[{}/{total}] {}: {status} ({:.1} s)",
                    results.len() + 1,
                    result.cell.id(),
                    (timing.train_ms + timing.eval_ms) / 1e3
                );
            }
            results.insert(slot, result);
            timings.insert(slot, timing);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    finish(&results, &timings)?;
    let executed = results.len() - reused;
    Ok(SweepOutcome {
        remaining: total - results.len(),
        results: results.into_values().collect(),
        timings: timings.into_values().collect(),
        executed,
        reused,
    })
}

fn failed(cfg: &ExperimentConfig, cell: &Cell) -> (CellResult, Timing) {
    (
        CellResult {
            cell: cell.clone(),
            task: cfg.task,
            value: None,
            sequences: 0,
            eval_diverged: 0,
            train_diverged: 0,
            skipped_updates: 0,
            error: None,
        },
        Timing {
            cell: cell.clone(),
            train_ms: 0.0,
            eval_ms: 0.0,
        },
    )
}
