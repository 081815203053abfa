use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sdeattn::data::{save_dataset, Split};
use sdeattn::model::Variant;
use sdeattn::train::{evaluate, train, Checkpoint, TrainConfig};
use sdeattn_bench::{read_results, run_sweep, write_report, ExperimentConfig, Report, SweepOptions};

#[derive(Parser)]
#[command(name = "sdeattn", version, about = "SDE-RNN attention variants under missing data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides; every flag maps onto a config key.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `section.key=value` override, repeatable (`key=value` targets [experiment]).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// interpolation or classification.
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated variants.
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated rates for the configured task.
    #[arg(long)]
    rates: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides = Vec::new();
        if let Some(v) = &self.task {
            overrides.push(format!("task={v}"));
        }
        for s in &self.set {
            overrides.push(s.clone());
        }
        if let Some(v) = &self.variants {
            overrides.push(format!("variants={v}"));
        }
        if let Some(v) = &self.seeds {
            overrides.push(format!("seeds={v}"));
        }
        if let Some(v) = &self.output {
            overrides.push(format!("output={}", v.display()));
        }
        if let Some(v) = self.workers {
            overrides.push(format!("workers={v}"));
        }
        if let Some(v) = self.iterations {
            overrides.push(format!("train.iterations={v}"));
        }
        if let Some(v) = self.batch_size {
            overrides.push(format!("train.batch_size={v}"));
        }
        if let Some(v) = self.lr {
            overrides.push(format!("train.lr={v}"));
        }
        for o in &overrides {
            cfg.apply_override(o)?;
        }
        if let Some(v) = &self.rates {
            let key = match cfg.task {
                sdeattn::train::TaskKind::Interpolation => "observed_rates",
                sdeattn::train::TaskKind::Classification => "missing_rates",
            };
            cfg.apply_override(&format!("{key}={v}"))?;
        }
        Ok(cfg)
    }
}

/// Selects one dataset of the config.
#[derive(Args, Clone)]
struct CellArgs {
    /// Dataset name; the only one when the config declares a single dataset.
    #[arg(long)]
    dataset: Option<String>,
    /// Missing rate (classification) or observed rate (interpolation).
    #[arg(long)]
    rate: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) the configured datasets and write binary caches.
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory receiving `<dataset>.sdeads` files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant at one rate and seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-iteration loss log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on the configured dataset.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run or resume the full sweep, then write the report into the output directory.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Stop after this many new cells.
        #[arg(long)]
        max_cells: Option<usize>,
        #[arg(short, long)]
        quiet: bool,
    },
    /// Build tables and curves from one or more sweep directories.
    Report {
        dirs: Vec<PathBuf>,
        /// Destination; the first sweep directory when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn pick_dataset<'a>(cfg: &'a ExperimentConfig, name: Option<&str>) -> Result<&'a sdeattn_bench::DatasetConfig> {
    match name {
        Some(n) => cfg
            .datasets
            .iter()
            .find(|d| d.name == n)
            .ok_or_else(|| anyhow!("no dataset named {n:?} in the config")),
        None if cfg.datasets.len() == 1 => Ok(&cfg.datasets[0]),
        None => bail!("the config declares several datasets; pass --dataset"),
    }
}

fn report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for d in dirs {
        rows.extend(read_results(&d.join("results.csv")).with_context(|| format!("reading {}", d.display()))?);
    }
    let report = Report::from_results(&rows)?;
    for path in write_report(&report, out)? {
        println!("wrote {}", path.display());
    }
    print!(
        "{}",
        sdeattn_bench::emit_table(&report, sdeattn_bench::TableStyle::Plain)
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData { cfg, out } => {
            let cfg = cfg.load()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for d in &cfg.datasets {
                let ds = d.load()?;
                let path = out.join(format!("{}.sdeads", d.name));
                let seed = match &d.source {
                    sdeattn_bench::DatasetSource::Periodic(s) => s.seed,
                    sdeattn_bench::DatasetSource::Frequency(s) => s.seed,
                    _ => 0,
                };
                let echo: String = ds.meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
                save_dataset(&path, &ds, seed, &echo)?;
                println!(
                    "{}: {} train / {} test sequences, {} steps, {} channels -> {}",
                    d.name,
                    ds.len(Split::Train),
                    ds.len(Split::Test),
                    ds.max_steps(),
                    ds.dims,
                    path.display()
                );
            }
        }
        Command::Train {
            cfg,
            cell,
            variant,
            seed,
            checkpoint,
            log,
        } => {
            let cfg = cfg.load()?;
            let d = pick_dataset(&cfg, cell.dataset.as_deref())?;
            let data = d.load()?;
            let model = cfg.model_config(variant, &data)?;
            let task = cfg.task.with_rate(cell.rate);
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let (ckpt, run) = train(&model, &data, task, &train_cfg)?;
            ckpt.save(&checkpoint)?;
            if let Some(log) = log {
                std::fs::write(&log, run.log_csv()).with_context(|| format!("writing {}", log.display()))?;
            }
            println!(
                "{} iterations, final loss {:.6}, {} diverged, {:.1} s -> {}",
                run.losses.len(),
                run.losses.last().copied().unwrap_or(f64::NAN),
                run.diverged_count(),
                run.total_wall_ms() / 1e3,
                checkpoint.display()
            );
        }
        Command::Evaluate {
            cfg,
            cell,
            checkpoint,
            split,
        } => {
            let cfg = cfg.load()?;
            let d = pick_dataset(&cfg, cell.dataset.as_deref())?;
            let data = d.load()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let split = match split.as_str() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => bail!("unknown split {other:?}"),
            };
            let e = evaluate(
                &ckpt,
                &data,
                split,
                cfg.task.with_rate(cell.rate),
                cfg.train.eval_batch_size,
            )?;
            println!(
                "{} {} ({} sequences, {} diverged)",
                e.task.metric(),
                e.value,
                e.sequences,
                e.diverged
            );
        }
        Command::Sweep { cfg, max_cells, quiet } => {
            let cfg = cfg.load()?;
            let outcome = run_sweep(
                &cfg,
                &SweepOptions {
                    max_cells,
                    progress: !quiet,
                },
            )?;
            for f in outcome.failures() {
                eprintln!("cell {} failed: {}", f.cell.id(), f.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} cells run, {} reused, {} remaining",
                outcome.executed, outcome.reused, outcome.remaining
            );
            if outcome.is_complete() && !outcome.results.is_empty() {
                report(std::slice::from_ref(&cfg.output), &cfg.output)?;
            }
        }
        Command::Report { dirs, out } => {
            if dirs.is_empty() {
                bail!("give at least one sweep directory");
            }
            let out = out.unwrap_or_else(|| dirs[0].clone());
            report(&dirs, &out)?;
        }
    }
    Ok(())
}
