use std::fs;
use std::path::Path;

use sdeattn::model::Variant;
use sdeattn::train::TaskKind;
use sdeattn_bench::sweep::cells;
use sdeattn_bench::{read_results, run_sweep, ExperimentConfig, Report, SweepOptions};
use sdeattn_testkit::{mean, population_std};

fn tiny(out: &Path, task: &str) -> ExperimentConfig {
    let text = format!(
        "[experiment]\ntask = {task}\nvariants = sde-rnn,sde-tvf-l\nmissing_rates = 0,0.5\nobserved_rates = 0.3,0.6\n\
         seeds = 1,2\noutput = {}\n\n\
         [dataset.freq]\nsource = frequency\ntrain = 12\ntest = 6\npoints = 8\n\n\
         [dataset.wave]\nsource = periodic\ntrajectories = 12\npoints = 8\ngroup_size = 6\ntrain_fraction = 0.5\n\n\
         [model]\nlatent = 3\ndynamics_hidden = 4\noutput_hidden = -\nsubsteps = 1\n\n\
         [train]\niterations = 3\nbatch_size = 4\n",
        out.display()
    );
    ExperimentConfig::from_ini(&text).unwrap()
}

fn quiet() -> SweepOptions {
    SweepOptions::default()
}

#[test]
fn minimal_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), "classification");
    cfg.datasets.truncate(1);
    cfg.variants = vec![Variant::SdeScha];
    cfg.missing_rates = vec![0.25];
    cfg.seeds = vec![9];
    let out = run_sweep(&cfg, &quiet()).unwrap();
    assert!(out.is_complete());
    assert_eq!((out.results.len(), out.executed, out.reused), (1, 1, 0));
    let rows = read_results(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rows, out.results);
    let r = &rows[0];
    assert!(r.is_ok(), "{:?}", r.error);
    assert_eq!(r.sequences, 6);
    assert!(dir.path().join("logs/freq__sde-scha__r0.25__s9.csv").exists());
    assert!(dir.path().join("checkpoints/freq__sde-scha__r0.25__s9.ckpt").exists());
    let echo = ExperimentConfig::load(&dir.path().join("config.ini")).unwrap();
    assert_eq!(echo, cfg);
}

#[test]
fn reruns_and_worker_counts_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = tiny(a.path(), "classification");
    let mut cfg_b = tiny(b.path(), "classification");
    cfg_b.workers = 3;
    run_sweep(&cfg_a, &quiet()).unwrap();
    run_sweep(&cfg_b, &quiet()).unwrap();
    let first = fs::read(a.path().join("results.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("results.csv")).unwrap());
    let again = run_sweep(&cfg_a, &quiet()).unwrap();
    assert_eq!((again.executed, again.reused), (0, cells(&cfg_a).len()));
    assert_eq!(first, fs::read(a.path().join("results.csv")).unwrap());
}

#[test]
fn interrupted_sweep_resumes_to_the_same_results() {
    let whole = tempfile::tempdir().unwrap();
    let parts = tempfile::tempdir().unwrap();
    let cfg = tiny(whole.path(), "interpolation");
    run_sweep(&cfg, &quiet()).unwrap();
    let mut cfg_parts = tiny(parts.path(), "interpolation");
    cfg_parts.workers = 2;
    let total = cells(&cfg_parts).len();
    let first = run_sweep(
        &cfg_parts,
        &SweepOptions {
            max_cells: Some(5),
            ..quiet()
        },
    )
    .unwrap();
    assert_eq!((first.executed, first.remaining), (5, total - 5));
    // A kill during a write leaves half a line behind.
    let path = parts.path().join("results.csv");
    let mut bytes = fs::read(&path).unwrap();
    bytes.extend_from_slice(b"wave,interpolation,sde-rnn,0.6,");
    fs::write(&path, bytes).unwrap();
    let rest = run_sweep(&cfg_parts, &quiet()).unwrap();
    assert_eq!((rest.reused, rest.executed, rest.remaining), (5, total - 5, 0));
    assert_eq!(
        fs::read(whole.path().join("results.csv")).unwrap(),
        fs::read(&path).unwrap()
    );
}

#[test]
fn aggregates_are_recomputable_from_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "interpolation");
    run_sweep(&cfg, &quiet()).unwrap();
    let rows = read_results(&dir.path().join("results.csv")).unwrap();
    let report = Report::from_results(&rows).unwrap();
    assert_eq!(report.task, TaskKind::Interpolation);
    assert_eq!(report.cells.len(), 2 * 2 * 2);
    for a in &report.cells {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.cell.dataset == a.dataset && r.cell.variant == a.variant && r.cell.rate == a.rate)
            .map(|r| r.value.unwrap())
            .collect();
        let s = a.summary.unwrap();
        assert_eq!(vals.len(), 2);
        assert!((s.mean - mean(&vals)).abs() < 1e-12);
        assert!((s.std - population_std(&vals)).abs() < 1e-12);
    }
}

#[test]
fn failing_cells_are_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    // The periodic data carries no labels, so every classification cell on it fails.
    let cfg = tiny(dir.path(), "classification");
    let out = run_sweep(&cfg, &quiet()).unwrap();
    assert!(out.is_complete());
    let (bad, good): (Vec<_>, Vec<_>) = out.results.iter().partition(|r| r.cell.dataset == "wave");
    assert!(good.iter().all(|r| r.is_ok()));
    assert_eq!(bad.len(), 8);
    for r in bad {
        assert!(r.error.as_deref().unwrap().contains("classification"), "{:?}", r.error);
        assert_eq!(r.value, None);
    }
    let rows = read_results(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rows, out.results);
}

#[test]
fn a_different_experiment_cannot_reuse_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), "classification");
    cfg.datasets.truncate(1);
    cfg.seeds = vec![1];
    run_sweep(
        &cfg,
        &SweepOptions {
            max_cells: Some(1),
            ..quiet()
        },
    )
    .unwrap();
    cfg.train.iterations = 4;
    assert!(run_sweep(&cfg, &quiet()).is_err());
}
