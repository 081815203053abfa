//! Result tables ("mean (std)" per variant, best per row marked) and
//! plot-ready degradation curves.

use std::fmt::Write as _;

use sdeattn::model::Variant;
use sdeattn::train::{summarize, Summary, TaskKind};

use crate::error::{BenchError, Result};
use crate::sweep::CellResult;

/// Means closer than this count as tied for best.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Seeds of one (dataset, rate, variant) cell, aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub dataset: String,
    pub rate: f64,
    pub variant: Variant,
    /// Over the successful seeds; `None` if every seed failed.
    pub summary: Option<Summary>,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub failures: usize,
    pub eval_diverged: usize,
    pub train_diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: TaskKind,
    /// Row and column orders, by first appearance in the results.
    pub datasets: Vec<String>,
    pub rates: Vec<f64>,
    pub variants: Vec<Variant>,
    pub cells: Vec<Aggregate>,
}

fn push_unique<V: PartialEq + Clone>(v: &mut Vec<V>, x: &V) {
    if !v.contains(x) {
        v.push(x.clone());
    }
}

impl Report {
    pub fn from_results(results: &[CellResult]) -> Result<Self> {
        let first = results
            .first()
            .ok_or_else(|| BenchError::Report("no results to report".into()))?;
        let task = first.task;
        if let Some(r) = results.iter().find(|r| r.task != task) {
            return Err(BenchError::Report(format!("results mix {} and {} tasks", task, r.task)));
        }
        let (mut datasets, mut rates, mut variants) = (Vec::new(), Vec::new(), Vec::new());
        for r in results {
            push_unique(&mut datasets, &r.cell.dataset);
            push_unique(&mut rates, &r.cell.rate);
            push_unique(&mut variants, &r.cell.variant);
        }
        let mut cells = Vec::new();
        for d in &datasets {
            for &rate in &rates {
                for &variant in &variants {
                    let rows: Vec<&CellResult> = results
                        .iter()
                        .filter(|r| &r.cell.dataset == d && r.cell.rate == rate && r.cell.variant == variant)
                        .collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let ok: Vec<&CellResult> = rows.iter().copied().filter(|r| r.value.is_some()).collect();
                    let values: Vec<f64> = ok.iter().filter_map(|r| r.value).collect();
                    cells.push(Aggregate {
                        dataset: d.clone(),
                        rate,
                        variant,
                        summary: summarize(&values),
                        seeds: ok.iter().map(|r| r.cell.seed).collect(),
                        values,
                        failures: rows.len() - ok.len(),
                        eval_diverged: rows.iter().map(|r| r.eval_diverged).sum(),
                        train_diverged: rows.iter().map(|r| r.train_diverged).sum(),
                    });
                }
            }
        }
        Ok(Self {
            task,
            datasets,
            rates,
            variants,
            cells,
        })
    }

    pub fn get(&self, dataset: &str, rate: f64, variant: Variant) -> Option<&Aggregate> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.rate == rate && c.variant == variant)
    }

    /// Variants whose mean is best for one row, ties included.
    pub fn best(&self, dataset: &str, rate: f64) -> Vec<Variant> {
        let means: Vec<(Variant, f64)> = self
            .variants
            .iter()
            .filter_map(|&v| self.get(dataset, rate, v)?.summary.map(|s| (v, s.mean)))
            .filter(|(_, m)| m.is_finite())
            .collect();
        let higher = self.task.higher_is_better();
        let target = means
            .iter()
            .map(|m| m.1)
            .reduce(|a, b| if higher { a.max(b) } else { a.min(b) });
        match target {
            Some(t) => means
                .iter()
                .filter(|(_, m)| (m - t).abs() <= TIE_TOLERANCE)
                .map(|m| m.0)
                .collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    /// Aligned columns, best cells suffixed with `*`.
    Plain,
    /// Markdown pipe table, best cells in bold.
    Markdown,
}

fn cell_text(agg: Option<&Aggregate>) -> String {
    let Some(a) = agg else {
        return "-".into();
    };
    let mut s = match a.summary {
        Some(Summary { mean, std, .. }) => format!("{mean:.3} ({std:.3})"),
        None => "failed".into(),
    };
    if a.failures > 0 && a.summary.is_some() {
        let _ = write!(s, " [{}/{}]", a.values.len(), a.values.len() + a.failures);
    }
    s
}

/// Renders the report with one row per (dataset, rate) and one column per variant.
pub fn emit_table(report: &Report, style: TableStyle) -> String {
    let rate_label = match report.task {
        TaskKind::Interpolation => "observed",
        TaskKind::Classification => "missing",
    };
    let mut header = vec!["dataset".to_string(), rate_label.to_string()];
    header.extend(report.variants.iter().map(|v| v.to_string()));
    let mut rows = Vec::new();
    for d in &report.datasets {
        for &rate in &report.rates {
            if report.variants.iter().all(|&v| report.get(d, rate, v).is_none()) {
                continue;
            }
            let best = report.best(d, rate);
            let mut row = vec![d.clone(), format!("{:.0}%", rate * 100.0)];
            for &v in &report.variants {
                let text = cell_text(report.get(d, rate, v));
                row.push(match (best.contains(&v), style) {
                    (true, TableStyle::Plain) => format!("{text} *"),
                    (true, TableStyle::Markdown) => format!("**{text}**"),
                    (false, _) => text,
                });
            }
            rows.push(row);
        }
    }
    let mut out = String::new();
    match style {
        TableStyle::Plain => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    rows.iter()
                        .chain([&header])
                        .map(|r| r[i].chars().count())
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |r: &[String]| {
                r.iter()
                    .zip(&widths)
                    .map(|(c, &w)| format!("{c:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let _ = writeln!(
                out,
                "{} ({}, mean (std) over seeds, * = best)",
                report.task.metric(),
                report.task
            );
            let _ = writeln!(out, "{}", line(&header));
            let _ = writeln!(
                out,
                "{}",
                widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  ")
            );
            for r in &rows {
                let _ = writeln!(out, "{}", line(r));
            }
        }
        TableStyle::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for r in &rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Machine-readable twin of [`emit_table`]: one line per aggregate.
pub fn table_csv(report: &Report) -> String {
    let mut out = String::from("dataset,rate,variant,metric,mean,std,n,failures,eval_diverged,train_diverged,best\n");
    for a in &report.cells {
        let best = report.best(&a.dataset, a.rate).contains(&a.variant);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.dataset,
            a.rate,
            a.variant,
            report.task.metric(),
            opt(a.summary.map(|s| s.mean)),
            opt(a.summary.map(|s| s.std)),
            a.values.len(),
            a.failures,
            a.eval_diverged,
            a.train_diverged,
            best
        );
    }
    out
}

/// One CSV per dataset: `rate`, then `<variant>_mean,<variant>_std` columns.
pub fn emit_curves(report: &Report) -> Result<Vec<(String, String)>> {
    if report.rates.len() < 2 {
        return Err(BenchError::Report("curves need results at two or more rates".into()));
    }
    let mut rates = report.rates.clone();
    rates.sort_by(f64::total_cmp);
    let mut files = Vec::new();
    for d in &report.datasets {
        let mut s = String::from("rate");
        for v in &report.variants {
            let _ = write!(s, ",{v}_mean,{v}_std");
        }
        s.push('\n');
        for &rate in &rates {
            s.push_str(&rate.to_string());
            for &v in &report.variants {
                let summary = report.get(d, rate, v).and_then(|a| a.summary);
                let _ = write!(s, ",{},{}", opt(summary.map(|x| x.mean)), opt(summary.map(|x| x.std)));
            }
            s.push('\n');
        }
        files.push((d.clone(), s));
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::Cell;

    fn row(variant: Variant, rate: f64, seed: u64, value: f64) -> CellResult {
        CellResult {
            cell: Cell {
                dataset: "toy".into(),
                variant,
                rate,
                seed,
            },
            task: TaskKind::Interpolation,
            value: Some(value),
            sequences: 4,
            eval_diverged: 0,
            train_diverged: 0,
            skipped_updates: 0,
            error: None,
        }
    }

    #[test]
    fn lower_mse_wins_and_failures_are_counted() {
        let mut rows = vec![
            row(Variant::SdeRnn, 0.1, 0, 0.5),
            row(Variant::SdeRnn, 0.1, 1, 0.7),
            row(Variant::SdePyr, 0.1, 0, 0.4),
        ];
        rows.push(CellResult {
            value: None,
            error: Some("diverged".into()),
            ..row(Variant::SdePyr, 0.1, 1, 0.0)
        });
        let rep = Report::from_results(&rows).unwrap();
        assert_eq!(rep.best("toy", 0.1), vec![Variant::SdePyr]);
        let pyr = rep.get("toy", 0.1, Variant::SdePyr).unwrap();
        assert_eq!((pyr.failures, pyr.values.len()), (1, 1));
        let table = emit_table(&rep, TableStyle::Plain);
        assert!(table.contains("0.400 (0.000) [1/2] *"), "{table}");
        assert!(table.contains("0.600 (0.100)"), "{table}");
        assert!(emit_table(&rep, TableStyle::Markdown).contains("**0.400 (0.000) [1/2]**"));
    }

    #[test]
    fn mixed_tasks_are_rejected() {
        let mut other = row(Variant::SdeRnn, 0.1, 1, 0.5);
        other.task = TaskKind::Classification;
        assert!(Report::from_results(&[row(Variant::SdeRnn, 0.1, 0, 0.5), other]).is_err());
        assert!(Report::from_results(&[]).is_err());
    }
}
