//! `compare`: side-by-side table of two finished runs. Reads each run
//! directory's training trace, aligns the recorded rows (truncating to the
//! shorter run with a warning when the counts differ), and writes one CSV
//! with per-row accuracies, generalization gaps, and weight norms. The gap
//! is (train accuracy - test accuracy) / 100. This command only tabulates;
//! ordering assertions live in `experiment`.

use crate::config::ensure_dir;
use anyhow::{bail, Context, Result};
use lincert::report::{fmt_f64, read_csv, write_csv};
use std::path::Path;

/// Column layout of a run's training trace.
pub const TRACE_HEADER: [&str; 6] = [
    "step",
    "train_loss",
    "train_accuracy",
    "test_accuracy",
    "two_inf_norm",
    "gen_bound",
];

/// One trace row reduced to the comparison columns.
#[derive(Debug, Clone, Copy)]
pub struct CompareRow {
    pub step: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub norm: f64,
}

impl CompareRow {
    pub fn gap(&self) -> f64 {
        (self.train_acc - self.test_acc) / 100.0
    }
}

/// Reads `dir/train_trace.csv` into comparison rows.
pub fn read_trace(dir: &Path) -> Result<Vec<CompareRow>> {
    let path = dir.join("train_trace.csv");
    let (header, rows) =
        read_csv(&path).with_context(|| format!("reading {}", path.display()))?;
    if header != TRACE_HEADER {
        bail!(
            "{}: unexpected columns {:?} (want {:?})",
            path.display(),
            header,
            TRACE_HEADER
        );
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let field = |k: usize| -> Result<f64> {
            row.get(k)
                .with_context(|| format!("{} row {i}: missing column {k}", path.display()))?
                .parse::<f64>()
                .with_context(|| format!("{} row {i}: bad float in column {k}", path.display()))
        };
        out.push(CompareRow {
            step: row
                .first()
                .with_context(|| format!("{} row {i}: missing step", path.display()))?
                .parse::<u64>()
                .with_context(|| format!("{} row {i}: bad step", path.display()))?,
            train_acc: field(2)?,
            test_acc: field(3)?,
            norm: field(4)?,
        });
    }
    Ok(out)
}

/// Writes the aligned comparison table; returns how many rows were compared.
pub fn write_comparison(
    natural: &[CompareRow],
    corrupted: &[CompareRow],
    path: &Path,
) -> Result<usize> {
    if natural.len() != corrupted.len() {
        eprintln!(
            "warning: traces have {} and {} rows; comparing the first {}",
            natural.len(),
            corrupted.len(),
            natural.len().min(corrupted.len())
        );
    }
    let rows: Vec<Vec<String>> = natural
        .iter()
        .zip(corrupted.iter())
        .enumerate()
        .map(|(i, (a, b))| {
            vec![
                i.to_string(),
                a.step.to_string(),
                fmt_f64(a.train_acc),
                fmt_f64(a.test_acc),
                fmt_f64(a.gap()),
                fmt_f64(a.norm),
                b.step.to_string(),
                fmt_f64(b.train_acc),
                fmt_f64(b.test_acc),
                fmt_f64(b.gap()),
                fmt_f64(b.norm),
                fmt_f64(b.gap() - a.gap()),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "row",
            "natural_step",
            "natural_train_acc",
            "natural_test_acc",
            "natural_gap",
            "natural_norm",
            "corrupted_step",
            "corrupted_train_acc",
            "corrupted_test_acc",
            "corrupted_gap",
            "corrupted_norm",
            "gap_diff",
        ],
        &rows,
    )?;
    Ok(rows.len())
}

pub fn run(natural_dir: &Path, corrupted_dir: &Path, out_dir: &Path) -> Result<()> {
    let natural = read_trace(natural_dir)?;
    let corrupted = read_trace(corrupted_dir)?;
    if natural.is_empty() || corrupted.is_empty() {
        bail!("cannot compare empty traces");
    }
    let out = ensure_dir(out_dir)?;
    let path = out.join("comparison.csv");
    let compared = write_comparison(&natural, &corrupted, &path)?;

    let last_a = natural[compared - 1];
    let last_b = corrupted[compared - 1];
    println!("compared {compared} rows into {}", path.display());
    println!(
        "last aligned row: natural train {:.2}% test {:.2}% gap {:.4} norm {:.4}",
        last_a.train_acc,
        last_a.test_acc,
        last_a.gap(),
        last_a.norm
    );
    println!(
        "                  corrupted train {:.2}% test {:.2}% gap {:.4} norm {:.4}",
        last_b.train_acc,
        last_b.test_acc,
        last_b.gap(),
        last_b.norm
    );
    println!(
        "gap difference (corrupted - natural) at last aligned row: {:.6}",
        last_b.gap() - last_a.gap()
    );
    Ok(())
}
