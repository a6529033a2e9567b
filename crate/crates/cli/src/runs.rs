//! Shared plumbing between subcommands: architecture and dataset
//! construction from a resolved configuration, and the accuracy helpers the
//! experiment traces use.

use crate::config::{DatasetSource, RunConfig};
use anyhow::{anyhow, bail, Context, Result};
use lincert::architect::{param_count, size_widths, underparameterized, ArchSpec};
use lincert::bounds::zero_one_risk;
use lincert::data::{corrupt_labels, load_idx, synthesize, Dataset, SynthKind};
use nalgebra::DMatrix;

/// A named assertion failure; the process exits nonzero when one surfaces.
pub fn assertion(name: &str, detail: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("assertion failed: {name}: {detail}")
}

/// Architecture from the schedule, with the config's knobs applied and the
/// feature layer optionally overridden.
pub fn build_arch(cfg: &RunConfig) -> Result<ArchSpec> {
    let sized = size_widths(
        cfg.n,
        cfg.depth,
        cfg.delta,
        cfg.m_x,
        cfg.m_y,
        cfg.c_schedule,
    )
    .context("sizing the architecture")?;
    let mut widths = sized.widths;
    if let Some(fw) = cfg.feature_width {
        widths[cfg.depth] = fw;
    }
    ArchSpec::new(widths, cfg.alpha, cfg.c_w, cfg.c_b, cfg.c_schedule)
        .context("building the architecture")
        .map_err(Into::into)
}

/// Prints and returns the underparameterization warning, if any.
pub fn warn_underparameterized(spec: &ArchSpec, n: usize) -> Option<String> {
    if underparameterized(spec, n) {
        let msg = format!(
            "warning: {} parameters cannot interpolate {} samples of width {}",
            param_count(spec),
            n,
            spec.output_width()
        );
        eprintln!("{msg}");
        Some(msg)
    } else {
        None
    }
}

/// Training set per the config: synthetic (with optional corruption) or IDX.
pub fn build_train_set(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match cfg.dataset {
        DatasetSource::Separable => synthesize(
            cfg.n,
            cfg.m_x,
            cfg.m_y,
            SynthKind::Separable {
                planes: cfg.planes_or_default(),
            },
            cfg.seed,
        )?,
        DatasetSource::Random => synthesize(cfg.n, cfg.m_x, cfg.m_y, SynthKind::Random, cfg.seed)?,
        DatasetSource::Idx => {
            let images = cfg.images.as_ref().expect("validated");
            let labels = cfg.labels.as_ref().expect("validated");
            let limit = if cfg.limit == 0 { cfg.n } else { cfg.limit };
            load_idx(images, labels, limit)?
        }
    };
    if cfg.corrupt_p > 0.0 {
        Ok(corrupt_labels(&ds, cfg.corrupt_p, cfg.seed)?)
    } else {
        Ok(ds)
    }
}

/// Train/test pair drawn together so the task is shared, plus the corrupted
/// twin of the training half. Only synthetic sources split this way.
pub struct ExperimentData {
    pub train_natural: Dataset,
    pub train_corrupted: Dataset,
    pub test: Dataset,
}

pub fn build_experiment_data(cfg: &RunConfig, corrupt_p: f64) -> Result<ExperimentData> {
    let kind = match cfg.dataset {
        DatasetSource::Separable => SynthKind::Separable {
            planes: cfg.planes_or_default(),
        },
        DatasetSource::Random => SynthKind::Random,
        DatasetSource::Idx => bail!("experiment needs a synthetic dataset source"),
    };
    let total = cfg.n + cfg.test_n;
    let all = synthesize(total, cfg.m_x, cfg.m_y, kind, cfg.seed)?;
    let (train_natural, test) = all.split_at(cfg.n)?;
    let train_corrupted = corrupt_labels(&train_natural, corrupt_p, cfg.seed)?;
    Ok(ExperimentData {
        train_natural,
        train_corrupted,
        test,
    })
}

/// Percent of columns whose largest prediction coordinate matches the label.
pub fn percent_accuracy(preds: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let risk = zero_one_risk(preds, labels)?;
    Ok(100.0 * (1.0 - risk))
}

/// Names the assertion behind a failed training run so the exit message
/// identifies what broke.
pub fn map_train_error(scope: &str, seed: u64, e: lincert::error::Error) -> anyhow::Error {
    use lincert::error::Error as CoreError;
    match &e {
        CoreError::RankDeficient { .. } => {
            assertion(&format!("rank_check failed at seed {seed}"), e)
        }
        CoreError::BudgetExhausted { .. } => assertion(&format!("{scope}.step_budget"), e),
        CoreError::MonotonicityViolation { .. } => {
            assertion(&format!("{scope}.monotone_descent"), e)
        }
        _ => anyhow::Error::new(e),
    }
}

/// Writes `name: value` report lines plus a blank separator.
pub fn report_block(lines: &mut String, title: &str, pairs: &[(String, String)]) {
    lines.push_str(title);
    lines.push('\n');
    for (k, v) in pairs {
        lines.push_str(&format!("  {k} = {v}\n"));
    }
    lines.push('\n');
}
