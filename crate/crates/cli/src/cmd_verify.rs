//! `verify`: measurement suites for the structural claims the trainer relies
//! on: feature-matrix rank, the explicit full-rank witness, width
//! concentration, the activation-moment recursion, and gradient smoothness.

use crate::config::{ensure_dir, RunConfig};
use crate::runs::{assertion, build_arch, build_train_set, report_block};
use anyhow::Result;
use lincert::net::{forward_batch, init_params};
use lincert::report::fmt_f64;
use lincert::verify::{
    concentration_deviations, concentration_suite, diag_dominance_margin,
    gaussian_moment_recursion, mc_moment_level, rank_check, suggested_c_gamma, tail_check,
    witness_construction, FeatureMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Rank,
    Witness,
    Concentration,
    Moments,
    Lipschitz,
    All,
}

pub fn run(cfg: &RunConfig, suite: Suite) -> Result<()> {
    let mut report = String::new();
    let mut failures: Vec<anyhow::Error> = Vec::new();
    let go = |name: Suite| suite == Suite::All || suite == name;

    if go(Suite::Rank) {
        if let Err(e) = rank_suite(cfg, &mut report) {
            failures.push(e);
        }
    }
    if go(Suite::Witness) {
        if let Err(e) = witness_suite(cfg, &mut report) {
            failures.push(e);
        }
    }
    if go(Suite::Concentration) {
        if let Err(e) = concentration(cfg, &mut report) {
            failures.push(e);
        }
    }
    if go(Suite::Moments) {
        if let Err(e) = moments(cfg, &mut report) {
            failures.push(e);
        }
    }
    if go(Suite::Lipschitz) {
        if let Err(e) = lipschitz(cfg, &mut report) {
            failures.push(e);
        }
    }

    let out = ensure_dir(&cfg.out_dir)?;
    std::fs::write(out.join("verify_report.txt"), &report)?;
    print!("{report}");
    println!("wrote {}", out.join("verify_report.txt").display());

    match failures.into_iter().next() {
        None => Ok(()),
        Some(first) => Err(first),
    }
}

/// Full-rank frequency of the feature matrix across fresh initializations.
fn rank_suite(cfg: &RunConfig, report: &mut String) -> Result<()> {
    let spec = build_arch(cfg)?;
    let ds = build_train_set(cfg)?;
    let trials = cfg.trials.max(1);
    let mut full = 0usize;
    let mut failed_seeds = Vec::new();
    let mut last = None;
    for t in 0..trials {
        let seed = cfg.seed + t as u64;
        let params = init_params(&spec, seed);
        let m = FeatureMatrix::from_net(&params, ds.inputs())?;
        let rep = rank_check(&m);
        if rep.rank == rep.n {
            full += 1;
        } else {
            failed_seeds.push(seed);
        }
        last = Some(rep);
    }
    let frac = full as f64 / trials as f64;
    let last = last.expect("at least one trial");
    report_block(
        report,
        "rank",
        &[
            ("trials".into(), trials.to_string()),
            ("full_rank".into(), full.to_string()),
            ("fraction".into(), fmt_f64(frac)),
            ("n".into(), last.n.to_string()),
            ("feature_columns".into(), last.cols.to_string()),
            ("threshold".into(), fmt_f64(last.threshold)),
        ],
    );
    if trials == 1 && full == 0 {
        return Err(assertion(
            &format!("rank_check failed at seed {}", cfg.seed),
            format!("rank {} < n = {}", last.rank, last.n),
        ));
    }
    if frac < 0.99 {
        return Err(assertion(
            "verify.rank_fraction",
            format!(
                "full-rank fraction {frac} < 0.99 (failed seeds: {failed_seeds:?})"
            ),
        ));
    }
    Ok(())
}

/// Deterministic witness: explicit first-layer weights that make the feature
/// matrix strictly diagonally dominant, hence full rank.
fn witness_suite(cfg: &RunConfig, report: &mut String) -> Result<()> {
    let spec = build_arch(cfg)?;
    let ds = build_train_set(cfg)?;
    let params = init_params(&spec, cfg.seed);
    let trace = forward_batch(&params, ds.inputs())?;
    // The witness rewires the feature layer, so it reads the activations one
    // level below and the feature width from the spec.
    let feats = &trace.xs[spec.depth - 1];
    let m_h = spec.widths[spec.depth];
    let c_gamma = suggested_c_gamma(feats)?;
    let m = witness_construction(feats, m_h, c_gamma, cfg.beta, cfg.alpha)?;
    let rep = rank_check(&m);
    let margin = diag_dominance_margin(&m)?;
    report_block(
        report,
        "witness",
        &[
            ("beta".into(), fmt_f64(cfg.beta)),
            ("c_gamma".into(), fmt_f64(c_gamma)),
            ("rank".into(), rep.rank.to_string()),
            ("n".into(), rep.n.to_string()),
            ("dominance_margin".into(), fmt_f64(margin)),
        ],
    );
    if rep.rank != rep.n {
        return Err(assertion(
            "verify.witness_rank",
            format!("witness rank {} < n = {}", rep.rank, rep.n),
        ));
    }
    if margin <= 0.0 {
        return Err(assertion(
            "verify.witness_dominance",
            format!("diagonal dominance margin {margin} is not positive"),
        ));
    }
    Ok(())
}

/// Width-stability of sqrt(m)-scaled deviations, plus the tail shape check.
fn concentration(cfg: &RunConfig, report: &mut String) -> Result<()> {
    let rep = concentration_suite(
        cfg.m_x,
        &cfg.widths,
        cfg.alpha,
        cfg.c_w,
        cfg.c_b,
        cfg.conc_trials,
        cfg.seed,
    )?;
    let mut probe = nalgebra::DVector::zeros(cfg.m_x);
    probe[0] = 1.0;
    let widest = *cfg.widths.iter().max().expect("nonempty widths");
    let devs = concentration_deviations(
        &probe,
        widest,
        cfg.alpha,
        cfg.c_w,
        cfg.c_b,
        cfg.conc_trials,
        cfg.seed,
    )?;
    let tail = tail_check(&devs);
    let mut pairs: Vec<(String, String)> = rep
        .widths
        .iter()
        .zip(rep.iqrs.iter())
        .map(|(w, iqr)| (format!("iqr_m{w}"), fmt_f64(*iqr)))
        .collect();
    pairs.push(("spread_ratio".into(), fmt_f64(rep.spread_ratio)));
    pairs.push(("expected_p".into(), fmt_f64(rep.expected_p)));
    pairs.push(("tail_beta".into(), fmt_f64(tail.beta)));
    pairs.push(("tail_freq_beta".into(), fmt_f64(tail.freq_beta)));
    pairs.push(("tail_freq_two_beta".into(), fmt_f64(tail.freq_two_beta)));
    report_block(report, "concentration", &pairs);
    if rep.spread_ratio > 3.0 {
        return Err(assertion(
            "verify.concentration_spread",
            format!("IQR spread ratio {} exceeds 3", rep.spread_ratio),
        ));
    }
    if !tail.ok {
        return Err(assertion(
            "verify.concentration_tail",
            format!(
                "freq(2 beta) = {} > freq(beta)^2 + slack = {}",
                tail.freq_two_beta,
                tail.freq_beta * tail.freq_beta + tail.slack
            ),
        ));
    }
    Ok(())
}

/// Quadrature moment recursion against a Monte-Carlo estimate per level.
fn moments(cfg: &RunConfig, report: &mut String) -> Result<()> {
    let ds = build_train_set(cfg)?;
    let gamma = ds.gamma().min(4.0);
    let table = gaussian_moment_recursion(cfg.alpha, cfg.c_w, cfg.c_b, gamma, cfg.depth, 0)?;
    let mut pairs = vec![
        ("gamma".into(), fmt_f64(gamma)),
        ("nodes".into(), table.nodes.to_string()),
        (
            "max_quadrature_error".into(),
            fmt_f64(table.max_quadrature_error()),
        ),
        ("mc_samples".into(), cfg.mc_samples.to_string()),
    ];
    let mut failure = None;
    for level in 1..=table.depth() {
        let lv = &table.levels[level];
        let mc = mc_moment_level(lv.var, lv.cov, cfg.alpha, cfg.mc_samples as u64, cfg.seed)?;
        pairs.push((format!("p{level}_quad"), fmt_f64(lv.p)));
        pairs.push((format!("p{level}_mc"), fmt_f64(mc.p)));
        pairs.push((format!("p{level}_se"), fmt_f64(mc.p_se)));
        pairs.push((format!("pij{level}_quad"), fmt_f64(lv.p_ij)));
        pairs.push((format!("pij{level}_mc"), fmt_f64(mc.p_ij)));
        pairs.push((format!("pij{level}_se"), fmt_f64(mc.p_ij_se)));
        if failure.is_none() {
            if (lv.p - mc.p).abs() > 3.0 * mc.p_se {
                failure = Some(assertion(
                    "verify.moments_p",
                    format!(
                        "level {level}: quadrature {} vs Monte Carlo {} differs by more than 3 x {}",
                        lv.p, mc.p, mc.p_se
                    ),
                ));
            } else if (lv.p_ij - mc.p_ij).abs() > 3.0 * mc.p_ij_se {
                failure = Some(assertion(
                    "verify.moments_pij",
                    format!(
                        "level {level}: quadrature {} vs Monte Carlo {} differs by more than 3 x {}",
                        lv.p_ij, mc.p_ij, mc.p_ij_se
                    ),
                ));
            }
        }
    }
    report_block(report, "moments", &pairs);
    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

/// Gradient smoothness of the output-layer objective against its bound.
fn lipschitz(cfg: &RunConfig, report: &mut String) -> Result<()> {
    let spec = build_arch(cfg)?;
    let ds = build_train_set(cfg)?;
    let params = init_params(&spec, cfg.seed);
    let loss = cfg.loss.spec();
    let rep = lincert::verify::lipschitz_probe(&params, &ds, &loss, cfg.pairs, cfg.seed)?;
    report_block(
        report,
        "lipschitz",
        &[
            ("pairs".into(), rep.pairs.to_string()),
            ("bound".into(), fmt_f64(rep.bound)),
            ("max_ratio".into(), fmt_f64(rep.max_ratio)),
        ],
    );
    if !rep.ok {
        return Err(assertion(
            "verify.lipschitz_ratio",
            format!("ratio {} exceeds bound {}", rep.max_ratio, rep.bound),
        ));
    }
    Ok(())
}
