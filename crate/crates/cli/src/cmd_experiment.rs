//! `experiment`: trains one initialization twice, on a clean synthetic task
//! and on a label-corrupted twin of its training half, tracing accuracy,
//! weight norm, and the generalization bound along both runs. The headline
//! assertions: the clean run generalizes, the corrupted run lands near
//! chance on the held-out set, and at matched high training accuracy the
//! corrupted run carries a strictly larger weight norm and bound value.

use crate::cmd_compare::{write_comparison, CompareRow, TRACE_HEADER};
use crate::config::{ensure_dir, RunConfig};
use crate::runs::{
    assertion, build_arch, build_experiment_data, map_train_error, percent_accuracy,
    report_block, warn_underparameterized,
};
use anyhow::{bail, Result};
use lincert::architect::param_count;
use lincert::bounds::{
    capacity_feasibility, generalization_bound, margin_risk, measured_c_hat, two_inf_norm,
    zero_one_risk,
};
use lincert::data::Dataset;
use lincert::net::{forward_batch, init_params, Params};
use lincert::report::{fmt_f64, write_csv, write_kv};
use lincert::trainer::{train_observed, TrainOpts};
use lincert::verify::{rank_check, FeatureMatrix};
use std::path::Path;

/// Training accuracy (percent) at which the two runs are compared.
pub const MATCH_ACC: f64 = 99.0;

/// Corruption probability used when the configuration leaves it at zero.
pub const DEFAULT_CORRUPT_P: f64 = 0.5;

/// One recorded step of a run.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub norm: f64,
    pub bound: f64,
}

/// Everything the comparison needs from one trained run.
#[derive(Debug, Clone)]
pub struct ArmSummary {
    pub name: &'static str,
    pub rows: Vec<TraceRow>,
    pub steps: u64,
    pub budget: u64,
    pub final_row: TraceRow,
    /// First recorded row with train accuracy at least [`MATCH_ACC`].
    pub matched: Option<TraceRow>,
    /// Ramp-loss risk at margin rho on the training set, final weights.
    pub train_margin_risk: f64,
    /// Zero-one risk on the held-out set, final weights.
    pub test_zero_one: f64,
    pub c_hat: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub natural: ArmSummary,
    pub corrupted: ArmSummary,
    /// Accuracy (percent) of uniform guessing over the classes.
    pub chance: f64,
    pub corrupt_p: f64,
}

/// Widens the feature layer to 4n unless an explicit width was given, and
/// picks the default corruption probability when none was set.
pub fn effective_config(cfg: &RunConfig) -> (RunConfig, f64) {
    let mut eff = cfg.clone();
    if eff.feature_width.is_none() {
        eff.feature_width = Some(4 * eff.n);
    }
    let p = if cfg.corrupt_p > 0.0 {
        cfg.corrupt_p
    } else {
        DEFAULT_CORRUPT_P
    };
    (eff, p)
}

/// Trains one arm and traces it; writes the arm's report files when an
/// output directory is given.
fn run_arm(
    cfg: &RunConfig,
    params: &Params,
    train: &Dataset,
    test: &Dataset,
    name: &'static str,
    out: Option<&Path>,
) -> Result<ArmSummary> {
    let loss = cfg.loss.spec();
    let opts = TrainOpts {
        epsilon: cfg.epsilon,
        max_steps: cfg.max_steps,
        record_stride: cfg.record_stride,
        force_residual_path: false,
        force_stepwise: false,
    };
    let train_labels = match train.labels() {
        Some(l) => l.to_vec(),
        None => bail!("the {name} training set carries no class labels"),
    };
    let test_labels = match test.labels() {
        Some(l) => l.to_vec(),
        None => bail!("the held-out set carries no class labels"),
    };

    // Masked descent leaves every hidden layer fixed, so the feature
    // matrices can be computed once per arm.
    let z_train = forward_batch(params, train.inputs())?.z_matrix();
    let z_test = forward_batch(params, test.inputs())?.z_matrix();
    let c_hat = measured_c_hat(&z_train);
    generalization_bound(
        &params.output_wbar(),
        cfg.n,
        cfg.m_y,
        cfg.rho,
        cfg.varsigma,
        cfg.delta_prime,
        c_hat,
    )?;

    let mut rows: Vec<TraceRow> = Vec::new();
    let (trained, report) = train_observed(params, train, &loss, opts, |step, obj, wbar| {
        let train_preds = wbar * &z_train;
        let test_preds = wbar * &z_test;
        let train_acc =
            percent_accuracy(&train_preds, &train_labels).expect("label count fixed");
        let test_acc = percent_accuracy(&test_preds, &test_labels).expect("label count fixed");
        let bound = generalization_bound(
            wbar,
            cfg.n,
            cfg.m_y,
            cfg.rho,
            cfg.varsigma,
            cfg.delta_prime,
            c_hat,
        )
        .expect("bound inputs validated before training");
        rows.push(TraceRow {
            step,
            train_loss: obj,
            train_acc,
            test_acc,
            norm: two_inf_norm(wbar),
            bound: bound.value,
        });
    })
    .map_err(|e| map_train_error("experiment", cfg.seed, e))?;

    let wbar = trained.output_wbar();
    let final_train_preds = &wbar * &z_train;
    let final_test_preds = &wbar * &z_test;
    let train_margin_risk = margin_risk(&final_train_preds, &train_labels, cfg.rho)?;
    let test_zero_one = zero_one_risk(&final_test_preds, &test_labels)?;
    let final_row = *rows.last().expect("the trainer records the final step");
    let matched = rows.iter().copied().find(|r| r.train_acc >= MATCH_ACC);

    if let Some(dir) = out {
        let dir = ensure_dir(dir)?;
        let trace_rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.step.to_string(),
                    fmt_f64(r.train_loss),
                    fmt_f64(r.train_acc),
                    fmt_f64(r.test_acc),
                    fmt_f64(r.norm),
                    fmt_f64(r.bound),
                ]
            })
            .collect();
        write_csv(dir.join("train_trace.csv"), &TRACE_HEADER, &trace_rows)?;
        write_kv(dir.join("cert_report.kv"), &report.to_kv())?;

        let feats = FeatureMatrix::from_net(params, train.inputs())?;
        let rank = rank_check(&feats);
        let mut verify = String::new();
        report_block(
            &mut verify,
            "feature matrix",
            &[
                ("rank".into(), rank.rank.to_string()),
                ("n".into(), rank.n.to_string()),
                ("cols".into(), rank.cols.to_string()),
                ("threshold".into(), fmt_f64(rank.threshold)),
                ("smallest_kept".into(), fmt_f64(rank.smallest_kept)),
                ("full_rank".into(), rank.decision.to_string()),
            ],
        );
        report_block(
            &mut verify,
            "dataset",
            &[
                ("gamma".into(), fmt_f64(train.gamma())),
                ("c_hat".into(), fmt_f64(c_hat)),
            ],
        );
        std::fs::write(dir.join("verify_report.txt"), verify)?;

        let gen = generalization_bound(
            &wbar,
            cfg.n,
            cfg.m_y,
            cfg.rho,
            cfg.varsigma,
            cfg.delta_prime,
            c_hat,
        )?;
        let spec_d = params.dim();
        let cap = capacity_feasibility(
            cfg.n,
            spec_d,
            cfg.m_y,
            cfg.depth,
            cfg.epsilon,
            cfg.radius,
            cfg.c_schedule,
        )?;
        let gap = test_zero_one - train_margin_risk;
        let bound_rows = vec![
            vec![
                "gen_bound_final".into(),
                fmt_f64(gen.value),
                fmt_f64(c_hat),
                "true".into(),
            ],
            vec![
                "weight_norm_final".into(),
                fmt_f64(gen.weight_norm),
                fmt_f64(gen.ceiling),
                "true".into(),
            ],
            vec![
                "train_margin_risk_final".into(),
                fmt_f64(train_margin_risk),
                fmt_f64(cfg.rho),
                "true".into(),
            ],
            vec![
                "test_zero_one_final".into(),
                fmt_f64(test_zero_one),
                "0".into(),
                "true".into(),
            ],
            vec![
                "bound_vs_gap".into(),
                fmt_f64(gap),
                fmt_f64(gen.value),
                (gen.value >= gap).to_string(),
            ],
            vec![
                "capacity_lhs_vs_rhs_log".into(),
                fmt_f64(cap.lhs_log),
                fmt_f64(cap.rhs_log),
                cap.feasible.to_string(),
            ],
            vec![
                "under_capacity".into(),
                (spec_d as f64).to_string(),
                ((cfg.n * cfg.m_y) as f64).to_string(),
                cap.under_capacity.to_string(),
            ],
        ];
        write_csv(
            dir.join("bounds_report.csv"),
            &["check", "observed", "reference", "ok"],
            &bound_rows,
        )?;
    }

    Ok(ArmSummary {
        name,
        rows,
        steps: report.steps,
        budget: report.budget,
        final_row,
        matched,
        train_margin_risk,
        test_zero_one,
        c_hat,
    })
}

/// Runs both arms and writes every artifact under the output directory.
pub fn run(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let (eff, corrupt_p) = effective_config(cfg);
    if cfg.corrupt_p == 0.0 {
        eprintln!(
            "note: corrupt_p not set; corrupting the second run's labels with p = {DEFAULT_CORRUPT_P}"
        );
    }
    let data = build_experiment_data(&eff, corrupt_p)?;
    let spec = build_arch(&eff)?;
    warn_underparameterized(&spec, eff.n);
    let params = init_params(&spec, eff.seed);

    let out = ensure_dir(&eff.out_dir)?;
    std::fs::write(out.join("arch.kv"), spec.to_kv_string(Some(eff.seed)))?;

    let natural = run_arm(
        &eff,
        &params,
        &data.train_natural,
        &data.test,
        "natural",
        Some(&out.join("natural")),
    )?;
    let corrupted = run_arm(
        &eff,
        &params,
        &data.train_corrupted,
        &data.test,
        "corrupted",
        Some(&out.join("corrupted")),
    )?;

    let to_compare = |rows: &[TraceRow]| -> Vec<CompareRow> {
        rows.iter()
            .map(|r| CompareRow {
                step: r.step,
                train_acc: r.train_acc,
                test_acc: r.test_acc,
                norm: r.norm,
            })
            .collect()
    };
    write_comparison(
        &to_compare(&natural.rows),
        &to_compare(&corrupted.rows),
        &out.join("comparison.csv"),
    )?;

    let outcome = ExperimentOutcome {
        natural,
        corrupted,
        chance: 100.0 / eff.m_y as f64,
        corrupt_p,
    };

    let mut meta = eff.to_kv();
    meta.push(("corrupt_p_effective".into(), fmt_f64(corrupt_p)));
    meta.push((
        "feature_width_effective".into(),
        eff.feature_width.expect("set above").to_string(),
    ));
    meta.push(("parameters".into(), param_count(&spec).to_string()));
    meta.push(("chance_percent".into(), fmt_f64(outcome.chance)));
    for arm in [&outcome.natural, &outcome.corrupted] {
        let p = |k: &str| format!("{}_{k}", arm.name);
        meta.push((p("steps"), arm.steps.to_string()));
        meta.push((p("budget"), arm.budget.to_string()));
        meta.push((p("final_train_loss"), fmt_f64(arm.final_row.train_loss)));
        meta.push((p("final_train_acc"), fmt_f64(arm.final_row.train_acc)));
        meta.push((p("final_test_acc"), fmt_f64(arm.final_row.test_acc)));
        meta.push((p("final_norm"), fmt_f64(arm.final_row.norm)));
        meta.push((p("final_bound"), fmt_f64(arm.final_row.bound)));
        meta.push((p("train_margin_risk"), fmt_f64(arm.train_margin_risk)));
        meta.push((p("test_zero_one"), fmt_f64(arm.test_zero_one)));
        match &arm.matched {
            Some(m) => {
                meta.push((p("matched_step"), m.step.to_string()));
                meta.push((p("matched_train_acc"), fmt_f64(m.train_acc)));
                meta.push((p("matched_test_acc"), fmt_f64(m.test_acc)));
                meta.push((p("matched_norm"), fmt_f64(m.norm)));
                meta.push((p("matched_bound"), fmt_f64(m.bound)));
            }
            None => meta.push((p("matched_step"), "none".into())),
        }
    }
    write_kv(out.join("meta.kv"), &meta)?;

    Ok(outcome)
}

/// Runs only the clean arm, without writing files. Useful for resampling
/// studies of the bound.
pub fn natural_arm(cfg: &RunConfig) -> Result<ArmSummary> {
    let (eff, corrupt_p) = effective_config(cfg);
    let data = build_experiment_data(&eff, corrupt_p)?;
    let spec = build_arch(&eff)?;
    let params = init_params(&spec, eff.seed);
    run_arm(&eff, &params, &data.train_natural, &data.test, "natural", None)
}

pub fn print_summary(outcome: &ExperimentOutcome) {
    for arm in [&outcome.natural, &outcome.corrupted] {
        println!(
            "{}: {} steps (budget {}), final train {:.2}% test {:.2}%, \
             norm {:.4}, bound {:.4}",
            arm.name,
            arm.steps,
            arm.budget,
            arm.final_row.train_acc,
            arm.final_row.test_acc,
            arm.final_row.norm,
            arm.final_row.bound
        );
        match &arm.matched {
            Some(m) => println!(
                "{}: first {:.0}% train accuracy at step {} with test {:.2}%, \
                 norm {:.4}, bound {:.4}",
                arm.name, MATCH_ACC, m.step, m.test_acc, m.norm, m.bound
            ),
            None => println!(
                "{}: never reached {:.0}% train accuracy",
                arm.name, MATCH_ACC
            ),
        }
    }
    println!(
        "chance accuracy {:.2}%; corruption probability {}",
        outcome.chance, outcome.corrupt_p
    );
}

/// The experiment's named assertions.
pub fn check(outcome: &ExperimentOutcome) -> Result<()> {
    let natural = &outcome.natural;
    let corrupted = &outcome.corrupted;
    if natural.final_row.test_acc < 80.0 {
        return Err(assertion(
            "experiment.natural_test_accuracy",
            format!(
                "clean-run test accuracy {:.2}% < 80%",
                natural.final_row.test_acc
            ),
        ));
    }
    let dist = (corrupted.final_row.test_acc - outcome.chance).abs();
    if dist > 15.0 {
        return Err(assertion(
            "experiment.corrupted_chance_window",
            format!(
                "corrupted-run test accuracy {:.2}% is {:.2} points from chance {:.2}% (> 15)",
                corrupted.final_row.test_acc, dist, outcome.chance
            ),
        ));
    }
    let (m_nat, m_cor) = match (&natural.matched, &corrupted.matched) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(assertion(
                "experiment.matched_accuracy",
                format!("a run never reached {MATCH_ACC}% training accuracy"),
            ))
        }
    };
    if m_cor.norm <= m_nat.norm {
        return Err(assertion(
            "experiment.weight_norm_ordering",
            format!(
                "at matched {MATCH_ACC}% train accuracy, corrupted norm {} <= natural norm {}",
                m_cor.norm, m_nat.norm
            ),
        ));
    }
    if m_cor.bound <= m_nat.bound {
        return Err(assertion(
            "experiment.bound_ordering",
            format!(
                "at matched {MATCH_ACC}% train accuracy, corrupted bound {} <= natural bound {}",
                m_cor.bound, m_nat.bound
            ),
        ));
    }
    Ok(())
}
