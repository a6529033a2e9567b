//! `bounds`: deterministic inequality checks on the built network: the
//! Jacobian Frobenius bound and forward-trace growth over random parameter
//! draws, the log-volume inequality where the Jacobian is tall, the capacity
//! verdict, and the generalization-bound terms at initialization.

use crate::config::{ensure_dir, RunConfig};
use crate::runs::{assertion, build_arch, build_train_set};
use anyhow::Result;
use lincert::architect::param_count;
use lincert::bounds::{
    capacity_feasibility, generalization_bound, jacobian_frobenius_bound, jacobian_log_volume,
    measured_c_hat, minimal_feasible_radius, sample_in_ball, trace_growth_check,
};
use lincert::net::{forward_batch, init_params, Params, DENSE_GUARD};
use lincert::report::{fmt_f64, write_csv};
use lincert::rng::stream_indexed;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let spec = build_arch(cfg)?;
    let ds = build_train_set(cfg)?;
    let params = init_params(&spec, cfg.seed);
    let d = params.dim();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut failure: Option<anyhow::Error> = None;
    let note = |f: &mut Option<anyhow::Error>, e: anyhow::Error| {
        if f.is_none() {
            *f = Some(e);
        }
    };

    // Jacobian Frobenius bound and trace growth at random parameters in the
    // radius-R ball.
    let mut worst_margin = f64::INFINITY;
    for s in 0..cfg.ball_samples {
        let mut rng = stream_indexed(cfg.seed, "bounds.ball", s as u64);
        let theta = sample_in_ball(d, cfg.radius, &mut rng);
        let probe = Params::unflatten(spec.widths.as_slice(), cfg.alpha, &theta)?;
        let jac = jacobian_frobenius_bound(&probe, ds.inputs())?;
        worst_margin = worst_margin.min(jac.bound - jac.observed);
        if !jac.ok {
            note(
                &mut failure,
                assertion(
                    "bounds.jacobian_frobenius",
                    format!(
                        "sample {s}: observed {} exceeds bound {}",
                        jac.observed, jac.bound
                    ),
                ),
            );
        }
        let growth = trace_growth_check(&probe, ds.inputs())?;
        if !growth.ok {
            note(
                &mut failure,
                assertion(
                    "bounds.trace_growth",
                    format!("sample {s}: slack {}", growth.min_slack),
                ),
            );
        }
        if s == 0 {
            rows.push(vec![
                "jacobian_frobenius_first".into(),
                fmt_f64(jac.observed),
                fmt_f64(jac.bound),
                jac.ok.to_string(),
            ]);
            rows.push(vec![
                "trace_growth_first".into(),
                fmt_f64(growth.min_slack),
                "0".into(),
                growth.ok.to_string(),
            ]);
        }
    }
    rows.push(vec![
        "jacobian_frobenius_worst_margin".into(),
        fmt_f64(worst_margin),
        "0".into(),
        (worst_margin >= 0.0).to_string(),
    ]);

    // Log-volume inequality, only where the stacked Jacobian is tall enough
    // and small enough to form densely.
    let tall = ds.n() * cfg.m_y >= d;
    let dense_ok = ds
        .n()
        .checked_mul(cfg.m_y)
        .and_then(|r| r.checked_mul(d))
        .map(|cells| cells <= DENSE_GUARD)
        .unwrap_or(false);
    if tall && dense_ok {
        let lv = jacobian_log_volume(&params, ds.inputs())?;
        let ok = lv.log_volume <= lv.bound + 1e-9 * lv.bound.abs().max(1.0);
        rows.push(vec![
            "log_volume".into(),
            fmt_f64(lv.log_volume),
            fmt_f64(lv.bound),
            ok.to_string(),
        ]);
        if !ok {
            note(
                &mut failure,
                assertion(
                    "bounds.log_volume",
                    format!("log volume {} exceeds bound {}", lv.log_volume, lv.bound),
                ),
            );
        }
    } else {
        println!(
            "log-volume check skipped: needs n * m_y >= d and a dense Jacobian \
             (n * m_y = {}, d = {d})",
            ds.n() * cfg.m_y
        );
    }

    // Capacity verdict at the configured accuracy and radius, plus the
    // smallest feasible radius.
    let d_total = param_count(&spec) as usize;
    let cap = capacity_feasibility(
        cfg.n,
        d_total,
        cfg.m_y,
        cfg.depth,
        cfg.epsilon,
        cfg.radius,
        cfg.c_schedule,
    )?;
    rows.push(vec![
        "capacity_lhs_vs_rhs_log".into(),
        fmt_f64(cap.lhs_log),
        fmt_f64(cap.rhs_log),
        cap.feasible.to_string(),
    ]);
    rows.push(vec![
        "under_capacity".into(),
        (d_total as f64).to_string(),
        ((cfg.n * cfg.m_y) as f64).to_string(),
        cap.under_capacity.to_string(),
    ]);
    let r_min = minimal_feasible_radius(cfg.n, d_total, cfg.m_y, cfg.depth, cfg.epsilon, cfg.c_schedule)?;
    rows.push(vec![
        "minimal_feasible_radius".into(),
        fmt_f64(r_min),
        fmt_f64(cfg.radius),
        (r_min <= cfg.radius).to_string(),
    ]);

    // Generalization-bound terms at initialization.
    let trace = forward_batch(&params, ds.inputs())?;
    let z = trace.z_matrix();
    let c_hat = measured_c_hat(&z);
    let gen = generalization_bound(
        &params.output_wbar(),
        cfg.n,
        cfg.m_y,
        cfg.rho,
        cfg.varsigma,
        cfg.delta_prime,
        c_hat,
    )?;
    rows.push(vec![
        "generalization_bound_init".into(),
        fmt_f64(gen.value),
        fmt_f64(c_hat),
        "true".into(),
    ]);

    let out = ensure_dir(&cfg.out_dir)?;
    write_csv(
        out.join("bounds_report.csv"),
        &["check", "observed", "reference", "ok"],
        &rows,
    )?;
    println!(
        "bounds: {} ball samples at radius {}, report at {}",
        cfg.ball_samples,
        cfg.radius,
        out.join("bounds_report.csv").display()
    );

    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}
