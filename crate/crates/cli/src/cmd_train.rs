//! `train`: masked gradient descent with the certificate checks, emitting the
//! per-step trace and the certificate report.

use crate::config::{ensure_dir, RunConfig};
use crate::runs::{assertion, build_arch, build_train_set, map_train_error, warn_underparameterized};
use anyhow::Result;
use lincert::net::init_params;
use lincert::report::write_kv;
use lincert::trainer::{train, TrainOpts};

pub fn run(cfg: &RunConfig) -> Result<()> {
    let spec = build_arch(cfg)?;
    warn_underparameterized(&spec, cfg.n);
    let params = init_params(&spec, cfg.seed);
    let ds = build_train_set(cfg)?;
    let loss = cfg.loss.spec();
    let opts = TrainOpts {
        epsilon: cfg.epsilon,
        max_steps: cfg.max_steps,
        record_stride: cfg.record_stride,
        force_residual_path: false,
        force_stepwise: false,
    };

    let (_trained, report) =
        train(&params, &ds, &loss, opts).map_err(|e| map_train_error("train", cfg.seed, e))?;

    if !report.rate_ok() {
        return Err(assertion(
            "train.rate_bound",
            "a recorded step exceeded L(f*) + c_z c_r zeta / (2t)",
        ));
    }
    if !report.norm_ok {
        return Err(assertion(
            "train.norm_bound",
            format!(
                "final norm {} exceeds w0 + 2 w* = {}",
                report.wt_norm,
                report.w0_norm + 2.0 * report.wstar_norm
            ),
        ));
    }

    let out = ensure_dir(&cfg.out_dir)?;
    std::fs::write(out.join("arch.kv"), spec.to_kv_string(Some(cfg.seed)))?;
    write_kv(out.join("cert_report.kv"), &report.to_kv())?;
    report.write_step_trace(out.join("step_trace.csv"))?;

    println!(
        "trained in {} of {} budgeted steps: J = {:.3e} <= target {:.3e} \
         (c_z {:.4}, c_r {:.4e}, eta {:.4e})",
        report.steps, report.budget, report.achieved, report.target, report.c_z, report.c_r, report.eta
    );
    println!(
        "certificate: monotone {}, rate {}, norm {}; wrote {}",
        report.monotone_all(),
        report.rate_ok(),
        report.norm_ok,
        out.display()
    );
    Ok(())
}
