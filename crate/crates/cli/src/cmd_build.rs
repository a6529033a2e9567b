//! `build`: size the architecture, initialize it, and record what was made.

use crate::config::{ensure_dir, RunConfig};
use crate::runs::{build_arch, warn_underparameterized};
use anyhow::Result;
use lincert::architect::param_count;
use lincert::net::init_params;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let spec = build_arch(cfg)?;
    let params = init_params(&spec, cfg.seed);
    let d = param_count(&spec);
    let out = ensure_dir(&cfg.out_dir)?;

    std::fs::write(out.join("arch.kv"), spec.to_kv_string(Some(cfg.seed)))?;

    let mut report = String::new();
    report.push_str(&format!("widths = {:?}\n", spec.widths));
    report.push_str(&format!("depth = {}\n", spec.depth));
    report.push_str(&format!("parameters = {d}\n"));
    report.push_str(&format!("output_block = {}\n", params.dim() - params.output_offset()));
    report.push_str(&format!(
        "interpolation_threshold = {}\n",
        cfg.n * spec.output_width()
    ));
    if let Some(warning) = warn_underparameterized(&spec, cfg.n) {
        report.push_str(&warning);
        report.push('\n');
    }
    std::fs::write(out.join("build_report.txt"), &report)?;

    println!(
        "built {:?}: {} parameters, seed {}, wrote {}",
        spec.widths,
        d,
        cfg.seed,
        out.display()
    );
    Ok(())
}
