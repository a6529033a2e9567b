//! Release acceptance sweep. Every gate the project promises is exercised
//! here at its stated tolerance, in one test so the output reads as a single
//! checklist: one [PASS] or [FAIL] line per gate, then a hard assertion that
//! nothing failed. The gates: trainability under the analytic step budget
//! with monotone descent, the recorded convergence rate, feature-matrix rank
//! plus the explicit witness, concentration scaling across widths, the
//! layer-moment recursion against heavy Monte-Carlo, backprop against finite
//! differences, the gradient smoothness bound, Jacobian Frobenius and
//! log-volume bounds, iterate and forward-trace norm bounds, capacity
//! feasibility, the natural-versus-corrupted label experiment, and the
//! direction of the generalization bound.

use lincert::architect::{param_count, size_widths, ArchSpec};
use lincert::bounds::{
    capacity_feasibility, jacobian_frobenius_bound, jacobian_log_volume, log_volume_of,
    minimal_feasible_radius, sample_in_ball, trace_growth_check,
};
use lincert::data::{default_planes, synthesize, SynthKind};
use lincert::net::{fd_gradient, grad_objective, init_params, Params};
use lincert::rng::stream_indexed;
use lincert::trainer::{train, CertificateReport, LossSpec, TrainOpts};
use lincert::verify::{
    concentration_suite, gaussian_moment_recursion, lipschitz_probe, mc_moment_level, rank_check,
    suggested_c_gamma, witness_construction, FeatureMatrix,
};
use lincert_cli::cmd_experiment;
use lincert_cli::config::RunConfig;
use std::time::Instant;

const RATE_SLACK: f64 = 1e-9;
const NORM_SLACK: f64 = 1e-9;

/// The reference training setup: n = 64 separable samples in 16 dimensions,
/// 4 classes, depth 2, widths from the sizing rule at C = 4, delta = 0.1.
fn reference_arch() -> ArchSpec {
    size_widths(64, 2, 0.1, 16, 4, 4.0).expect("sizing the reference architecture")
}

fn reference_data(seed: u64) -> lincert::data::Dataset {
    let planes = default_planes(4);
    synthesize(64, 16, 4, SynthKind::Separable { planes }, seed).expect("separable synthesis")
}

struct TrainSweep {
    reports: Vec<CertificateReport>,
    successes: usize,
    total: usize,
    secs: f64,
    first_failure: Option<String>,
}

/// Trains the reference setup across 100 seeds, keeping every successful
/// certificate report for the rate and norm gates.
fn train_sweep() -> TrainSweep {
    let spec = reference_arch();
    let loss = LossSpec::squared();
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut successes = 0;
    let mut first_failure = None;
    let total = 100;
    for seed in 0..total as u64 {
        let params = init_params(&spec, seed);
        let ds = reference_data(1000 + seed);
        match train(&params, &ds, &loss, TrainOpts::new(1e-3)) {
            Ok((_, rep)) => {
                let converged = rep.achieved <= rep.target + 1e-15
                    && rep.steps <= rep.budget
                    && rep.monotone_all();
                if converged {
                    successes += 1;
                    reports.push(rep);
                } else if first_failure.is_none() {
                    first_failure = Some(format!(
                        "seed {seed}: achieved {:.3e} target {:.3e}, steps {} of {}, monotone {}",
                        rep.achieved,
                        rep.target,
                        rep.steps,
                        rep.budget,
                        rep.monotone_all()
                    ));
                }
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some(format!("seed {seed}: {e}"));
                }
            }
        }
    }
    TrainSweep {
        reports,
        successes,
        total,
        secs: start.elapsed().as_secs_f64(),
        first_failure,
    }
}

/// J at or under 1e-3 within the analytic budget, descent monotone at every
/// step, in at least 95 of 100 seeds, under two minutes in total.
fn gate_trainability(sweep: &TrainSweep) -> Result<String, String> {
    if sweep.successes < 95 {
        let why = sweep
            .first_failure
            .clone()
            .unwrap_or_else(|| "no failure detail recorded".into());
        return Err(format!(
            "{}/{} seeds converged (need 95); first failure: {why}",
            sweep.successes, sweep.total
        ));
    }
    if sweep.secs >= 120.0 {
        return Err(format!(
            "sweep took {:.1}s (limit 120s) even with {}/{} seeds converged",
            sweep.secs, sweep.successes, sweep.total
        ));
    }
    Ok(format!(
        "{}/{} seeds reached J <= 1e-3 within budget with monotone descent in {:.2}s",
        sweep.successes, sweep.total, sweep.secs
    ))
}

/// J(w_t) <= L(f*) + c_z c_r zeta / (2t) at every recorded step of every
/// successful run, with 1e-9 relative slack.
fn gate_rate(sweep: &TrainSweep) -> Result<String, String> {
    let mut checked = 0usize;
    for rep in &sweep.reports {
        for r in rep.trace.iter().filter(|r| r.step >= 1) {
            let bound = rep.lfstar + rep.c_z * rep.c_r * rep.zeta / (2.0 * r.step as f64);
            if r.objective > bound * (1.0 + RATE_SLACK) + 1e-15 {
                return Err(format!(
                    "step {}: J = {:.6e} exceeds rate bound {:.6e}",
                    r.step, r.objective, bound
                ));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "rate bound held at {} recorded steps across {} runs",
        checked,
        sweep.reports.len()
    ))
}

/// Full row rank of the feature matrix in at least 99 of 100 random
/// initializations, and the beta = 100 witness reaches rank n on 10
/// separated feature sets.
fn gate_rank() -> Result<String, String> {
    let spec = reference_arch();
    let ds = reference_data(1000);
    let mut full = 0;
    for seed in 0..100u64 {
        let params = init_params(&spec, seed);
        let fm = FeatureMatrix::from_net(&params, ds.inputs())
            .map_err(|e| format!("feature matrix at seed {seed}: {e}"))?;
        if rank_check(&fm).decision {
            full += 1;
        }
    }
    if full < 99 {
        return Err(format!("full rank in only {full}/100 initializations (need 99)"));
    }
    let mut witnesses = 0;
    for i in 0..10u64 {
        let feats = synthesize(16, 8, 2, SynthKind::Random, 3000 + i)
            .map_err(|e| format!("witness features {i}: {e}"))?
            .inputs()
            .clone();
        let c_gamma =
            suggested_c_gamma(&feats).map_err(|e| format!("witness margin {i}: {e}"))?;
        let w = witness_construction(&feats, 20, c_gamma, 100.0, 10.0)
            .map_err(|e| format!("witness {i}: {e}"))?;
        if rank_check(&w).decision {
            witnesses += 1;
        } else {
            return Err(format!("witness {i} is rank deficient"));
        }
    }
    Ok(format!(
        "full rank in {full}/100 initializations; witness rank n on {witnesses}/10 feature sets"
    ))
}

/// Scaled-deviation interquartile ranges agree within a factor of 3 across
/// widths 64 through 4096, 1000 trials per width.
fn gate_concentration() -> Result<String, String> {
    let rep = concentration_suite(16, &[64, 256, 1024, 4096], 10.0, 2.0, 0.01, 1000, 4400)
        .map_err(|e| format!("{e}"))?;
    if rep.spread_ratio > 3.0 {
        return Err(format!(
            "scaled IQR spread ratio {:.3} exceeds 3 (IQRs {:?})",
            rep.spread_ratio, rep.iqrs
        ));
    }
    Ok(format!(
        "scaled IQR spread ratio {:.3} <= 3 across widths {:?}",
        rep.spread_ratio, rep.widths
    ))
}

/// Quadrature moments at levels 1 and 2 match 10^7-sample Monte-Carlo within
/// 3 standard errors for five weight-variance configurations. The quadrature
/// runs at 512 nodes per axis so its own node-doubling error estimate sits
/// an order of magnitude below the Monte-Carlo standard error; a highly
/// correlated pair (the last config) needs that resolution, and the guard
/// below fails loudly if any config were to need more.
fn gate_moments() -> Result<String, String> {
    let configs = [
        (2.0, 0.01, 1.0),
        (1.0, 0.10, 0.5),
        (3.0, 0.50, 2.0),
        (0.5, 0.05, 3.5),
        (2.5, 1.00, 0.1),
    ];
    let mut worst_z = 0.0f64;
    for (i, &(c_w, c_b, gamma)) in configs.iter().enumerate() {
        let table = gaussian_moment_recursion(10.0, c_w, c_b, gamma, 2, 512)
            .map_err(|e| format!("recursion ({c_w}, {c_b}, {gamma}): {e}"))?;
        for level in 1..=2usize {
            let lv = &table.levels[level];
            let seed = 5200 + 10 * i as u64 + level as u64;
            let mc = mc_moment_level(lv.var, lv.cov, 10.0, 10_000_000, seed)
                .map_err(|e| format!("sampling ({c_w}, {c_b}, {gamma}) level {level}: {e}"))?;
            // A discretization bias of at most SE / 5 can shift a z-score by
            // at most 0.2, which cannot flip a comparison against 3.0.
            let quad_err = lv.err_p.max(lv.err_pij);
            let se_floor = mc.p_se.min(mc.p_ij_se);
            if quad_err > se_floor / 5.0 {
                return Err(format!(
                    "config ({c_w}, {c_b}, {gamma}) level {level}: quadrature error {quad_err:.3e} \
                     is not negligible against SE {se_floor:.3e}"
                ));
            }
            let z_p = (table.p(level) - mc.p).abs() / mc.p_se;
            let z_pij = (table.p_ij(level) - mc.p_ij).abs() / mc.p_ij_se;
            worst_z = worst_z.max(z_p).max(z_pij);
            if z_p > 3.0 || z_pij > 3.0 {
                return Err(format!(
                    "config ({c_w}, {c_b}, {gamma}) level {level}: |z| = {:.2} for p, {:.2} for p_ij",
                    z_p, z_pij
                ));
            }
        }
    }
    Ok(format!(
        "5 configs x 2 levels within 3 SE of 1e7-sample Monte-Carlo (worst |z| = {worst_z:.2})"
    ))
}

/// Ten hand-spread architectures below 2000 parameters, mixing depths and
/// widths so several land near the cap.
fn gradcheck_archs() -> Vec<(Vec<usize>, usize)> {
    vec![
        (vec![4, 20, 3], 5),
        (vec![8, 28, 24, 4], 6),
        (vec![2, 5, 2], 3),
        (vec![6, 16, 16, 2], 4),
        (vec![3, 9, 9, 9, 2], 5),
        (vec![8, 24, 28, 4], 8),
        (vec![5, 10, 5], 6),
        (vec![7, 22, 18, 3], 5),
        (vec![2, 3, 2], 3),
        (vec![10, 28, 30, 6], 7),
    ]
}

fn max_rel_diff(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

/// Backprop against central finite differences on 10 nets up to 2000
/// parameters, max relative coordinate error at most 1e-5.
fn gate_gradcheck() -> Result<String, String> {
    let loss = LossSpec::squared();
    let mut worst = 0.0f64;
    let mut max_dim = 0usize;
    for (i, (widths, n)) in gradcheck_archs().into_iter().enumerate() {
        let m_x = widths[0];
        let m_y = *widths.last().unwrap();
        let spec = ArchSpec::from_widths(widths).map_err(|e| format!("net {i}: {e}"))?;
        let params = init_params(&spec, 9100 + i as u64);
        let d = params.dim();
        if d > 2000 {
            return Err(format!("net {i} has {d} parameters (cap 2000)"));
        }
        max_dim = max_dim.max(d);
        let ds = synthesize(n, m_x, m_y, SynthKind::Random, 4700 + i as u64)
            .map_err(|e| format!("net {i} data: {e}"))?;
        let bp = grad_objective(&params, &ds, &loss)
            .map_err(|e| format!("net {i} backprop: {e}"))?
            .flatten();
        let fd = fd_gradient(&params, &ds, &loss, 1e-5)
            .map_err(|e| format!("net {i} differences: {e}"))?;
        let gap = max_rel_diff(&bp, &fd);
        worst = worst.max(gap);
        if gap > 1e-5 {
            return Err(format!("net {i} ({d} parameters): coordinate error {gap:.3e} > 1e-5"));
        }
    }
    Ok(format!(
        "10 nets up to {max_dim} parameters: worst coordinate error {worst:.3e} <= 1e-5"
    ))
}

/// Observed gradient-difference ratios stay under (zeta / n) sum |z_i|^2
/// with 1e-6 relative headroom, 100 pairs on each of 10 architectures.
fn gate_smoothness() -> Result<String, String> {
    let loss = LossSpec::squared();
    let mut worst_frac = 0.0f64;
    for (i, (widths, n)) in gradcheck_archs().into_iter().enumerate() {
        let m_x = widths[0];
        let m_y = *widths.last().unwrap();
        let spec = ArchSpec::from_widths(widths).map_err(|e| format!("net {i}: {e}"))?;
        let params = init_params(&spec, 9300 + i as u64);
        let ds = synthesize(n, m_x, m_y, SynthKind::Random, 4800 + i as u64)
            .map_err(|e| format!("net {i} data: {e}"))?;
        let rep = lipschitz_probe(&params, &ds, &loss, 100, 6000 + i as u64)
            .map_err(|e| format!("net {i} probe: {e}"))?;
        worst_frac = worst_frac.max(rep.max_ratio / rep.bound);
        if !rep.ok || rep.max_ratio > rep.bound * (1.0 + 1e-6) {
            return Err(format!(
                "net {i}: ratio {:.6e} exceeds bound {:.6e}",
                rep.max_ratio, rep.bound
            ));
        }
    }
    Ok(format!(
        "10 architectures x 100 pairs: worst ratio/bound = {worst_frac:.6}"
    ))
}

struct BallSweep {
    frob_violations: usize,
    logvol_violations: usize,
    growth_violations: usize,
    samples: usize,
    equal_spectrum_gap: f64,
}

/// Draws 100 parameter vectors per radius in {1, 10} on three small
/// architectures whose Jacobians are wide enough for the volume bound, and
/// checks every deterministic inequality on each draw.
fn ball_sweep() -> Result<BallSweep, String> {
    let archs: [(&[usize], usize); 3] = [(&[3, 4, 2], 16), (&[2, 3, 3, 2], 15), (&[4, 5, 3], 15)];
    let mut out = BallSweep {
        frob_violations: 0,
        logvol_violations: 0,
        growth_violations: 0,
        samples: 0,
        equal_spectrum_gap: f64::NAN,
    };
    for (ai, &(widths, n)) in archs.iter().enumerate() {
        let m_x = widths[0];
        let m_y = *widths.last().unwrap();
        let spec =
            ArchSpec::from_widths(widths.to_vec()).map_err(|e| format!("arch {ai}: {e}"))?;
        let d = param_count(&spec) as usize;
        if n * m_y < d {
            return Err(format!(
                "arch {ai} is miswired for the volume bound: n m_y = {} < d = {d}",
                n * m_y
            ));
        }
        let inputs = synthesize(n, m_x, m_y, SynthKind::Random, 8700 + ai as u64)
            .map_err(|e| format!("arch {ai} inputs: {e}"))?
            .inputs()
            .clone();
        for (ri, &r) in [1.0f64, 10.0].iter().enumerate() {
            let mut rng = stream_indexed(8800, "acceptance.ball", (2 * ai + ri) as u64);
            for _ in 0..100 {
                let theta = sample_in_ball(d, r, &mut rng);
                let params = Params::unflatten(widths, 10.0, &theta)
                    .map_err(|e| format!("arch {ai} unflatten: {e}"))?;
                let rep = jacobian_frobenius_bound(&params, &inputs)
                    .map_err(|e| format!("arch {ai} Jacobian: {e}"))?;
                if !rep.ok {
                    out.frob_violations += 1;
                }
                let lv = jacobian_log_volume(&params, &inputs)
                    .map_err(|e| format!("arch {ai} volume: {e}"))?;
                if lv.log_volume > lv.bound + 1e-9 * lv.bound.abs().max(1.0) {
                    out.logvol_violations += 1;
                }
                let tg = trace_growth_check(&params, &inputs)
                    .map_err(|e| format!("arch {ai} trace: {e}"))?;
                if !tg.ok {
                    out.growth_violations += 1;
                }
                out.samples += 1;
            }
        }
    }
    // Equal singular spectrum: 3 Q for orthogonal Q turns the mean-volume
    // inequality into an equality.
    let square = synthesize(6, 6, 2, SynthKind::Random, 8900)
        .map_err(|e| format!("orthogonal seed matrix: {e}"))?
        .inputs()
        .clone();
    let q = square.qr().q();
    let lv = log_volume_of(&(q * 3.0));
    out.equal_spectrum_gap = (lv.log_volume - lv.bound).abs();
    Ok(out)
}

/// Zero Frobenius-bound violations over the ball sweep, the log-volume
/// inequality everywhere, and equality within 1e-9 on the equal-spectrum
/// construction.
fn gate_jacobian(sweep: &BallSweep) -> Result<String, String> {
    if sweep.frob_violations > 0 {
        return Err(format!(
            "{} of {} draws broke the Frobenius bound",
            sweep.frob_violations, sweep.samples
        ));
    }
    if sweep.logvol_violations > 0 {
        return Err(format!(
            "{} of {} draws broke the log-volume inequality",
            sweep.logvol_violations, sweep.samples
        ));
    }
    if !(sweep.equal_spectrum_gap <= 1e-9) {
        return Err(format!(
            "equal-spectrum case off by {:.3e} (tolerance 1e-9)",
            sweep.equal_spectrum_gap
        ));
    }
    Ok(format!(
        "0 violations in {} draws; equal-spectrum gap {:.3e}",
        sweep.samples, sweep.equal_spectrum_gap
    ))
}

/// |w_t| <= |w_0| + 2 |w_*| along every recorded successful run, and the
/// forward-trace growth bound on every ball-sweep forward pass.
fn gate_norms(sweep: &TrainSweep, balls: &BallSweep) -> Result<String, String> {
    let mut records = 0usize;
    for rep in &sweep.reports {
        let cap = (rep.w0_norm + 2.0 * rep.wstar_norm) * (1.0 + NORM_SLACK);
        if !rep.norm_ok {
            return Err(format!(
                "a run reported final norm {:.6} above {:.6}",
                rep.wt_norm, cap
            ));
        }
        for r in &rep.trace {
            if r.w_norm > cap {
                return Err(format!(
                    "step {}: |w| = {:.6} exceeds |w0| + 2|w*| = {:.6}",
                    r.step, r.w_norm, cap
                ));
            }
            records += 1;
        }
    }
    if balls.growth_violations > 0 {
        return Err(format!(
            "{} of {} forward passes broke the trace growth bound",
            balls.growth_violations, balls.samples
        ));
    }
    Ok(format!(
        "iterate norm bounded at {} records over {} runs; trace bound on {}/{} forward passes",
        records,
        sweep.reports.len(),
        balls.samples - balls.growth_violations,
        balls.samples
    ))
}

/// Feasible at R = 1 whenever d >= n m_y, and the minimal feasible radius at
/// d = n m_y / 2 climbs monotonically as epsilon shrinks.
fn gate_capacity() -> Result<String, String> {
    let eps_sweep = [1e-2, 1e-4, 1e-8, 1e-16];
    for &d in &[256usize, 512] {
        for &eps in &eps_sweep {
            let v = capacity_feasibility(64, d, 4, 2, eps, 1.0, 4.0)
                .map_err(|e| format!("verdict d={d} eps={eps}: {e}"))?;
            if !v.feasible {
                return Err(format!("infeasible at R = 1 with d = {d}, eps = {eps}"));
            }
            if v.under_capacity {
                return Err(format!("d = {d} misreported as under capacity"));
            }
        }
    }
    let mut radii = Vec::new();
    for k in [2i32, 4, 8, 16] {
        let v = capacity_feasibility(64, 128, 4, 2, 10f64.powi(-k), 1.0, 4.0)
            .map_err(|e| format!("verdict d=128 k={k}: {e}"))?;
        if !v.under_capacity {
            return Err("d = 128 not flagged as under capacity".into());
        }
        let r = minimal_feasible_radius(64, 128, 4, 2, 10f64.powi(-k), 4.0)
            .map_err(|e| format!("radius at k={k}: {e}"))?;
        radii.push(r);
    }
    if !radii.windows(2).all(|w| w[1] > w[0]) {
        return Err(format!("minimal radius not strictly increasing: {radii:?}"));
    }
    if radii[3] <= 5.0 * radii[0] {
        return Err(format!(
            "minimal radius grew too slowly for an unbounded trend: {radii:?}"
        ));
    }
    Ok(format!(
        "feasible at R = 1 for d in {{256, 512}} across eps; minimal radius at d = 128 climbs {:.3} -> {:.3}",
        radii[0], radii[3]
    ))
}

/// The locked experiment configuration: near-square feature layer so the
/// corrupted arm must spend norm to memorize.
fn experiment_config(out_dir: std::path::PathBuf) -> RunConfig {
    RunConfig {
        n: 256,
        test_n: 512,
        m_x: 4,
        feature_width: Some(256),
        epsilon: 2e-2,
        varsigma: 10.0,
        out_dir,
        ..RunConfig::default()
    }
}

/// Natural run generalizes, corrupted run lands near chance, and at matched
/// 99% training accuracy the corrupted run carries strictly larger weight
/// norm and bound value, all under five minutes.
fn gate_experiment() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
    let cfg = experiment_config(tmp.path().to_path_buf());
    let start = Instant::now();
    let outcome = cmd_experiment::run(&cfg).map_err(|e| format!("{e:#}"))?;
    cmd_experiment::check(&outcome).map_err(|e| format!("{e:#}"))?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        return Err(format!("experiment took {secs:.1}s (limit 300s)"));
    }
    let m_nat = outcome.natural.matched.as_ref().expect("checked above");
    let m_cor = outcome.corrupted.matched.as_ref().expect("checked above");
    Ok(format!(
        "natural test {:.1}%, corrupted {:.1}% vs chance {:.1}%; matched norms {:.2} < {:.2}, bounds {:.2} < {:.2}; {:.1}s",
        outcome.natural.final_row.test_acc,
        outcome.corrupted.final_row.test_acc,
        outcome.chance,
        m_nat.norm,
        m_cor.norm,
        m_nat.bound,
        m_cor.bound,
        secs
    ))
}

/// The computed bound stays above the margin-adjusted test-train gap on ten
/// independent resamples of the natural-label setting.
fn gate_generalization() -> Result<String, String> {
    let mut min_slack = f64::INFINITY;
    for seed in 0..10u64 {
        let mut cfg = experiment_config(std::path::PathBuf::from("unused"));
        cfg.seed = seed;
        // Only the endpoints matter here, so keep the trace to two records.
        cfg.record_stride = Some(1 << 62);
        let arm = cmd_experiment::natural_arm(&cfg).map_err(|e| format!("seed {seed}: {e:#}"))?;
        let gap = arm.test_zero_one - arm.train_margin_risk;
        let slack = arm.final_row.bound - gap;
        min_slack = min_slack.min(slack);
        if slack < -1e-12 {
            return Err(format!(
                "seed {seed}: bound {:.4} below test-train gap {:.4}",
                arm.final_row.bound, gap
            ));
        }
    }
    Ok(format!(
        "bound covered the test-train gap on 10/10 resamples (min slack {min_slack:.3})"
    ))
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let sweep = train_sweep();
    let balls = ball_sweep();

    let gates: Vec<(&str, Result<String, String>)> = vec![
        ("trainability", gate_trainability(&sweep)),
        ("convergence rate", gate_rate(&sweep)),
        ("feature rank", gate_rank()),
        ("concentration", gate_concentration()),
        ("moment recursion", gate_moments()),
        ("gradient check", gate_gradcheck()),
        ("smoothness bound", gate_smoothness()),
        (
            "jacobian bounds",
            balls.as_ref().map_err(|e| e.clone()).and_then(gate_jacobian),
        ),
        (
            "norm bounds",
            balls
                .as_ref()
                .map_err(|e| e.clone())
                .and_then(|b| gate_norms(&sweep, b)),
        ),
        ("capacity", gate_capacity()),
        ("label corruption", gate_experiment()),
        ("generalization bound", gate_generalization()),
    ];

    let mut failures = Vec::new();
    for (name, outcome) in &gates {
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                println!("[FAIL] {name}: {detail}");
                failures.push(format!("{name}: {detail}"));
            }
        }
    }
    println!(
        "acceptance: {}/{} gates passed in {:.1}s",
        gates.len() - failures.len(),
        gates.len(),
        started.elapsed().as_secs_f64()
    );
    assert!(
        failures.is_empty(),
        "failed acceptance gates:\n{}",
        failures.join("\n")
    );
}
