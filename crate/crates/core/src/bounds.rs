//! Capacity-side calculators: Jacobian norm and volume bounds, the
//! feasibility inequality relating parameter count to interpolation accuracy,
//! and the margin-based generalization bound.

use crate::error::{Error, Result};
use crate::net::{self, Params};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

// ---------------------------------------------------------------------------
// Jacobian Frobenius bound
// ---------------------------------------------------------------------------

/// Forward-trace norm growth check: for every sample and level l,
/// 1 + |x^(l)|^2 <= (1 + |x|^2) * prod_{i<=l} (1 + |W^(i)|_F^2 + |b^(i)|_F^2).
#[derive(Debug, Clone, Copy)]
pub struct TraceGrowthReport {
    pub ok: bool,
    /// Minimum of rhs - lhs over all samples and levels.
    pub min_slack: f64,
}

pub fn trace_growth_check(params: &Params, inputs: &DMatrix<f64>) -> Result<TraceGrowthReport> {
    let trace = net::forward_batch(params, inputs)?;
    let depth = params.depth();
    let mut factors = Vec::with_capacity(depth);
    let mut running = 1.0;
    for l in 0..depth {
        let layer = &params.layers()[l];
        running *= 1.0 + layer.w.norm_squared() + layer.b.norm_squared();
        factors.push(running);
    }
    let mut min_slack = f64::INFINITY;
    for i in 0..inputs.ncols() {
        let base = 1.0 + trace.xs[0].column(i).norm_squared();
        for l in 1..=depth {
            let lhs = 1.0 + trace.xs[l].column(i).norm_squared();
            let rhs = base * factors[l - 1];
            min_slack = min_slack.min(rhs - lhs);
        }
    }
    Ok(TraceGrowthReport {
        ok: min_slack >= 0.0,
        min_slack,
    })
}

#[derive(Debug, Clone)]
pub struct JacobianReport {
    /// sum_i |d f(x_i) / d theta|_F^2.
    pub observed: f64,
    /// n * 2(H+1) * ((m_y^2 + H + |theta|^2) / (H+1))^(H+1).
    pub bound: f64,
    pub per_sample: Vec<f64>,
    pub theta_norm_sq: f64,
    pub growth: TraceGrowthReport,
    pub ok: bool,
}

/// Right side of the per-sample Jacobian norm inequality.
pub fn frobenius_rhs(m_y: usize, depth: usize, theta_norm_sq: f64) -> f64 {
    let h = depth as f64;
    let base = ((m_y * m_y) as f64 + h + theta_norm_sq) / (h + 1.0);
    2.0 * (h + 1.0) * base.powi(depth as i32 + 1)
}

/// Checks the stacked Jacobian Frobenius bound on unit-norm inputs, including
/// the forward-trace growth inequality on the same pass.
pub fn jacobian_frobenius_bound(params: &Params, inputs: &DMatrix<f64>) -> Result<JacobianReport> {
    for i in 0..inputs.ncols() {
        if (inputs.column(i).norm() - 1.0).abs() > 1e-9 {
            return Err(Error::ZeroNormInput { index: i });
        }
    }
    let per_sample = net::jacobian_frobenius_sq(params, inputs)?;
    let observed: f64 = per_sample.iter().sum();
    let theta_norm_sq = params.flatten().norm_squared();
    let m_y = *params.widths().last().unwrap();
    let bound = inputs.ncols() as f64 * frobenius_rhs(m_y, params.depth(), theta_norm_sq);
    let growth = trace_growth_check(params, inputs)?;
    Ok(JacobianReport {
        observed,
        bound,
        per_sample,
        theta_norm_sq,
        growth,
        ok: observed <= bound && growth.ok,
    })
}

// ---------------------------------------------------------------------------
// Log-volume
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogVolumeReport {
    /// sum of log singular values; -inf when rank deficient.
    pub log_volume: f64,
    /// (d/2) * log(|Jac|_F^2 / d).
    pub bound: f64,
    pub rank: usize,
    pub d: usize,
}

/// Log-volume of an explicit Jacobian matrix against its Frobenius bound.
pub fn log_volume_of(jac: &DMatrix<f64>) -> LogVolumeReport {
    let d = jac.ncols();
    let frob_sq = jac.norm_squared();
    let sv = jac.clone().svd(false, false).singular_values;
    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let threshold = jac.nrows().max(d) as f64 * f64::EPSILON * s_max;
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    let log_volume = if rank < d.min(jac.nrows()) || sv.len() < d {
        f64::NEG_INFINITY
    } else {
        sv.iter().map(|&s| s.ln()).sum()
    };
    LogVolumeReport {
        log_volume,
        bound: d as f64 / 2.0 * (frob_sq / d as f64).ln(),
        rank,
        d,
    }
}

/// Log-volume of the network's stacked Jacobian at `params`. Needs a tall
/// Jacobian: n * m_y >= d.
pub fn jacobian_log_volume(params: &Params, inputs: &DMatrix<f64>) -> Result<LogVolumeReport> {
    let m_y = *params.widths().last().unwrap();
    if inputs.ncols() * m_y < params.dim() {
        return Err(Error::invalid(format!(
            "log-volume needs n * m_y >= d, got {} * {m_y} < {}",
            inputs.ncols(),
            params.dim()
        )));
    }
    let jac = net::jacobian_fx(params, inputs)?;
    Ok(log_volume_of(&jac))
}

// ---------------------------------------------------------------------------
// Capacity feasibility
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CapacityVerdict {
    pub lhs_log: f64,
    pub rhs_log: f64,
    pub feasible: bool,
    /// d < n * m_y: no bounded-norm parameter vector can interpolate every
    /// labeling.
    pub under_capacity: bool,
}

/// Log-space evaluation of the capacity inequality
/// (C R n / d^{3/2}) * ((m_y^2 + H + R^2)^{H+1} / H^H) >= (2/sqrt(eps))^{n m_y/d - 1}.
pub fn capacity_feasibility(
    n: usize,
    d: usize,
    m_y: usize,
    depth: usize,
    epsilon: f64,
    radius: f64,
    c_const: f64,
) -> Result<CapacityVerdict> {
    if n == 0 || d == 0 || m_y == 0 || depth == 0 {
        return Err(Error::invalid("capacity arguments must be positive"));
    }
    if !(epsilon > 0.0) || !(radius > 0.0) || !(c_const > 0.0) {
        return Err(Error::invalid(format!(
            "capacity needs epsilon, R, C > 0; got {epsilon}, {radius}, {c_const}"
        )));
    }
    let h = depth as f64;
    let lhs_log = c_const.ln() + radius.ln() + (n as f64).ln() - 1.5 * (d as f64).ln()
        + (h + 1.0) * ((m_y * m_y) as f64 + h + radius * radius).ln()
        - h * h.ln();
    let rhs_log = ((n * m_y) as f64 / d as f64 - 1.0) * (2.0 / epsilon.sqrt()).ln();
    Ok(CapacityVerdict {
        lhs_log,
        rhs_log,
        feasible: lhs_log >= rhs_log,
        under_capacity: d < n * m_y,
    })
}

/// Smallest radius R making the capacity inequality hold, by bisection; the
/// left side is strictly increasing in R.
pub fn minimal_feasible_radius(
    n: usize,
    d: usize,
    m_y: usize,
    depth: usize,
    epsilon: f64,
    c_const: f64,
) -> Result<f64> {
    let feasible_at =
        |r: f64| -> Result<bool> { Ok(capacity_feasibility(n, d, m_y, depth, epsilon, r, c_const)?.feasible) };
    let mut lo = 1e-12;
    let mut hi = 1.0;
    while !feasible_at(hi)? {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::invalid("no feasible radius below 1e300"));
        }
    }
    if feasible_at(lo)? {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if feasible_at(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

// ---------------------------------------------------------------------------
// Margin losses and generalization bound
// ---------------------------------------------------------------------------

/// Ramp margin loss and 0-1 loss for one output vector. The margin is the gap
/// between the labeled coordinate and the best other coordinate; ties count
/// as classification errors.
pub fn margin_losses(output: &DVector<f64>, label: usize, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }
    if output.len() < 2 {
        return Err(Error::invalid("margin needs at least 2 output coordinates"));
    }
    if label >= output.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} outputs",
            output.len()
        )));
    }
    let runner_up = output
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = output[label] - runner_up;
    let ramp = (1.0 - margin / rho).clamp(0.0, 1.0);
    let zero_one = if margin <= 0.0 { 1.0 } else { 0.0 };
    Ok((ramp, zero_one))
}

/// Mean ramp loss over a prediction batch.
pub fn margin_risk(preds: &DMatrix<f64>, labels: &[usize], rho: f64) -> Result<f64> {
    if preds.ncols() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "margin risk labels",
            expected: format!("{} labels", preds.ncols()),
            got: format!("{}", labels.len()),
        });
    }
    let mut acc = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let col = preds.column(i).into_owned();
        acc += margin_losses(&col, label, rho)?.0;
    }
    Ok(acc / labels.len() as f64)
}

/// Mean 0-1 loss over a prediction batch.
pub fn zero_one_risk(preds: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    if preds.ncols() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "classification labels",
            expected: format!("{} labels", preds.ncols()),
            got: format!("{}", labels.len()),
        });
    }
    let mut acc = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let col = preds.column(i).into_owned();
        acc += margin_losses(&col, label, 1.0)?.1;
    }
    Ok(acc / labels.len() as f64)
}

/// Max Euclidean column norm of the output layer: the (2, inf) norm of its
/// transpose.
pub fn two_inf_norm(wbar: &DMatrix<f64>) -> f64 {
    (0..wbar.ncols())
        .map(|j| wbar.column(j).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub struct GenBound {
    pub weight_norm: f64,
    /// Discretization index: max(ceil(varsigma * weight_norm), 1).
    pub ceiling: f64,
    pub term_norm: f64,
    pub term_conf: f64,
    pub value: f64,
}

/// Margin-based generalization bound:
/// c_hat m_y^2 K / (rho varsigma sqrt(n)) + sqrt(ln(pi^2 K^2 / delta') / (2n))
/// with K = max(ceil(varsigma * |Wbar^T|_{2,inf}), 1).
pub fn generalization_bound(
    wbar: &DMatrix<f64>,
    n: usize,
    m_y: usize,
    rho: f64,
    varsigma: f64,
    delta_prime: f64,
    c_hat: f64,
) -> Result<GenBound> {
    if !(rho > 0.0) || !(varsigma >= 1.0) || !(c_hat > 0.0) {
        return Err(Error::invalid(format!(
            "bound needs rho > 0, varsigma >= 1, c_hat > 0; got {rho}, {varsigma}, {c_hat}"
        )));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::invalid(format!(
            "delta' must be in (0,1), got {delta_prime}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let weight_norm = two_inf_norm(wbar);
    let ceiling = (varsigma * weight_norm).ceil().max(1.0);
    let nf = n as f64;
    let term_norm = c_hat * (m_y * m_y) as f64 * ceiling / (rho * varsigma * nf.sqrt());
    let term_conf =
        ((std::f64::consts::PI.powi(2) * ceiling * ceiling / delta_prime).ln() / (2.0 * nf)).sqrt();
    Ok(GenBound {
        weight_norm,
        ceiling,
        term_norm,
        term_conf,
        value: term_norm + term_conf,
    })
}

/// Measured feature-norm constant: twice the largest feature column norm.
pub fn measured_c_hat(z: &DMatrix<f64>) -> f64 {
    2.0 * (0..z.ncols())
        .map(|i| z.column(i).norm())
        .fold(0.0, f64::max)
}

/// Uniform draw from the radius-`r` Euclidean ball in dimension `d`.
pub fn sample_in_ball(d: usize, r: f64, rng: &mut impl Rng) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = DVector::from_fn(d, |_, _| normal.sample(rng));
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let u: f64 = rng.gen::<f64>();
    v *= r * u.powf(1.0 / d as f64) / norm;
    v
}
