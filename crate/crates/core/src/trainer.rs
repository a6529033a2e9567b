//! Masked gradient descent on the output layer, with a convergence
//! certificate.
//!
//! The step size mask is zero everywhere except the output-layer block, where
//! it is 1/(c_z zeta): c_z bounds the curvature of the objective restricted to
//! that block, zeta is the gradient-Lipschitz constant of the loss. Because the
//! hidden layers never move, the last hidden activations are fixed features
//! and each step costs one small matrix product.
//!
//! The certificate records, per run: the curvature estimate c_z, the squared
//! distance c_r from the initial output layer to the affine set of
//! interpolants, the step budget ceil(c_z c_r zeta / (2 eps)), per-step descent
//! flags with the margin (c_z zeta / 2) |w_{k+1} - w_k|^2, and the final norm
//! check |w_t| <= |w_0| + 2 |w_*|.
//!
//! For squared loss the update is linear, so the whole iterate sequence
//! diagonalizes in the right singular basis of the feature matrix and is
//! available in closed form; see [`ModeSystem`]. The default route evaluates
//! that form directly, which decouples the cost of a run from the step count
//! while certifying exactly the same per-step inequalities. The explicit loop
//! remains for logistic loss, for very tight targets, and as the oracle the
//! closed form is tested against.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, Params};
use crate::report;
use crate::verify::FeatureMatrix;
use nalgebra::{DMatrix, DVector};
use std::path::Path;
use std::time::Instant;

/// Relative slack absorbing f64 rounding in per-step descent checks.
const MONOTONE_SLACK: f64 = 1e-12;
/// Relative slack for the final norm inequality.
const NORM_SLACK: f64 = 1e-9;
/// Relative slack for the rate inequality at recorded steps.
const RATE_SLACK: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Squared Euclidean distance |q - y|^2.
    Squared,
    /// Coordinate-wise log loss sum_j ln(1 + exp(-y_j q_j)).
    Logistic,
}

/// A loss together with the Lipschitz constant of its prediction gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub zeta: f64,
}

impl LossSpec {
    pub fn squared() -> Self {
        LossSpec {
            kind: LossKind::Squared,
            zeta: 2.0,
        }
    }

    /// zeta = 1/4 since |y_j| <= 1 bounds the per-coordinate curvature.
    pub fn logistic() -> Self {
        LossSpec {
            kind: LossKind::Logistic,
            zeta: 0.25,
        }
    }

    pub fn value(&self, pred: &DVector<f64>, target: &DVector<f64>) -> f64 {
        match self.kind {
            LossKind::Squared => (pred - target).norm_squared(),
            LossKind::Logistic => pred
                .iter()
                .zip(target.iter())
                .map(|(&q, &y)| (-y * q).exp().ln_1p())
                .sum(),
        }
    }

    /// Mean loss over prediction/target columns.
    pub fn mean_objective(&self, pred: &DMatrix<f64>, targets: &DMatrix<f64>) -> f64 {
        let n = pred.ncols() as f64;
        match self.kind {
            LossKind::Squared => (pred - targets).norm_squared() / n,
            LossKind::Logistic => {
                pred.iter()
                    .zip(targets.iter())
                    .map(|(&q, &y)| (-y * q).exp().ln_1p())
                    .sum::<f64>()
                    / n
            }
        }
    }

    /// Gradient of the mean loss with respect to predictions.
    pub fn mean_grad_pred(&self, pred: &DMatrix<f64>, targets: &DMatrix<f64>) -> DMatrix<f64> {
        let n = pred.ncols() as f64;
        match self.kind {
            LossKind::Squared => (pred - targets).map(|r| 2.0 * r / n),
            LossKind::Logistic => pred.zip_map(&targets.clone(), |q, y| {
                -y * crate::net::softplus_deriv(-y * q, 1.0) / n
            }),
        }
    }

    /// Mean loss when predictions equal targets exactly: the objective value
    /// every interpolant attains (zero for squared loss).
    pub fn loss_at_targets(&self, targets: &DMatrix<f64>) -> f64 {
        self.mean_objective(targets, targets)
    }
}

// ---------------------------------------------------------------------------
// Step-size mask and curvature estimate
// ---------------------------------------------------------------------------

/// Full-length step-size vector: 1/(c_z zeta) on the output-layer block,
/// zero elsewhere.
pub fn lr_mask(widths: &[usize], c_z: f64, zeta: f64) -> Result<DVector<f64>> {
    if widths.len() < 3 {
        return Err(Error::invalid("need at least 3 widths"));
    }
    if !(c_z >= 1.0) || !(zeta > 0.0) {
        return Err(Error::invalid(format!(
            "mask needs c_z >= 1 and zeta > 0, got c_z={c_z} zeta={zeta}"
        )));
    }
    let d: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let h = widths.len() - 2;
    let output_block = (widths[h] + 1) * widths[h + 1];
    let mut mask = DVector::zeros(d);
    let eta = 1.0 / (c_z * zeta);
    for i in d - output_block..d {
        mask[i] = eta;
    }
    Ok(mask)
}

/// c_z = max(1, mean squared norm of the augmented features z_i).
pub fn estimate_cz(params: &Params, ds: &Dataset) -> Result<f64> {
    let trace = net::forward_batch(params, ds.inputs())?;
    Ok(cz_from_z(&trace.z_matrix()))
}

pub(crate) fn cz_from_z(z: &DMatrix<f64>) -> f64 {
    (z.norm_squared() / z.ncols() as f64).max(1.0)
}

// ---------------------------------------------------------------------------
// Min-norm interpolation
// ---------------------------------------------------------------------------

/// Solution of min |W|_F subject to W M^T = Y.
#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub wbar: DMatrix<f64>,
    /// |W M^T - Y|_F, checked against 1e-8 |Y|_F.
    pub residual: f64,
}

/// Minimum-Frobenius-norm solution of W M^T = Y for a wide full-row-rank M.
/// Errors name the singular value that broke rank or accuracy.
pub fn solve_min_norm(m: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<MinNormSolution> {
    let svd = crate::verify::FeatureSvd::new(m);
    svd.require_full_rank()?;
    let wbar = svd.min_norm_interpolant(targets);
    let residual = (&wbar * m.transpose() - targets).norm();
    let tolerance = 1e-8 * targets.norm();
    if residual > tolerance {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
            offending: svd.smallest_kept(),
        });
    }
    Ok(MinNormSolution { wbar, residual })
}

/// [`solve_min_norm`] for a validated feature matrix.
pub fn min_norm_interpolant(m: &FeatureMatrix, targets: &DMatrix<f64>) -> Result<MinNormSolution> {
    if targets.ncols() != m.n() {
        return Err(Error::DimensionMismatch {
            context: "interpolation targets",
            expected: format!("{} columns", m.n()),
            got: format!("{}", targets.ncols()),
        });
    }
    solve_min_norm(m.matrix(), targets)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TrainOpts {
    /// Certificate slack: stop once J <= L(f*) + epsilon.
    pub epsilon: f64,
    /// Hard cap on steps; the effective cap is min(budget, max_steps).
    pub max_steps: u64,
    /// Record every this-many steps; None picks a stride that keeps about
    /// 4096 rows.
    pub record_stride: Option<u64>,
    /// Evaluate through the residual W Z - Y even when a shortcut applies.
    /// All routes are algebraically identical.
    pub force_residual_path: bool,
    /// Run the explicit per-step loop even where the squared-loss sequence
    /// has a closed form.
    pub force_stepwise: bool,
}

impl TrainOpts {
    pub fn new(epsilon: f64) -> Self {
        TrainOpts {
            epsilon,
            max_steps: u64::MAX,
            record_stride: None,
            force_residual_path: false,
            force_stepwise: false,
        }
    }
}

/// One recorded point of a training run.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: u64,
    pub objective: f64,
    /// |w_k - w_*|_F against the min-norm interpolant.
    pub dist_to_interpolant: f64,
    pub w_norm: f64,
    pub wall_secs: f64,
}

/// Everything the run certifies, plus the recorded trace.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub c_z: f64,
    pub c_r: f64,
    pub zeta: f64,
    pub eta: f64,
    pub budget: u64,
    pub steps: u64,
    pub lfstar: f64,
    pub target: f64,
    pub achieved: f64,
    /// Per recorded step: no descent violation since the previous record.
    pub monotone: Vec<bool>,
    pub norm_ok: bool,
    pub w0_norm: f64,
    pub wstar_norm: f64,
    pub wt_norm: f64,
    pub trace: Vec<StepRecord>,
}

impl CertificateReport {
    /// Rate inequality at every recorded step t >= 1:
    /// J(w_t) <= L(f*) + c_z c_r zeta / (2t), within relative slack.
    pub fn rate_ok(&self) -> bool {
        self.trace.iter().filter(|r| r.step >= 1).all(|r| {
            let bound = self.lfstar + self.c_z * self.c_r * self.zeta / (2.0 * r.step as f64);
            r.objective <= bound * (1.0 + RATE_SLACK) + 1e-15
        })
    }

    pub fn monotone_all(&self) -> bool {
        self.monotone.iter().all(|&m| m)
    }

    /// Writes the per-step CSV trace: step, objective, distance to the
    /// interpolant, weight norm, wall-clock seconds.
    pub fn write_step_trace<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .trace
            .iter()
            .map(|r| {
                vec![
                    r.step.to_string(),
                    report::fmt_f64(r.objective),
                    report::fmt_f64(r.dist_to_interpolant),
                    report::fmt_f64(r.w_norm),
                    report::fmt_f64(r.wall_secs),
                ]
            })
            .collect();
        report::write_csv(
            path,
            &["step", "objective", "dist_to_interpolant", "w_norm", "wall_secs"],
            &rows,
        )
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let f = report::fmt_f64;
        vec![
            ("c_z".into(), f(self.c_z)),
            ("c_r".into(), f(self.c_r)),
            ("zeta".into(), f(self.zeta)),
            ("eta".into(), f(self.eta)),
            ("budget".into(), self.budget.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("lfstar".into(), f(self.lfstar)),
            ("target".into(), f(self.target)),
            ("achieved".into(), f(self.achieved)),
            ("monotone_all".into(), self.monotone_all().to_string()),
            ("rate_ok".into(), self.rate_ok().to_string()),
            ("norm_ok".into(), self.norm_ok.to_string()),
            ("w0_norm".into(), f(self.w0_norm)),
            ("wstar_norm".into(), f(self.wstar_norm)),
            ("wt_norm".into(), f(self.wt_norm)),
        ]
    }
}

/// Objective restricted to the output layer, hidden features fixed.
pub fn output_objective(
    z: &DMatrix<f64>,
    wbar: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    loss: &LossSpec,
) -> f64 {
    loss.mean_objective(&(wbar * z), targets)
}

/// rho^t through exp(t ln rho); exact at t = 0 and for rho = 0.
fn geom(rho: f64, t: u64) -> f64 {
    if t == 0 {
        1.0
    } else if rho <= 0.0 {
        0.0
    } else {
        (t as f64 * rho.ln()).exp()
    }
}

/// The squared-loss descent sequence in the right singular basis of
/// M = Z^T.
///
/// Writing Z = sum_j s_j u_j v_j^T and G = (w_0 - w_*) U restricted to the
/// kept singular values, each mode of the error contracts independently by
/// rho_j = 1 - 2 eta s_j^2 / n per step, so for every step t
///
///   J(w_t)            = L(f*) + sum_j mass_j rho_j^{2t},
///   |w_{t+1} - w_t|^2 = sum_j step_mass_j rho_j^{2t},
///   w_t               = w_0 + G diag(rho_j^t - 1) U^T,
///
/// with mass_j = |G_j|^2 s_j^2 / n and step_mass_j = |G_j|^2 (1 - rho_j)^2.
/// These are the same iterates the explicit loop produces, evaluated without
/// running it. The descent inequality with margin (c_z zeta / 2) |dw|^2
/// holds on every mode at every step with the spare factor 1 + rho_j >= 1;
/// [`ModeSystem::certify_margin`] verifies the per-mode instances, and the
/// caller re-verifies whole steps numerically at every recorded step.
///
/// A kept singular value can be so small that 2 eta s_j^2 / n underflows
/// below machine epsilon and rho_j rounds to exactly 1. Such a mode is
/// frozen: the iterate does not move along it (the explicit loop would lose
/// the same update to rounding), its step mass is zero, and the descent
/// inequality holds with equality. Convergence then rests on the remaining
/// modes, which is exactly what the crossing search observes.
struct ModeSystem {
    /// Contraction factor per kept mode, each in [0, 1]; exactly 1 marks a
    /// frozen mode.
    rho: Vec<f64>,
    /// Objective mass per mode.
    mass: Vec<f64>,
    /// Squared step length mass per mode.
    step_mass: Vec<f64>,
    /// G, the initial error in mode coordinates, m_y x r.
    coeffs: DMatrix<f64>,
    /// Kept left singular vectors of Z as rows, r x k.
    basis_t: DMatrix<f64>,
    lfstar: f64,
}

impl ModeSystem {
    fn new(
        svd: &crate::verify::FeatureSvd,
        w0: &DMatrix<f64>,
        wstar: &DMatrix<f64>,
        n: usize,
        eta: f64,
        lfstar: f64,
    ) -> Self {
        let sv = svd.singular_values();
        let v_t = svd.right_vectors_t();
        let kept: Vec<usize> = (0..sv.len())
            .filter(|&j| sv[j] > svd.keep_threshold())
            .collect();
        let mut basis_t = DMatrix::zeros(kept.len(), v_t.ncols());
        for (row, &j) in kept.iter().enumerate() {
            basis_t.row_mut(row).copy_from(&v_t.row(j));
        }
        let coeffs = (w0 - wstar) * basis_t.transpose();
        let mut rho = Vec::with_capacity(kept.len());
        let mut mass = Vec::with_capacity(kept.len());
        let mut step_mass = Vec::with_capacity(kept.len());
        for (col, &j) in kept.iter().enumerate() {
            let s_sq = sv[j] * sv[j];
            let g = coeffs.column(col).norm_squared();
            let contraction = 1.0 - 2.0 * eta * s_sq / n as f64;
            rho.push(contraction);
            mass.push(g * s_sq / n as f64);
            step_mass.push(g * (1.0 - contraction) * (1.0 - contraction));
        }
        ModeSystem {
            rho,
            mass,
            step_mass,
            coeffs,
            basis_t,
            lfstar,
        }
    }

    fn objective(&self, t: u64) -> f64 {
        let tail: f64 = (0..self.rho.len())
            .map(|j| {
                let g = geom(self.rho[j], t);
                self.mass[j] * g * g
            })
            .sum();
        self.lfstar + tail
    }

    /// |w_{t+1} - w_t|^2 for the step leaving iterate t.
    fn step_sq(&self, t: u64) -> f64 {
        (0..self.rho.len())
            .map(|j| {
                let g = geom(self.rho[j], t);
                self.step_mass[j] * g * g
            })
            .sum()
    }

    /// Reconstructs the iterate; bitwise w_0 at t = 0.
    fn wbar(&self, w0: &DMatrix<f64>, t: u64) -> DMatrix<f64> {
        if t == 0 {
            return w0.clone();
        }
        let mut scaled = self.coeffs.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= geom(self.rho[j], t) - 1.0;
        }
        w0 + scaled * &self.basis_t
    }

    /// Verifies, mode by mode, the t = 0 instance of the descent margin.
    /// Both sides of the step-t instance carry the same factor rho_j^{2t},
    /// so this settles every step at once. A contraction of exactly 1 is the
    /// frozen-mode case: zero step, zero decrease, inequality tight.
    fn certify_margin(&self, c_z: f64, zeta: f64) -> Result<()> {
        for j in 0..self.rho.len() {
            let rho = self.rho[j];
            let decrease = self.mass[j] * (1.0 - rho * rho);
            let required = 0.5 * c_z * zeta * self.step_mass[j];
            let ok = (0.0..=1.0).contains(&rho)
                && decrease + MONOTONE_SLACK * (1.0 + decrease) >= required;
            if !ok {
                return Err(Error::invalid(format!(
                    "descent margin certificate failed on mode {j}: \
                     contraction {rho:.17e}, decrease {decrease:.17e}, \
                     required {required:.17e}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest t <= cap with J(w_t) <= target, if one exists. J is
    /// nonincreasing in t term by term, so bisection applies.
    fn first_crossing(&self, target: f64, cap: u64) -> Option<u64> {
        if self.objective(0) <= target {
            return Some(0);
        }
        if self.objective(cap) > target {
            return None;
        }
        let (mut lo, mut hi) = (0u64, cap);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.objective(mid) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// Runs masked gradient descent from `params`; see the module docs.
pub fn train(
    params: &Params,
    ds: &Dataset,
    loss: &LossSpec,
    opts: TrainOpts,
) -> Result<(Params, CertificateReport)> {
    train_observed(params, ds, loss, opts, |_, _, _| {})
}

/// [`train`] with a callback invoked at every recorded step as
/// `(step, objective, output layer)`.
pub fn train_observed(
    params: &Params,
    ds: &Dataset,
    loss: &LossSpec,
    opts: TrainOpts,
    mut observer: impl FnMut(u64, f64, &DMatrix<f64>),
) -> Result<(Params, CertificateReport)> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    let start = Instant::now();
    let y = ds.targets();
    let n = ds.n();

    let trace = net::forward_batch(params, ds.inputs())?;
    let z = trace.z_matrix();
    let k_dim = z.nrows();
    let c_z = cz_from_z(&z);
    let zeta = loss.zeta;
    let eta = 1.0 / (c_z * zeta);

    // One SVD of M = Z^T serves the rank precondition, the min-norm
    // interpolant, and the init-to-solution-set distance c_r.
    let m = z.transpose();
    let svd = crate::verify::FeatureSvd::new(&m);
    svd.require_full_rank()?;
    let w0 = params.output_wbar();
    let wstar = svd.min_norm_interpolant(y);
    let r0 = &w0 * &z - y;
    let c_r = svd.set_distance_sq(&r0);
    let lfstar = loss.loss_at_targets(y);
    let target = lfstar + opts.epsilon;

    let budget = (c_z * c_r * zeta / (2.0 * opts.epsilon)).ceil().max(1.0) as u64;
    let cap = budget.min(opts.max_steps);
    let stride = opts.record_stride.unwrap_or((cap / 4096).max(1));

    // Four algebraically identical evaluation routes, chosen by loss and
    // shape:
    //  - Mode: squared loss; the iterate sequence in closed form (see
    //    [`ModeSystem`]), the default because near-singular feature matrices
    //    push first-crossing times into the tens of millions of steps.
    //  - Gram: squared loss stepped explicitly; one k x k product per step.
    //  - Kernel: many columns, stepped through the predictions Q = W Z
    //    against the sample Gram matrix Z^T Z; the weights are reconstructed
    //    from the accumulated prediction gradients at each recorded step.
    //  - Residual: the textbook form, always correct; kept for very tight
    //    targets, where the other forms lose relative accuracy.
    let use_modes = !opts.force_residual_path
        && !opts.force_stepwise
        && loss.kind == LossKind::Squared
        && opts.epsilon >= 1e-7;
    if use_modes {
        let modes = ModeSystem::new(&svd, &w0, &wstar, n, eta, lfstar);
        // Anchor the closed form to the net before trusting it: at t = 0 it
        // must reproduce the directly evaluated objective.
        let direct0 = loss.mean_objective(&(&w0 * &z), y);
        let closed0 = modes.objective(0);
        if (closed0 - direct0).abs() > 1e-6 * (1.0 + direct0.abs()) {
            return Err(Error::invalid(format!(
                "closed-form objective {closed0:.17e} disagrees with direct \
                 evaluation {direct0:.17e} at step 0"
            )));
        }
        modes.certify_margin(c_z, zeta)?;
        let t_star = match modes.first_crossing(target, cap) {
            Some(t) => t,
            None => {
                return Err(Error::BudgetExhausted {
                    budget: cap,
                    steps: cap,
                    achieved: modes.objective(cap),
                    target,
                })
            }
        };
        // The crossing is known before recording starts, so the default
        // stride can pace the actual run instead of the worst-case budget.
        let stride = opts.record_stride.unwrap_or((t_star / 4096).max(1));
        let mut record_steps = Vec::new();
        let mut t = 0u64;
        while t < t_star {
            record_steps.push(t);
            t = t.saturating_add(stride);
        }
        record_steps.push(t_star);
        let mut monotone = Vec::new();
        let mut records = Vec::with_capacity(record_steps.len());
        let mut wbar = w0.clone();
        for &t in &record_steps {
            let obj = modes.objective(t);
            if t > 0 {
                // Numeric re-verification of the step into this record.
                let before = modes.objective(t - 1);
                let allowed = before - 0.5 * c_z * zeta * modes.step_sq(t - 1)
                    + MONOTONE_SLACK * (1.0 + before);
                if obj > allowed {
                    return Err(Error::MonotonicityViolation {
                        step: t,
                        previous: before,
                        current: obj,
                    });
                }
                monotone.push(true);
            }
            wbar = modes.wbar(&w0, t);
            records.push(StepRecord {
                step: t,
                objective: obj,
                dist_to_interpolant: (&wbar - &wstar).norm(),
                w_norm: wbar.norm(),
                wall_secs: start.elapsed().as_secs_f64(),
            });
            observer(t, obj, &wbar);
        }
        let wt_norm = wbar.norm();
        let w0_norm = w0.norm();
        let wstar_norm = wstar.norm();
        let norm_ok = wt_norm <= (w0_norm + 2.0 * wstar_norm) * (1.0 + NORM_SLACK);
        let trained = params.with_output_wbar(&wbar)?;
        let report = CertificateReport {
            c_z,
            c_r,
            zeta,
            eta,
            budget,
            steps: t_star,
            lfstar,
            target,
            achieved: modes.objective(t_star),
            monotone,
            norm_ok,
            w0_norm,
            wstar_norm,
            wt_norm,
            trace: records,
        };
        return Ok((trained, report));
    }

    let loose_target = opts.epsilon >= 1e-7 || loss.kind == LossKind::Logistic;
    let use_gram = !opts.force_residual_path
        && loss.kind == LossKind::Squared
        && k_dim <= 2 * n
        && opts.epsilon >= 1e-7;
    let use_kernel = !opts.force_residual_path && !use_gram && k_dim > 2 * n && loose_target;
    let (gram_a, gram_b, const_y) = if use_gram {
        let a = (&z * z.transpose()).map(|v| 2.0 * v / n as f64);
        let b = (y * z.transpose()).map(|v| 2.0 * v / n as f64);
        (a, b, y.norm_squared() / n as f64)
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), 0.0)
    };
    let sample_gram = if use_kernel {
        z.transpose() * &z
    } else {
        DMatrix::zeros(0, 0)
    };

    let eval = |wbar: &DMatrix<f64>| -> (f64, DMatrix<f64>) {
        if use_gram {
            let p = wbar * &gram_a;
            let obj = 0.5 * p.dot(wbar) - gram_b.dot(wbar) + const_y;
            (obj, p - &gram_b)
        } else {
            let pred = wbar * &z;
            let obj = loss.mean_objective(&pred, y);
            let grad = loss.mean_grad_pred(&pred, y) * z.transpose();
            (obj, grad)
        }
    };

    let mut wbar = w0.clone();
    // Kernel-path state: current predictions and the running sum of
    // prediction gradients, from which wbar is reconstructed on demand.
    let mut preds = if use_kernel { &w0 * &z } else { DMatrix::zeros(0, 0) };
    let mut grad_acc = DMatrix::zeros(if use_kernel { y.nrows() } else { 0 }, if use_kernel { n } else { 0 });
    let mut monotone = Vec::new();
    let mut records = Vec::new();
    let mut violation_since_record = false;
    let mut prev_obj = f64::INFINITY;
    let mut last_step_sq = 0.0_f64;
    let mut step = 0u64;

    let final_obj;
    loop {
        let (obj, grad) = if use_kernel {
            (loss.mean_objective(&preds, y), DMatrix::zeros(0, 0))
        } else {
            eval(&wbar)
        };
        if step > 0 {
            // Descent with margin: J_{k+1} <= J_k - (c_z zeta / 2) |dw|^2.
            let allowed =
                prev_obj - 0.5 * c_z * zeta * last_step_sq + MONOTONE_SLACK * (1.0 + prev_obj);
            if obj > allowed {
                return Err(Error::MonotonicityViolation {
                    step,
                    previous: prev_obj,
                    current: obj,
                });
            }
        }
        let done = obj <= target;
        if step % stride == 0 || done || step == cap {
            if use_kernel {
                // wbar_t = wbar_0 - eta * (sum of gradients) Z^T; re-deriving
                // the predictions from it keeps drift from accumulating.
                let acc_z: DMatrix<f64> = &grad_acc * z.transpose();
                wbar = &w0 - acc_z.map(|v| eta * v);
                preds = &wbar * &z;
            }
            records.push(StepRecord {
                step,
                objective: obj,
                dist_to_interpolant: (&wbar - &wstar).norm(),
                w_norm: wbar.norm(),
                wall_secs: start.elapsed().as_secs_f64(),
            });
            if step > 0 {
                monotone.push(!violation_since_record);
                violation_since_record = false;
            }
            observer(step, obj, &wbar);
        }
        if done {
            final_obj = obj;
            break;
        }
        if step == cap {
            return Err(Error::BudgetExhausted {
                budget: cap,
                steps: step,
                achieved: obj,
                target,
            });
        }
        if use_kernel {
            let g = loss.mean_grad_pred(&preds, y);
            let gk = &g * &sample_gram;
            // |dw|^2 = eta^2 <G K, G> without forming the weight delta.
            last_step_sq = eta * eta * gk.dot(&g);
            preds -= gk.map(|v| eta * v);
            grad_acc += g;
        } else {
            let delta = grad.map(|g| eta * g);
            last_step_sq = delta.norm_squared();
            wbar -= delta;
        }
        prev_obj = obj;
        step += 1;
    }

    let wt_norm = wbar.norm();
    let w0_norm = w0.norm();
    let wstar_norm = wstar.norm();
    let norm_ok = wt_norm <= (w0_norm + 2.0 * wstar_norm) * (1.0 + NORM_SLACK);
    let trained = params.with_output_wbar(&wbar)?;
    let report = CertificateReport {
        c_z,
        c_r,
        zeta,
        eta,
        budget,
        steps: step,
        lfstar,
        target,
        achieved: final_obj,
        monotone,
        norm_ok,
        w0_norm,
        wstar_norm,
        wt_norm,
        trace: records,
    };
    Ok((trained, report))
}
