//! Empirical checks for the probabilistic claims behind the construction:
//! concentration of layer norms, the layer-moment recursion, feature-matrix
//! rank (including an explicit diagonally dominant witness), and the
//! smoothness constant of the output-layer objective.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{self, softplus, Params};
use crate::quad::{GaussHermite, DEFAULT_NODES};
use crate::rng;
use crate::trainer::LossSpec;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

// ---------------------------------------------------------------------------
// Feature matrix and rank
// ---------------------------------------------------------------------------

/// Last-hidden-layer activations of the n samples, one row per sample, with a
/// trailing all-ones column: the matrix whose full row rank makes exact
/// interpolation by the output layer possible.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    m: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Builds M from a forward pass: row i is [x_i^(H); 1].
    pub fn from_net(params: &Params, inputs: &DMatrix<f64>) -> Result<Self> {
        let trace = net::forward_batch(params, inputs)?;
        Ok(FeatureMatrix {
            m: trace.z_matrix().transpose(),
        })
    }

    /// Wraps an existing matrix, insisting on the ones column.
    pub fn from_raw(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() < 2 {
            return Err(Error::invalid("feature matrix needs at least 2 columns"));
        }
        let last = m.ncols() - 1;
        if (0..m.nrows()).any(|i| m[(i, last)] != 1.0) {
            return Err(Error::invalid(
                "feature matrix must end in an all-ones column",
            ));
        }
        Ok(FeatureMatrix { m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Sample count n.
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// Column count m_H + 1.
    pub fn cols(&self) -> usize {
        self.m.ncols()
    }
}

/// Numerical rank decision for a feature matrix.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub rank: usize,
    pub n: usize,
    pub cols: usize,
    pub threshold: f64,
    pub smallest_kept: f64,
    pub largest_dropped: f64,
    /// rank == n.
    pub decision: bool,
}

/// Shared SVD plumbing: rank with the scaled-epsilon threshold, the min-norm
/// interpolant, and distances to the interpolating affine set.
pub(crate) struct FeatureSvd {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    sv: DVector<f64>,
    threshold: f64,
    rank: usize,
    nrows: usize,
    ncols: usize,
}

impl FeatureSvd {
    pub(crate) fn new(m: &DMatrix<f64>) -> Self {
        let (nrows, ncols) = m.shape();
        let svd = m.clone().svd(true, true);
        let sv = svd.singular_values;
        let s_max = sv.iter().cloned().fold(0.0, f64::max);
        let threshold = nrows.max(ncols) as f64 * f64::EPSILON * s_max;
        let rank = sv.iter().filter(|&&s| s > threshold).count();
        FeatureSvd {
            u: svd.u.expect("u requested"),
            v_t: svd.v_t.expect("v_t requested"),
            sv,
            threshold,
            rank,
            nrows,
            ncols,
        }
    }

    pub(crate) fn rank_report(&self) -> RankReport {
        let mut smallest_kept = f64::INFINITY;
        let mut largest_dropped = 0.0_f64;
        for &s in self.sv.iter() {
            if s > self.threshold {
                smallest_kept = smallest_kept.min(s);
            } else {
                largest_dropped = largest_dropped.max(s);
            }
        }
        if self.rank == 0 {
            smallest_kept = 0.0;
        }
        RankReport {
            rank: self.rank,
            n: self.nrows,
            cols: self.ncols,
            threshold: self.threshold,
            smallest_kept,
            largest_dropped,
            decision: self.rank == self.nrows,
        }
    }

    pub(crate) fn require_full_rank(&self) -> Result<()> {
        if self.rank == self.nrows {
            return Ok(());
        }
        let report = self.rank_report();
        Err(Error::RankDeficient {
            rank: self.rank,
            n: self.nrows,
            smallest: report.largest_dropped,
            threshold: self.threshold,
        })
    }

    pub(crate) fn smallest_kept(&self) -> f64 {
        self.rank_report().smallest_kept
    }

    /// Min-Frobenius-norm W with W M^T = Y, via Y U S^{-1} V^T over kept
    /// singular values.
    pub(crate) fn min_norm_interpolant(&self, targets: &DMatrix<f64>) -> DMatrix<f64> {
        let mut yu = targets * &self.u;
        for j in 0..self.sv.len() {
            let s = self.sv[j];
            let inv = if s > self.threshold { 1.0 / s } else { 0.0 };
            yu.column_mut(j).scale_mut(inv);
        }
        yu * &self.v_t
    }

    pub(crate) fn singular_values(&self) -> &DVector<f64> {
        &self.sv
    }

    /// Right singular vectors of M as rows; equivalently the left singular
    /// vectors of Z = M^T as columns.
    pub(crate) fn right_vectors_t(&self) -> &DMatrix<f64> {
        &self.v_t
    }

    pub(crate) fn keep_threshold(&self) -> f64 {
        self.threshold
    }

    /// Squared Frobenius distance from a point with residual `r0 = W0 M^T - Y`
    /// to the affine set of interpolants: sum over kept singular values of
    /// |r0 u_j|^2 / s_j^2.
    pub(crate) fn set_distance_sq(&self, r0: &DMatrix<f64>) -> f64 {
        let proj = r0 * &self.u;
        let mut acc = 0.0;
        for j in 0..self.sv.len() {
            let s = self.sv[j];
            if s > self.threshold {
                acc += proj.column(j).norm_squared() / (s * s);
            }
        }
        acc
    }
}

/// Numerical rank of M with threshold max(n, m_H+1) * eps * s_max; the
/// decision is rank == n. Degenerate input gives decision false, never an
/// error.
pub fn rank_check(m: &FeatureMatrix) -> RankReport {
    FeatureSvd::new(m.matrix()).rank_report()
}

// ---------------------------------------------------------------------------
// Witness construction
// ---------------------------------------------------------------------------

/// Separation margin of feature columns: the minimum over ordered pairs
/// i != j of |x_i|^2 - <x_i, x_j>. Positive margin is what the witness
/// construction needs.
pub fn separation_margin(features: &DMatrix<f64>) -> Result<f64> {
    let n = features.ncols();
    if n < 2 {
        return Err(Error::invalid("separation needs at least 2 columns"));
    }
    let mut min = f64::INFINITY;
    for i in 0..n {
        let ni = features.column(i).norm_squared();
        for j in 0..n {
            if i != j {
                min = min.min(ni - features.column(i).dot(&features.column(j)));
            }
        }
    }
    Ok(min)
}

/// Half the empirical separation margin: a valid c_gamma whenever positive.
pub fn suggested_c_gamma(features: &DMatrix<f64>) -> Result<f64> {
    let margin = separation_margin(features)?;
    if margin <= 0.0 {
        return Err(Error::invalid(format!(
            "features are not separated: margin {margin} <= 0"
        )));
    }
    Ok(margin / 2.0)
}

/// Builds the explicit full-rank witness: unit j <= n gets weights
/// beta * x_j and bias c_gamma beta / 2 - beta |x_j|^2, the remaining
/// m - n units are zero. Returns the resulting n x (m+1) feature matrix.
pub fn witness_construction(
    features: &DMatrix<f64>,
    m: usize,
    c_gamma: f64,
    beta: f64,
    alpha: f64,
) -> Result<FeatureMatrix> {
    let n = features.ncols();
    if m < n {
        return Err(Error::invalid(format!(
            "witness needs at least n = {n} units, got {m}"
        )));
    }
    if !(c_gamma > 0.0) || !(beta >= 0.0) || !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "witness needs c_gamma > 0, beta >= 0, alpha > 0; got {c_gamma}, {beta}, {alpha}"
        )));
    }
    if beta > 0.0 {
        let margin = separation_margin(features)?;
        if margin <= c_gamma {
            return Err(Error::invalid(format!(
                "separation margin {margin} must exceed c_gamma {c_gamma}"
            )));
        }
    }
    let scale = (m as f64).sqrt();
    let mut out = DMatrix::zeros(n, m + 1);
    for i in 0..n {
        for j in 0..m {
            let pre = if j < n {
                let dot = features.column(j).dot(&features.column(i));
                let sq = features.column(j).norm_squared();
                beta * dot + c_gamma * beta / 2.0 - beta * sq
            } else {
                0.0
            };
            out[(i, j)] = softplus(pre, alpha) / scale;
        }
        out[(i, m)] = 1.0;
    }
    FeatureMatrix::from_raw(out)
}

/// Diagonal-dominance margin of the leading n x n block after subtracting its
/// smallest off-diagonal entry from every entry (the ones column absorbs the
/// constant shift): min over rows of diag minus the absolute off-diagonal row
/// sum. Positive margin certifies rank n of the block plus ones column.
pub fn diag_dominance_margin(m: &FeatureMatrix) -> Result<f64> {
    let n = m.n();
    if m.cols() < n + 1 {
        return Err(Error::invalid(format!(
            "need at least {n} unit columns for the dominance block, got {}",
            m.cols() - 1
        )));
    }
    let block = m.matrix().view((0, 0), (n, n));
    let mut shift = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                shift = shift.min(block[(i, j)]);
            }
        }
    }
    if n == 1 {
        shift = 0.0;
    }
    let mut margin = f64::INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i != j {
                off += (block[(i, j)] - shift).abs();
            }
        }
        margin = margin.min(block[(i, i)] - shift - off);
    }
    Ok(margin)
}

// ---------------------------------------------------------------------------
// Moment recursion
// ---------------------------------------------------------------------------

/// One level of the activation-moment recursion.
#[derive(Debug, Clone, Copy)]
pub struct MomentLevel {
    /// E[sigma(g)^2]: expected squared activation.
    pub p: f64,
    /// E[(sigma(g) - sigma(g'))^2] for the tracked input pair.
    pub p_ij: f64,
    /// Var(g) feeding this level.
    pub var: f64,
    /// Cov(g, g') feeding this level.
    pub cov: f64,
    /// Node-doubling error estimates for p and p_ij.
    pub err_p: f64,
    pub err_pij: f64,
}

/// The recursion table, level 0 (inputs) through the requested depth.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub levels: Vec<MomentLevel>,
    pub nodes: usize,
}

impl MomentTable {
    pub fn p(&self, level: usize) -> f64 {
        self.levels[level].p
    }

    pub fn p_ij(&self, level: usize) -> f64 {
        self.levels[level].p_ij
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn max_quadrature_error(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.err_p.max(l.err_pij))
            .fold(0.0, f64::max)
    }
}

/// Runs the layer-moment recursion for unit-norm inputs at squared distance
/// `gamma`, `depth` levels deep, by two-dimensional Gauss-Hermite quadrature
/// with at least [`DEFAULT_NODES`] nodes per axis.
pub fn gaussian_moment_recursion(
    alpha: f64,
    c_w: f64,
    c_b: f64,
    gamma: f64,
    depth: usize,
    nodes: usize,
) -> Result<MomentTable> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
    }
    if depth == 0 {
        return Err(Error::invalid("recursion depth must be at least 1"));
    }
    let nodes = nodes.max(DEFAULT_NODES);
    let gh = GaussHermite::new(nodes)?;
    let gh2 = GaussHermite::new(2 * nodes)?;
    let mut levels = vec![MomentLevel {
        p: 1.0,
        p_ij: gamma,
        var: 0.0,
        cov: 0.0,
        err_p: 0.0,
        err_pij: 0.0,
    }];
    for _ in 1..=depth {
        let prev = levels.last().unwrap();
        let var = c_w * prev.p + c_b;
        let cov = c_w * (prev.p - prev.p_ij / 2.0) + c_b;
        let sq = |g: f64| {
            let s = softplus(g, alpha);
            s * s
        };
        let diff_sq = |g: f64, g2: f64| {
            let d = softplus(g, alpha) - softplus(g2, alpha);
            d * d
        };
        let p = gh.expect1(0.0, var, sq)?;
        let p_fine = gh2.expect1(0.0, var, sq)?;
        let p_ij = gh.expect2(var, var, cov, diff_sq)?;
        let p_ij_fine = gh2.expect2(var, var, cov, diff_sq)?;
        levels.push(MomentLevel {
            p,
            p_ij,
            var,
            cov,
            err_p: (p - p_fine).abs(),
            err_pij: (p_ij - p_ij_fine).abs(),
        });
    }
    Ok(MomentTable { levels, nodes })
}

/// Monte-Carlo estimate of one recursion level: mean and standard error of
/// sigma(g)^2 and (sigma(g) - sigma(g'))^2 under the given covariance.
#[derive(Debug, Clone, Copy)]
pub struct McMoments {
    pub p: f64,
    pub p_se: f64,
    pub p_ij: f64,
    pub p_ij_se: f64,
    pub samples: u64,
}

pub fn mc_moment_level(
    var: f64,
    cov: f64,
    alpha: f64,
    samples: u64,
    seed: u64,
) -> Result<McMoments> {
    if var < 0.0 {
        return Err(Error::invalid(format!("negative variance {var}")));
    }
    let rho_den = var;
    let rho = if rho_den == 0.0 { 0.0 } else { cov / rho_den };
    if !(-1.0..=1.0).contains(&rho) || !rho.is_finite() {
        return Err(Error::BadCovariance { rho });
    }
    if samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let s = var.sqrt();
    let tail = (var - cov * cov / var.max(f64::MIN_POSITIVE)).max(0.0).sqrt();
    let mut r = rng::stream(seed, "verify.mc");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut sum_p, mut sumsq_p) = (0.0_f64, 0.0_f64);
    let (mut sum_d, mut sumsq_d) = (0.0_f64, 0.0_f64);
    for _ in 0..samples {
        let xi1: f64 = normal.sample(&mut r);
        let xi2: f64 = normal.sample(&mut r);
        let g = s * xi1;
        let g2 = rho * s * xi1 + tail * xi2;
        let a = softplus(g, alpha);
        let b = softplus(g2, alpha);
        let v_p = a * a;
        let v_d = (a - b) * (a - b);
        sum_p += v_p;
        sumsq_p += v_p * v_p;
        sum_d += v_d;
        sumsq_d += v_d * v_d;
    }
    let nf = samples as f64;
    let mean_p = sum_p / nf;
    let mean_d = sum_d / nf;
    let var_p = (sumsq_p / nf - mean_p * mean_p).max(0.0) * nf / (nf - 1.0);
    let var_d = (sumsq_d / nf - mean_d * mean_d).max(0.0) * nf / (nf - 1.0);
    Ok(McMoments {
        p: mean_p,
        p_se: (var_p / nf).sqrt(),
        p_ij: mean_d,
        p_ij_se: (var_d / nf).sqrt(),
        samples,
    })
}

// ---------------------------------------------------------------------------
// Concentration
// ---------------------------------------------------------------------------

/// sqrt(m)-scaled deviations of |sigma(W x + b)|^2 / m from its Gaussian
/// expectation, one value per trial. The probe x must be unit norm; by
/// rotation invariance of the Gaussian weights its direction is immaterial.
pub fn concentration_deviations(
    probe: &DVector<f64>,
    width: usize,
    alpha: f64,
    c_w: f64,
    c_b: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if (probe.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probe input must be unit norm"));
    }
    if width == 0 || trials == 0 {
        return Err(Error::invalid("width and trials must be positive"));
    }
    let var = c_w + c_b;
    let gh = GaussHermite::new(DEFAULT_NODES)?;
    let expected = gh.expect1(0.0, var, |g| {
        let s = softplus(g, alpha);
        s * s
    })?;
    let m_x = probe.len();
    let w_dist = Normal::new(0.0, c_w.sqrt()).map_err(|_| Error::invalid("c_w must be >= 0"))?;
    let b_dist = Normal::new(0.0, c_b.sqrt()).map_err(|_| Error::invalid("c_b must be >= 0"))?;
    let tag = format!("verify.conc.{width}");
    let scale = (width as f64).sqrt();
    let mut devs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = rng::stream_indexed(seed, &tag, t as u64);
        let w = DMatrix::from_fn(width, m_x, |_, _| w_dist.sample(&mut r));
        let b = DVector::from_fn(width, |_, _| b_dist.sample(&mut r));
        let a = &w * probe + &b;
        let norm_sq: f64 = a.iter().map(|&x| softplus(x, alpha).powi(2)).sum();
        devs.push(scale * (norm_sq / width as f64 - expected).abs());
    }
    Ok(devs)
}

/// Difference variant: deviations of |sigma(W x + b) - sigma(W x' + b)|^2 / m
/// from the pair expectation at the probes' separation.
pub fn concentration_pair_deviations(
    probe: &DVector<f64>,
    probe2: &DVector<f64>,
    width: usize,
    alpha: f64,
    c_w: f64,
    c_b: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if (probe.norm() - 1.0).abs() > 1e-9 || (probe2.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probe inputs must be unit norm"));
    }
    if probe.len() != probe2.len() {
        return Err(Error::DimensionMismatch {
            context: "probe pair",
            expected: format!("{}", probe.len()),
            got: format!("{}", probe2.len()),
        });
    }
    let gamma = (probe - probe2).norm_squared();
    let var = c_w + c_b;
    let cov = c_w * (1.0 - gamma / 2.0) + c_b;
    let gh = GaussHermite::new(DEFAULT_NODES)?;
    let expected = gh.expect2(var, var, cov, |g, g2| {
        let d = softplus(g, alpha) - softplus(g2, alpha);
        d * d
    })?;
    let m_x = probe.len();
    let w_dist = Normal::new(0.0, c_w.sqrt()).map_err(|_| Error::invalid("c_w must be >= 0"))?;
    let b_dist = Normal::new(0.0, c_b.sqrt()).map_err(|_| Error::invalid("c_b must be >= 0"))?;
    let tag = format!("verify.conc.pair.{width}");
    let scale = (width as f64).sqrt();
    let mut devs = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = rng::stream_indexed(seed, &tag, t as u64);
        let w = DMatrix::from_fn(width, m_x, |_, _| w_dist.sample(&mut r));
        let b = DVector::from_fn(width, |_, _| b_dist.sample(&mut r));
        let a1 = &w * probe + &b;
        let a2 = &w * probe2 + &b;
        let norm_sq: f64 = a1
            .iter()
            .zip(a2.iter())
            .map(|(&x, &y)| (softplus(x, alpha) - softplus(y, alpha)).powi(2))
            .sum();
        devs.push(scale * (norm_sq / width as f64 - expected).abs());
    }
    Ok(devs)
}

/// Interquartile range of a sample.
pub fn iqr(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[derive(Debug, Clone)]
pub struct ConcentrationReport {
    pub widths: Vec<usize>,
    pub iqrs: Vec<f64>,
    /// max IQR / min IQR across widths; near 1 means the sqrt(m) scaling is
    /// right.
    pub spread_ratio: f64,
    /// The Gaussian expectation the deviations are measured against.
    pub expected_p: f64,
}

/// Runs [`concentration_deviations`] across widths and compares the spread of
/// the scaled deviations.
pub fn concentration_suite(
    m_x: usize,
    widths: &[usize],
    alpha: f64,
    c_w: f64,
    c_b: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    if widths.is_empty() {
        return Err(Error::invalid("need at least one width"));
    }
    let mut probe = DVector::zeros(m_x);
    probe[0] = 1.0;
    let gh = GaussHermite::new(DEFAULT_NODES)?;
    let expected_p = gh.expect1(0.0, c_w + c_b, |g| {
        let s = softplus(g, alpha);
        s * s
    })?;
    let mut iqrs = Vec::with_capacity(widths.len());
    for &w in widths {
        let devs = concentration_deviations(&probe, w, alpha, c_w, c_b, trials, seed)?;
        iqrs.push(iqr(&devs));
    }
    let max = iqrs.iter().cloned().fold(f64::MIN, f64::max);
    let min = iqrs.iter().cloned().fold(f64::MAX, f64::min);
    Ok(ConcentrationReport {
        widths: widths.to_vec(),
        iqrs,
        spread_ratio: max / min,
        expected_p,
    })
}

/// Qualitative sub-Gaussian tail check: with the threshold beta at the 75th
/// percentile of |deviations|, the frequency beyond 2 beta should not exceed
/// the squared frequency beyond beta, up to binomial noise.
#[derive(Debug, Clone, Copy)]
pub struct TailReport {
    pub beta: f64,
    pub freq_beta: f64,
    pub freq_two_beta: f64,
    pub slack: f64,
    pub ok: bool,
}

pub fn tail_check(devs: &[f64]) -> TailReport {
    let mut sorted = devs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let beta = quantile_sorted(&sorted, 0.75);
    let nf = devs.len() as f64;
    let freq_beta = devs.iter().filter(|&&d| d > beta).count() as f64 / nf;
    let freq_two_beta = devs.iter().filter(|&&d| d > 2.0 * beta).count() as f64 / nf;
    // Three-sigma binomial allowance on the rare-event frequency.
    let slack = 3.0 * (freq_beta * freq_beta * (1.0 - freq_beta * freq_beta) / nf)
        .max(1.0 / (nf * nf))
        .sqrt();
    TailReport {
        beta,
        freq_beta,
        freq_two_beta,
        slack,
        ok: freq_two_beta <= freq_beta * freq_beta + slack,
    }
}

// ---------------------------------------------------------------------------
// Gradient-Lipschitz probe
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct LipschitzReport {
    /// (zeta / n) sum |z_i|^2.
    pub bound: f64,
    pub max_ratio: f64,
    pub pairs: usize,
    pub ok: bool,
}

/// Probes |grad J(w) - grad J(w')| / |w - w'| over random output-layer pairs
/// against the smoothness bound, on an explicit feature matrix Z.
pub fn lipschitz_probe_z(
    z: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    loss: &LossSpec,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    if z.ncols() != targets.ncols() {
        return Err(Error::DimensionMismatch {
            context: "lipschitz probe targets",
            expected: format!("{} columns", z.ncols()),
            got: format!("{}", targets.ncols()),
        });
    }
    let n = z.ncols() as f64;
    let bound = loss.zeta * z.norm_squared() / n;
    let m_y = targets.nrows();
    let k = z.nrows();
    let mut r = rng::stream(seed, "verify.lipschitz");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let grad = |wbar: &DMatrix<f64>| -> DMatrix<f64> {
        loss.mean_grad_pred(&(wbar * z), targets) * z.transpose()
    };
    let mut max_ratio = 0.0_f64;
    let mut used = 0;
    for _ in 0..pairs {
        let w1 = DMatrix::from_fn(m_y, k, |_, _| normal.sample(&mut r));
        let w2 = DMatrix::from_fn(m_y, k, |_, _| normal.sample(&mut r));
        let denom = (&w1 - &w2).norm();
        if denom == 0.0 {
            continue;
        }
        let ratio = (grad(&w1) - grad(&w2)).norm() / denom;
        max_ratio = max_ratio.max(ratio);
        used += 1;
    }
    Ok(LipschitzReport {
        bound,
        max_ratio,
        pairs: used,
        ok: max_ratio <= bound * (1.0 + 1e-6),
    })
}

/// [`lipschitz_probe_z`] with Z taken from a forward pass of the network.
pub fn lipschitz_probe(
    params: &Params,
    ds: &Dataset,
    loss: &LossSpec,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let trace = net::forward_batch(params, ds.inputs())?;
    lipschitz_probe_z(&trace.z_matrix(), ds.targets(), loss, pairs, seed)
}

// ---------------------------------------------------------------------------
// Level norms for recursion-vs-network comparison
// ---------------------------------------------------------------------------

/// |x^(l)|^2 for l = 0..=H on a single input.
pub fn level_sq_norms(params: &Params, x: &DVector<f64>) -> Result<Vec<f64>> {
    let trace = net::forward(params, x)?;
    Ok(trace.xs.iter().map(|m| m.norm_squared()).collect())
}

/// Pairwise level quantities for two inputs: per level l, the triple
/// (|x_i^(l)|^2, |x_j^(l)|^2, |x_i^(l) - x_j^(l)|^2).
pub fn level_pair_stats(
    params: &Params,
    x_i: &DVector<f64>,
    x_j: &DVector<f64>,
) -> Result<Vec<(f64, f64, f64)>> {
    let mut inputs = DMatrix::zeros(x_i.len(), 2);
    inputs.set_column(0, x_i);
    inputs.set_column(1, x_j);
    let trace = net::forward_batch(params, &inputs)?;
    Ok(trace
        .xs
        .iter()
        .map(|m| {
            let a = m.column(0);
            let b = m.column(1);
            (a.norm_squared(), b.norm_squared(), (a - b).norm_squared())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architect::ArchSpec;
    use crate::net::init_params;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;

    fn unit_cols(m_x: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, "test.unitcols");
        let mut m = DMatrix::from_fn(m_x, n, |_, _| r.gen::<f64>() - 0.5);
        for mut c in m.column_iter_mut() {
            let nrm = c.norm();
            c /= nrm;
        }
        m
    }

    #[test]
    fn feature_matrix_requires_ones_column() {
        let mut m = DMatrix::from_element(3, 4, 0.5);
        assert!(FeatureMatrix::from_raw(m.clone()).is_err());
        for i in 0..3 {
            m[(i, 3)] = 1.0;
        }
        let fm = FeatureMatrix::from_raw(m).unwrap();
        assert_eq!(fm.n(), 3);
        assert_eq!(fm.cols(), 4);
    }

    #[test]
    fn feature_matrix_from_net_matches_definition() {
        let spec = ArchSpec::from_widths(vec![5, 12, 4, 2]).unwrap();
        let params = init_params(&spec, 6);
        let inputs = unit_cols(5, 3, 7);
        let fm = FeatureMatrix::from_net(&params, &inputs).unwrap();
        assert_eq!(fm.n(), 3);
        assert_eq!(fm.cols(), 5);
        let trace = net::forward_batch(&params, &inputs).unwrap();
        for i in 0..3 {
            assert_eq!(fm.matrix()[(i, 4)], 1.0);
            for j in 0..4 {
                assert_eq!(fm.matrix()[(i, j)], trace.features()[(j, i)]);
            }
        }
    }

    #[test]
    fn rank_check_full_rank_on_random_init() {
        let spec = ArchSpec::from_widths(vec![6, 24, 10, 2]).unwrap();
        let mut hits = 0;
        for seed in 0..20 {
            let params = init_params(&spec, seed);
            let inputs = unit_cols(6, 8, 100 + seed);
            let fm = FeatureMatrix::from_net(&params, &inputs).unwrap();
            if rank_check(&fm).decision {
                hits += 1;
            }
        }
        assert!(hits >= 19, "only {hits}/20 full-rank");
    }

    #[test]
    fn rank_check_fails_on_duplicate_rows() {
        let spec = ArchSpec::from_widths(vec![6, 24, 10, 2]).unwrap();
        let params = init_params(&spec, 5);
        let mut inputs = unit_cols(6, 8, 55);
        let dup = DVector::from(inputs.column(0).into_owned());
        inputs.set_column(7, &dup);
        let fm = FeatureMatrix::from_net(&params, &inputs).unwrap();
        let rep = rank_check(&fm);
        assert!(!rep.decision);
        assert_eq!(rep.rank, 7);
    }

    #[test]
    fn rank_check_single_row() {
        let m = DMatrix::from_row_slice(1, 3, &[0.2, -0.1, 1.0]);
        let rep = rank_check(&FeatureMatrix::from_raw(m).unwrap());
        assert!(rep.decision);
        assert_eq!(rep.rank, 1);
    }

    #[test]
    fn separation_margin_orthonormal() {
        let m = DMatrix::identity(4, 4);
        assert_relative_eq!(separation_margin(&m).unwrap(), 1.0);
        assert_relative_eq!(suggested_c_gamma(&m).unwrap(), 0.5);
    }

    #[test]
    fn separation_fails_on_duplicates() {
        let mut m = DMatrix::identity(4, 3);
        m.set_column(2, &DVector::from(m.column(0).into_owned()));
        assert!(suggested_c_gamma(&m).is_err());
    }

    #[test]
    fn witness_orthonormal_features_full_rank() {
        let feats = DMatrix::identity(4, 4);
        let fm = witness_construction(&feats, 8, 0.5, 100.0, 10.0).unwrap();
        let rep = rank_check(&fm);
        assert!(rep.decision, "rank {} of {}", rep.rank, rep.n);
        assert!(diag_dominance_margin(&fm).unwrap() > 0.0);
    }

    #[test]
    fn witness_beta_zero_collapses() {
        let feats = DMatrix::identity(4, 4);
        let fm = witness_construction(&feats, 8, 0.5, 0.0, 10.0).unwrap();
        let rep = rank_check(&fm);
        assert!(rep.rank <= 2, "rank {}", rep.rank);
        assert!(!rep.decision);
    }

    #[test]
    fn witness_margin_monotone_in_beta() {
        let feats = unit_cols(6, 5, 3);
        let c_gamma = suggested_c_gamma(&feats).unwrap();
        let margins: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&beta| {
                let fm = witness_construction(&feats, 8, c_gamma, beta, 10.0).unwrap();
                diag_dominance_margin(&fm).unwrap()
            })
            .collect();
        for w in margins.windows(2) {
            assert!(w[1] > w[0], "margins {margins:?} not increasing");
        }
        assert!(*margins.last().unwrap() > 0.0);
    }

    #[test]
    fn witness_rejects_weak_separation() {
        let feats = unit_cols(6, 5, 3);
        let margin = separation_margin(&feats).unwrap();
        assert!(witness_construction(&feats, 8, margin * 1.5, 100.0, 10.0).is_err());
        assert!(witness_construction(&feats, 3, margin / 2.0, 100.0, 10.0).is_err());
    }

    #[test]
    fn moment_recursion_identical_points_stay_identical() {
        let t = gaussian_moment_recursion(10.0, 2.0, 0.01, 0.0, 4, DEFAULT_NODES).unwrap();
        for l in 0..=4 {
            assert_abs_diff_eq!(t.p_ij(l), 0.0, epsilon = 1e-12);
            assert!(t.p(l) > 0.0);
        }
    }

    #[test]
    fn moment_recursion_relu_limit() {
        // Sharp softplus, c_b = 0: E[sigma(g)^2] -> E[g^2]/2 = 1 for p0 = 1.
        let t = gaussian_moment_recursion(1000.0, 2.0, 0.0, 0.5, 1, DEFAULT_NODES).unwrap();
        assert_abs_diff_eq!(t.p(1), 1.0, epsilon = 3e-3);
    }

    #[test]
    fn moment_recursion_invariants_hold() {
        for &gamma in &[0.1, 0.5, 2.0, 4.0] {
            let t = gaussian_moment_recursion(10.0, 2.0, 0.01, gamma, 5, DEFAULT_NODES).unwrap();
            assert_eq!(t.depth(), 5);
            assert_eq!(t.p(0), 1.0);
            assert_eq!(t.p_ij(0), gamma);
            for l in 1..=5 {
                assert!(t.p(l) > 0.0);
                assert!(t.p_ij(l) >= 0.0);
                assert!(t.p_ij(l) <= 4.0 * t.p(l) + 1e-12);
            }
            assert!(t.max_quadrature_error() < 1e-3);
        }
    }

    #[test]
    fn moment_recursion_matches_monte_carlo() {
        let t = gaussian_moment_recursion(10.0, 2.0, 0.01, 0.8, 1, DEFAULT_NODES).unwrap();
        let lvl = t.levels[1];
        let mc = mc_moment_level(lvl.var, lvl.cov, 10.0, 200_000, 42).unwrap();
        assert!(
            (t.p(1) - mc.p).abs() <= 4.0 * mc.p_se,
            "p quad {} vs mc {} +- {}",
            t.p(1),
            mc.p,
            mc.p_se
        );
        assert!(
            (t.p_ij(1) - mc.p_ij).abs() <= 4.0 * mc.p_ij_se,
            "p_ij quad {} vs mc {} +- {}",
            t.p_ij(1),
            mc.p_ij,
            mc.p_ij_se
        );
    }

    #[test]
    fn concentration_pair_identical_probes_is_zero() {
        let mut probe = DVector::zeros(6);
        probe[2] = 1.0;
        let devs =
            concentration_pair_deviations(&probe, &probe.clone(), 64, 10.0, 2.0, 0.01, 20, 9)
                .unwrap();
        for d in devs {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn concentration_scaled_spread_is_width_stable() {
        let rep = concentration_suite(8, &[32, 128], 10.0, 2.0, 0.01, 300, 11).unwrap();
        assert!(rep.spread_ratio < 3.0, "ratio {}", rep.spread_ratio);
        assert!(rep.iqrs.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn tail_check_on_gaussian_data() {
        let mut r = rng::stream(4, "test.tail");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let devs: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut r) as f64).map(f64::abs).collect();
        let rep = tail_check(&devs);
        assert!(rep.ok, "{rep:?}");
        assert!(rep.freq_beta > 0.2 && rep.freq_beta < 0.3);
    }

    #[test]
    fn lipschitz_closed_form_rank_one() {
        // n = 1, z = [1; 1]: the probe objective is quadratic with Hessian
        // 2 z z^T, so the ratio approaches exactly zeta |z|^2 = 4.
        let z = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let y = DMatrix::from_element(1, 1, 0.3);
        let rep = lipschitz_probe_z(&z, &y, &LossSpec::squared(), 400, 8).unwrap();
        assert_relative_eq!(rep.bound, 4.0);
        assert!(rep.ok);
        assert!(rep.max_ratio <= 4.0 * (1.0 + 1e-6));
        assert!(rep.max_ratio > 3.5, "max ratio {}", rep.max_ratio);
    }

    #[test]
    fn lipschitz_bound_scales_quadratically() {
        let z = unit_cols(4, 6, 2);
        let z2 = z.map(|v| 2.0 * v);
        let y = DMatrix::from_fn(2, 6, |_, _| 0.1);
        let a = lipschitz_probe_z(&z, &y, &LossSpec::squared(), 50, 3).unwrap();
        let b = lipschitz_probe_z(&z2, &y, &LossSpec::squared(), 50, 3).unwrap();
        assert_relative_eq!(b.bound, 4.0 * a.bound, max_relative = 1e-12);
        assert!(b.max_ratio <= 4.0 * a.max_ratio * (1.0 + 1e-9));
    }

    #[test]
    fn lipschitz_holds_on_network_features() {
        let spec = ArchSpec::from_widths(vec![6, 20, 8, 3]).unwrap();
        let params = init_params(&spec, 12);
        let inputs = unit_cols(6, 10, 44);
        let targets = DMatrix::from_fn(3, 10, |_, _| 0.5);
        let ds = Dataset::from_parts(inputs, targets, None, crate::data::Provenance::Manual)
            .unwrap();
        for loss in [LossSpec::squared(), LossSpec::logistic()] {
            let rep = lipschitz_probe(&params, &ds, &loss, 100, 5).unwrap();
            assert!(rep.ok, "{rep:?}");
        }
    }

    #[test]
    fn level_norms_track_recursion() {
        let spec = ArchSpec::from_widths(vec![8, 256, 256, 2]).unwrap();
        let table = gaussian_moment_recursion(10.0, 2.0, 0.01, 0.5, 2, DEFAULT_NODES).unwrap();
        let probe = unit_cols(8, 1, 77).column(0).into_owned();
        let mut within = 0;
        let total = 100;
        let tol = 10.0 / 256.0_f64.sqrt();
        for seed in 0..total {
            let params = init_params(&spec, seed);
            let norms = level_sq_norms(&params, &probe).unwrap();
            if (1..=2).all(|l| (norms[l] - table.p(l)).abs() <= tol) {
                within += 1;
            }
        }
        assert!(within >= 95, "{within}/{total} within tolerance");
    }

    #[test]
    fn pair_stats_match_recursion_shape() {
        let spec = ArchSpec::from_widths(vec![8, 256, 256, 2]).unwrap();
        let cols = unit_cols(8, 2, 31);
        let x_i = cols.column(0).into_owned();
        let x_j = cols.column(1).into_owned();
        let gamma = (&x_i - &x_j).norm_squared();
        let table = gaussian_moment_recursion(10.0, 2.0, 0.01, gamma, 2, DEFAULT_NODES).unwrap();
        let params = init_params(&spec, 17);
        let stats = level_pair_stats(&params, &x_i, &x_j).unwrap();
        assert_relative_eq!(stats[0].2, gamma, max_relative = 1e-12);
        for l in 1..=2 {
            assert!((stats[l].2 - table.p_ij(l)).abs() <= 10.0 / 16.0);
        }
    }
}
