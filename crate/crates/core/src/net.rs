//! Network evaluation and derivatives.
//!
//! The model is a width-normalized softplus net:
//!
//! ```text
//! x^(0) = x
//! x^(l) = softplus(W^(l) x^(l-1) + b^(l)) / sqrt(m_l)     l = 1..H
//! f(x)  = W^(H+1) x^(H) + b^(H+1)
//! ```
//!
//! The 1/sqrt(m_l) scaling keeps hidden norms O(1) at any width. Parameters
//! flatten canonically layer by layer, each layer as the augmented matrix
//! [W | b] stacked column-major, so the output layer occupies the final
//! m_y * (m_H + 1) coordinates.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::LossSpec;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

/// Entry cap for dense matrices (the Jacobian guard); 2e7 f64s is 160 MB.
pub const DENSE_GUARD: usize = 20_000_000;

/// Numerically stable softplus ln(1 + exp(alpha x)) / alpha.
#[inline]
pub fn softplus(x: f64, alpha: f64) -> f64 {
    x.max(0.0) + (-alpha * x.abs()).exp().ln_1p() / alpha
}

/// Derivative of [`softplus`]: the logistic sigmoid of alpha x.
#[inline]
pub fn softplus_deriv(x: f64, alpha: f64) -> f64 {
    let t = alpha * x;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// All trainable parameters of a network, plus the widths they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    alpha: f64,
}

impl Params {
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Layers in order; `layers()[0]` maps the input, the last maps features
    /// to outputs.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    /// Output layer as the augmented matrix [W | b], shape m_y x (m_H + 1).
    pub fn output_wbar(&self) -> DMatrix<f64> {
        let out = self.output_layer();
        let m_y = out.w.nrows();
        let m_h = out.w.ncols();
        let mut wbar = DMatrix::zeros(m_y, m_h + 1);
        wbar.view_mut((0, 0), (m_y, m_h)).copy_from(&out.w);
        wbar.set_column(m_h, &out.b);
        wbar
    }

    /// Replaces the output layer from augmented form; hidden layers are not
    /// touched.
    pub fn with_output_wbar(&self, wbar: &DMatrix<f64>) -> Result<Params> {
        let m_y = self.widths[self.depth() + 1];
        let m_h = self.widths[self.depth()];
        if wbar.nrows() != m_y || wbar.ncols() != m_h + 1 {
            return Err(Error::DimensionMismatch {
                context: "output layer",
                expected: format!("{m_y} x {}", m_h + 1),
                got: format!("{} x {}", wbar.nrows(), wbar.ncols()),
            });
        }
        let mut params = self.clone();
        let last = params.layers.last_mut().unwrap();
        last.w.copy_from(&wbar.view((0, 0), (m_y, m_h)));
        last.b.copy_from(&wbar.column(m_h));
        Ok(params)
    }

    /// Total parameter count.
    pub fn dim(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Canonical flattening: per layer, columns of W then b.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for layer in &self.layers {
            out.extend_from_slice(layer.w.as_slice()); // column-major storage
            out.extend_from_slice(layer.b.as_slice());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`Params::flatten`] for the given widths.
    pub fn unflatten(widths: &[usize], alpha: f64, theta: &DVector<f64>) -> Result<Params> {
        if widths.len() < 3 {
            return Err(Error::invalid("need at least 3 widths"));
        }
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "flattened parameters",
                expected: format!("{expected}"),
                got: format!("{}", theta.len()),
            });
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut at = 0;
        for pair in widths.windows(2) {
            let (m_in, m_out) = (pair[0], pair[1]);
            let w = DMatrix::from_column_slice(m_out, m_in, &theta.as_slice()[at..at + m_in * m_out]);
            at += m_in * m_out;
            let b = DVector::from_column_slice(&theta.as_slice()[at..at + m_out]);
            at += m_out;
            layers.push(Layer { w, b });
        }
        Ok(Params {
            widths: widths.to_vec(),
            layers,
            alpha,
        })
    }

    /// Flattened index where the output layer block starts.
    pub fn output_offset(&self) -> usize {
        self.widths[..self.widths.len() - 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Gaussian init: W entries N(0, c_w), biases N(0, c_b), drawn from the
/// `(seed, "init")` stream in flattening order.
pub fn init_params(spec: &crate::architect::ArchSpec, seed: u64) -> Params {
    let mut r = rng::stream(seed, "init");
    let w_dist = Normal::new(0.0, spec.c_w.sqrt()).expect("c_w validated nonnegative");
    let b_dist = Normal::new(0.0, spec.c_b.sqrt()).expect("c_b validated nonnegative");
    let layers = spec
        .widths
        .windows(2)
        .map(|pair| {
            let (m_in, m_out) = (pair[0], pair[1]);
            let w = DMatrix::from_fn(m_out, m_in, |_, _| w_dist.sample(&mut r));
            let b = DVector::from_fn(m_out, |_, _| b_dist.sample(&mut r));
            Layer { w, b }
        })
        .collect();
    Params {
        widths: spec.widths.clone(),
        layers,
        alpha: spec.alpha,
    }
}

/// Forward pass over a batch; keeps everything backprop needs.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    /// xs[l] is x^(l) as columns, l = 0..=depth.
    pub xs: Vec<DMatrix<f64>>,
    /// preacts[l-1] is W^(l) x^(l-1) + b^(l) as columns, l = 1..=depth.
    pub preacts: Vec<DMatrix<f64>>,
    /// Network outputs as columns, m_y x n.
    pub out: DMatrix<f64>,
}

impl BatchTrace {
    /// Last hidden activations x^(H), m_H x n.
    pub fn features(&self) -> &DMatrix<f64> {
        self.xs.last().unwrap()
    }

    /// Feature columns augmented with a ones row: Z = [x^(H); 1], (m_H+1) x n.
    pub fn z_matrix(&self) -> DMatrix<f64> {
        let feats = self.features();
        let mut z = DMatrix::zeros(feats.nrows() + 1, feats.ncols());
        z.view_mut((0, 0), (feats.nrows(), feats.ncols()))
            .copy_from(feats);
        z.row_mut(feats.nrows()).fill(1.0);
        z
    }
}

fn check_inputs(params: &Params, inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() != params.widths[0] {
        return Err(Error::DimensionMismatch {
            context: "forward inputs",
            expected: format!("{} rows", params.widths[0]),
            got: format!("{}", inputs.nrows()),
        });
    }
    Ok(())
}

/// Forward pass for a batch of input columns.
pub fn forward_batch(params: &Params, inputs: &DMatrix<f64>) -> Result<BatchTrace> {
    check_inputs(params, inputs)?;
    let depth = params.depth();
    let n = inputs.ncols();
    let alpha = params.alpha;
    let mut xs = Vec::with_capacity(depth + 1);
    let mut preacts = Vec::with_capacity(depth);
    xs.push(inputs.clone());
    for l in 0..depth {
        let layer = &params.layers[l];
        let mut a = &layer.w * xs.last().unwrap();
        for j in 0..n {
            let mut col = a.column_mut(j);
            col += &layer.b;
        }
        let scale = 1.0 / (layer.w.nrows() as f64).sqrt();
        let x = a.map(|v| softplus(v, alpha) * scale);
        debug_assert!(x.iter().all(|&v| v >= 0.0));
        preacts.push(a);
        xs.push(x);
    }
    let out_layer = params.output_layer();
    let mut out = &out_layer.w * xs.last().unwrap();
    for j in 0..n {
        let mut col = out.column_mut(j);
        col += &out_layer.b;
    }
    Ok(BatchTrace { xs, preacts, out })
}

/// Single-sample forward; returns (trace with one column per stage).
pub fn forward(params: &Params, x: &DVector<f64>) -> Result<BatchTrace> {
    let m = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
    forward_batch(params, &m)
}

/// Mean objective J = (1/n) sum_i loss(f(x_i), y_i).
pub fn objective(params: &Params, ds: &Dataset, loss: &LossSpec) -> Result<f64> {
    let trace = forward_batch(params, ds.inputs())?;
    Ok(loss.mean_objective(&trace.out, ds.targets()))
}

/// Full gradient of the mean objective with respect to every parameter,
/// returned in the same shape as `params`.
pub fn grad_objective(params: &Params, ds: &Dataset, loss: &LossSpec) -> Result<Params> {
    let trace = forward_batch(params, ds.inputs())?;
    let depth = params.depth();
    let alpha = params.alpha;
    // Upstream: d(mean loss)/d(predictions), m_y x n.
    let u = loss.mean_grad_pred(&trace.out, ds.targets());

    let mut grads = vec![
        Layer {
            w: DMatrix::zeros(0, 0),
            b: DVector::zeros(0),
        };
        depth + 1
    ];
    let ones = DVector::from_element(ds.n(), 1.0);
    grads[depth] = Layer {
        w: &u * trace.xs[depth].transpose(),
        b: &u * &ones,
    };
    // delta = d(mean loss)/d(x^(l)), walked down from the output layer.
    let mut delta = params.output_layer().w.transpose() * &u;
    for l in (0..depth).rev() {
        let layer = &params.layers[l];
        let scale = 1.0 / (layer.w.nrows() as f64).sqrt();
        let s = delta.zip_map(&trace.preacts[l], |d, a| d * softplus_deriv(a, alpha) * scale);
        grads[l] = Layer {
            w: &s * trace.xs[l].transpose(),
            b: &s * &ones,
        };
        if l > 0 {
            delta = layer.w.transpose() * s;
        }
    }
    Ok(Params {
        widths: params.widths.clone(),
        layers: grads,
        alpha,
    })
}

/// Per-layer output sensitivities d f / d a^(l) for one sample, plus the
/// augmented feature vector. Shared by the dense Jacobian and its norm-only
/// variant.
struct SampleSensitivities {
    /// ts[l-1] = d f / d a^(l), shape m_y x m_l.
    ts: Vec<DMatrix<f64>>,
}

fn sample_sensitivities(params: &Params, trace: &BatchTrace, col: usize) -> SampleSensitivities {
    let depth = params.depth();
    let alpha = params.alpha;
    let mut ts = vec![DMatrix::zeros(0, 0); depth];
    // d = d f / d x^(l), starting at the output layer.
    let mut d = params.output_layer().w.clone();
    for l in (0..depth).rev() {
        let layer = &params.layers[l];
        let scale = 1.0 / (layer.w.nrows() as f64).sqrt();
        let a_col = trace.preacts[l].column(col);
        let mut t = d.clone();
        for c in 0..t.ncols() {
            let g = softplus_deriv(a_col[c], alpha) * scale;
            t.column_mut(c).scale_mut(g);
        }
        if l > 0 {
            d = &t * &layer.w;
        }
        ts[l] = t;
    }
    SampleSensitivities { ts }
}

/// Dense Jacobian of all outputs over all samples: row (i * m_y + j) holds
/// d f_j(x_i) / d theta in canonical flattening order. Guarded against
/// non-desk-scale shapes.
pub fn jacobian_fx(params: &Params, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(params, inputs)?;
    let n = inputs.ncols();
    let m_y = *params.widths.last().unwrap();
    let d = params.dim();
    let rows = n * m_y;
    if rows.saturating_mul(d) > DENSE_GUARD {
        return Err(Error::SizeGuard {
            rows,
            cols: d,
            limit: DENSE_GUARD,
        });
    }
    let depth = params.depth();
    let trace = forward_batch(params, inputs)?;
    let mut jac = DMatrix::zeros(rows, d);

    // Column offset of each layer block in the flattening.
    let mut offsets = Vec::with_capacity(depth + 1);
    let mut at = 0;
    for pair in params.widths.windows(2) {
        offsets.push(at);
        at += pair[0] * pair[1] + pair[1];
    }

    for i in 0..n {
        let sens = sample_sensitivities(params, &trace, i);
        let row0 = i * m_y;
        for l in 0..depth {
            let t = &sens.ts[l];
            let x_prev = trace.xs[l].column(i);
            let (m_l, m_prev) = (params.widths[l + 1], params.widths[l]);
            let off = offsets[l];
            for j in 0..m_y {
                for a in 0..m_l {
                    let tja = t[(j, a)];
                    if tja == 0.0 {
                        continue;
                    }
                    for b in 0..m_prev {
                        jac[(row0 + j, off + b * m_l + a)] = tja * x_prev[b];
                    }
                    jac[(row0 + j, off + m_prev * m_l + a)] = tja;
                }
            }
        }
        // Output layer: d f_j / d Wbar_{ab} = delta_{ja} z_b.
        let off = offsets[depth];
        let m_h = params.widths[depth];
        let feats = trace.xs[depth].column(i);
        for j in 0..m_y {
            for b in 0..m_h {
                jac[(row0 + j, off + b * m_y + j)] = feats[b];
            }
            jac[(row0 + j, off + m_h * m_y + j)] = 1.0;
        }
    }
    Ok(jac)
}

/// Squared Frobenius norm of each sample's output Jacobian, without dense
/// storage: per sample, m_y (1 + |x^(H)|^2) + sum_l |df/da^(l)|_F^2 (1 + |x^(l-1)|^2).
pub fn jacobian_frobenius_sq(params: &Params, inputs: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_inputs(params, inputs)?;
    let trace = forward_batch(params, inputs)?;
    let depth = params.depth();
    let m_y = *params.widths.last().unwrap() as f64;
    let mut out = Vec::with_capacity(inputs.ncols());
    for i in 0..inputs.ncols() {
        let sens = sample_sensitivities(params, &trace, i);
        let mut total = m_y * (1.0 + trace.xs[depth].column(i).norm_squared());
        for l in 0..depth {
            total += sens.ts[l].norm_squared() * (1.0 + trace.xs[l].column(i).norm_squared());
        }
        out.push(total);
    }
    Ok(out)
}

/// Central-difference gradient of the mean objective, step `h` per coordinate.
/// Slow; used to validate backpropagation.
pub fn fd_gradient(params: &Params, ds: &Dataset, loss: &LossSpec, h: f64) -> Result<DVector<f64>> {
    let theta = params.flatten();
    let widths = params.widths().to_vec();
    let alpha = params.alpha;
    let mut grad = DVector::zeros(theta.len());
    for k in 0..theta.len() {
        let mut plus = theta.clone();
        plus[k] += h;
        let mut minus = theta.clone();
        minus[k] -= h;
        let jp = objective(&Params::unflatten(&widths, alpha, &plus)?, ds, loss)?;
        let jm = objective(&Params::unflatten(&widths, alpha, &minus)?, ds, loss)?;
        grad[k] = (jp - jm) / (2.0 * h);
    }
    Ok(grad)
}
