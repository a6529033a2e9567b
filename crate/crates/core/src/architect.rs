//! Architecture sizing: widths that make n samples interpolable.
//!
//! The schedule keeps every hidden layer logarithmic in n except the last,
//! which matches the sample count so the final feature matrix can reach full
//! row rank. Total parameter count then grows linearly in n up to log factors.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Default softplus sharpness.
pub const DEFAULT_ALPHA: f64 = 10.0;
/// Default weight init variance.
pub const DEFAULT_CW: f64 = 2.0;
/// Default bias init variance.
pub const DEFAULT_CB: f64 = 0.01;
/// Default width-schedule constant.
pub const DEFAULT_C: f64 = 4.0;

/// Network shape plus the scalar knobs the whole crate reads.
///
/// `widths` has length `depth + 2`: input width, `depth` hidden widths, output
/// width. `alpha` is the softplus sharpness, `c_w`/`c_b` the init variances,
/// `c_schedule` the constant the width schedule was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub alpha: f64,
    pub c_w: f64,
    pub c_b: f64,
    pub c_schedule: f64,
}

impl ArchSpec {
    /// Builds a spec from an explicit width list, using default knobs.
    pub fn from_widths(widths: Vec<usize>) -> Result<Self> {
        Self::new(widths, DEFAULT_ALPHA, DEFAULT_CW, DEFAULT_CB, DEFAULT_C)
    }

    pub fn new(widths: Vec<usize>, alpha: f64, c_w: f64, c_b: f64, c_schedule: f64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid(format!(
                "need input, at least one hidden, and output width; got {:?}",
                widths
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!("zero width in {:?}", widths)));
        }
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(c_w >= 0.0) || !(c_b >= 0.0) {
            return Err(Error::invalid(format!(
                "init variances must be nonnegative, got c_w={c_w} c_b={c_b}"
            )));
        }
        if !(c_schedule > 0.0) {
            return Err(Error::invalid(format!("C must be positive, got {c_schedule}")));
        }
        Ok(ArchSpec {
            depth: widths.len() - 2,
            widths,
            alpha,
            c_w,
            c_b,
            c_schedule,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        self.widths[self.depth + 1]
    }

    /// Width of the last hidden layer (the feature layer).
    pub fn feature_width(&self) -> usize {
        self.widths[self.depth]
    }

    /// Serializes to flat `key=value` text. `seed` is recorded when the caller
    /// wants the file to pin its init stream as well.
    pub fn to_kv_string(&self, seed: Option<u64>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "H={}", self.depth);
        let widths = self
            .widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(out, "widths={widths}");
        let _ = writeln!(out, "alpha={}", crate::report::fmt_f64(self.alpha));
        let _ = writeln!(out, "c_w={}", crate::report::fmt_f64(self.c_w));
        let _ = writeln!(out, "c_b={}", crate::report::fmt_f64(self.c_b));
        let _ = writeln!(out, "C={}", crate::report::fmt_f64(self.c_schedule));
        if let Some(seed) = seed {
            let _ = writeln!(out, "seed={seed}");
        }
        out
    }

    /// Parses the `key=value` form produced by [`ArchSpec::to_kv_string`].
    pub fn from_kv_str(text: &str) -> Result<(Self, Option<u64>)> {
        let mut depth = None;
        let mut widths: Option<Vec<usize>> = None;
        let mut alpha = DEFAULT_ALPHA;
        let mut c_w = DEFAULT_CW;
        let mut c_b = DEFAULT_CB;
        let mut c_schedule = DEFAULT_C;
        let mut seed = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::ConfigParse {
                line: idx + 1,
                reason: format!("expected key=value, got {line:?}"),
            })?;
            let bad = |reason: String| Error::ConfigParse {
                line: idx + 1,
                reason,
            };
            match key.trim() {
                "H" => depth = Some(value.trim().parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "widths" => {
                    let parsed = value
                        .split(',')
                        .map(|w| w.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(e.to_string()))?;
                    widths = Some(parsed);
                }
                "alpha" => alpha = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "c_w" => c_w = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "c_b" => c_b = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "C" => c_schedule = value.trim().parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                "seed" => seed = Some(value.trim().parse::<u64>().map_err(|e| bad(e.to_string()))?),
                other => {
                    return Err(bad(format!("unknown key {other:?}")));
                }
            }
        }
        let widths = widths.ok_or_else(|| Error::invalid("missing widths line"))?;
        let spec = ArchSpec::new(widths, alpha, c_w, c_b, c_schedule)?;
        if let Some(h) = depth {
            if h != spec.depth {
                return Err(Error::invalid(format!(
                    "H={} disagrees with widths (depth {})",
                    h, spec.depth
                )));
            }
        }
        Ok((spec, seed))
    }
}

/// Hidden widths sized for n samples at depth `depth`, failure budget `delta`.
///
/// For depth >= 2 all interior layers get ceil(C^2 depth^2 ln(depth n^2 / delta)),
/// the penultimate layer gets ceil(C^2 ln(depth n^2 / delta)), and the feature
/// layer gets n. For depth 1 the feature layer is the only hidden layer, so the
/// widths are [m_x, n, m_y].
pub fn size_widths(
    n: usize,
    depth: usize,
    delta: f64,
    m_x: usize,
    m_y: usize,
    c_schedule: f64,
) -> Result<ArchSpec> {
    if n == 0 || m_x == 0 || m_y == 0 {
        return Err(Error::invalid(format!(
            "n, m_x, m_y must be positive; got n={n} m_x={m_x} m_y={m_y}"
        )));
    }
    if depth == 0 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(c_schedule > 0.0) {
        return Err(Error::invalid(format!("C must be positive, got {c_schedule}")));
    }
    let mut widths = Vec::with_capacity(depth + 2);
    widths.push(m_x);
    if depth >= 2 {
        let log_term = ((depth as f64) * (n as f64) * (n as f64) / delta).ln();
        let c2 = c_schedule * c_schedule;
        let body = (c2 * (depth as f64) * (depth as f64) * log_term).ceil() as usize;
        let penultimate = (c2 * log_term).ceil() as usize;
        for _ in 1..=depth - 2 {
            widths.push(body.max(1));
        }
        widths.push(penultimate.max(1));
    }
    widths.push(n);
    widths.push(m_y);
    ArchSpec::new(widths, DEFAULT_ALPHA, DEFAULT_CW, DEFAULT_CB, c_schedule)
}

/// Total trainable parameter count: sum over layers of m_l * m_{l+1} + m_{l+1}.
pub fn param_count(spec: &ArchSpec) -> u64 {
    spec.widths
        .windows(2)
        .map(|w| (w[0] as u64) * (w[1] as u64) + w[1] as u64)
        .sum()
}

/// True when the parameter count cannot reach the n * m_y interpolation
/// threshold; callers surface this as a warning.
pub fn underparameterized(spec: &ArchSpec, n: usize) -> bool {
    param_count(spec) < (n as u64) * (spec.output_width() as u64)
}
