//! Datasets: unit-sphere inputs, bounded targets, class labels.
//!
//! Inputs live as columns of an m_x by n matrix, each projected to the unit
//! sphere; targets are columns in [-1, 1]^{m_y}. Classification sets carry
//! label indices next to their one-hot targets. `gamma` records the smallest
//! squared pairwise input distance, the separation quantity the trainability
//! checks depend on.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fs;
use std::path::Path;

/// How a synthetic task assigns labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Class = cell of a fixed random hyperplane arrangement (`planes` cuts),
    /// taken modulo the class count. A linear scoring rule realizes these
    /// labels, so a low-norm interpolant exists.
    Separable { planes: usize },
    /// Labels drawn uniformly at random, independent of the inputs.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic(SynthKind),
    IdxFile,
    Manual,
    /// Labels of a base set re-drawn uniformly with the given probability.
    Corrupted { p: f64 },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    gamma: f64,
    provenance: Provenance,
    /// For corrupted sets: true where the label was re-drawn.
    corruption_mask: Option<Vec<bool>>,
}

const UNIT_NORM_TOL: f64 = 1e-12;
const DUPLICATE_RETRIES: usize = 100;

impl Dataset {
    /// Validates and wraps explicit matrices. Columns are samples.
    pub fn from_parts(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        labels: Option<Vec<usize>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = inputs.ncols();
        if n == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if targets.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset targets",
                expected: format!("{n} columns"),
                got: format!("{}", targets.ncols()),
            });
        }
        for i in 0..n {
            let norm = inputs.column(i).norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::invalid(format!(
                    "input {i} has norm {norm:.17}, expected 1 within {UNIT_NORM_TOL:e}"
                )));
            }
        }
        if targets.iter().any(|&t| !(-1.0..=1.0).contains(&t)) {
            return Err(Error::invalid("targets must lie in [-1, 1]"));
        }
        if let Some(ref ls) = labels {
            if ls.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "dataset labels",
                    expected: format!("{n}"),
                    got: format!("{}", ls.len()),
                });
            }
            let m_y = targets.nrows();
            if ls.iter().any(|&c| c >= m_y) {
                return Err(Error::invalid("label index out of class range"));
            }
        }
        let gamma = min_pairwise_sq_dist(&inputs);
        Ok(Dataset {
            inputs,
            targets,
            labels,
            gamma,
            provenance,
            corruption_mask: None,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input_width(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.targets.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Smallest squared pairwise input distance; infinite for a single sample.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn corruption_mask(&self) -> Option<&[bool]> {
        self.corruption_mask.as_deref()
    }

    /// Splits off the first `k` samples; both halves recompute gamma.
    pub fn split_at(&self, k: usize) -> Result<(Dataset, Dataset)> {
        if k == 0 || k >= self.n() {
            return Err(Error::invalid(format!(
                "split point {k} outside 1..{}",
                self.n() - 1
            )));
        }
        let take = |lo: usize, hi: usize| -> Result<Dataset> {
            Dataset::from_parts(
                self.inputs.columns(lo, hi - lo).into_owned(),
                self.targets.columns(lo, hi - lo).into_owned(),
                self.labels.as_ref().map(|ls| ls[lo..hi].to_vec()),
                self.provenance.clone(),
            )
        };
        Ok((take(0, k)?, take(k, self.n())?))
    }
}

pub fn min_pairwise_sq_dist(inputs: &DMatrix<f64>) -> f64 {
    let n = inputs.ncols();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = (inputs.column(i) - inputs.column(j)).norm_squared();
            if d < best {
                best = d;
            }
        }
    }
    best
}

pub fn one_hot(labels: &[usize], m_y: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(m_y, labels.len());
    for (i, &c) in labels.iter().enumerate() {
        y[(c, i)] = 1.0;
    }
    y
}

/// Draws n unit-sphere inputs and labels them per `kind`.
///
/// The task (hyperplane normals) and the sample cloud come from separate
/// streams of the same seed, so enlarging n keeps the task fixed.
pub fn synthesize(n: usize, m_x: usize, m_y: usize, kind: SynthKind, seed: u64) -> Result<Dataset> {
    if n == 0 || m_x == 0 || m_y == 0 {
        return Err(Error::invalid(format!(
            "n, m_x, m_y must be positive; got n={n} m_x={m_x} m_y={m_y}"
        )));
    }
    let mut input_rng = rng::stream(seed, "data.inputs");
    let mut inputs = DMatrix::zeros(m_x, n);
    for i in 0..n {
        let mut placed = false;
        for _ in 0..DUPLICATE_RETRIES {
            let v: DVector<f64> =
                DVector::from_fn(m_x, |_, _| StandardNormal.sample(&mut input_rng));
            let norm = v.norm();
            if norm == 0.0 {
                continue;
            }
            let unit = v / norm;
            let collides = (0..i).any(|j| (&unit - inputs.column(j)).norm_squared() < 1e-24);
            if collides {
                continue;
            }
            inputs.set_column(i, &unit);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::DuplicateInputs {
                n,
                retries: DUPLICATE_RETRIES,
            });
        }
    }

    let labels: Vec<usize> = match kind {
        SynthKind::Random => {
            let mut label_rng = rng::stream(seed, "data.labels");
            (0..n).map(|_| label_rng.gen_range(0..m_y)).collect()
        }
        SynthKind::Separable { planes } => {
            if planes == 0 || planes >= usize::BITS as usize {
                return Err(Error::invalid(format!("plane count {planes} out of range")));
            }
            let mut task_rng = rng::stream(seed, "data.task");
            let normals: Vec<DVector<f64>> = (0..planes)
                .map(|_| DVector::from_fn(m_x, |_, _| StandardNormal.sample(&mut task_rng)))
                .collect();
            (0..n)
                .map(|i| {
                    let x = inputs.column(i);
                    let mut pattern = 0usize;
                    for (b, h) in normals.iter().enumerate() {
                        if h.dot(&x) > 0.0 {
                            pattern |= 1 << b;
                        }
                    }
                    pattern % m_y
                })
                .collect()
        }
    };

    let targets = one_hot(&labels, m_y);
    Dataset::from_parts(inputs, targets, Some(labels), Provenance::Synthetic(kind))
}

/// Default cut count for a separable task: enough hyperplane cells to cover
/// every class exactly once when m_y is a power of two.
pub fn default_planes(m_y: usize) -> usize {
    (usize::BITS - m_y.next_power_of_two().leading_zeros()) as usize - 1
}

/// Re-draws each label uniformly with probability p; inputs are untouched.
/// The mask records where a re-draw happened (the new label may coincide
/// with the old one by chance).
pub fn corrupt_labels(ds: &Dataset, p: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("corruption probability {p} outside [0, 1]")));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::invalid("corrupt_labels needs a labeled dataset"))?;
    let m_y = ds.output_width();
    let mut r = rng::stream(seed, "data.corrupt");
    let mut new_labels = labels.to_vec();
    let mut mask = vec![false; ds.n()];
    for i in 0..ds.n() {
        if r.gen::<f64>() < p {
            new_labels[i] = r.gen_range(0..m_y);
            mask[i] = true;
        }
    }
    let mut out = Dataset::from_parts(
        ds.inputs().clone(),
        one_hot(&new_labels, m_y),
        Some(new_labels),
        Provenance::Corrupted { p },
    )?;
    out.corruption_mask = Some(mask);
    Ok(out)
}

// ---------------------------------------------------------------------------
// IDX loading
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxParse {
            path: path.display().to_string(),
            reason: format!("truncated header at byte {offset}"),
        })
}

/// Loads the first `limit` samples from a big-endian IDX image/label pair.
/// Pixels are scaled to [0, 1] and each image projected to the unit sphere;
/// the class count is the largest label in the file plus one.
pub fn load_idx<P: AsRef<Path>>(images_path: P, labels_path: P, limit: usize) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img_bytes =
        fs::read(images_path).map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let lab_bytes =
        fs::read(labels_path).map_err(|e| Error::io(labels_path.display().to_string(), e))?;

    let img_magic = read_u32_be(&img_bytes, 0, images_path)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxParse {
            path: images_path.display().to_string(),
            reason: format!("bad magic {img_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let lab_magic = read_u32_be(&lab_bytes, 0, labels_path)?;
    if lab_magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxParse {
            path: labels_path.display().to_string(),
            reason: format!("bad magic {lab_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }

    let img_count = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let rows = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let cols = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let lab_count = read_u32_be(&lab_bytes, 4, labels_path)? as usize;
    if img_count != lab_count {
        return Err(Error::IdxParse {
            path: labels_path.display().to_string(),
            reason: format!("label count {lab_count} != image count {img_count}"),
        });
    }
    let m_x = rows * cols;
    if img_bytes.len() < 16 + img_count * m_x {
        return Err(Error::IdxParse {
            path: images_path.display().to_string(),
            reason: format!(
                "payload holds {} bytes, header promises {}",
                img_bytes.len() - 16,
                img_count * m_x
            ),
        });
    }
    if lab_bytes.len() < 8 + lab_count {
        return Err(Error::IdxParse {
            path: labels_path.display().to_string(),
            reason: "label payload shorter than header count".to_string(),
        });
    }
    if limit == 0 || limit > img_count {
        return Err(Error::NotEnoughSamples {
            requested: limit,
            available: img_count,
            path: images_path.display().to_string(),
        });
    }

    let all_labels = &lab_bytes[8..8 + lab_count];
    let m_y = (*all_labels.iter().max().unwrap() as usize + 1).max(2);

    let mut inputs = DMatrix::zeros(m_x, limit);
    for i in 0..limit {
        let start = 16 + i * m_x;
        let mut v = DVector::from_fn(m_x, |r, _| img_bytes[start + r] as f64 / 255.0);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNormInput { index: i });
        }
        v /= norm;
        inputs.set_column(i, &v);
    }
    let labels: Vec<usize> = all_labels[..limit].iter().map(|&b| b as usize).collect();
    let targets = one_hot(&labels, m_y);
    Dataset::from_parts(inputs, targets, Some(labels), Provenance::IdxFile)
}
