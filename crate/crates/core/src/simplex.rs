//! Probability-simplex and logit primitives shared by every calibrator.
//!
//! Classes are indexed from 0. Argmax ties resolve to the lowest index, which
//! is what makes the adaptive weight search and the accuracy checks
//! deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p_i = 1` for an in-memory probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Vectors read from disk whose sum is off by more than [`SUM_TOLERANCE`]
/// but at most this much are renormalized; anything further is rejected.
pub const FILE_RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// Slack on individual entries before clamping into `[0, 1]`.
const ENTRY_SLACK: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let values = check_entries(values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(values))
    }

    /// Accepts vectors that drifted from the simplex through serialization.
    ///
    /// Sums within [`SUM_TOLERANCE`] are kept bit-for-bit; sums within
    /// [`FILE_RENORMALIZE_TOLERANCE`] are divided through by the sum.
    pub fn from_stored(values: Vec<f64>) -> Result<Self> {
        let mut values = check_entries(values)?;
        let sum: f64 = values.iter().sum();
        let drift = (sum - 1.0).abs();
        if drift > FILE_RENORMALIZE_TOLERANCE {
            return Err(Error::invalid(format!(
                "stored probabilities sum to {sum}, outside renormalization tolerance"
            )));
        }
        if drift > SUM_TOLERANCE {
            values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(ProbVector(values))
    }

    /// Wraps values produced by an internal convex combination or softmax;
    /// rounding drift is clamped back into `[0, 1]`.
    pub(crate) fn from_raw(mut values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        ProbVector(values)
    }

    /// The uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("uniform distribution needs k >= 1"));
        }
        Ok(ProbVector(vec![1.0 / k as f64; k]))
    }

    pub fn one_hot(k: usize, class: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::invalid(format!("class {class} out of range for k = {k}")));
        }
        let mut values = vec![0.0; k];
        values[class] = 1.0;
        Ok(ProbVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Predicted class (lowest index on ties).
    pub fn top_class(&self) -> usize {
        argmax_unchecked(&self.0)
    }

    /// Highest confidence value.
    pub fn confidence(&self) -> f64 {
        self.0[self.top_class()]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

fn check_entries(mut values: Vec<f64>) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("probability vector is empty"));
    }
    for v in values.iter_mut() {
        if !v.is_finite() || *v < -ENTRY_SLACK || *v > 1.0 + ENTRY_SLACK {
            return Err(Error::invalid(format!("probability entry {v} outside [0, 1]")));
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(values)
}

/// A vector of finite logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("logit vector is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite logit {v}")));
        }
        Ok(LogitVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LogitVector::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(z: LogitVector) -> Self {
        z.0
    }
}

/// `k × m` matrix whose column `i` is the mean logit of augmentation type `i`.
///
/// Stored column-major so that each augmentation type's logits are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    k: usize,
    m: usize,
    data: Vec<f64>,
}

impl LogitMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let m = columns.len();
        if m == 0 {
            return Err(Error::invalid("logit matrix needs at least one column"));
        }
        let k = columns[0].len();
        if k == 0 {
            return Err(Error::invalid("logit matrix columns are empty"));
        }
        let mut data = Vec::with_capacity(k * m);
        for (i, col) in columns.into_iter().enumerate() {
            if col.len() != k {
                return Err(Error::invalid(format!(
                    "column {i} has dimension {}, expected {k}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("column {i} has a non-finite logit")));
            }
            data.extend(col);
        }
        Ok(LogitMatrix { k, m, data })
    }

    /// Number of classes (rows).
    pub fn classes(&self) -> usize {
        self.k
    }

    /// Number of augmentation types (columns).
    pub fn types(&self) -> usize {
        self.m
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn get(&self, class: usize, aug: usize) -> f64 {
        self.data[aug * self.k + class]
    }
}

/// One labeled record: original prediction, augmented logits, true class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    p0: ProbVector,
    z: LogitMatrix,
    label: usize,
}

impl Sample {
    pub fn new(p0: ProbVector, z: LogitMatrix, label: usize) -> Result<Self> {
        if p0.len() != z.classes() {
            return Err(Error::invalid(format!(
                "p0 has {} classes but logit matrix has {}",
                p0.len(),
                z.classes()
            )));
        }
        if label >= p0.len() {
            return Err(Error::invalid(format!(
                "label {label} out of range for k = {}",
                p0.len()
            )));
        }
        Ok(Sample { p0, z, label })
    }

    pub fn p0(&self) -> &ProbVector {
        &self.p0
    }

    pub fn z(&self) -> &LogitMatrix {
        &self.z
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn classes(&self) -> usize {
        self.p0.len()
    }
}

/// Ordered, immutable collection of samples sharing `k` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    m: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(k: usize, m: usize, samples: Vec<Sample>) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::invalid("dataset needs k >= 1 and m >= 1"));
        }
        for (j, s) in samples.iter().enumerate() {
            if s.classes() != k || s.z().types() != m {
                return Err(Error::invalid(format!(
                    "sample {j} has shape (k = {}, m = {}), dataset expects (k = {k}, m = {m})",
                    s.classes(),
                    s.z().types()
                )));
            }
        }
        Ok(Dataset { k, m, samples })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn types(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(Sample::label).collect()
    }

    /// The uncalibrated predictions `p0`.
    pub fn vanilla(&self) -> Vec<ProbVector> {
        self.samples.iter().map(|s| s.p0().clone()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            k: self.k,
            m: self.m,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Numerically stable softmax of a raw slice; the caller guarantees finiteness.
pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn softmax(z: &LogitVector) -> ProbVector {
    ProbVector(softmax_slice(z.values()))
}

/// Softmax of an arbitrary slice, rejecting non-finite input.
pub fn softmax_checked(z: &[f64]) -> Result<ProbVector> {
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input must be nonempty and finite"));
    }
    Ok(ProbVector(softmax_slice(z)))
}

pub(crate) fn argmax_unchecked(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax_index(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::invalid("argmax of an empty vector"));
    }
    Ok(argmax_unchecked(values))
}

/// Averages the replicate logits of each augmentation type into one column.
///
/// `raw[i][j]` is the logit vector of the `j`-th replicate of type `i`.
pub fn aggregate_logits(raw: &[Vec<LogitVector>]) -> Result<LogitMatrix> {
    if raw.is_empty() {
        return Err(Error::invalid("no augmentation types to aggregate"));
    }
    let k = raw
        .iter()
        .find_map(|reps| reps.first().map(LogitVector::len))
        .unwrap_or(0);
    let mut columns = Vec::with_capacity(raw.len());
    for (i, reps) in raw.iter().enumerate() {
        if reps.is_empty() {
            return Err(Error::invalid(format!("augmentation type {i} has no replicates")));
        }
        let mut mean = vec![0.0; k];
        for z in reps {
            if z.len() != k {
                return Err(Error::invalid(format!(
                    "augmentation type {i} mixes logit dimensions {} and {k}",
                    z.len()
                )));
            }
            mean.iter_mut().zip(z.values()).for_each(|(acc, v)| *acc += v);
        }
        let n = reps.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        columns.push(mean);
    }
    LogitMatrix::from_columns(columns)
}
