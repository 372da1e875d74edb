//! Adaptive test-time-augmentation predictors (matrix and vector variants).
//!
//! A prediction blends the original output `p0` with the consensus of the
//! augmented logits:
//!
//! ```text
//! p(ω) = (1 − ω)·p0 + ω·q,   q = (1/m) Σ_i softmax(w_i ⊙ z^i)
//! ```
//!
//! where `w_i` is column `i` of the `k × m` weight matrix (matrix variant) or
//! the scalar `w_i` broadcast over classes (vector variant). The consensus is
//! averaged over the `m` augmentation types so that `p(ω)` stays on the
//! simplex. At inference `ω` starts at the fitted bound `ω*` and is lowered in
//! steps of `ε` until the predicted class equals the class of `p0`, so the
//! calibrated output never changes the prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{softmax_slice, Dataset, ProbVector, Sample};

/// Step of the downward `ω` search.
pub const DEFAULT_OMEGA_EPS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One weight per class and augmentation type.
    #[serde(rename = "matta")]
    Matrix,
    /// One weight per augmentation type.
    #[serde(rename = "vatta")]
    Vector,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Matrix => "matta",
            Variant::Vector => "vatta",
        }
    }
}

fn check_omega_star(omega_star: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega_star) {
        return Err(Error::invalid(format!("omega* = {omega_star} outside [0, 1]")));
    }
    Ok(())
}

fn check_finite(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MattaParams {
    k: usize,
    m: usize,
    /// Row-major `k × m`: entry `(c, i)` at `c * m + i`.
    weights: Vec<f64>,
    omega_star: f64,
}

impl MattaParams {
    pub fn new(k: usize, m: usize, weights: Vec<f64>, omega_star: f64) -> Result<Self> {
        if k == 0 || m == 0 || weights.len() != k * m {
            return Err(Error::invalid(format!(
                "weight matrix needs {k} x {m} entries, got {}",
                weights.len()
            )));
        }
        check_finite(&weights)?;
        check_omega_star(omega_star)?;
        Ok(MattaParams {
            k,
            m,
            weights,
            omega_star,
        })
    }

    /// All weights one, as used to initialize fitting.
    pub fn ones(k: usize, m: usize, omega_star: f64) -> Result<Self> {
        MattaParams::new(k, m, vec![1.0; k * m], omega_star)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn types(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, class: usize, aug: usize) -> f64 {
        self.weights[class * self.m + aug]
    }

    pub fn omega_star(&self) -> f64 {
        self.omega_star
    }

    pub fn with_omega_star(&self, omega_star: f64) -> Result<Self> {
        check_omega_star(omega_star)?;
        Ok(MattaParams {
            omega_star,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VattaParams {
    weights: Vec<f64>,
    omega_star: f64,
}

impl VattaParams {
    pub fn new(weights: Vec<f64>, omega_star: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("vector weights need at least one entry"));
        }
        check_finite(&weights)?;
        check_omega_star(omega_star)?;
        Ok(VattaParams {
            weights,
            omega_star,
        })
    }

    pub fn ones(m: usize, omega_star: f64) -> Result<Self> {
        VattaParams::new(vec![1.0; m], omega_star)
    }

    pub fn types(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omega_star(&self) -> f64 {
        self.omega_star
    }

    /// The equivalent matrix parameters (every row equal to the weights).
    pub fn to_matrix(&self, k: usize) -> Result<MattaParams> {
        let weights = (0..k).flat_map(|_| self.weights.iter().copied()).collect();
        MattaParams::new(k, self.types(), weights, self.omega_star)
    }
}

/// Either variant's fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum AttaParams {
    Matrix(MattaParams),
    Vector(VattaParams),
}

impl AttaParams {
    pub fn variant(&self) -> Variant {
        match self {
            AttaParams::Matrix(_) => Variant::Matrix,
            AttaParams::Vector(_) => Variant::Vector,
        }
    }

    pub fn omega_star(&self) -> f64 {
        match self {
            AttaParams::Matrix(p) => p.omega_star,
            AttaParams::Vector(p) => p.omega_star,
        }
    }

    pub fn types(&self) -> usize {
        match self {
            AttaParams::Matrix(p) => p.m,
            AttaParams::Vector(p) => p.types(),
        }
    }

    /// Number of stored values (weights plus `ω*`).
    pub fn value_count(&self) -> usize {
        match self {
            AttaParams::Matrix(p) => p.weights.len() + 1,
            AttaParams::Vector(p) => p.weights.len() + 1,
        }
    }

    pub(crate) fn weight(&self, class: usize, aug: usize) -> f64 {
        match self {
            AttaParams::Matrix(p) => p.weight(class, aug),
            AttaParams::Vector(p) => p.weights[aug],
        }
    }

    /// Fails unless the parameters fit samples with `k` classes and `m` types.
    pub fn check_shape(&self, k: usize, m: usize) -> Result<()> {
        let ok = match self {
            AttaParams::Matrix(p) => p.k == k && p.m == m,
            AttaParams::Vector(p) => p.types() == m,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} parameters do not match data with k = {k}, m = {m}",
                self.variant().tag()
            )))
        }
    }

    /// Fused prediction at a fixed blend weight.
    pub fn fuse(&self, sample: &Sample, omega: f64) -> Result<ProbVector> {
        self.check_shape(sample.classes(), sample.z().types())?;
        fuse_checked(sample, omega, |c, i| self.weight(c, i))
    }
}

/// Mean over augmentation types of the softmax of the weighted logits.
pub(crate) fn consensus(sample: &Sample, weight: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let z = sample.z();
    let k = z.classes();
    let m = z.types();
    let mut q = vec![0.0; k];
    let mut scaled = vec![0.0; k];
    for (i, col) in z.columns().enumerate() {
        for (c, s) in scaled.iter_mut().enumerate() {
            *s = weight(c, i) * col[c];
        }
        for (acc, s) in q.iter_mut().zip(softmax_slice(&scaled)) {
            *acc += s;
        }
    }
    q.iter_mut().for_each(|v| *v /= m as f64);
    q
}

pub(crate) fn blend(p0: &ProbVector, q: &[f64], omega: f64) -> ProbVector {
    let values = p0
        .values()
        .iter()
        .zip(q)
        .map(|(&p, &a)| (1.0 - omega) * p + omega * a)
        .collect();
    ProbVector::from_raw(values)
}

fn fuse_checked(sample: &Sample, omega: f64, weight: impl Fn(usize, usize) -> f64) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("omega = {omega} outside [0, 1]")));
    }
    let q = consensus(sample, weight);
    let fused = blend(sample.p0(), &q, omega);
    if fused.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fused prediction is not finite"));
    }
    Ok(fused)
}

/// Matrix-variant fusion at blend weight `omega`.
pub fn matta_fuse(sample: &Sample, params: &MattaParams, omega: f64) -> Result<ProbVector> {
    if params.k != sample.classes() || params.m != sample.z().types() {
        return Err(Error::invalid("weight matrix shape does not match sample"));
    }
    fuse_checked(sample, omega, |c, i| params.weight(c, i))
}

/// Vector-variant fusion: augmentation type `i`'s logits scaled by `w_i`.
pub fn vatta_fuse(sample: &Sample, params: &VattaParams, omega: f64) -> Result<ProbVector> {
    if params.types() != sample.z().types() {
        return Err(Error::invalid("weight vector length does not match sample"));
    }
    fuse_checked(sample, omega, |_, i| params.weights[i])
}

/// Largest grid value `ω* − nε` (or `0`) whose fused prediction keeps the
/// class of `p0`.
pub fn adaptive_omega<F>(sample: &Sample, fuse: F, omega_star: f64, epsilon: f64) -> Result<f64>
where
    F: Fn(&Sample, f64) -> Result<ProbVector>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon = {epsilon} must be positive")));
    }
    check_omega_star(omega_star)?;
    let target = sample.p0().top_class();
    let mut step = 0u64;
    loop {
        let omega = omega_star - step as f64 * epsilon;
        if omega <= 0.0 {
            return Ok(0.0);
        }
        if fuse(sample, omega)?.top_class() == target {
            return Ok(omega);
        }
        step += 1;
    }
}

/// Calibrated prediction for one sample, with the blend weight it used.
pub fn predict_sample(sample: &Sample, params: &AttaParams, epsilon: f64) -> Result<(ProbVector, f64)> {
    params.check_shape(sample.classes(), sample.z().types())?;
    let omega = adaptive_omega(sample, |s, w| params.fuse(s, w), params.omega_star(), epsilon)?;
    Ok((params.fuse(sample, omega)?, omega))
}

pub fn predict(dataset: &Dataset, params: &AttaParams, epsilon: f64) -> Result<Vec<ProbVector>> {
    params.check_shape(dataset.classes(), dataset.types())?;
    dataset
        .samples()
        .par_iter()
        .map(|s| predict_sample(s, params, epsilon).map(|(p, _)| p))
        .collect()
}
