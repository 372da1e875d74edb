//! Synthetic classifiers with a known generative process.
//!
//! Each sample draws latent logits `l ~ logit_scale · N(0, I_k)`, a label
//! from `softmax(l)`, and an original prediction `p0 = softmax(l / T0)`:
//! `T0 < 1` gives an overconfident head, `T0 > 1` an underconfident one.
//! Augmentation type `i` contributes the mean logit
//! `noise_scale · (q_i · e_label + (1 − q_i) · ξ)` with `ξ ~ N(0, I_k)`, so
//! `q_i = 1` is an oracle channel and `q_i = 0` pure noise.
//!
//! Randomness comes from ChaCha8 seeded with `seed`; sample `j` uses stream
//! `j`, which keeps generation reproducible regardless of evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simplex::{softmax_slice, Dataset, LogitMatrix, LogitVector, ProbVector, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples: usize,
    /// Distortion temperature of the original head.
    pub temperature: f64,
    /// Quality of each augmentation type, `0` = noise, `1` = oracle.
    pub qualities: Vec<f64>,
    pub noise_scale: f64,
    /// Standard deviation of the latent logits.
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            samples: 1000,
            temperature: 0.5,
            qualities: vec![0.8, 0.0],
            noise_scale: 0.5,
            logit_scale: 3.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("synthetic data needs at least two classes"));
        }
        if self.samples < 1 {
            return Err(Error::invalid("synthetic data needs at least one sample"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("distortion temperature must be positive"));
        }
        if self.qualities.is_empty() {
            return Err(Error::invalid("at least one augmentation type is required"));
        }
        if self.qualities.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::invalid("augmentation qualities must lie in [0, 1]"));
        }
        for (name, v) in [("noise scale", self.noise_scale), ("logit scale", self.logit_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn types(&self) -> usize {
        self.qualities.len()
    }
}

/// Generated data plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    /// `softmax(l)`, the distribution each label was drawn from.
    pub true_probs: Vec<ProbVector>,
    /// `l / T0`, the logits behind `p0`.
    pub original_logits: Vec<LogitVector>,
}

pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let k = spec.classes;
    let rows: Vec<(Sample, ProbVector, LogitVector)> = (0..spec.samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(spec.seed, j as u64);
            let latent: Vec<f64> = (0..k)
                .map(|_| spec.logit_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let truth = softmax_slice(&latent);
            let label = sample_categorical(&mut rng, &truth);
            let original: Vec<f64> = latent.iter().map(|v| v / spec.temperature).collect();
            let p0 = ProbVector::from_raw(softmax_slice(&original));
            let columns = spec
                .qualities
                .iter()
                .map(|&q| {
                    (0..k)
                        .map(|c| {
                            let signal = if c == label { q } else { 0.0 };
                            let noise: f64 = rng.sample(StandardNormal);
                            spec.noise_scale * (signal + (1.0 - q) * noise)
                        })
                        .collect()
                })
                .collect();
            let sample = Sample::new(p0, LogitMatrix::from_columns(columns)?, label)?;
            Ok((sample, ProbVector::from_raw(truth), LogitVector::new(original)?))
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(rows.len());
    let mut true_probs = Vec::with_capacity(rows.len());
    let mut original_logits = Vec::with_capacity(rows.len());
    for (s, t, o) in rows {
        samples.push(s);
        true_probs.push(t);
        original_logits.push(o);
    }
    Ok(SynthData {
        dataset: Dataset::new(k, spec.types(), samples)?,
        true_probs,
        original_logits,
    })
}

/// The constant prediction of the marginal-predictor example.
pub const MARGINAL_PREDICTION: [f64; 3] = [0.5, 0.3, 0.2];
/// Label distribution behind the marginal predictor.
pub const MARGINAL_LABELS: [f64; 3] = [0.5, 0.25, 0.25];

/// A useless constant predictor whose ECE nonetheless tends to zero.
pub fn marginal_predictor(samples: usize, seed: u64) -> Result<(Vec<ProbVector>, Vec<usize>)> {
    if samples < 1 {
        return Err(Error::invalid("marginal predictor needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = ProbVector::new(MARGINAL_PREDICTION.to_vec())?;
    let labels = (0..samples)
        .map(|_| sample_categorical(&mut rng, &MARGINAL_LABELS))
        .collect();
    Ok((vec![pred; samples], labels))
}
