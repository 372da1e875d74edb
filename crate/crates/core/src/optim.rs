//! Fitting the fusion weights and `ω*` by minimizing NLL with Adam.
//!
//! Training evaluates the blend at the fixed weight `ω = clamp(ω*, 0, 1)`;
//! the per-sample downward search is only applied at inference since it is
//! piecewise constant in the parameters. `ω*` is stored unconstrained while
//! fitting. Its gradient is exact inside `[0, 1]`; outside, only a gradient
//! whose descent step points back into the interval is kept.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atta::{blend, AttaParams, MattaParams, VattaParams, Variant};
use crate::error::{Error, Result};
use crate::metrics::NLL_FLOOR;
use crate::simplex::{softmax_slice, Dataset, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 500,
            batch_size: 500,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], config: &FitConfig) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grad.len(), self.first.len());
        self.step += 1;
        let (b1, b2) = (config.adam_beta1, config.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
}

/// Parameters during fitting; `omega_star` may leave `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub variant: Variant,
    pub k: usize,
    pub m: usize,
    /// Row-major `k × m` for the matrix variant, length `m` for the vector one.
    pub weights: Vec<f64>,
    pub omega_star: f64,
}

impl TrainParams {
    /// Weights all one and `ω* = 1`.
    pub fn initial(variant: Variant, k: usize, m: usize) -> Self {
        let n = match variant {
            Variant::Matrix => k * m,
            Variant::Vector => m,
        };
        TrainParams {
            variant,
            k,
            m,
            weights: vec![1.0; n],
            omega_star: 1.0,
        }
    }

    pub fn from_params(params: &AttaParams, k: usize) -> Self {
        match params {
            AttaParams::Matrix(p) => TrainParams {
                variant: Variant::Matrix,
                k: p.classes(),
                m: p.types(),
                weights: p.weights().to_vec(),
                omega_star: p.omega_star(),
            },
            AttaParams::Vector(p) => TrainParams {
                variant: Variant::Vector,
                k,
                m: p.types(),
                weights: p.weights().to_vec(),
                omega_star: p.omega_star(),
            },
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega_star.clamp(0.0, 1.0)
    }

    fn weight(&self, class: usize, aug: usize) -> f64 {
        match self.variant {
            Variant::Matrix => self.weights[class * self.m + aug],
            Variant::Vector => self.weights[aug],
        }
    }

    /// Inference parameters, with `ω*` clamped into `[0, 1]`.
    pub fn to_params(&self) -> Result<AttaParams> {
        Ok(match self.variant {
            Variant::Matrix => {
                AttaParams::Matrix(MattaParams::new(self.k, self.m, self.weights.clone(), self.omega())?)
            }
            Variant::Vector => AttaParams::Vector(VattaParams::new(self.weights.clone(), self.omega())?),
        })
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.omega_star);
        v
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&flat[..n]);
        self.omega_star = flat[n];
    }

    fn check_shape(&self, sample: &Sample) -> Result<()> {
        let expected = match self.variant {
            Variant::Matrix => self.k * self.m,
            Variant::Vector => self.m,
        };
        if sample.z().types() != self.m
            || (self.variant == Variant::Matrix && sample.classes() != self.k)
            || self.weights.len() != expected
        {
            return Err(Error::invalid("parameters do not match the batch shape"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub weights: Vec<f64>,
    pub omega_star: f64,
}

impl LossGradient {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.omega_star);
        v
    }
}

/// Loss of one sample and its gradient (weights then the blend weight `ω`).
fn sample_terms(sample: &Sample, params: &TrainParams, with_grad: bool) -> (f64, Vec<f64>, f64) {
    let z = sample.z();
    let (k, m) = (z.classes(), z.types());
    let y = sample.label();
    let omega = params.omega();

    let softmaxes: Vec<Vec<f64>> = z
        .columns()
        .enumerate()
        .map(|(i, col)| {
            let scaled: Vec<f64> = (0..k).map(|c| params.weight(c, i) * col[c]).collect();
            softmax_slice(&scaled)
        })
        .collect();
    let mut q = vec![0.0; k];
    for s in &softmaxes {
        q.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
    q.iter_mut().for_each(|v| *v /= m as f64);

    let p_y = blend(sample.p0(), &q, omega).get(y);
    let loss = -p_y.max(NLL_FLOOR).ln();
    let mut grad_w = vec![0.0; params.weights.len()];
    if !with_grad || p_y < NLL_FLOOR {
        return (loss, grad_w, 0.0);
    }

    let dp = -1.0 / p_y;
    let grad_omega = dp * (q[y] - sample.p0().get(y));
    let scale = dp * omega / m as f64;
    for (i, s) in softmaxes.iter().enumerate() {
        let col = z.column(i);
        for c in 0..k {
            let delta = if c == y { 1.0 } else { 0.0 };
            let du = scale * s[y] * (delta - s[c]);
            match params.variant {
                Variant::Matrix => grad_w[c * m + i] += du * col[c],
                Variant::Vector => grad_w[i] += du * col[c],
            }
        }
    }
    (loss, grad_w, grad_omega)
}

fn batch_terms<'a, I>(samples: I, params: &TrainParams, with_grad: bool) -> Result<(f64, LossGradient)>
where
    I: IndexedParallelIterator<Item = &'a Sample>,
{
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("batch is empty"));
    }
    let terms: Vec<(f64, Vec<f64>, f64)> = samples
        .map(|s| {
            params.check_shape(s)?;
            Ok(sample_terms(s, params, with_grad))
        })
        .collect::<Result<_>>()?;

    // Ordered reduction keeps results independent of the thread schedule.
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; params.weights.len()];
    let mut grad_omega = 0.0;
    for (l, gw, go) in &terms {
        loss += l;
        grad_w.iter_mut().zip(gw).for_each(|(a, b)| *a += b);
        grad_omega += go;
    }
    let nf = n as f64;
    grad_w.iter_mut().for_each(|g| *g /= nf);
    grad_omega /= nf;

    let raw = params.omega_star;
    let passes = if (0.0..=1.0).contains(&raw) {
        true
    } else if raw > 1.0 {
        grad_omega > 0.0
    } else {
        grad_omega < 0.0
    };
    Ok((
        loss / nf,
        LossGradient {
            weights: grad_w,
            omega_star: if passes { grad_omega } else { 0.0 },
        },
    ))
}

/// Mean NLL of the fused predictions at `ω = clamp(ω*, 0, 1)`.
pub fn training_loss(batch: &[Sample], params: &TrainParams) -> Result<f64> {
    batch_terms(batch.par_iter(), params, false).map(|(l, _)| l)
}

/// Analytic gradient of [`training_loss`].
pub fn loss_gradient(batch: &[Sample], params: &TrainParams) -> Result<LossGradient> {
    batch_terms(batch.par_iter(), params, true).map(|(_, g)| g)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters of the epoch with the lowest loss.
    pub params: AttaParams,
    /// Full-dataset training loss after each epoch.
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
}

/// Fits the fusion parameters on `dataset` with mini-batch Adam.
pub fn fit(dataset: &Dataset, variant: Variant, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot fit on an empty dataset"));
    }
    let samples = dataset.samples();
    let mut params = TrainParams::initial(variant, dataset.classes(), dataset.types());
    let mut flat = params.flat();
    let mut adam = AdamState::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, TrainParams)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = batch_terms(batch.par_iter().map(|&i| &samples[i]), &params, true)?;
            adam.update(&mut flat, &grad.flat(), config);
            params.set_flat(&flat);
        }
        let loss = training_loss(samples, &params)?;
        if !loss.is_finite() {
            return Err(Error::invalid(format!("training loss diverged at epoch {epoch}")));
        }
        history.push(loss);
        if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
            best = Some((loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(FitResult {
        params: best_params.to_params()?,
        loss_history: history,
        best_epoch,
    })
}
