//! Post-hoc calibration baselines: temperature scaling, isotonic regression
//! and histogram binning.
//!
//! None of them changes the predicted class. Temperature scaling divides the
//! logits by a positive scalar, which keeps their order. The binning methods
//! only remap the top confidence; the remaining mass is spread over the other
//! classes in proportion to their original values and capped strictly below
//! the new top value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bin_edges, DEFAULT_BINS};
use crate::simplex::{softmax_slice, LogitVector, ProbVector};

/// Search range for the fitted temperature.
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
/// Bracket width on `ln T` at which the golden-section search stops.
pub const TEMPERATURE_TOLERANCE: f64 = 1e-4;

/// Gap kept between the remapped top confidence and every other class.
const TIE_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    temperature: f64,
}

impl TemperatureParams {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature {temperature} must be positive")));
        }
        Ok(TemperatureParams { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

fn scaled_nll(logits: &[LogitVector], labels: &[usize], temperature: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let scaled: Vec<f64> = z.values().iter().map(|v| v / temperature).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - scaled[y]
        })
        .sum();
    total / logits.len() as f64
}

fn check_labeled<T>(items: &[T], labels: &[usize]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::invalid("no samples to fit"));
    }
    if items.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} labels",
            items.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Temperature minimizing the NLL of `softmax(z / T)`.
///
/// Golden-section search over `ln T` on [`TEMPERATURE_RANGE`]; the NLL is
/// convex in `1/T`, hence unimodal in `ln T`.
pub fn fit_temperature(logits: &[LogitVector], labels: &[usize]) -> Result<TemperatureParams> {
    check_labeled(logits, labels)?;
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::invalid(format!("label {y} out of range for k = {}", z.len())));
        }
    }
    let objective = |log_t: f64| scaled_nll(logits, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > TEMPERATURE_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    // A minimum on the boundary is only approached from the inside.
    let candidates = [
        ((a + b) / 2.0, objective((a + b) / 2.0)),
        (TEMPERATURE_RANGE.0.ln(), objective(TEMPERATURE_RANGE.0.ln())),
        (TEMPERATURE_RANGE.1.ln(), objective(TEMPERATURE_RANGE.1.ln())),
    ];
    let best = candidates
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("nonempty");
    TemperatureParams::new(best.0.exp())
}

pub fn apply_temperature(logits: &[LogitVector], params: &TemperatureParams) -> Vec<ProbVector> {
    logits
        .iter()
        .map(|z| {
            let scaled: Vec<f64> = z.values().iter().map(|v| v / params.temperature).collect();
            ProbVector::from_raw(softmax_slice(&scaled))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinningMethod {
    Histogram,
    Isotonic,
}

impl BinningMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BinningMethod::Histogram => "histogram",
            BinningMethod::Isotonic => "isotonic",
        }
    }
}

/// A step function over `[0, 1]`: `values[i]` applies on `(edges[i], edges[i+1]]`
/// and confidence `0` maps to `values[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningParams {
    method: BinningMethod,
    edges: Vec<f64>,
    values: Vec<f64>,
}

impl BinningParams {
    pub fn new(method: BinningMethod, edges: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || edges.len() != values.len() + 1 {
            return Err(Error::invalid(format!(
                "{} edges do not bound {} bins",
                edges.len(),
                values.len()
            )));
        }
        if edges[0] != 0.0 || edges[edges.len() - 1] != 1.0 {
            return Err(Error::invalid("bin edges must run from 0 to 1"));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("bin edges must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("bin values must lie in [0, 1]"));
        }
        if method == BinningMethod::Isotonic && values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("isotonic values must be non-decreasing"));
        }
        Ok(BinningParams {
            method,
            edges,
            values,
        })
    }

    pub fn method(&self) -> BinningMethod {
        self.method
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bin_count(&self) -> usize {
        self.values.len()
    }

    /// Index of the bin holding `confidence`.
    pub fn bin_of(&self, confidence: f64) -> usize {
        let first_not_below = self.edges.partition_point(|&e| e < confidence);
        first_not_below.clamp(1, self.values.len()) - 1
    }

    pub fn map(&self, confidence: f64) -> f64 {
        self.values[self.bin_of(confidence)]
    }
}

fn check_scores(confidences: &[f64], correct: &[bool]) -> Result<()> {
    if confidences.is_empty() {
        return Err(Error::invalid("no confidences to fit"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid("confidences must lie in [0, 1]"));
    }
    Ok(())
}

/// Equal-width histogram binning; empty bins map to their midpoint.
pub fn fit_histogram_binning(confidences: &[f64], correct: &[bool], bins: usize) -> Result<BinningParams> {
    check_scores(confidences, correct)?;
    if bins < 1 {
        return Err(Error::invalid("histogram binning needs at least one bin"));
    }
    let edges = bin_edges(bins);
    let mut hits = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    let probe = BinningParams {
        method: BinningMethod::Histogram,
        edges: edges.clone(),
        values: vec![0.0; bins],
    };
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = probe.bin_of(c);
        counts[b] += 1;
        hits[b] += usize::from(ok);
    }
    let values = (0..bins)
        .map(|i| {
            if counts[i] == 0 {
                (edges[i] + edges[i + 1]) / 2.0
            } else {
                hits[i] as f64 / counts[i] as f64
            }
        })
        .collect();
    BinningParams::new(BinningMethod::Histogram, edges, values)
}

/// Histogram binning with the default 15 bins.
pub fn fit_histogram_binning_default(confidences: &[f64], correct: &[bool]) -> Result<BinningParams> {
    fit_histogram_binning(confidences, correct, DEFAULT_BINS)
}

/// A pooled run of sorted points.
#[derive(Debug, Clone, Copy)]
struct Block {
    sum: f64,
    weight: f64,
    /// Smallest confidence in the block.
    start: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.weight
    }

    fn absorb(&mut self, other: Block) {
        self.sum += other.sum;
        self.weight += other.weight;
    }
}

fn prev_float(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    f64::from_bits(x.to_bits() - 1)
}

/// Pool-adjacent-violators over `(confidence, correct)` pairs.
///
/// Returns the least-squares non-decreasing step function of correctness
/// against confidence. Block `b` covers confidences from its smallest
/// training point up to just below the next block's smallest point, so
/// queries between training points take the value of the block on the left.
pub fn fit_isotonic(confidences: &[f64], correct: &[bool]) -> Result<BinningParams> {
    check_scores(confidences, correct)?;
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));

    let mut blocks: Vec<Block> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        // Equal confidences must share one value.
        let x = confidences[order[i]];
        let mut point = Block {
            sum: 0.0,
            weight: 0.0,
            start: x,
        };
        while i < order.len() && confidences[order[i]] == x {
            point.sum += f64::from(u8::from(correct[order[i]]));
            point.weight += 1.0;
            i += 1;
        }
        blocks.push(point);
        while blocks.len() >= 2 {
            let n = blocks.len();
            if blocks[n - 2].mean() <= blocks[n - 1].mean() {
                break;
            }
            let last = blocks.pop().expect("len >= 2");
            blocks[n - 2].absorb(last);
        }
    }

    let mut edges = vec![0.0];
    let mut kept: Vec<Block> = Vec::with_capacity(blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        if b > 0 {
            let edge = prev_float(block.start);
            if edge <= *edges.last().expect("nonempty") {
                // No representable edge between the two blocks.
                kept.last_mut().expect("b > 0").absorb(*block);
                continue;
            }
            edges.push(edge);
        }
        kept.push(*block);
    }
    edges.push(1.0);
    let values = kept.iter().map(|b| b.mean().clamp(0.0, 1.0)).collect();
    BinningParams::new(BinningMethod::Isotonic, edges, values)
}

/// Replaces the top confidence `t` of `p` by `target`, keeping the class.
fn remap_top(p: &ProbVector, target: f64) -> ProbVector {
    let k = p.len();
    if k == 1 {
        return p.clone();
    }
    let top_class = p.top_class();
    // The top class can only stay on top if it holds more than 1/k.
    let t = target.clamp(1.0 / k as f64 + TIE_GAP, 1.0);
    let cap = t - TIE_GAP;

    let mut out = vec![0.0; k];
    let mut free: Vec<usize> = (0..k).filter(|&c| c != top_class).collect();
    let mut remaining = 1.0 - t;
    loop {
        let weight: f64 = free.iter().map(|&c| p.get(c)).sum();
        let share = |c: usize| {
            if weight > 0.0 {
                remaining * p.get(c) / weight
            } else {
                remaining / free.len() as f64
            }
        };
        let over: Vec<usize> = free.iter().copied().filter(|&c| share(c) > cap).collect();
        if over.is_empty() {
            for &c in &free {
                out[c] = share(c);
            }
            break;
        }
        for &c in &over {
            out[c] = cap;
            remaining -= cap;
        }
        free.retain(|c| !over.contains(c));
        if free.is_empty() {
            break;
        }
    }
    out[top_class] = 1.0 - out.iter().sum::<f64>();
    ProbVector::from_raw(out)
}

/// Remaps the top confidence of each prediction through the step function.
pub fn apply_binning(preds: &[ProbVector], params: &BinningParams) -> Vec<ProbVector> {
    preds
        .iter()
        .map(|p| remap_top(p, params.map(p.confidence())))
        .collect()
}
