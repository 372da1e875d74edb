//! Scoring rules and top-label calibration metrics.
//!
//! All scores take the predicted class as the argmax of each vector (lowest
//! index on ties) and `o^j = 1` when that class equals the label.
//!
//! Binning uses `M` equal-width bins over `[0, 1]`; bin `i` (0-based) holds
//! confidences in `(i/M, (i+1)/M]` and confidence exactly `0` goes to the
//! first bin. Histogram binning and isotonic lookup use the same rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::ProbVector;

pub const DEFAULT_BINS: usize = 15;

/// Lower clamp on the true-class probability before taking the logarithm.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean top confidence of the bin members, `0` for an empty bin.
    pub confidence: f64,
    /// Fraction of correct members, `0` for an empty bin.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let mut edges: Vec<f64> = self.bins.iter().map(|b| b.lower).collect();
        if let Some(last) = self.bins.last() {
            edges.push(last.upper);
        }
        edges
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub brier: f64,
    pub mc_brier: f64,
    pub ece: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub reliability: ReliabilityTable,
}

/// Equal-width bin edges `0 = a_0 < … < a_M = 1`.
pub fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

/// Bin index of `value` under the `(a_{i-1}, a_i]` rule with `0` in the first bin.
pub fn bin_index(value: f64, bins: usize) -> usize {
    if value <= 0.0 {
        return 0;
    }
    let edge = |i: usize| i as f64 / bins as f64;
    let mut idx = ((value * bins as f64).ceil() as usize).clamp(1, bins) - 1;
    // Float rounding in the product can land one bin off near an edge.
    while idx > 0 && value <= edge(idx) {
        idx -= 1;
    }
    while idx + 1 < bins && value > edge(idx + 1) {
        idx += 1;
    }
    idx
}

fn check_inputs(preds: &[ProbVector], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    for (j, (p, &y)) in preds.iter().zip(labels).enumerate() {
        if y >= p.len() {
            return Err(Error::invalid(format!(
                "label {y} of sample {j} out of range for k = {}",
                p.len()
            )));
        }
    }
    Ok(())
}

fn mean_of(preds: &[ProbVector], labels: &[usize], term: impl Fn(&ProbVector, usize) -> f64) -> f64 {
    let total: f64 = preds.iter().zip(labels).map(|(p, &y)| term(p, y)).sum();
    total / preds.len() as f64
}

fn correct(p: &ProbVector, label: usize) -> f64 {
    if p.top_class() == label {
        1.0
    } else {
        0.0
    }
}

/// Top-label Brier score: mean of `(max p − o)^2`.
pub fn brier(preds: &[ProbVector], labels: &[usize]) -> Result<f64> {
    check_inputs(preds, labels)?;
    Ok(mean_of(preds, labels, |p, y| {
        let d = p.confidence() - correct(p, y);
        d * d
    }))
}

/// Multi-class Brier score: mean squared distance to the one-hot label.
pub fn mc_brier(preds: &[ProbVector], labels: &[usize]) -> Result<f64> {
    check_inputs(preds, labels)?;
    Ok(mean_of(preds, labels, |p, y| {
        p.values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = v - if i == y { 1.0 } else { 0.0 };
                d * d
            })
            .sum()
    }))
}

pub fn nll(preds: &[ProbVector], labels: &[usize]) -> Result<f64> {
    check_inputs(preds, labels)?;
    Ok(mean_of(preds, labels, |p, y| -p.get(y).max(NLL_FLOOR).ln()))
}

pub fn accuracy(preds: &[ProbVector], labels: &[usize]) -> Result<f64> {
    check_inputs(preds, labels)?;
    Ok(mean_of(preds, labels, correct))
}

/// Builds the reliability table over `bins` equal-width confidence bins.
pub fn reliability(preds: &[ProbVector], labels: &[usize], bins: usize) -> Result<ReliabilityTable> {
    if bins < 1 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    check_inputs(preds, labels)?;
    let mut counts = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for (p, &y) in preds.iter().zip(labels) {
        let c = p.confidence();
        let b = bin_index(c, bins);
        counts[b] += 1;
        conf_sum[b] += c;
        acc_sum[b] += correct(p, y);
    }
    let edges = bin_edges(bins);
    let bins = (0..bins)
        .map(|i| {
            let n = counts[i];
            let (confidence, accuracy) = if n == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[i] / n as f64, acc_sum[i] / n as f64)
            };
            ReliabilityBin {
                lower: edges[i],
                upper: edges[i + 1],
                count: n,
                confidence,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityTable { bins })
}

/// Expected calibration error with `bins` equal-width bins.
pub fn ece(preds: &[ProbVector], labels: &[usize], bins: usize) -> Result<(f64, ReliabilityTable)> {
    let table = reliability(preds, labels, bins)?;
    let n = preds.len() as f64;
    let value = table
        .bins
        .iter()
        .map(|b| b.count as f64 / n * (b.confidence - b.accuracy).abs())
        .sum();
    Ok((value, table))
}

/// Every metric at once.
pub fn evaluate(preds: &[ProbVector], labels: &[usize], bins: usize) -> Result<CalibrationReport> {
    let (ece, reliability) = ece(preds, labels, bins)?;
    Ok(CalibrationReport {
        brier: brier(preds, labels)?,
        mc_brier: mc_brier(preds, labels)?,
        ece,
        nll: nll(preds, labels)?,
        accuracy: accuracy(preds, labels)?,
        reliability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<ProbVector>, Vec<usize>) {
        let preds = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                pv(&raw.iter().map(|v| v / s).collect::<Vec<_>>())
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        (preds, labels)
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[pv(&[1.0, 0.0])], &[0]).unwrap(), 0.0);
        assert!((brier(&[pv(&[0.5, 0.5])], &[1]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mc_brier_examples() {
        assert_eq!(mc_brier(&[pv(&[0.0, 1.0, 0.0])], &[1]).unwrap(), 0.0);
        let u = pv(&[1.0 / 3.0; 3]);
        for y in 0..3 {
            assert!((mc_brier(&[u.clone()], &[y]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll(&[pv(&[0.0, 1.0])], &[1]).unwrap(), 0.0);
        assert!((nll(&[pv(&[0.25; 4])], &[3]).unwrap() - 4f64.ln()).abs() < 1e-15);
        // log(0) is clamped.
        assert!((nll(&[pv(&[1.0, 0.0])], &[1]).unwrap() + NLL_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        let preds = vec![pv(&[0.9, 0.1]), pv(&[0.2, 0.8])];
        assert_eq!(accuracy(&preds, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&preds, &[1, 0]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (preds, labels) = random_batch(&mut rng, 97, 4);
        let mut hits = 0;
        for (p, &y) in preds.iter().zip(&labels) {
            if p.top_class() == y {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&preds, &labels).unwrap(), hits as f64 / 97.0);
    }

    #[test]
    fn ece_examples() {
        let preds = vec![pv(&[1.0, 0.0]), pv(&[0.0, 1.0])];
        assert_eq!(ece(&preds, &[0, 1], 15).unwrap().0, 0.0);
        let (e, table) = ece(&[pv(&[0.7, 0.3])], &[1], 15).unwrap();
        assert!((e - 0.7).abs() < 1e-15);
        assert_eq!(table.total(), 1);
    }

    #[test]
    fn input_errors() {
        assert!(brier(&[], &[]).is_err());
        assert!(mc_brier(&[pv(&[0.5, 0.5])], &[0, 1]).is_err());
        assert!(nll(&[pv(&[0.5, 0.5])], &[2]).is_err());
        assert!(ece(&[pv(&[0.5, 0.5])], &[0], 0).is_err());
    }

    #[test]
    fn bin_assignment_follows_half_open_rule() {
        assert_eq!(bin_index(0.0, 15), 0);
        assert_eq!(bin_index(1.0 / 15.0, 15), 0);
        assert_eq!(bin_index(1.0 / 15.0 + 1e-12, 15), 1);
        assert_eq!(bin_index(1.0, 15), 14);
        assert_eq!(bin_index(0.2, 15), 2);
        let edges = bin_edges(15);
        for i in 1..15 {
            assert_eq!(bin_index(edges[i], 15), i - 1);
        }
    }

    #[test]
    fn empty_bins_reported_as_zero() {
        let (_, table) = ece(&[pv(&[0.95, 0.05])], &[0], 15).unwrap();
        assert_eq!(table.bin_count(), 15);
        for b in &table.bins[..14] {
            assert_eq!((b.count, b.confidence, b.accuracy), (0, 0.0, 0.0));
        }
        let edges = table.edges();
        assert_eq!(edges.first(), Some(&0.0));
        assert_eq!(edges.last(), Some(&1.0));
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ece_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (preds, labels) = random_batch(&mut rng, 300, 3);
        let (base, _) = ece(&preds, &labels, 15).unwrap();
        let mut idx: Vec<usize> = (0..300).collect();
        idx.shuffle(&mut rng);
        let p2: Vec<_> = idx.iter().map(|&i| preds[i].clone()).collect();
        let l2: Vec<_> = idx.iter().map(|&i| labels[i]).collect();
        let (perm, _) = ece(&p2, &l2, 15).unwrap();
        assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn scores_combine_linearly_over_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (pa, la) = random_batch(&mut rng, 37, 4);
        let (pb, lb) = random_batch(&mut rng, 81, 4);
        let pc: Vec<_> = pa.iter().chain(&pb).cloned().collect();
        let lc: Vec<_> = la.iter().chain(&lb).copied().collect();
        for score in [brier, mc_brier, nll] {
            let whole = score(&pc, &lc).unwrap() * 118.0;
            let parts = score(&pa, &la).unwrap() * 37.0 + score(&pb, &lb).unwrap() * 81.0;
            assert!((whole - parts).abs() < 1e-9);
        }
    }

    #[test]
    fn brier_scores_are_proper_on_two_classes() {
        // Labels drawn with P(class 0) = 0.3; the expected score over a grid
        // of constant forecasts is minimized at the generating vector.
        let truth = 0.3;
        for score in [brier, mc_brier] {
            let expected = |q: f64| {
                let p = pv(&[q, 1.0 - q]);
                truth * score(&[p.clone()], &[0]).unwrap()
                    + (1.0 - truth) * score(&[p], &[1]).unwrap()
            };
            let best = (0..=100)
                .map(|i| i as f64 / 100.0)
                .min_by(|a, b| expected(*a).total_cmp(&expected(*b)))
                .unwrap();
            assert!((best - truth).abs() < 1e-12);
        }
    }
}
