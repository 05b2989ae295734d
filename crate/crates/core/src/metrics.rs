//! Utility and invariance metrics, all in percentage points.
//!
//! A [`BinPartition`] splits an evaluation set into subpopulations. The
//! accuracy gap is the spread between the best and worst subpopulation, and
//! the compound accuracy improvement weighs a gap reduction against a change
//! in overall accuracy relative to a baseline.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::task::Classifier;
use crate::world::{BinPartition, Image};
use crate::{Error, Result};

/// Default minimum number of samples for a bin to count.
pub const DEFAULT_MIN_COUNT: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub acc: f64,
    pub acc_gap: f64,
    pub acc_min: f64,
    /// Accuracy per bin; 0 for empty bins.
    pub per_bin_acc: Vec<f64>,
    pub bin_counts: Vec<usize>,
    /// Bins with fewer than `min_count` samples, left out of gap and minimum.
    pub excluded: Vec<bool>,
}

impl MetricBundle {
    pub fn included_accuracies(&self) -> Vec<f64> {
        self.per_bin_acc.iter().zip(&self.excluded).filter(|(_, e)| !**e).map(|(a, _)| *a).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracies {
    pub per_bin_acc: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub excluded: Vec<bool>,
}

/// Accuracy of each bin of `partition`.
pub fn per_bin_accuracy(predictions: &[usize], labels: &[usize], partition: &BinPartition, min_count: usize) -> Result<BinAccuracies> {
    if predictions.len() != labels.len() || labels.len() != partition.assignment.len() {
        return Err(Error::input(alloc::format!(
            "misaligned inputs: {} predictions, {} labels, {} assignments",
            predictions.len(),
            labels.len(),
            partition.assignment.len()
        )));
    }
    let n_bins = partition.n_bins();
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for ((p, y), &b) in predictions.iter().zip(labels).zip(&partition.assignment) {
        counts[b] += 1;
        if p == y {
            hits[b] += 1;
        }
    }
    let excluded: Vec<bool> = counts.iter().map(|&c| c < min_count.max(1)).collect();
    if excluded.iter().all(|e| *e) {
        return Err(Error::eval(alloc::format!("all {n_bins} bins have fewer than {min_count} samples")));
    }
    let per_bin_acc = hits.iter().zip(&counts).map(|(&h, &c)| if c == 0 { 0.0 } else { 100.0 * h as f64 / c as f64 }).collect();
    Ok(BinAccuracies { per_bin_acc, bin_counts: counts, excluded })
}

/// Best minus worst bin accuracy.
pub fn acc_gap(per_bin: &[f64]) -> Result<f64> {
    if per_bin.len() < 2 {
        return Err(Error::eval(alloc::format!("accuracy gap needs at least two bins, got {}", per_bin.len())));
    }
    let max = per_bin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_bin.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Accuracy and gap of one model on one partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccGapPair {
    pub acc: f64,
    pub acc_gap: f64,
}

impl From<&MetricBundle> for AccGapPair {
    fn from(b: &MetricBundle) -> Self {
        AccGapPair { acc: b.acc, acc_gap: b.acc_gap }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaiInputs {
    pub baseline: AccGapPair,
    pub intervened: AccGapPair,
    pub lambda: f64,
}

impl CaiInputs {
    pub fn new(baseline: AccGapPair, intervened: AccGapPair, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::input(alloc::format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(CaiInputs { baseline, intervened, lambda })
    }
}

/// Compound accuracy improvement:
/// `λ·(gap_base − gap_int) + (1 − λ)·(acc_int − acc_base)`.
pub fn cai(inputs: &CaiInputs) -> f64 {
    let l = inputs.lambda;
    l * (inputs.baseline.acc_gap - inputs.intervened.acc_gap) + (1.0 - l) * (inputs.intervened.acc - inputs.baseline.acc)
}

/// `(CAI_0.5, CAI_0.75)` of `intervened` against `baseline`.
pub fn cai_pair(baseline: AccGapPair, intervened: AccGapPair) -> (f64, f64) {
    let at = |lambda| cai(&CaiInputs { baseline, intervened, lambda });
    (at(0.5), at(0.75))
}

/// Full bundle from hard predictions.
pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], partition: &BinPartition, min_count: usize) -> Result<MetricBundle> {
    let bins = per_bin_accuracy(predictions, labels, partition, min_count)?;
    let included: Vec<f64> = bins.per_bin_acc.iter().zip(&bins.excluded).filter(|(_, e)| !**e).map(|(a, _)| *a).collect();
    let gap = acc_gap(&included)?;
    let acc_min = included.iter().copied().fold(f64::INFINITY, f64::min);
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(MetricBundle {
        acc: 100.0 * hits as f64 / labels.len().max(1) as f64,
        acc_gap: gap,
        acc_min,
        per_bin_acc: bins.per_bin_acc,
        bin_counts: bins.bin_counts,
        excluded: bins.excluded,
    })
}

/// Evaluates a classifier on labeled images split by `partition`.
pub fn evaluate(clf: &Classifier, images: &[&Image], labels: &[usize], partition: &BinPartition, min_count: usize) -> Result<MetricBundle> {
    let predictions = clf.predict_labels(images)?;
    evaluate_predictions(&predictions, labels, partition, min_count)
}

/// Pearson correlation of two equal-length samples; 0 when either is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::input("pearson needs two equal-length samples of size >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}
