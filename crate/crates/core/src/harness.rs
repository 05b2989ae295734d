//! Evaluation settings: the sensitivity scan over latent codes, the
//! unsupervised (synthetic code bins) and generalization (real factor bins)
//! settings, and ACAI grid selection on a factor-labeled validation split.
//!
//! Everything here is pure computation over already-trained models; the
//! staged, checkpointed pipeline lives in the workbench crate.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::color::compute_brightness;
use crate::generative::{sample_synthetic, CodeDistribution, GeneratorHandle, SyntheticSample, CODE_SWEEP};
use crate::interventions::InterventionKind;
use crate::metrics::{cai_pair, evaluate_predictions, AccGapPair, MetricBundle};
use crate::rng::{derive_seed, streams};
use crate::task::Classifier;
use crate::world::{bin_assign, BinPartition, Image, Interval, Sample};
use crate::{Error, Result};

/// Bins per partition, for both code and real-factor binning.
pub const N_BINS: usize = 10;
/// Synthetic evaluation set size as a multiple of the test-set size.
pub const SYNTHETIC_EVAL_MULTIPLIER: usize = 10;

// ---------------------------------------------------------------------------
// Splits

/// Index sets of one dataset; must be pairwise disjoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Consecutive index ranges `[0, train)`, `[train, train+val)`, ….
    pub fn contiguous(train: usize, validation: usize, test: usize) -> Self {
        Splits {
            train: (0..train).collect(),
            validation: (train..train + validation).collect(),
            test: (train + validation..train + validation + test).collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut all: Vec<(usize, &str)> = self
            .train
            .iter()
            .map(|&i| (i, "train"))
            .chain(self.validation.iter().map(|&i| (i, "validation")))
            .chain(self.test.iter().map(|&i| (i, "test")))
            .collect();
        all.sort_unstable();
        for w in all.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::input(alloc::format!(
                    "sample {} appears in both the {} and {} splits",
                    w[0].0, w[0].1, w[1].1
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Sensitivity scan

/// Synthetic evaluation images carrying the codes that generated them.
#[derive(Clone, Debug)]
pub struct SyntheticEval {
    pub samples: Vec<SyntheticSample>,
}

impl SyntheticEval {
    /// `10 × test_size` samples with the test label distribution and
    /// uniformly drawn codes.
    pub fn new(gen: &GeneratorHandle, test_label_dist: &[f64], test_size: usize, seed: u64) -> Result<Self> {
        if test_size == 0 {
            return Err(Error::input("test size must be positive"));
        }
        let n = SYNTHETIC_EVAL_MULTIPLIER * test_size;
        let samples =
            sample_synthetic(gen, n, test_label_dist, CodeDistribution::UniformEval, derive_seed(seed, streams::EVAL))?;
        Ok(SyntheticEval { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Ten equal-width bins of `c_i` over `[−2, 2]`.
    pub fn partition(&self, i: usize) -> Result<BinPartition> {
        if self.samples.iter().any(|s| i >= s.code.c.len()) {
            return Err(Error::input(alloc::format!("code index {i} outside the synthetic codes")));
        }
        let values: Vec<f64> = self.samples.iter().map(|s| s.code.c[i]).collect();
        Ok(bin_assign(&values, N_BINS, Interval { lo: -CODE_SWEEP, hi: CODE_SWEEP })?.with_factor_id(code_name(i)))
    }
}

/// Display name of a code, 1-based like the table rows.
pub fn code_name(i: usize) -> String {
    alloc::format!("C{}", i + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code: usize,
    pub bundle: MetricBundle,
}

/// Baseline metrics per code, sorted by descending gap (ties: lower index).
pub fn rank_codes(predictions: &[usize], eval: &SyntheticEval, d_c: usize, min_count: usize) -> Result<Vec<RankedCode>> {
    let labels = eval.labels();
    let mut ranked = (0..d_c)
        .map(|code| Ok(RankedCode { code, bundle: evaluate_predictions(predictions, &labels, &eval.partition(code)?, min_count)? }))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.bundle.acc_gap.total_cmp(&a.bundle.acc_gap).then(a.code.cmp(&b.code)));
    Ok(ranked)
}

pub fn sensitivity_scan(
    baseline: &Classifier,
    gen: &GeneratorHandle,
    test_label_dist: &[f64],
    test_size: usize,
    seed: u64,
    min_count: usize,
) -> Result<(Vec<RankedCode>, SyntheticEval)> {
    let eval = SyntheticEval::new(gen, test_label_dist, test_size, seed)?;
    let predictions = baseline.predict_labels(&eval.images())?;
    Ok((rank_codes(&predictions, &eval, gen.meta().d_c, min_count)?, eval))
}

// ---------------------------------------------------------------------------
// Report rows

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    Unsupervised,
    Generalization,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Unsupervised => "Unsupervised",
            Setting::Generalization => "Generalization",
        }
    }
}

/// One table row: a classifier evaluated on one partition, with CAI against
/// the baseline on the same partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setting: Setting,
    /// `Base`, `DA-4`, `ACAI (DA-4)`, ….
    pub label: String,
    pub kind: Option<InterventionKind>,
    pub code: Option<usize>,
    /// Partition the row is evaluated on (code or real factor name).
    pub partition: String,
    pub bundle: MetricBundle,
    pub cai_05: f64,
    pub cai_075: f64,
}

impl ReportRow {
    pub fn is_baseline(&self) -> bool {
        self.kind.is_none()
    }
}

/// A trained intervened model ready for evaluation.
#[derive(Clone, Copy)]
pub struct Candidate<'a> {
    pub kind: InterventionKind,
    pub code: usize,
    pub classifier: &'a Classifier,
}

impl Candidate<'_> {
    pub fn label(&self) -> String {
        self.kind.label(self.code)
    }
}

/// Builds the baseline row followed by one row per set of predictions.
pub fn rows_from_predictions(
    setting: Setting,
    labels: &[usize],
    partition: &BinPartition,
    baseline: &[usize],
    intervened: &[(String, Option<(InterventionKind, usize)>, Vec<usize>)],
    min_count: usize,
) -> Result<Vec<ReportRow>> {
    let base = evaluate_predictions(baseline, labels, partition, min_count)?;
    let base_pair = AccGapPair::from(&base);
    let mut rows = vec![ReportRow {
        setting,
        label: "Base".to_string(),
        kind: None,
        code: None,
        partition: partition.factor_id.clone(),
        cai_05: 0.0,
        cai_075: 0.0,
        bundle: base,
    }];
    for (label, tag, preds) in intervened {
        let bundle = evaluate_predictions(preds, labels, partition, min_count)?;
        let (cai_05, cai_075) = cai_pair(base_pair, AccGapPair::from(&bundle));
        rows.push(ReportRow {
            setting,
            label: label.clone(),
            kind: tag.map(|t| t.0),
            code: tag.map(|t| t.1),
            partition: partition.factor_id.clone(),
            bundle,
            cai_05,
            cai_075,
        });
    }
    Ok(rows)
}

fn predict_all(candidates: &[Candidate<'_>], images: &[&Image]) -> Result<Vec<(String, Option<(InterventionKind, usize)>, Vec<usize>)>> {
    candidates
        .iter()
        .map(|c| Ok((c.label(), Some((c.kind, c.code)), c.classifier.predict_labels(images)?)))
        .collect()
}

/// Baseline and interventions on the synthetic set binned by `c_i`.
pub fn unsupervised_setting(
    baseline: &Classifier,
    candidates: &[Candidate<'_>],
    eval: &SyntheticEval,
    i: usize,
    min_count: usize,
) -> Result<Vec<ReportRow>> {
    let partition = eval.partition(i)?;
    let images = eval.images();
    let base = baseline.predict_labels(&images)?;
    rows_from_predictions(Setting::Unsupervised, &eval.labels(), &partition, &base, &predict_all(candidates, &images)?, min_count)
}

/// Where ground-truth factor values for real images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorSource {
    /// Manifest column; bins span the factor's declared range.
    Manifest { index: usize, name: String, range: Interval },
    /// Brightness measured from the pixels; bins span the validation
    /// min/max, frozen and reused on test.
    ExtractedBrightness,
}

impl FactorSource {
    pub fn name(&self) -> String {
        match self {
            FactorSource::Manifest { name, .. } => name.clone(),
            FactorSource::ExtractedBrightness => "measured_brightness".to_string(),
        }
    }

    pub fn values(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        match self {
            FactorSource::Manifest { index, .. } => samples
                .iter()
                .map(|s| {
                    s.factors.get(*index).copied().ok_or_else(|| Error::input(alloc::format!("sample has no factor {index}")))
                })
                .collect(),
            FactorSource::ExtractedBrightness => Ok(samples.iter().map(|s| compute_brightness(&s.image)).collect()),
        }
    }

    /// Bin range, fixed from the validation split where needed.
    pub fn range(&self, validation: &[&Sample]) -> Result<Interval> {
        match self {
            FactorSource::Manifest { range, .. } => Ok(*range),
            FactorSource::ExtractedBrightness => {
                let v = self.values(validation)?;
                if v.is_empty() {
                    return Err(Error::input("measured-factor bins need a validation split"));
                }
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Interval::new(lo, hi)
            }
        }
    }

    pub fn partition(&self, samples: &[&Sample], range: Interval) -> Result<BinPartition> {
        Ok(bin_assign(&self.values(samples)?, N_BINS, range)?.with_factor_id(self.name()))
    }
}

/// Baseline and interventions on real samples binned by a true factor. The
/// partition is computed once and shared by every row.
pub fn generalization_setting(
    baseline: &Classifier,
    candidates: &[Candidate<'_>],
    samples: &[&Sample],
    partition: &BinPartition,
    min_count: usize,
) -> Result<Vec<ReportRow>> {
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let base = baseline.predict_labels(&images)?;
    rows_from_predictions(Setting::Generalization, &labels, partition, &base, &predict_all(candidates, &images)?, min_count)
}

// ---------------------------------------------------------------------------
// ACAI

/// Validation result of one grid candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcaiGridRow {
    pub kind: InterventionKind,
    pub code: usize,
    pub acc: f64,
    pub acc_gap: f64,
    pub cai_05: f64,
    pub cai_075: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcaiSelection {
    pub kind: InterventionKind,
    pub code: usize,
    /// Position of the selected candidate in `grid`.
    pub index: usize,
    pub grid: Vec<AcaiGridRow>,
    pub baseline_validation: AccGapPair,
    pub criterion: String,
}

impl AcaiSelection {
    /// Row label, e.g. `ACAI (DA-4)`.
    pub fn label(&self) -> String {
        alloc::format!("ACAI ({})", self.kind.label(self.code))
    }
}

pub const ACAI_CRITERION: &str =
    "max validation CAI_0.5; ties: higher validation accuracy, then lower code index, then DA < AA < SC";

/// Ordering under which the greatest element is the ACAI choice.
pub fn acai_order(a: &AcaiGridRow, b: &AcaiGridRow) -> Ordering {
    a.cai_05
        .total_cmp(&b.cai_05)
        .then(a.acc.total_cmp(&b.acc))
        .then(b.code.cmp(&a.code))
        .then(b.kind.cmp(&a.kind))
}

/// Picks the candidate with the best validation CAI_0.5 against the
/// baseline's validation metrics.
pub fn acai_select(
    candidates: &[(InterventionKind, usize, AccGapPair)],
    baseline_validation: AccGapPair,
) -> Result<AcaiSelection> {
    if candidates.is_empty() {
        return Err(Error::input("ACAI grid is empty"));
    }
    let grid: Vec<AcaiGridRow> = candidates
        .iter()
        .map(|&(kind, code, v)| {
            let (cai_05, cai_075) = cai_pair(baseline_validation, v);
            AcaiGridRow { kind, code, acc: v.acc, acc_gap: v.acc_gap, cai_05, cai_075 }
        })
        .collect();
    let (index, best) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| acai_order(a.1, b.1))
        .expect("non-empty grid");
    Ok(AcaiSelection {
        kind: best.kind,
        code: best.code,
        index,
        baseline_validation,
        criterion: ACAI_CRITERION.to_string(),
        grid,
    })
}

/// The selected model's test row in the generalization table.
pub fn acai_row(selection: &AcaiSelection, baseline_test: &MetricBundle, test: MetricBundle, partition: &str) -> ReportRow {
    let (cai_05, cai_075) = cai_pair(AccGapPair::from(baseline_test), AccGapPair::from(&test));
    ReportRow {
        setting: Setting::Generalization,
        label: selection.label(),
        kind: Some(selection.kind),
        code: Some(selection.code),
        partition: partition.to_string(),
        bundle: test,
        cai_05,
        cai_075,
    }
}

// ---------------------------------------------------------------------------
// Report

/// One factor's tables: unsupervised rows on the synthetic code bins and
/// generalization rows on the real factor bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub code: usize,
    pub unsupervised: Vec<ReportRow>,
    pub generalization: Vec<ReportRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub real_factor: String,
    pub ranking: Vec<RankedCode>,
    pub factors: Vec<FactorReport>,
    pub acai: Option<AcaiSelection>,
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.factors.iter().flat_map(|f| f.unsupervised.iter().chain(&f.generalization))
    }

    /// Every row's CAI must match its table's baseline, and the stored ACAI
    /// choice must be the argmax of its own grid.
    pub fn check_consistency(&self, tol: f64) -> Result<()> {
        for f in &self.factors {
            for table in [&f.unsupervised, &f.generalization] {
                let Some(base) = table.iter().find(|r| r.is_baseline()) else { continue };
                for row in table {
                    let (c5, c75) = cai_pair(AccGapPair::from(&base.bundle), AccGapPair::from(&row.bundle));
                    if (c5 - row.cai_05).abs() > tol || (c75 - row.cai_075).abs() > tol || row.partition != base.partition {
                        return Err(Error::eval(alloc::format!("row {} disagrees with its baseline", row.label)));
                    }
                }
            }
        }
        if let Some(sel) = &self.acai {
            let best = sel.grid.iter().enumerate().max_by(|a, b| acai_order(a.1, b.1)).map(|b| b.0);
            if best != Some(sel.index) {
                return Err(Error::eval("stored ACAI selection is not the argmax of its grid"));
            }
        }
        Ok(())
    }
}
