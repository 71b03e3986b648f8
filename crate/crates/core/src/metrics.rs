//! Predictive and calibration metrics.
//!
//! Reliability bins hold, per probability bin, the number of instances, the
//! mean predicted class-1 probability and the observed fraction of class-1
//! labels. The expected calibration error is the count-weighted mean gap
//! between the last two.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
pub const DECISION_THRESHOLD: f64 = 0.5;

fn check_inputs(probabilities: &[f64], labels: &[Label]) -> Result<()> {
    if probabilities.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} probabilities but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Absent when nothing is predicted positive.
    pub precision: Option<f64>,
    /// Absent when there are no positive labels.
    pub recall: Option<f64>,
    pub positive_prediction_count: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Predicts class 1 iff `p >= threshold`.
pub fn classification_metrics(
    probabilities: &[f64],
    labels: &[Label],
    threshold: f64,
) -> Result<ClassificationMetrics> {
    if probabilities.is_empty() {
        return Err(Error::EmptyInput("classification metrics"));
    }
    check_inputs(probabilities, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / probabilities.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        positive_prediction_count: tp + fp,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(probabilities: &[f64], labels: &[Label]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.iter().any(|p| p.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]));

    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = probabilities[order[i]];
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < order.len() && probabilities[order[i]] == v {
            if labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_u += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinMode {
    /// `M` bins of width `1/M`.
    #[default]
    Width,
    /// Edges at the empirical quantiles of the probabilities.
    Frequency,
}

impl fmt::Display for BinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinMode::Width => "width",
            BinMode::Frequency => "frequency",
        })
    }
}

impl FromStr for BinMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "width" => Ok(BinMode::Width),
            "frequency" => Ok(BinMode::Frequency),
            other => Err(Error::InvalidArgument(format!(
                "unknown bin mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// Mean predicted probability; absent for empty bins.
    pub mean_prediction: Option<f64>,
    /// Fraction of class-1 labels; absent for empty bins.
    pub fraction_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub mode: BinMode,
    pub n: usize,
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.bins.iter().map(|b| b.low).collect();
        if let Some(last) = self.bins.last() {
            e.push(last.high);
        }
        e
    }

    /// Plot-ready CSV: `bin_low,bin_high,count,mop,foc`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_reliability_csv(Some(self), writer)
    }
}

/// Writes reliability bins as CSV; `None` writes the header only.
pub fn write_reliability_csv<W: std::io::Write>(
    bins: Option<&ReliabilityBins>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_low", "bin_high", "count", "mop", "foc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in bins.map(|b| b.bins.as_slice()).unwrap_or_default() {
        w.write_record([
            b.low.to_string(),
            b.high.to_string(),
            b.count.to_string(),
            opt(b.mean_prediction),
            opt(b.fraction_positive),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<reliability csv>", e))?;
    Ok(())
}

fn bin_edges(probabilities: &[f64], m: usize, mode: BinMode) -> Vec<f64> {
    match mode {
        BinMode::Width => (0..=m).map(|i| i as f64 / m as f64).collect(),
        BinMode::Frequency => {
            let mut sorted = probabilities.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut edges = Vec::with_capacity(m + 1);
            edges.push(0.0);
            for i in 1..m {
                edges.push(if n == 0 {
                    i as f64 / m as f64
                } else {
                    sorted[i * n / m]
                });
            }
            edges.push(1.0);
            edges
        }
    }
}

/// Bins `[e0, e1), [e1, e2), ..., [e_{M-1}, 1]`.
pub fn reliability_bins(
    probabilities: &[f64],
    labels: &[Label],
    m: usize,
    mode: BinMode,
) -> Result<ReliabilityBins> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    check_inputs(probabilities, labels)?;
    let edges = bin_edges(probabilities, m, mode);
    let mut count = vec![0usize; m];
    let mut sum_p = vec![0.0; m];
    let mut sum_y = vec![0usize; m];
    for (&p, &y) in probabilities.iter().zip(labels) {
        let idx = (edges.partition_point(|&e| e <= p) - 1).min(m - 1);
        count[idx] += 1;
        sum_p[idx] += p;
        sum_y[idx] += usize::from(y);
    }
    let bins = (0..m)
        .map(|i| {
            let c = count[i];
            ReliabilityBin {
                low: edges[i],
                high: edges[i + 1],
                count: c,
                mean_prediction: (c > 0).then(|| sum_p[i] / c as f64),
                fraction_positive: (c > 0).then(|| sum_y[i] as f64 / c as f64),
            }
        })
        .collect();
    Ok(ReliabilityBins {
        mode,
        n: probabilities.len(),
        bins,
    })
}

pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    if bins.n == 0 {
        return Err(Error::EmptyInput("expected calibration error"));
    }
    let n = bins.n as f64;
    Ok(bins
        .bins
        .iter()
        .filter_map(|b| {
            let (mop, foc) = (b.mean_prediction?, b.fraction_positive?);
            Some(b.count as f64 / n * (foc - mop).abs())
        })
        .sum())
}

/// Instances predicted positive (`p >= 0.5`), in input order.
pub fn minority_subset(probabilities: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<Label>) {
    probabilities
        .iter()
        .zip(labels)
        .filter(|(&p, _)| p >= DECISION_THRESHOLD)
        .map(|(&p, &y)| (p, y))
        .unzip()
}

/// Calibration error over the instances predicted positive only; absent
/// when there are none.
pub fn ece_minority(
    probabilities: &[f64],
    labels: &[Label],
    m: usize,
    mode: BinMode,
) -> Result<Option<f64>> {
    check_inputs(probabilities, labels)?;
    let (p, y) = minority_subset(probabilities, labels);
    if p.is_empty() {
        return Ok(None);
    }
    ece(&reliability_bins(&p, &y, m, mode)?).map(Some)
}

/// Metrics for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_instances: usize,
    pub accuracy: f64,
    /// Absent when the evaluated labels hold a single class.
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub positive_prediction_count: usize,
    pub ece: f64,
    pub ece1: Option<f64>,
    pub reliability: ReliabilityBins,
    pub reliability_minority: Option<ReliabilityBins>,
}

impl EvaluationReport {
    pub fn evaluate(
        probabilities: &[f64],
        labels: &[Label],
        m: usize,
        mode: BinMode,
    ) -> Result<Self> {
        let cls = classification_metrics(probabilities, labels, DECISION_THRESHOLD)?;
        let auc = match auc(probabilities, labels) {
            Ok(v) => Some(v),
            Err(Error::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        let reliability = reliability_bins(probabilities, labels, m, mode)?;
        let (mp, my) = minority_subset(probabilities, labels);
        let reliability_minority = if mp.is_empty() {
            None
        } else {
            Some(reliability_bins(&mp, &my, m, mode)?)
        };
        Ok(Self {
            n_instances: probabilities.len(),
            accuracy: cls.accuracy,
            auc,
            precision: cls.precision,
            recall: cls.recall,
            positive_prediction_count: cls.positive_prediction_count,
            ece: ece(&reliability)?,
            ece1: reliability_minority.as_ref().map(ece).transpose()?,
            reliability,
            reliability_minority,
        })
    }
}
