//! Inductive Venn-Abers prediction.
//!
//! For a test score `s` the calibration set is augmented twice, once with
//! `(s, 0)` and once with `(s, 1)`, and an isotonic fit is computed for each.
//! The two fitted values at `s` bound the probability of class 1.

use serde::{Deserialize, Serialize};

use super::isotonic::{pava, pool_adjacent_violators, pool_ties, Group};
use crate::data::Label;
use crate::error::{Error, Result};

/// Probability interval `[p0, p1]` for class 1 and its regularised point
/// estimate `p1 / (1 - p0 + p1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityInterval {
    pub p0: f64,
    pub p1: f64,
    pub point: f64,
}

impl ProbabilityInterval {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        Ok(Self {
            p0,
            p1,
            point: regularized_point(p0, p1)?,
        })
    }

    /// Degenerate interval for point calibrators.
    pub fn point(p: f64) -> Self {
        Self {
            p0: p,
            p1: p,
            point: p,
        }
    }

    pub fn width(&self) -> f64 {
        self.p1 - self.p0
    }
}

/// Collapses an interval to a single probability, pulled slightly towards
/// one half as the interval widens.
pub fn regularized_point(p0: f64, p1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) || p0 > p1 {
        return Err(Error::InvalidArgument(format!(
            "interval [{p0}, {p1}] must satisfy 0 <= p0 <= p1 <= 1"
        )));
    }
    Ok(p1 / (1.0 - p0 + p1))
}

/// Calibration scores and labels, kept sorted and tie-pooled so that each
/// test point costs one linear pass per augmented fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationSet", into = "CalibrationSet")]
pub struct VennAbersCalibrator {
    scores: Vec<f64>,
    labels: Vec<Label>,
    groups: Vec<Group>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
}

impl TryFrom<CalibrationSet> for VennAbersCalibrator {
    type Error = Error;

    fn try_from(set: CalibrationSet) -> Result<Self> {
        Self::new(set.scores, set.labels)
    }
}

impl From<VennAbersCalibrator> for CalibrationSet {
    fn from(cal: VennAbersCalibrator) -> Self {
        Self {
            scores: cal.scores,
            labels: cal.labels,
        }
    }
}

impl VennAbersCalibrator {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        let groups = pool_ties(&scores, &labels).map_err(|e| match e {
            Error::EmptyInput(_) => Error::EmptyInput("Venn-Abers calibration set"),
            e => e,
        })?;
        Ok(Self {
            scores,
            labels,
            groups,
        })
    }

    pub fn calibration_scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn calibration_labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn augmented_value(groups: &[Group], s: f64, label: Label) -> f64 {
        let idx = groups.partition_point(|g| g.score < s);
        let mut aug = Vec::with_capacity(groups.len() + 1);
        aug.extend_from_slice(&groups[..idx]);
        let y = f64::from(label);
        match groups.get(idx) {
            Some(g) if g.score == s => {
                aug.push(Group {
                    score: s,
                    weight: g.weight + 1.0,
                    sum: g.sum + y,
                });
                aug.extend_from_slice(&groups[idx + 1..]);
            }
            _ => {
                aug.push(Group {
                    score: s,
                    weight: 1.0,
                    sum: y,
                });
                aug.extend_from_slice(&groups[idx..]);
            }
        }
        pool_adjacent_violators(&aug)[idx]
    }

    pub fn interval(&self, s: f64) -> Result<ProbabilityInterval> {
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "test score {s} is not finite"
            )));
        }
        if self.scores.is_empty() {
            return Err(Error::EmptyInput("Venn-Abers calibration set"));
        }
        let p0 = Self::augmented_value(&self.groups, s, 0);
        let p1 = Self::augmented_value(&self.groups, s, 1);
        ProbabilityInterval::new(p0, p1)
    }

    /// Same interval computed by literally refitting isotonic regression on
    /// the augmented calibration sets.
    pub fn interval_by_refit(&self, s: f64) -> Result<ProbabilityInterval> {
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "test score {s} is not finite"
            )));
        }
        let mut scores = self.scores.clone();
        scores.push(s);
        let mut labels = self.labels.clone();
        labels.push(0);
        let g0 = pava(&scores, &labels)?.predict(s);
        *labels.last_mut().expect("non-empty") = 1;
        let g1 = pava(&scores, &labels)?.predict(s);
        ProbabilityInterval::new(g0, g1)
    }
}

pub fn venn_abers_interval(cal: &VennAbersCalibrator, s_test: f64) -> Result<ProbabilityInterval> {
    cal.interval(s_test)
}
