use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Observations sharing one score, pooled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Group {
    pub score: f64,
    pub weight: f64,
    pub sum: f64,
}

/// Sorts by score and pools exact ties.
pub(crate) fn pool_ties(scores: &[f64], labels: &[Label]) -> Result<Vec<Group>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("isotonic regression"));
    }
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite score".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Group> = Vec::new();
    for i in order {
        let (s, y) = (scores[i], f64::from(labels[i]));
        match groups.last_mut() {
            Some(g) if g.score == s => {
                g.weight += 1.0;
                g.sum += y;
            }
            _ => groups.push(Group {
                score: s,
                weight: 1.0,
                sum: y,
            }),
        }
    }
    Ok(groups)
}

/// Pool-adjacent-violators over score-ordered groups. Returns the fitted
/// value of every group.
///
/// Blocks keep exact weight and label sums and are compared by
/// cross-multiplication, so with integer counts the result is exact and
/// independent of how the groups were assembled.
pub(crate) fn pool_adjacent_violators(groups: &[Group]) -> Vec<f64> {
    struct Block {
        weight: f64,
        sum: f64,
        len: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(groups.len());
    for g in groups {
        let mut cur = Block {
            weight: g.weight,
            sum: g.sum,
            len: 1,
        };
        while let Some(prev) = blocks.last() {
            // prev.mean > cur.mean
            if prev.sum * cur.weight > cur.sum * prev.weight {
                cur.weight += prev.weight;
                cur.sum += prev.sum;
                cur.len += prev.len;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut fitted = Vec::with_capacity(groups.len());
    for b in blocks {
        let value = b.sum / b.weight;
        fitted.extend(std::iter::repeat_n(value, b.len));
    }
    fitted
}

/// Non-decreasing step function fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    breakpoints: Vec<f64>,
    fitted_values: Vec<f64>,
    weights: Vec<f64>,
}

impl IsotonicFit {
    /// Sorted distinct calibration scores.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn fitted_values(&self) -> &[f64] {
        &self.fitted_values
    }

    /// Number of observations at each breakpoint.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Value at the greatest breakpoint `<= s`, clamped to the first and
    /// last fitted values outside the breakpoint range.
    pub fn predict(&self, s: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&b| b <= s);
        self.fitted_values[idx.saturating_sub(1)]
    }
}

/// Isotonic least-squares fit of binary labels against scores.
pub fn pava(scores: &[f64], labels: &[Label]) -> Result<IsotonicFit> {
    let groups = pool_ties(scores, labels)?;
    let fitted_values = pool_adjacent_violators(&groups);
    Ok(IsotonicFit {
        breakpoints: groups.iter().map(|g| g.score).collect(),
        weights: groups.iter().map(|g| g.weight).collect(),
        fitted_values,
    })
}

pub fn isotonic_calibrate(fit: &IsotonicFit, s: f64) -> Result<f64> {
    if fit.breakpoints.is_empty() {
        return Err(Error::EmptyInput("isotonic fit"));
    }
    Ok(fit.predict(s))
}
