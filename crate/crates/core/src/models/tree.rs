//! CART classification tree with Gini impurity.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values, a point goes left when `x[feature] <= threshold`, and split ties
//! resolve to the lowest feature index and then the lowest threshold. Split
//! quality is compared in exact integer arithmetic, so the tie rule is
//! reliable.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScoringModel;
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: u64,
    pub min_samples_split: u64,
    /// Features examined per split. `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub fn with_max_depth(mut self, depth: usize) -> Self {
        self.max_depth = Some(depth);
        self
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidArgument(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidArgument(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if let Some(m) = self.max_features {
            if m == 0 || m > n_features {
                return Err(Error::InvalidArgument(format!(
                    "max_features must lie in 1..={n_features}, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Training counts at a node. With bootstrap sampling a row drawn twice
/// counts twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub n_samples: u64,
    pub n_positive: u64,
}

impl NodeCounts {
    pub fn score(&self) -> f64 {
        self.n_positive as f64 / self.n_samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        counts: NodeCounts,
    },
    Leaf {
        counts: NodeCounts,
    },
}

impl Node {
    pub fn counts(&self) -> NodeCounts {
        match self {
            Node::Split { counts, .. } | Node::Leaf { counts } => *counts,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    /// Nodes in depth-first pre-order; the root is node 0.
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub params: TreeParams,
    pub seed: u64,
}

impl DecisionTreeModel {
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    /// Node id of the leaf that `x` is routed to.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return Ok(id),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Depth of the deepest leaf; a single-leaf tree has depth 0.
    pub fn depth(&self) -> usize {
        self.node_depths().into_iter().max().unwrap_or(0)
    }

    pub fn node_depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
            }
        }
        depth
    }

    /// Parent of every node (`None` for the root).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = node {
                parent[*left] = Some(i);
                parent[*right] = Some(i);
            }
        }
        parent
    }

    /// Copy of the tree with every node at `max_depth` turned into a leaf
    /// carrying the pooled counts of its subtree. Node ids are renumbered.
    pub fn truncated(&self, max_depth: usize) -> DecisionTreeModel {
        fn copy(
            src: &DecisionTreeModel,
            id: usize,
            depth: usize,
            max_depth: usize,
            out: &mut Vec<Node>,
        ) -> usize {
            let new_id = out.len();
            match &src.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    counts,
                } if depth < max_depth => {
                    out.push(Node::Leaf { counts: *counts });
                    let l = copy(src, *left, depth + 1, max_depth, out);
                    let r = copy(src, *right, depth + 1, max_depth, out);
                    out[new_id] = Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: r,
                        counts: *counts,
                    };
                }
                node => out.push(Node::Leaf {
                    counts: node.counts(),
                }),
            }
            new_id
        }
        let mut nodes = Vec::new();
        if !self.nodes.is_empty() {
            copy(self, 0, 0, max_depth, &mut nodes);
        }
        DecisionTreeModel {
            nodes,
            n_features: self.n_features,
            params: self.params,
            seed: self.seed,
        }
    }
}

impl ScoringModel for DecisionTreeModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        let leaf = self.leaf_index(x)?;
        Ok(self.nodes[leaf].counts().score())
    }
}

pub fn fit_tree(
    features: &FeatureMatrix,
    labels: &[Label],
    params: TreeParams,
    seed: u64,
) -> Result<DecisionTreeModel> {
    let weights = vec![1u32; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit_weighted(features, labels, &weights, params, seed, &mut rng)
}

/// Fits a tree where row `i` counts `weights[i]` times. Rows with weight 0
/// are ignored.
pub(crate) fn fit_weighted(
    features: &FeatureMatrix,
    labels: &[Label],
    weights: &[u32],
    params: TreeParams,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTreeModel> {
    if features.n_rows() != labels.len() || weights.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} rows, {} labels, {} weights",
            features.n_rows(),
            labels.len(),
            weights.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    if !features.all_finite() {
        return Err(Error::Validation("features must be finite".into()));
    }
    params.validate(features.n_cols())?;
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| weights[i] > 0).collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput("decision tree training set"));
    }
    let mut builder = Builder::new(features, labels, weights, rows, params);
    builder.build(rng);
    Ok(DecisionTreeModel {
        nodes: builder.nodes,
        n_features: features.n_cols(),
        params,
        seed,
    })
}

/// Split quality as the exact fraction `num / den` of
/// `sum_child (pos^2 + neg^2) / weight`, which orders splits the same way
/// as Gini impurity decrease.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(left: (u64, u64), right: (u64, u64)) -> Self {
        let sq = |(w, p): (u64, u64)| {
            let (w, p) = (w as u128, p as u128);
            p * p + (w - p) * (w - p)
        };
        let (wl, wr) = (left.0 as u128, right.0 as u128);
        Self {
            num: sq(left) * wr + sq(right) * wl,
            den: wl * wr,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    score: SplitScore,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        match self.score.cmp(&other.score) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                (self.feature, self.threshold).partial_cmp(&(other.feature, other.threshold))
                    == Some(Ordering::Less)
            }
        }
    }
}

struct Builder<'a> {
    features: &'a FeatureMatrix,
    labels: &'a [Label],
    weights: &'a [u32],
    params: TreeParams,
    /// Training rows with non-zero weight.
    rows: Vec<usize>,
    /// Per feature, positions into `rows` sorted by that feature's value.
    /// Every node owns the same contiguous range in each of these arrays.
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

struct Pending {
    parent: Option<(usize, bool)>,
    start: usize,
    end: usize,
    depth: usize,
}

impl<'a> Builder<'a> {
    fn new(
        features: &'a FeatureMatrix,
        labels: &'a [Label],
        weights: &'a [u32],
        rows: Vec<usize>,
        params: TreeParams,
    ) -> Self {
        let n_features = features.n_cols();
        let sorted = (0..n_features)
            .map(|f| {
                let mut order: Vec<u32> = (0..rows.len() as u32).collect();
                order.sort_by(|&a, &b| {
                    features
                        .get(rows[a as usize], f)
                        .total_cmp(&features.get(rows[b as usize], f))
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        let n = rows.len();
        Self {
            features,
            labels,
            weights,
            params,
            rows,
            sorted,
            goes_left: vec![false; n],
            scratch: Vec::with_capacity(n),
            nodes: Vec::new(),
        }
    }

    #[inline]
    fn value(&self, pos: u32, feature: usize) -> f64 {
        self.features.get(self.rows[pos as usize], feature)
    }

    #[inline]
    fn weight_and_positive(&self, pos: u32) -> (u64, u64) {
        let row = self.rows[pos as usize];
        let w = u64::from(self.weights[row]);
        (w, w * u64::from(self.labels[row]))
    }

    fn counts(&self, start: usize, end: usize) -> NodeCounts {
        let (mut w, mut p) = (0, 0);
        for &pos in &self.sorted[0][start..end] {
            let (dw, dp) = self.weight_and_positive(pos);
            w += dw;
            p += dp;
        }
        NodeCounts {
            n_samples: w,
            n_positive: p,
        }
    }

    fn build(&mut self, rng: &mut ChaCha8Rng) {
        let mut stack = vec![Pending {
            parent: None,
            start: 0,
            end: self.rows.len(),
            depth: 0,
        }];
        while let Some(item) = stack.pop() {
            let id = self.nodes.len();
            let counts = self.counts(item.start, item.end);
            self.nodes.push(Node::Leaf { counts });
            if let Some((parent, is_left)) = item.parent {
                if let Node::Split { left, right, .. } = &mut self.nodes[parent] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }

            let p = &self.params;
            let pure = counts.n_positive == 0 || counts.n_positive == counts.n_samples;
            if pure
                || p.max_depth.is_some_and(|d| item.depth >= d)
                || counts.n_samples < p.min_samples_split
                || counts.n_samples < 2 * p.min_samples_leaf
            {
                continue;
            }
            let Some(best) = self.best_split(item.start, item.end, counts, rng) else {
                continue;
            };
            let mid = self.partition(item.start, item.end, best.feature, best.threshold);
            self.nodes[id] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: usize::MAX,
                right: usize::MAX,
                counts,
            };
            // Right is pushed first so the left subtree is numbered first.
            stack.push(Pending {
                parent: Some((id, false)),
                start: mid,
                end: item.end,
                depth: item.depth + 1,
            });
            stack.push(Pending {
                parent: Some((id, true)),
                start: item.start,
                end: mid,
                depth: item.depth + 1,
            });
        }
    }

    fn best_split(
        &self,
        start: usize,
        end: usize,
        total: NodeCounts,
        rng: &mut ChaCha8Rng,
    ) -> Option<Candidate> {
        let n_features = self.features.n_cols();
        let mut order: Vec<usize> = (0..n_features).collect();
        let quota = match self.params.max_features {
            Some(m) if m < n_features => {
                order.shuffle(rng);
                m
            }
            _ => n_features,
        };

        let mut best: Option<Candidate> = None;
        let mut examined = 0;
        for feature in order {
            if examined == quota {
                break;
            }
            let range = &self.sorted[feature][start..end];
            let lo = self.value(range[0], feature);
            let hi = self.value(range[range.len() - 1], feature);
            if lo == hi {
                // Constant features do not count against the quota.
                continue;
            }
            examined += 1;
            if let Some(c) = self.best_threshold(feature, range, total) {
                if best.as_ref().is_none_or(|b| c.beats(b)) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn best_threshold(
        &self,
        feature: usize,
        range: &[u32],
        total: NodeCounts,
    ) -> Option<Candidate> {
        let min_leaf = self.params.min_samples_leaf;
        let (mut wl, mut pl) = (0u64, 0u64);
        let mut best: Option<Candidate> = None;
        for i in 0..range.len() - 1 {
            let (dw, dp) = self.weight_and_positive(range[i]);
            wl += dw;
            pl += dp;
            let v = self.value(range[i], feature);
            let next = self.value(range[i + 1], feature);
            if v == next {
                continue;
            }
            let wr = total.n_samples - wl;
            if wl < min_leaf || wr < min_leaf {
                continue;
            }
            let score = SplitScore::new((wl, pl), (wr, total.n_positive - pl));
            if best
                .as_ref()
                .is_none_or(|b| score.cmp(&b.score) == Ordering::Greater)
            {
                let mut threshold = v / 2.0 + next / 2.0;
                if threshold == next || !threshold.is_finite() {
                    threshold = v;
                }
                best = Some(Candidate {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    /// Stable partition of the node's range in every sorted array; returns
    /// the boundary between left and right children.
    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let mut n_left = 0;
        for k in start..end {
            let pos = self.sorted[feature][k];
            let left = self.value(pos, feature) <= threshold;
            self.goes_left[pos as usize] = left;
            n_left += usize::from(left);
        }
        let Self {
            sorted,
            goes_left,
            scratch,
            ..
        } = self;
        for order in sorted.iter_mut() {
            scratch.clear();
            let slice = &mut order[start..end];
            let mut write = 0;
            for k in 0..slice.len() {
                let pos = slice[k];
                if goes_left[pos as usize] {
                    slice[write] = pos;
                    write += 1;
                } else {
                    scratch.push(pos);
                }
            }
            slice[write..].copy_from_slice(scratch);
        }
        start + n_left
    }
}
