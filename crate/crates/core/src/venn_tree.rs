//! Decision trees whose leaves carry Venn-Abers probability intervals,
//! exported as conjunctive rules or as a Graphviz document.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::calibration::{ProbabilityInterval, VennAbersCalibrator};
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};
use crate::models::{DecisionTreeModel, Node};

pub const CLASS_NAMES: [&str; 2] = ["No failure", "Failure"];

/// Leaf width range, in inches, used by [`render_tree`].
pub const MIN_LEAF_WIDTH: f64 = 0.3;
pub const MAX_LEAF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafAnnotation {
    /// Raw leaf score: positive fraction of the training rows in the leaf.
    pub score: f64,
    pub predicted_class: Label,
    pub p0: f64,
    pub p1: f64,
    pub point: f64,
    /// Calibration rows routed to this leaf, when calibration features were
    /// supplied.
    pub n_calibration_instances: Option<usize>,
}

impl LeafAnnotation {
    pub fn interval(&self) -> ProbabilityInterval {
        ProbabilityInterval {
            p0: self.p0,
            p1: self.p1,
            point: self.point,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VennTree {
    pub tree: DecisionTreeModel,
    pub feature_names: Vec<String>,
    /// Indexed by node id; `None` for internal nodes.
    pub annotations: Vec<Option<LeafAnnotation>>,
}

impl VennTree {
    pub fn annotation(&self, node: usize) -> Option<&LeafAnnotation> {
        self.annotations.get(node)?.as_ref()
    }

    /// Annotation of the leaf that `x` is routed to.
    pub fn route(&self, x: &[f64]) -> Result<&LeafAnnotation> {
        let leaf = self.tree.leaf_index(x)?;
        Ok(self.annotations[leaf]
            .as_ref()
            .expect("leaves are annotated"))
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &LeafAnnotation)> {
        self.annotations
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| (i, a)))
    }
}

/// Annotates every leaf with the Venn-Abers interval of its score.
///
/// With `display_max_depth`, nodes at that depth become leaves scored by the
/// pooled positive fraction of their subtree, which is then calibrated like
/// any other score.
pub fn build_venn_tree(
    tree: &DecisionTreeModel,
    calibrator: &VennAbersCalibrator,
    feature_names: &[String],
    calibration_features: Option<&FeatureMatrix>,
    display_max_depth: Option<usize>,
) -> Result<VennTree> {
    if feature_names.len() != tree.n_features {
        return Err(Error::DimensionMismatch {
            expected: tree.n_features,
            got: feature_names.len(),
        });
    }
    if let Some(x) = calibration_features {
        if x.n_cols() != tree.n_features {
            return Err(Error::DimensionMismatch {
                expected: tree.n_features,
                got: x.n_cols(),
            });
        }
        if x.n_rows() != calibrator.len() {
            return Err(Error::Validation(format!(
                "{} calibration rows but the calibrator holds {} scores",
                x.n_rows(),
                calibrator.len()
            )));
        }
    }
    let tree = match display_max_depth {
        Some(d) => tree.truncated(d),
        None => tree.clone(),
    };
    if tree.nodes.is_empty() {
        return Err(Error::EmptyInput("decision tree"));
    }
    let mut routed = vec![0usize; tree.nodes.len()];
    if let Some(x) = calibration_features {
        for row in x.rows() {
            routed[tree.leaf_index(row)?] += 1;
        }
    }
    let annotations = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| match node {
            Node::Split { .. } => Ok(None),
            Node::Leaf { counts } => {
                let score = counts.score();
                let iv = calibrator.interval(score)?;
                Ok(Some(LeafAnnotation {
                    score,
                    predicted_class: Label::from(iv.point >= 0.5),
                    p0: iv.p0,
                    p1: iv.p1,
                    point: iv.point,
                    n_calibration_instances: calibration_features.map(|_| routed[id]),
                }))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VennTree {
        tree,
        feature_names: feature_names.to_vec(),
        annotations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Le => "<=",
            Comparator::Gt => ">",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: usize,
    pub feature_name: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl Condition {
    pub fn holds(&self, x: &[f64]) -> bool {
        let v = x[self.feature];
        match self.comparator {
            Comparator::Le => v <= self.threshold,
            Comparator::Gt => v > self.threshold,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.feature_name,
            self.comparator,
            display_threshold(self.threshold)
        )
    }
}

/// Threshold rounded to four decimals for display, trailing zeros removed.
pub fn display_threshold(t: f64) -> String {
    let s = format!("{t:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub leaf: usize,
    pub conditions: Vec<Condition>,
    pub predicted_class: Label,
    pub conclusion: String,
    pub interval: ProbabilityInterval,
}

impl Rule {
    pub fn matches(&self, x: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.holds(x))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.conditions.iter().enumerate() {
            if i > 0 {
                f.write_str("& ")?;
            }
            writeln!(f, "{c}")?;
        }
        write!(
            f,
            "\u{2192} {} [{:.2}, {:.2}]",
            self.conclusion, self.interval.p0, self.interval.p1
        )
    }
}

/// One rule per leaf, in node order. Conditions follow the root-to-leaf
/// path; repeated bounds on one feature keep only the tightest.
pub fn extract_rules(vt: &VennTree) -> Vec<Rule> {
    let mut rules = Vec::new();
    let mut path = Vec::new();
    collect_rules(vt, 0, &mut path, &mut rules);
    rules
}

fn collect_rules(
    vt: &VennTree,
    id: usize,
    path: &mut Vec<(usize, Comparator, f64)>,
    out: &mut Vec<Rule>,
) {
    match &vt.tree.nodes[id] {
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            path.push((*feature, Comparator::Le, *threshold));
            collect_rules(vt, *left, path, out);
            path.pop();
            path.push((*feature, Comparator::Gt, *threshold));
            collect_rules(vt, *right, path, out);
            path.pop();
        }
        Node::Leaf { .. } => {
            let ann = vt.annotations[id].expect("leaves are annotated");
            out.push(Rule {
                leaf: id,
                conditions: merge_bounds(path, &vt.feature_names),
                predicted_class: ann.predicted_class,
                conclusion: CLASS_NAMES[usize::from(ann.predicted_class)].to_string(),
                interval: ann.interval(),
            });
        }
    }
}

fn merge_bounds(path: &[(usize, Comparator, f64)], names: &[String]) -> Vec<Condition> {
    let mut merged: Vec<Condition> = Vec::new();
    for &(feature, comparator, threshold) in path {
        match merged
            .iter_mut()
            .find(|c| c.feature == feature && c.comparator == comparator)
        {
            Some(c) => {
                c.threshold = match comparator {
                    Comparator::Le => c.threshold.min(threshold),
                    Comparator::Gt => c.threshold.max(threshold),
                }
            }
            None => merged.push(Condition {
                feature,
                feature_name: names[feature].clone(),
                comparator,
                threshold,
            }),
        }
    }
    merged
}

/// Rules as text, one block per rule separated by blank lines.
pub fn format_rules(rules: &[Rule]) -> String {
    let blocks: Vec<String> = rules.iter().map(|r| r.to_string()).collect();
    let mut s = blocks.join("\n\n");
    s.push('\n');
    s
}

/// Graphviz fill colour of a leaf: hue by class, saturation by how far the
/// point estimate is from one half.
pub fn leaf_color(ann: &LeafAnnotation) -> String {
    let hue = if ann.predicted_class == 1 { 0.6 } else { 0.08 };
    let saturation = ((ann.point - 0.5).abs() / 0.5).clamp(0.0, 1.0);
    format!("{hue:.3} {saturation:.3} 1.000")
}

/// Node width in inches, linear in the interval width.
pub fn leaf_width(ann: &LeafAnnotation) -> f64 {
    MIN_LEAF_WIDTH + (ann.p1 - ann.p0).clamp(0.0, 1.0) * (MAX_LEAF_WIDTH - MIN_LEAF_WIDTH)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz DOT document for the tree.
pub fn render_tree(vt: &VennTree) -> String {
    let mut dot = String::new();
    dot.push_str("digraph venn_tree {\n");
    dot.push_str("  node [shape=box, style=\"filled,rounded\", fontname=\"Helvetica\"];\n");
    dot.push_str("  edge [fontname=\"Helvetica\"];\n");
    for (id, node) in vt.tree.nodes.iter().enumerate() {
        match node {
            Node::Split {
                feature, threshold, ..
            } => {
                let label = format!(
                    "{} <= {}",
                    vt.feature_names[*feature],
                    display_threshold(*threshold)
                );
                let _ = writeln!(
                    dot,
                    "  n{id} [label=\"{}\", fillcolor=\"0.000 0.000 0.950\"];",
                    escape(&label)
                );
            }
            Node::Leaf { .. } => {
                let ann = vt.annotations[id].expect("leaves are annotated");
                let label = format!(
                    "{}\\n[{:.2}, {:.2}]",
                    CLASS_NAMES[usize::from(ann.predicted_class)],
                    ann.p0,
                    ann.p1
                );
                let _ = writeln!(
                    dot,
                    "  n{id} [label=\"{label}\", fillcolor=\"{}\", width={:.3}, fixedsize=true];",
                    leaf_color(&ann),
                    leaf_width(&ann)
                );
            }
        }
    }
    for (id, node) in vt.tree.nodes.iter().enumerate() {
        if let Node::Split { left, right, .. } = node {
            let _ = writeln!(dot, "  n{id} -> n{left} [label=\"yes\"];");
            let _ = writeln!(dot, "  n{id} -> n{right} [label=\"no\"];");
        }
    }
    dot.push_str("}\n");
    dot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit_tree, NodeCounts, TreeParams};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn counts(n_samples: u64, n_positive: u64) -> NodeCounts {
        NodeCounts {
            n_samples,
            n_positive,
        }
    }

    /// x0 <= 5 -> (x0 <= 3 -> leaf 0/4 | leaf 1/2) | leaf 4/4
    fn nested_tree() -> DecisionTreeModel {
        DecisionTreeModel {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 5.0,
                    left: 1,
                    right: 4,
                    counts: counts(10, 5),
                },
                Node::Split {
                    feature: 0,
                    threshold: 3.0,
                    left: 2,
                    right: 3,
                    counts: counts(6, 1),
                },
                Node::Leaf {
                    counts: counts(4, 0),
                },
                Node::Leaf {
                    counts: counts(2, 1),
                },
                Node::Leaf {
                    counts: counts(4, 4),
                },
            ],
            n_features: 1,
            params: TreeParams::default(),
            seed: 0,
        }
    }

    fn calibrator() -> VennAbersCalibrator {
        VennAbersCalibrator::new(
            vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0, 1.0],
            vec![0, 0, 0, 1, 1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn nested_bounds_are_merged() {
        let vt = build_venn_tree(&nested_tree(), &calibrator(), &names(1), None, None).unwrap();
        let rules = extract_rules(&vt);
        assert_eq!(rules.len(), 3);
        assert_eq!(rules[0].conditions.len(), 1);
        assert_eq!(rules[0].conditions[0].threshold, 3.0);
        assert_eq!(rules[0].conditions[0].comparator, Comparator::Le);
        assert_eq!(rules[1].conditions.len(), 2);
        assert_eq!(rules[2].to_string().lines().next().unwrap(), "x0 > 5");
    }

    #[test]
    fn single_leaf_tree_gives_unconditional_rule() {
        let tree = DecisionTreeModel {
            nodes: vec![Node::Leaf {
                counts: counts(3, 3),
            }],
            n_features: 2,
            params: TreeParams::default(),
            seed: 0,
        };
        let vt = build_venn_tree(&tree, &calibrator(), &names(2), None, None).unwrap();
        let rules = extract_rules(&vt);
        assert_eq!(rules.len(), 1);
        assert!(rules[0].conditions.is_empty());
        assert!(rules[0].matches(&[1.0, 2.0]));
    }

    #[test]
    fn pure_leaf_reaches_one() {
        let vt = build_venn_tree(&nested_tree(), &calibrator(), &names(1), None, None).unwrap();
        let ann = vt.annotation(4).unwrap();
        assert_eq!(ann.p1, 1.0);
        assert_eq!(ann.predicted_class, 1);
        assert!(vt.leaves().all(|(_, a)| a.p0 <= a.p1));
    }

    #[test]
    fn full_depth_pruning_is_a_no_op() {
        let tree = nested_tree();
        let a = build_venn_tree(&tree, &calibrator(), &names(1), None, None).unwrap();
        let b = build_venn_tree(&tree, &calibrator(), &names(1), None, Some(tree.depth())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pruned_leaf_uses_pooled_fraction() {
        let vt = build_venn_tree(&nested_tree(), &calibrator(), &names(1), None, Some(1)).unwrap();
        let ann = vt.annotation(1).unwrap();
        assert_eq!(ann.score, 1.0 / 6.0);
        assert_eq!(ann.interval(), calibrator().interval(1.0 / 6.0).unwrap());
    }

    #[test]
    fn calibration_rows_are_counted() {
        let x = FeatureMatrix::from_column(&[1.0, 2.0, 4.0, 4.5, 6.0, 7.0, 8.0]);
        let vt = build_venn_tree(&nested_tree(), &calibrator(), &names(1), Some(&x), None).unwrap();
        let n: Vec<_> = vt
            .leaves()
            .map(|(_, a)| a.n_calibration_instances.unwrap())
            .collect();
        assert_eq!(n, vec![2, 2, 3]);
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        assert!(build_venn_tree(&nested_tree(), &calibrator(), &names(2), None, None).is_err());
        let x = FeatureMatrix::from_rows(&[[1.0, 2.0]; 7]).unwrap();
        assert!(build_venn_tree(&nested_tree(), &calibrator(), &names(1), Some(&x), None).is_err());
    }

    #[test]
    fn rules_route_like_the_tree() {
        let x = FeatureMatrix::from_rows(&[
            [1.0, 5.0],
            [2.0, 3.0],
            [3.0, 1.0],
            [4.0, 4.0],
            [5.0, 2.0],
            [6.0, 6.0],
        ])
        .unwrap();
        let y = [0, 0, 1, 0, 1, 1];
        let tree = fit_tree(&x, &y, TreeParams::default(), 0).unwrap();
        let cal = VennAbersCalibrator::new(vec![0.0, 1.0, 1.0], vec![0, 1, 0]).unwrap();
        let vt = build_venn_tree(&tree, &cal, &names(2), None, None).unwrap();
        let rules = extract_rules(&vt);
        for i in 0..60 {
            let p = [i as f64 / 8.0, (i * 7 % 13) as f64 / 2.0];
            let matched: Vec<_> = rules.iter().filter(|r| r.matches(&p)).collect();
            assert_eq!(matched.len(), 1);
            assert_eq!(matched[0].interval, vt.route(&p).unwrap().interval());
        }
    }

    #[test]
    fn thresholds_are_shortened_for_display() {
        assert_eq!(display_threshold(311.29999999999995), "311.3");
        assert_eq!(display_threshold(1.5), "1.5");
        assert_eq!(display_threshold(1239.0), "1239");
        assert_eq!(display_threshold(-0.00001), "0");
    }

    #[test]
    fn dot_encodes_intervals() {
        let vt = build_venn_tree(&nested_tree(), &calibrator(), &names(1), None, None).unwrap();
        let dot = render_tree(&vt);
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("x0 <= 5"));
        assert_eq!(dot.matches("fixedsize=true").count(), 3);
    }

    #[test]
    fn visual_encoding() {
        let confident = LeafAnnotation {
            score: 1.0,
            predicted_class: 1,
            p0: 0.98,
            p1: 1.0,
            point: 1.0 / 1.02,
            n_calibration_instances: None,
        };
        let unsure = LeafAnnotation {
            score: 0.5,
            predicted_class: 1,
            p0: 0.41,
            p1: 0.70,
            point: 0.70 / 1.29,
            n_calibration_instances: None,
        };
        assert!(leaf_width(&confident) < leaf_width(&unsure));
        let sat = |a: &LeafAnnotation| {
            leaf_color(a)
                .split(' ')
                .nth(1)
                .unwrap()
                .parse::<f64>()
                .unwrap()
        };
        assert!(sat(&confident) > 0.9);
        assert!(sat(&unsure) < 0.15);
        assert_eq!(leaf_color(&confident), leaf_color(&confident.clone()));
    }
}
