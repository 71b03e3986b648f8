//! Probability calibration for binary scoring classifiers.
//!
//! Trees, forests and logistic regression produce scores; Platt scaling,
//! isotonic regression and inductive Venn-Abers turn them into calibrated
//! probabilities or probability intervals. The [`harness`] module runs the
//! repeated cross-validation experiment end to end.

pub mod calibration;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod venn_tree;

pub use calibration::{Calibrator, CalibratorKind, ProbabilityInterval, VennAbersCalibrator};
pub use data::{Dataset, FeatureMatrix, FoldSplit, Label};
pub use error::{Error, Result};
pub use metrics::{BinMode, EvaluationReport, ReliabilityBins};
pub use models::{DecisionTreeModel, FittedModel, ScoringModel};
pub use venn_tree::{Rule, VennTree};
