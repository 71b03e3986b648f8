//! Binary scoring classifiers.

pub mod forest;
pub mod logistic;
pub mod score_table;
pub mod tree;

pub use forest::{fit_forest, ForestParams, RandomForestModel};
pub use logistic::{fit_logistic, LogisticParams, LogisticRegressionModel};
pub use score_table::{load_score_table, read_score_table, Partition, ScoreRow, ScoreTable};
pub use tree::{fit_tree, DecisionTreeModel, Node, NodeCounts, TreeParams};

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::Result;

/// Anything that maps a feature vector to a class-1 score in `[0, 1]`.
pub trait ScoringModel: Send + Sync {
    fn n_features(&self) -> usize;

    fn score(&self, x: &[f64]) -> Result<f64>;

    fn score_all(&self, rows: &FeatureMatrix) -> Result<Vec<f64>> {
        rows.rows().map(|r| self.score(r)).collect()
    }
}

/// A fitted model in serialisable form, as stored by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Tree(DecisionTreeModel),
    Forest(RandomForestModel),
    Logistic(LogisticRegressionModel),
}

impl ScoringModel for FittedModel {
    fn n_features(&self) -> usize {
        match self {
            FittedModel::Tree(m) => m.n_features(),
            FittedModel::Forest(m) => m.n_features(),
            FittedModel::Logistic(m) => m.n_features(),
        }
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Tree(m) => m.score(x),
            FittedModel::Forest(m) => m.score(x),
            FittedModel::Logistic(m) => m.score(x),
        }
    }
}
