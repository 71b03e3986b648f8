use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_weighted, DecisionTreeModel, TreeParams};
use super::ScoringModel;
use crate::data::{FeatureMatrix, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features drawn per split; `None` means `floor(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

pub fn default_max_features(n_features: usize) -> usize {
    ((n_features as f64).sqrt().floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTreeModel>,
    pub max_features: usize,
    pub seed: u64,
}

impl ScoringModel for RandomForestModel {
    fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    /// Mean of the member trees' leaf fractions.
    fn score(&self, x: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for tree in &self.trees {
            sum += tree.score(x)?;
        }
        Ok(sum / self.trees.len() as f64)
    }
}

/// Bagged trees with per-split feature subsampling. Each tree owns a random
/// stream derived from `seed`, so the result does not depend on how the
/// trees are scheduled across threads.
pub fn fit_forest(
    features: &FeatureMatrix,
    labels: &[Label],
    params: ForestParams,
    seed: u64,
) -> Result<RandomForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyInput("random forest training set"));
    }
    let n_features = features.n_cols();
    let max_features = params
        .max_features
        .unwrap_or_else(|| default_max_features(n_features));
    if max_features == 0 || max_features > n_features {
        return Err(Error::InvalidArgument(format!(
            "max_features must lie in 1..={n_features}, got {max_features}"
        )));
    }
    let tree_params = TreeParams {
        max_features: Some(max_features),
        ..params.tree
    };

    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| seeder.random()).collect();

    let trees = tree_seeds
        .par_iter()
        .map(|&tree_seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let weights = if params.bootstrap {
                let mut w = vec![0u32; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1;
                }
                w
            } else {
                vec![1u32; n]
            };
            fit_weighted(features, labels, &weights, tree_params, tree_seed, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RandomForestModel {
        trees,
        max_features,
        seed,
    })
}
