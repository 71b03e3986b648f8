use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

/// One fold of one cross-validation repetition.
///
/// The training portion (every instance outside `test_ids`) is further
/// split into a proper training set and a calibration set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub repetition_index: usize,
    pub fold_index: usize,
    pub proper_train_ids: Vec<usize>,
    pub calibration_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}

impl FoldSplit {
    /// Proper training and calibration ids merged, ascending.
    pub fn training_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .proper_train_ids
            .iter()
            .chain(&self.calibration_ids)
            .copied()
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn tag(&self) -> String {
        format!("rep{}_fold{}", self.repetition_index, self.fold_index)
    }
}

/// Repeated stratified k-fold with a stratified calibration hold-out inside
/// every training portion. Deterministic in `seed`.
pub fn repeated_stratified_kfold(
    labels: &[Label],
    k: usize,
    repetitions: usize,
    calibration_fraction: f64,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if repetitions == 0 {
        return Err(Error::InvalidArgument(
            "repetitions must be at least 1".into(),
        ));
    }
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "calibration fraction must lie in (0, 1), got {calibration_fraction}"
        )));
    }
    let classes: [Vec<usize>; 2] = [0, 1].map(|c| {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == c)
            .map(|(i, _)| i)
            .collect()
    });
    for (c, members) in classes.iter().enumerate() {
        if members.len() < k {
            return Err(Error::Infeasible(format!(
                "class {c} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
    }

    let mut splits = Vec::with_capacity(k * repetitions);
    for rep in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);

        // Deal each shuffled class round-robin, continuing the counter across
        // classes so that fold sizes differ by at most one.
        let mut fold_of = vec![0usize; labels.len()];
        let mut dealt = 0usize;
        for members in &classes {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for i in shuffled {
                fold_of[i] = dealt % k;
                dealt += 1;
            }
        }

        for fold in 0..k {
            let test_ids: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
            let mut calibration_ids = Vec::new();
            let mut proper_train_ids = Vec::new();
            for members in &classes {
                let mut train: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&i| fold_of[i] != fold)
                    .collect();
                train.shuffle(&mut rng);
                let n_cal = (calibration_fraction * train.len() as f64).round() as usize;
                calibration_ids.extend_from_slice(&train[..n_cal]);
                proper_train_ids.extend_from_slice(&train[n_cal..]);
            }
            calibration_ids.sort_unstable();
            proper_train_ids.sort_unstable();
            splits.push(FoldSplit {
                repetition_index: rep,
                fold_index: fold,
                proper_train_ids,
                calibration_ids,
                test_ids,
                seed,
            });
        }
    }
    Ok(splits)
}

/// Writes the splits as a JSON manifest for reproducibility audits.
pub fn write_split_manifest(splits: &[FoldSplit], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), splits)?;
    Ok(())
}
