//! Scores produced by an external model, e.g. a gradient-boosting run, so
//! that they can be calibrated and evaluated like the built-in models.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const SCORE_TABLE_COLUMNS: [&str; 5] =
    ["instance_id", "fold_id", "partition", "score", "label"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Calibration,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub instance_id: u64,
    pub fold_id: u64,
    pub partition: Partition,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldScores {
    pub calibration: Vec<ScoreRow>,
    pub test: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Validates uniqueness of `(instance_id, fold_id)`, score range and
    /// label values. `rows` are numbered from 1 in error messages.
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let n = i + 1;
            if !(0.0..=1.0).contains(&row.score) {
                return Err(Error::Validation(format!(
                    "row {n}: score {} outside [0, 1]",
                    row.score
                )));
            }
            if row.label > 1 {
                return Err(Error::Validation(format!(
                    "row {n}: label {} is not 0 or 1",
                    row.label
                )));
            }
            if !seen.insert((row.instance_id, row.fold_id)) {
                return Err(Error::Validation(format!(
                    "row {n}: duplicate (instance_id, fold_id) = ({}, {})",
                    row.instance_id, row.fold_id
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows grouped by fold, in file order within each partition.
    pub fn folds(&self) -> BTreeMap<u64, FoldScores> {
        let mut folds: BTreeMap<u64, FoldScores> = BTreeMap::new();
        for row in &self.rows {
            let fold = folds.entry(row.fold_id).or_default();
            match row.partition {
                Partition::Calibration => fold.calibration.push(row.clone()),
                Partition::Test => fold.test.push(row.clone()),
            }
        }
        folds
    }
}

pub fn read_score_table<R: std::io::Read>(reader: R) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in SCORE_TABLE_COLUMNS {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema(format!("missing column `{col}`")));
        }
    }
    if let Some(extra) = headers.iter().find(|h| !SCORE_TABLE_COLUMNS.contains(h)) {
        return Err(Error::Schema(format!("unknown column `{extra}`")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<ScoreRow>().enumerate() {
        rows.push(rec.map_err(|e| Error::Parse {
            row: i + 1,
            column: String::from("*"),
            message: e.to_string(),
        })?);
    }
    ScoreTable::new(rows)
}

pub fn load_score_table(path: impl AsRef<Path>) -> Result<ScoreTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_score_table(file)
}
