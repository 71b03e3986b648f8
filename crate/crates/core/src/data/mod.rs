//! Dataset loading and cross-validation splits.
//!
//! The loader understands the AI4I-style predictive-maintenance layout: an
//! ordinal product-quality column, five numeric process measurements, a
//! machine-failure label and a set of failure-mode indicator columns that
//! leak the label and are therefore dropped.

mod matrix;
pub mod replica;
mod split;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use matrix::FeatureMatrix;
pub use split::{repeated_stratified_kfold, write_split_manifest, FoldSplit};

use crate::error::{Error, Result};

/// Binary label; `1` is the failure (minority) class.
pub type Label = u8;

/// Maps CSV columns onto model features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Identifier columns. Dropped when present.
    pub id_columns: Vec<String>,
    /// Ordinal quality column holding `L`, `M` or `H`.
    pub quality_column: Option<String>,
    pub quality_feature: String,
    /// `(csv column, feature name)` pairs, in feature order.
    pub numeric_columns: Vec<(String, String)>,
    pub label_column: String,
    /// Failure-mode indicators. Dropped when present.
    pub failure_mode_columns: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self::ai4i()
    }
}

impl CsvSchema {
    pub fn ai4i() -> Self {
        let numeric = [
            ("Air temperature [K]", "air temperature [K]"),
            ("Process temperature [K]", "process temperature [K]"),
            ("Rotational speed [rpm]", "rotational speed [rpm]"),
            ("Torque [Nm]", "torque [Nm]"),
            ("Tool wear [min]", "tool wear [min]"),
        ];
        Self {
            id_columns: vec!["UDI".into(), "Product ID".into()],
            quality_column: Some("Type".into()),
            quality_feature: "quality".into(),
            numeric_columns: numeric
                .iter()
                .map(|(c, f)| (c.to_string(), f.to_string()))
                .collect(),
            label_column: "Machine failure".into(),
            failure_mode_columns: ["TWF", "HDF", "PWF", "OSF", "RNF"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.quality_column
            .iter()
            .map(|_| self.quality_feature.clone())
            .chain(self.numeric_columns.iter().map(|(_, f)| f.clone()))
            .collect()
    }

    fn declares(&self, column: &str) -> bool {
        self.id_columns.iter().any(|c| c == column)
            || self.quality_column.as_deref() == Some(column)
            || self.numeric_columns.iter().any(|(c, _)| c == column)
            || self.label_column == column
            || self.failure_mode_columns.iter().any(|c| c == column)
    }
}

/// Product quality variant, encoded ordinally.
pub fn encode_quality(value: &str) -> Option<f64> {
    match value.trim() {
        "L" => Some(0.0),
        "M" => Some(1.0),
        "H" => Some(2.0),
        _ => None,
    }
}

/// Feature matrix with binary labels. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: FeatureMatrix,
    labels: Vec<Label>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<Label>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.n_rows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.n_rows(),
                labels.len()
            )));
        }
        if feature_names.len() != features.n_cols() {
            return Err(Error::Validation(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.n_cols()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Validation(format!(
                "label {} at index {i} is not 0 or 1",
                labels[i]
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Rows and labels for the given instance ids.
    pub fn subset(&self, ids: &[usize]) -> (FeatureMatrix, Vec<Label>) {
        (
            self.features.select(ids),
            ids.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a dataset from any CSV source. Row order is preserved.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    if let Some(unknown) = headers.iter().find(|h| !schema.declares(h)) {
        return Err(Error::Schema(format!("unknown column `{unknown}`")));
    }
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let quality_idx = schema.quality_column.as_deref().map(locate).transpose()?;
    let numeric_idx = schema
        .numeric_columns
        .iter()
        .map(|(c, _)| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = locate(&schema.label_column)?;

    let feature_names = schema.feature_names();
    let mut features = FeatureMatrix::with_columns(feature_names.len());
    let mut labels = Vec::new();
    let mut row = Vec::with_capacity(feature_names.len());

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row; the header is row 0.
        let row_no = i + 1;
        row.clear();
        if let (Some(idx), Some(col)) = (quality_idx, schema.quality_column.as_deref()) {
            let raw = record.get(idx).unwrap_or("");
            row.push(encode_quality(raw).ok_or_else(|| Error::Parse {
                row: row_no,
                column: col.to_string(),
                message: format!("unknown quality `{raw}` (expected L, M or H)"),
            })?);
        }
        for (&idx, (col, _)) in numeric_idx.iter().zip(&schema.numeric_columns) {
            let raw = record.get(idx).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                row: row_no,
                column: col.clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: row_no,
                    column: col.clone(),
                    message: format!("`{raw}` is not finite"),
                });
            }
            row.push(value);
        }
        features.push_row(&row)?;

        let raw = record.get(label_idx).unwrap_or("");
        let label = match raw.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::Validation(format!(
                    "row {row_no}: label `{raw}` in column `{}` is not 0 or 1",
                    schema.label_column
                )))
            }
        };
        labels.push(label);
    }

    Dataset::new(features, labels, feature_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "UDI,Product ID,Type,Air temperature [K],Process temperature [K],\
Rotational speed [rpm],Torque [Nm],Tool wear [min],Machine failure,TWF,HDF,PWF,OSF,RNF";

    fn load(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &CsvSchema::ai4i())
    }

    #[test]
    fn quality_medium_maps_to_one() {
        let csv = format!("{HEADER}\n1,M14860,M,298.1,308.6,1551,42.8,0,0,0,0,0,0,0\n");
        let ds = load(&csv).unwrap();
        assert_eq!(ds.n_instances(), 1);
        assert_eq!(ds.features().get(0, 0), 1.0);
        assert_eq!(
            ds.features().row(0),
            &[1.0, 298.1, 308.6, 1551.0, 42.8, 0.0]
        );
    }

    #[test]
    fn failure_modes_and_ids_are_dropped() {
        let csv = format!(
            "{HEADER}\n1,L1,L,298.1,308.6,1551,42.8,0,0,0,0,0,0,0\n2,H2,H,298.2,308.7,1408,46.3,3,1,0,1,0,0,0\n"
        );
        let ds = load(&csv).unwrap();
        assert_eq!(ds.feature_names().len(), 6);
        for dropped in ["TWF", "HDF", "PWF", "OSF", "RNF", "UDI", "Product ID"] {
            assert!(!ds.feature_names().iter().any(|f| f == dropped));
        }
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.n_positive(), 1);
        assert_eq!(ds.features().get(1, 0), 2.0);
    }

    #[test]
    fn failure_mode_columns_are_optional() {
        let csv = "Type,Air temperature [K],Process temperature [K],Rotational speed [rpm],\
Torque [Nm],Tool wear [min],Machine failure\nL,298.1,308.6,1551,42.8,0,0\n";
        assert_eq!(load(csv).unwrap().n_instances(), 1);
    }

    #[test]
    fn unknown_column_is_named() {
        let csv = format!("{HEADER},Extra\n");
        let err = load(&csv).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("Extra")),
            "{err}"
        );
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "Type,Air temperature [K],Process temperature [K],Rotational speed [rpm],\
Tool wear [min],Machine failure\n";
        let err = load(csv).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("Torque [Nm]")),
            "{err}"
        );
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let csv = format!(
            "{HEADER}\n1,L1,L,298.1,308.6,1551,42.8,0,0,0,0,0,0,0\n2,L2,L,298.1,oops,1551,42.8,0,0,0,0,0,0,0\n"
        );
        match load(&csv).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "Process temperature [K]");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn label_outside_binary_is_rejected() {
        let csv = format!("{HEADER}\n1,L1,L,298.1,308.6,1551,42.8,0,2,0,0,0,0,0\n");
        assert!(matches!(load(&csv).unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn bad_quality_is_a_parse_error() {
        let csv = format!("{HEADER}\n1,X1,X,298.1,308.6,1551,42.8,0,0,0,0,0,0,0\n");
        assert!(matches!(
            load(&csv).unwrap_err(),
            Error::Parse { row: 1, .. }
        ));
    }
}
