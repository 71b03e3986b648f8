//! Repeated cross-validation experiment: train, calibrate, evaluate and
//! aggregate, with every per-fold artifact written to disk.
//!
//! Output layout under the output directory:
//!
//! - `splits.json`: the fold manifest
//! - `rep{r}_fold{f}_{model}_{calibrator}.json`: fold metrics
//! - `rep{r}_fold{f}_{model}_{calibrator}.csv`: fold predictions
//! - `aggregate.json`, `aggregate.csv`: one row per model and calibrator
//! - `reliability_{model}_{calibrator}_{all,minority}.csv`: pooled bins

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{Calibrator, CalibratorKind, ProbabilityInterval, VennAbersCalibrator};
use crate::data::{
    load_csv, repeated_stratified_kfold, write_split_manifest, CsvSchema, Dataset, FoldSplit, Label,
};
use crate::error::{Error, Result};
use crate::metrics::{self, BinMode, EvaluationReport, DEFAULT_BINS};
use crate::models::{
    fit_forest, fit_logistic, fit_tree, load_score_table, FittedModel, ForestParams,
    LogisticParams, ScoreTable, ScoringModel, TreeParams,
};
use crate::venn_tree::{build_venn_tree, VennTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tree,
    Forest,
    Logistic,
    /// Scores read from a score table rather than trained here.
    External,
}

impl ModelKind {
    pub const TRAINABLE: [ModelKind; 3] = [ModelKind::Tree, ModelKind::Forest, ModelKind::Logistic];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Logistic => "logistic",
            ModelKind::External => "external",
        }
    }

    /// Logistic regression serves as an uncalibrated baseline only.
    pub fn accepts(&self, calibrator: CalibratorKind) -> bool {
        *self != ModelKind::Logistic || calibrator == CalibratorKind::None
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tree" | "dt" => Ok(ModelKind::Tree),
            "forest" | "rf" => Ok(ModelKind::Forest),
            "logistic" | "lr" => Ok(ModelKind::Logistic),
            "external" | "external-scores" => Ok(ModelKind::External),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Predictive-maintenance CSV; needed by every trained model.
    pub data: Option<PathBuf>,
    /// Score table; needed by the external model.
    pub score_table: Option<PathBuf>,
    pub models: Vec<ModelKind>,
    pub calibrators: Vec<CalibratorKind>,
    pub folds: usize,
    pub repetitions: usize,
    /// Share of each training portion held out for calibration.
    pub calibration_fraction: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub bins: usize,
    pub bin_mode: BinMode,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub logistic: LogisticParams,
    /// Run folds on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            score_table: None,
            models: ModelKind::TRAINABLE.to_vec(),
            calibrators: vec![CalibratorKind::None, CalibratorKind::VennAbers],
            folds: 10,
            repetitions: 10,
            calibration_fraction: 1.0 / 3.0,
            seed: 42,
            out: None,
            bins: DEFAULT_BINS,
            bin_mode: BinMode::Width,
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            logistic: LogisticParams::default(),
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.repetitions < 1 {
            return Err(Error::InvalidArgument(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidArgument("no model selected".into()));
        }
        if self.calibrators.is_empty() {
            return Err(Error::InvalidArgument("no calibrator selected".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "calibration fraction must lie in (0, 1), got {}",
                self.calibration_fraction
            )));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        Ok(())
    }

    /// Every evaluated (model, calibrator) pair, in output order.
    pub fn pairs(&self) -> Vec<(ModelKind, CalibratorKind)> {
        let mut models = self.models.clone();
        models.sort();
        models.dedup();
        let mut calibrators = self.calibrators.clone();
        calibrators.sort();
        calibrators.dedup();
        models
            .iter()
            .flat_map(|&m| {
                calibrators
                    .iter()
                    .filter(move |&&c| m.accepts(c))
                    .map(move |&c| (m, c))
            })
            .collect()
    }
}

/// Test-set predictions and metrics of one model/calibrator pair in one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repetition: usize,
    pub fold: usize,
    pub model: ModelKind,
    pub calibrator: CalibratorKind,
    pub instance_ids: Vec<usize>,
    pub labels: Vec<Label>,
    /// Raw model scores.
    pub scores: Vec<f64>,
    pub intervals: Vec<ProbabilityInterval>,
    pub report: EvaluationReport,
}

impl FoldResult {
    pub fn tag(&self) -> String {
        format!(
            "rep{}_fold{}_{}_{}",
            self.repetition, self.fold, self.model, self.calibrator
        )
    }

    /// Calibrated probabilities (the point estimates).
    pub fn probabilities(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.point).collect()
    }

    pub fn write_predictions<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["instance_id", "label", "score", "p0", "p1", "point"])?;
        for i in 0..self.instance_ids.len() {
            let iv = self.intervals[i];
            w.write_record([
                self.instance_ids[i].to_string(),
                self.labels[i].to_string(),
                self.scores[i].to_string(),
                iv.p0.to_string(),
                iv.p1.to_string(),
                iv.point.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<predictions csv>", e))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FoldArtifact<'a> {
    repetition: usize,
    fold: usize,
    model: ModelKind,
    calibrator: CalibratorKind,
    n_test: usize,
    report: &'a EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: ModelKind,
    pub calibrator: CalibratorKind,
    pub n_folds: usize,
    pub accuracy: f64,
    /// Mean over folds where the metric is defined.
    pub auc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Summed over folds.
    pub positive_predictions: usize,
    /// Per-fold calibration error averaged over folds.
    pub ece: f64,
    pub ece1: Option<f64>,
    /// Calibration error of the test predictions pooled over all folds.
    pub ece_pooled: f64,
    pub ece1_pooled: Option<f64>,
    pub n_folds_precision: usize,
    pub n_folds_ece1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub bins: usize,
    pub bin_mode: BinMode,
    pub rows: Vec<AggregateRow>,
}

pub const AGGREGATE_COLUMNS: [&str; 14] = [
    "model",
    "calibrator",
    "n_folds",
    "accuracy",
    "auc",
    "precision",
    "recall",
    "positive_predictions",
    "ece",
    "ece1",
    "ece_pooled",
    "ece1_pooled",
    "n_folds_precision",
    "n_folds_ece1",
];

impl AggregateTable {
    pub fn row(&self, model: ModelKind, calibrator: CalibratorKind) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.calibrator == calibrator)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(AGGREGATE_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.model.to_string(),
                r.calibrator.to_string(),
                r.n_folds.to_string(),
                r.accuracy.to_string(),
                opt(r.auc),
                opt(r.precision),
                opt(r.recall),
                r.positive_predictions.to_string(),
                r.ece.to_string(),
                opt(r.ece1),
                r.ece_pooled.to_string(),
                opt(r.ece1_pooled),
                r.n_folds_precision.to_string(),
                r.n_folds_ece1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<aggregate csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

/// Test predictions of one pair, concatenated over folds in fold order.
pub fn pooled_predictions(
    folds: &[FoldResult],
    model: ModelKind,
    calibrator: CalibratorKind,
) -> (Vec<f64>, Vec<Label>) {
    let mut p = Vec::new();
    let mut y = Vec::new();
    for r in folds
        .iter()
        .filter(|r| r.model == model && r.calibrator == calibrator)
    {
        p.extend(r.probabilities());
        y.extend_from_slice(&r.labels);
    }
    (p, y)
}

pub fn aggregate(
    folds: &[FoldResult],
    pairs: &[(ModelKind, CalibratorKind)],
    bins: usize,
    bin_mode: BinMode,
) -> Result<AggregateTable> {
    let mut rows = Vec::with_capacity(pairs.len());
    for &(model, calibrator) in pairs {
        let cell: Vec<&FoldResult> = folds
            .iter()
            .filter(|r| r.model == model && r.calibrator == calibrator)
            .collect();
        if cell.is_empty() {
            return Err(Error::Validation(format!(
                "no fold results for {model}/{calibrator}"
            )));
        }
        let n = cell.len() as f64;
        let (p, y) = pooled_predictions(folds, model, calibrator);
        let pooled = EvaluationReport::evaluate(&p, &y, bins, bin_mode)?;
        let (auc, _) = mean_defined(cell.iter().map(|r| r.report.auc));
        let (precision, n_folds_precision) = mean_defined(cell.iter().map(|r| r.report.precision));
        let (recall, _) = mean_defined(cell.iter().map(|r| r.report.recall));
        let (ece1, n_folds_ece1) = mean_defined(cell.iter().map(|r| r.report.ece1));
        rows.push(AggregateRow {
            model,
            calibrator,
            n_folds: cell.len(),
            accuracy: cell.iter().map(|r| r.report.accuracy).sum::<f64>() / n,
            auc,
            precision,
            recall,
            positive_predictions: cell
                .iter()
                .map(|r| r.report.positive_prediction_count)
                .sum(),
            ece: cell.iter().map(|r| r.report.ece).sum::<f64>() / n,
            ece1,
            ece_pooled: pooled.ece,
            ece1_pooled: pooled.ece1,
            n_folds_precision,
            n_folds_ece1,
        });
    }
    Ok(AggregateTable {
        bins,
        bin_mode,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReliabilityScope {
    All,
    /// Predictions with `p >= 0.5` only.
    Minority,
}

impl FromStr for ReliabilityScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ReliabilityScope::All),
            "minority" => Ok(ReliabilityScope::Minority),
            other => Err(Error::InvalidArgument(format!("unknown scope `{other}`"))),
        }
    }
}

/// Writes reliability bins for the requested scope. An empty minority
/// subset yields a header-only file.
pub fn export_reliability<W: Write>(
    probabilities: &[f64],
    labels: &[Label],
    scope: ReliabilityScope,
    bins: usize,
    bin_mode: BinMode,
    writer: W,
) -> Result<()> {
    let (p, y) = match scope {
        ReliabilityScope::All => (probabilities.to_vec(), labels.to_vec()),
        ReliabilityScope::Minority => {
            if probabilities.len() != labels.len() {
                return Err(Error::Validation(format!(
                    "{} probabilities but {} labels",
                    probabilities.len(),
                    labels.len()
                )));
            }
            metrics::minority_subset(probabilities, labels)
        }
    };
    if p.is_empty() {
        return metrics::write_reliability_csv(None, writer);
    }
    metrics::reliability_bins(&p, &y, bins, bin_mode)?.write_csv(writer)
}

/// Independent seed for one model fit within one fold.
fn model_seed(seed: u64, split: &FoldSplit, slot: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(
        ((split.repetition_index as u64) << 40) | ((split.fold_index as u64) << 8) | slot,
    );
    rng.next_u64()
}

pub fn fit_model(
    kind: ModelKind,
    config: &ExperimentConfig,
    features: &crate::data::FeatureMatrix,
    labels: &[Label],
    seed: u64,
) -> Result<FittedModel> {
    Ok(match kind {
        ModelKind::Tree => FittedModel::Tree(fit_tree(features, labels, config.tree, seed)?),
        ModelKind::Forest => {
            FittedModel::Forest(fit_forest(features, labels, config.forest, seed)?)
        }
        ModelKind::Logistic => {
            FittedModel::Logistic(fit_logistic(features, labels, config.logistic)?)
        }
        ModelKind::External => {
            return Err(Error::InvalidArgument(
                "external scores come from a score table, not from training".into(),
            ))
        }
    })
}

fn evaluate_result(
    config: &ExperimentConfig,
    (repetition, fold): (usize, usize),
    (model, calibrator): (ModelKind, CalibratorKind),
    instance_ids: Vec<usize>,
    labels: Vec<Label>,
    scores: Vec<f64>,
    intervals: Vec<ProbabilityInterval>,
) -> Result<FoldResult> {
    let points: Vec<f64> = intervals.iter().map(|iv| iv.point).collect();
    let report = EvaluationReport::evaluate(&points, &labels, config.bins, config.bin_mode)?;
    Ok(FoldResult {
        repetition,
        fold,
        model,
        calibrator,
        instance_ids,
        labels,
        scores,
        intervals,
        report,
    })
}

fn calibrate_all(cal: &Calibrator, scores: &[f64]) -> Result<Vec<ProbabilityInterval>> {
    scores.iter().map(|&s| cal.calibrate(s)).collect()
}

fn run_fold(
    config: &ExperimentConfig,
    dataset: &Dataset,
    split: &FoldSplit,
) -> Result<Vec<FoldResult>> {
    let pairs = config.pairs();
    let (test_x, test_y) = dataset.subset(&split.test_ids);
    let key = (split.repetition_index, split.fold_index);
    let mut out = Vec::new();
    for (mi, model) in ModelKind::TRAINABLE.into_iter().enumerate() {
        let wanted: Vec<CalibratorKind> = pairs
            .iter()
            .filter(|(m, _)| *m == model)
            .map(|&(_, c)| c)
            .collect();
        if wanted.is_empty() {
            continue;
        }
        if wanted.contains(&CalibratorKind::None) {
            let (x, y) = dataset.subset(&split.training_ids());
            let fitted = fit_model(
                model,
                config,
                &x,
                &y,
                model_seed(config.seed, split, 2 * mi as u64),
            )?;
            let scores = fitted.score_all(&test_x)?;
            let intervals = scores
                .iter()
                .map(|&s| ProbabilityInterval::point(s))
                .collect();
            out.push(evaluate_result(
                config,
                key,
                (model, CalibratorKind::None),
                split.test_ids.clone(),
                test_y.clone(),
                scores,
                intervals,
            )?);
        }
        let calibrated: Vec<CalibratorKind> = wanted
            .into_iter()
            .filter(|&c| c != CalibratorKind::None)
            .collect();
        if calibrated.is_empty() {
            continue;
        }
        let (x, y) = dataset.subset(&split.proper_train_ids);
        let fitted = fit_model(
            model,
            config,
            &x,
            &y,
            model_seed(config.seed, split, 2 * mi as u64 + 1),
        )?;
        let (cal_x, cal_y) = dataset.subset(&split.calibration_ids);
        let cal_scores = fitted.score_all(&cal_x)?;
        let scores = fitted.score_all(&test_x)?;
        for kind in calibrated {
            let cal = Calibrator::fit(kind, &cal_scores, &cal_y)?;
            let intervals = calibrate_all(&cal, &scores)?;
            out.push(evaluate_result(
                config,
                key,
                (model, kind),
                split.test_ids.clone(),
                test_y.clone(),
                scores.clone(),
                intervals,
            )?);
        }
    }
    Ok(out)
}

fn run_external(config: &ExperimentConfig, table: &ScoreTable) -> Result<Vec<FoldResult>> {
    let mut out = Vec::new();
    for (fold_id, fold) in table.folds() {
        let ctx = |e: Error| e.in_fold(format!("external fold {fold_id}"));
        if fold.test.is_empty() {
            return Err(ctx(Error::Validation("no test rows".into())));
        }
        let ids: Vec<usize> = fold.test.iter().map(|r| r.instance_id as usize).collect();
        let labels: Vec<Label> = fold.test.iter().map(|r| r.label).collect();
        let scores: Vec<f64> = fold.test.iter().map(|r| r.score).collect();
        let cal_scores: Vec<f64> = fold.calibration.iter().map(|r| r.score).collect();
        let cal_labels: Vec<Label> = fold.calibration.iter().map(|r| r.label).collect();
        for &kind in config.calibrators.iter() {
            if kind != CalibratorKind::None && cal_scores.is_empty() {
                return Err(ctx(Error::Validation("no calibration rows".into())));
            }
            let cal = Calibrator::fit(kind, &cal_scores, &cal_labels).map_err(ctx)?;
            let intervals = calibrate_all(&cal, &scores).map_err(ctx)?;
            out.push(
                evaluate_result(
                    config,
                    (0, fold_id as usize),
                    (ModelKind::External, kind),
                    ids.clone(),
                    labels.clone(),
                    scores.clone(),
                    intervals,
                )
                .map_err(ctx)?,
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub splits: Vec<FoldSplit>,
    pub folds: Vec<FoldResult>,
    pub table: AggregateTable,
}

/// Runs the experiment on in-memory inputs and writes artifacts when an
/// output directory is configured.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    dataset: Option<&Dataset>,
    scores: Option<&ScoreTable>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let trains = config.models.iter().any(|m| *m != ModelKind::External);
    let mut splits = Vec::new();
    let mut folds = Vec::new();
    if trains {
        let dataset = dataset
            .ok_or_else(|| Error::InvalidArgument("trained models need a dataset".into()))?;
        splits = repeated_stratified_kfold(
            dataset.labels(),
            config.folds,
            config.repetitions,
            config.calibration_fraction,
            config.seed,
        )?;
        let per_fold = |split: &FoldSplit| {
            run_fold(config, dataset, split).map_err(|e| e.in_fold(split.tag()))
        };
        let results: Vec<Vec<FoldResult>> = if config.parallel {
            splits.par_iter().map(per_fold).collect::<Result<_>>()?
        } else {
            splits.iter().map(per_fold).collect::<Result<_>>()?
        };
        folds.extend(results.into_iter().flatten());
    }
    if config.models.contains(&ModelKind::External) {
        let table = scores.ok_or_else(|| {
            Error::InvalidArgument("the external model needs a score table".into())
        })?;
        folds.extend(run_external(config, table)?);
    }
    let table = aggregate(&folds, &config.pairs(), config.bins, config.bin_mode)?;
    let outcome = ExperimentOutcome {
        splits,
        folds,
        table,
    };
    if let Some(dir) = &config.out {
        write_artifacts(config, &outcome, dir)?;
    }
    Ok(outcome)
}

/// Loads the inputs named in the configuration and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let dataset = if config.models.iter().any(|m| *m != ModelKind::External) {
        let path = config
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no dataset path given".into()))?;
        Some(load_csv(path, &CsvSchema::ai4i())?)
    } else {
        None
    };
    let scores = if config.models.contains(&ModelKind::External) {
        let path = config
            .score_table
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no score table path given".into()))?;
        Some(load_score_table(path)?)
    } else {
        None
    };
    run_experiment_on(config, dataset.as_ref(), scores.as_ref())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_artifacts(
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // The output path is left out so that identical runs give identical files.
    let recorded = ExperimentConfig {
        out: None,
        ..config.clone()
    };
    write_json(&dir.join("config.json"), &recorded)?;
    if !outcome.splits.is_empty() {
        write_split_manifest(&outcome.splits, dir.join("splits.json"))?;
    }
    for r in &outcome.folds {
        let tag = r.tag();
        write_json(
            &dir.join(format!("{tag}.json")),
            &FoldArtifact {
                repetition: r.repetition,
                fold: r.fold,
                model: r.model,
                calibrator: r.calibrator,
                n_test: r.instance_ids.len(),
                report: &r.report,
            },
        )?;
        r.write_predictions(create(&dir.join(format!("{tag}.csv")))?)?;
    }
    write_json(&dir.join("aggregate.json"), &outcome.table)?;
    outcome
        .table
        .write_csv(create(&dir.join("aggregate.csv"))?)?;
    for (model, calibrator) in config.pairs() {
        let (p, y) = pooled_predictions(&outcome.folds, model, calibrator);
        for (scope, name) in [
            (ReliabilityScope::All, "all"),
            (ReliabilityScope::Minority, "minority"),
        ] {
            let path = dir.join(format!("reliability_{model}_{calibrator}_{name}.csv"));
            export_reliability(&p, &y, scope, config.bins, config.bin_mode, create(&path)?)?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    label: Label,
    point: f64,
}

/// Parses `rep{r}_fold{f}_{model}_{calibrator}.csv` into `(r, f)`.
fn fold_file_key(name: &str, suffix: &str) -> Option<(usize, usize)> {
    let stem = name.strip_suffix(suffix)?.strip_prefix("rep")?;
    let (rep, fold) = stem.split_once("_fold")?;
    Some((rep.parse().ok()?, fold.parse().ok()?))
}

/// Reads back the per-fold prediction files of one pair from a run
/// directory, concatenated in (repetition, fold) order.
pub fn load_fold_predictions(
    dir: &Path,
    model: ModelKind,
    calibrator: CalibratorKind,
) -> Result<(Vec<f64>, Vec<Label>)> {
    let suffix = format!("_{model}_{calibrator}.csv");
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(key) = fold_file_key(&name, &suffix) {
            files.push((key, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(Error::Validation(format!(
            "no prediction files for {model}/{calibrator} in {}",
            dir.display()
        )));
    }
    files.sort();
    let (mut p, mut y) = (Vec::new(), Vec::new());
    for (_, path) in files {
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        for row in csv::Reader::from_reader(file).deserialize() {
            let row: PredictionRow = row?;
            p.push(row.point);
            y.push(row.label);
        }
    }
    Ok((p, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScore {
    pub instance_id: u64,
    pub fold_id: u64,
    pub score: f64,
    pub p0: f64,
    pub p1: f64,
    pub point: f64,
}

/// Per fold, fits the calibrator on the calibration rows and applies it to
/// the test rows.
pub fn calibrate_scores(table: &ScoreTable, kind: CalibratorKind) -> Result<Vec<CalibratedScore>> {
    let mut out = Vec::new();
    for (fold_id, fold) in table.folds() {
        let ctx = |e: Error| e.in_fold(fold_id.to_string());
        if fold.calibration.is_empty() {
            return Err(ctx(Error::Validation(
                "missing calibration partition".into(),
            )));
        }
        if fold.test.is_empty() {
            return Err(ctx(Error::Validation("missing test partition".into())));
        }
        let scores: Vec<f64> = fold.calibration.iter().map(|r| r.score).collect();
        let labels: Vec<Label> = fold.calibration.iter().map(|r| r.label).collect();
        let cal = Calibrator::fit(kind, &scores, &labels).map_err(ctx)?;
        for row in &fold.test {
            let iv = cal.calibrate(row.score).map_err(ctx)?;
            out.push(CalibratedScore {
                instance_id: row.instance_id,
                fold_id,
                score: row.score,
                p0: iv.p0,
                p1: iv.p1,
                point: iv.point,
            });
        }
    }
    Ok(out)
}

pub fn write_calibrated_scores<W: Write>(rows: &[CalibratedScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["instance_id", "fold_id", "score", "p0", "p1", "point"])?;
    }
    w.flush().map_err(|e| Error::io("<calibrated csv>", e))?;
    Ok(())
}

/// Tree trained on the proper training part of one stratified split and
/// calibrated with Venn-Abers on the held-out part.
#[derive(Debug, Clone)]
pub struct VennTreeFit {
    pub venn_tree: VennTree,
    pub calibrator: VennAbersCalibrator,
    pub split: FoldSplit,
}

pub fn fit_venn_tree(
    dataset: &Dataset,
    params: TreeParams,
    folds: usize,
    calibration_fraction: f64,
    seed: u64,
    display_max_depth: Option<usize>,
) -> Result<VennTreeFit> {
    let split = repeated_stratified_kfold(dataset.labels(), folds, 1, calibration_fraction, seed)?
        .into_iter()
        .next()
        .expect("at least one fold");
    let (x, y) = dataset.subset(&split.proper_train_ids);
    let tree = fit_tree(&x, &y, params, model_seed(seed, &split, 0))?;
    let (cal_x, cal_y) = dataset.subset(&split.calibration_ids);
    let calibrator = VennAbersCalibrator::new(tree.score_all(&cal_x)?, cal_y)?;
    let venn_tree = build_venn_tree(
        &tree,
        &calibrator,
        dataset.feature_names(),
        Some(&cal_x),
        display_max_depth,
    )?;
    Ok(VennTreeFit {
        venn_tree,
        calibrator,
        split,
    })
}

/// Groups fold results by pair, for callers that want per-pair access.
pub fn by_pair(folds: &[FoldResult]) -> BTreeMap<(ModelKind, CalibratorKind), Vec<&FoldResult>> {
    let mut map: BTreeMap<_, Vec<&FoldResult>> = BTreeMap::new();
    for r in folds {
        map.entry((r.model, r.calibrator)).or_default().push(r);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;
    use crate::models::{Partition, ScoreRow};

    fn toy_dataset() -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..80 {
            let x = i as f64;
            rows.push(vec![x % 3.0, x, (x * 7.0) % 11.0]);
            labels.push(u8::from(i % 4 == 0 || x > 70.0));
        }
        Dataset::new(
            FeatureMatrix::from_rows(&rows).unwrap(),
            labels,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            folds: 2,
            repetitions: 1,
            calibrators: CalibratorKind::ALL.to_vec(),
            forest: ForestParams {
                n_trees: 5,
                ..ForestParams::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn smoke_run_has_every_pair() {
        let config = small_config();
        let out = run_experiment_on(&config, Some(&toy_dataset()), None).unwrap();
        // logistic keeps only the uncalibrated row
        assert_eq!(out.table.rows.len(), 4 + 4 + 1);
        assert!(out.table.rows.iter().all(|r| r.n_folds == 2));
        assert_eq!(out.folds.len(), 9 * 2);
    }

    #[test]
    fn paired_variants_share_test_ids() {
        let out = run_experiment_on(&small_config(), Some(&toy_dataset()), None).unwrap();
        for group in by_pair(&out.folds).values() {
            for (r, s) in group.iter().zip(&out.splits) {
                assert_eq!(r.instance_ids, s.test_ids);
            }
        }
    }

    #[test]
    fn uncalibrated_only_run() {
        let config = ExperimentConfig {
            calibrators: vec![CalibratorKind::None],
            ..small_config()
        };
        let out = run_experiment_on(&config, Some(&toy_dataset()), None).unwrap();
        assert!(out
            .folds
            .iter()
            .all(|r| r.calibrator == CalibratorKind::None));
        assert!(out.folds.iter().all(|r| r
            .intervals
            .iter()
            .zip(&r.scores)
            .all(|(iv, s)| iv.point == *s)));
    }

    #[test]
    fn parallel_and_serial_agree() {
        let serial = ExperimentConfig {
            parallel: false,
            ..small_config()
        };
        let a = run_experiment_on(&small_config(), Some(&toy_dataset()), None).unwrap();
        let b = run_experiment_on(&serial, Some(&toy_dataset()), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_is_the_fold_mean() {
        let out = run_experiment_on(&small_config(), Some(&toy_dataset()), None).unwrap();
        for row in &out.table.rows {
            let cell: Vec<_> = out
                .folds
                .iter()
                .filter(|r| r.model == row.model && r.calibrator == row.calibrator)
                .collect();
            let acc = cell.iter().map(|r| r.report.accuracy).sum::<f64>() / cell.len() as f64;
            assert_eq!(acc, row.accuracy);
            let ece = cell.iter().map(|r| r.report.ece).sum::<f64>() / cell.len() as f64;
            assert_eq!(ece, row.ece);
            let defined: Vec<f64> = cell.iter().filter_map(|r| r.report.ece1).collect();
            assert_eq!(defined.len(), row.n_folds_ece1);
            if !defined.is_empty() {
                assert_eq!(
                    Some(defined.iter().sum::<f64>() / defined.len() as f64),
                    row.ece1
                );
            }
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        for config in [
            ExperimentConfig {
                folds: 1,
                ..small_config()
            },
            ExperimentConfig {
                repetitions: 0,
                ..small_config()
            },
            ExperimentConfig {
                models: vec![],
                ..small_config()
            },
            ExperimentConfig {
                calibrators: vec![],
                ..small_config()
            },
        ] {
            assert!(matches!(config.validate(), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn config_json_defaults_fill_gaps() {
        let config: ExperimentConfig =
            serde_json::from_str(r#"{"folds": 3, "calibrators": ["none", "platt"]}"#).unwrap();
        assert_eq!(config.folds, 3);
        assert_eq!(config.repetitions, 10);
        assert_eq!(
            config.calibrators,
            vec![CalibratorKind::None, CalibratorKind::Platt]
        );
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"fold": 3}"#).is_err());
    }

    fn row(id: u64, fold: u64, partition: Partition, score: f64, label: Label) -> ScoreRow {
        ScoreRow {
            instance_id: id,
            fold_id: fold,
            partition,
            score,
            label,
        }
    }

    #[test]
    fn calibrate_scores_worked_example() {
        let cal = [(0.1, 0), (0.2, 0), (0.3, 1), (0.4, 1), (0.6, 1), (0.9, 1)];
        let mut rows: Vec<ScoreRow> = cal
            .iter()
            .enumerate()
            .map(|(i, &(s, y))| row(i as u64, 0, Partition::Calibration, s, y))
            .collect();
        rows.push(row(99, 0, Partition::Test, 0.8, 1));
        let table = ScoreTable::new(rows).unwrap();
        let out = calibrate_scores(&table, CalibratorKind::VennAbers).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].p0, out[0].p1, out[0].point), (0.75, 1.0, 0.8));
        let mut buf = Vec::new();
        write_calibrated_scores(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "instance_id,fold_id,score,p0,p1,point"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "99,0,0.8,0.75,1.0,0.8");
    }

    #[test]
    fn isotonic_scores_give_block_means() {
        let rows = vec![
            row(0, 0, Partition::Calibration, 0.1, 0),
            row(1, 0, Partition::Calibration, 0.2, 0),
            row(2, 0, Partition::Calibration, 0.7, 1),
            row(3, 0, Partition::Calibration, 0.8, 1),
            row(4, 0, Partition::Test, 0.15, 0),
            row(5, 0, Partition::Test, 0.75, 1),
        ];
        let out =
            calibrate_scores(&ScoreTable::new(rows).unwrap(), CalibratorKind::Isotonic).unwrap();
        assert_eq!(out[0].point, 0.0);
        assert_eq!(out[1].point, 1.0);
        assert!(out.iter().all(|r| r.p0 == r.p1 && r.p1 == r.point));
    }

    #[test]
    fn single_class_fold_names_the_fold() {
        let rows = vec![
            row(0, 7, Partition::Calibration, 0.1, 1),
            row(1, 7, Partition::Calibration, 0.2, 1),
            row(2, 7, Partition::Test, 0.3, 0),
        ];
        let err =
            calibrate_scores(&ScoreTable::new(rows).unwrap(), CalibratorKind::Platt).unwrap_err();
        assert!(
            matches!(err, Error::Fold { ref fold, .. } if fold == "7"),
            "{err}"
        );
    }

    #[test]
    fn missing_partition_is_an_error() {
        let rows = vec![row(0, 1, Partition::Test, 0.3, 0)];
        assert!(
            calibrate_scores(&ScoreTable::new(rows).unwrap(), CalibratorKind::VennAbers).is_err()
        );
    }

    #[test]
    fn empty_minority_gives_header_only() {
        let mut buf = Vec::new();
        export_reliability(
            &[0.1, 0.2],
            &[0, 1],
            ReliabilityScope::Minority,
            10,
            BinMode::Width,
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_low,bin_high,count,mop,foc\n"
        );
    }

    #[test]
    fn external_model_uses_table_folds() {
        let mut rows = Vec::new();
        for fold in 0..2u64 {
            for i in 0..10u64 {
                let y = u8::from(i % 2 == 0);
                let s = if y == 1 {
                    0.6 + i as f64 / 100.0
                } else {
                    0.3 + i as f64 / 100.0
                };
                let part = if i < 6 {
                    Partition::Calibration
                } else {
                    Partition::Test
                };
                rows.push(row(fold * 100 + i, fold, part, s, y));
            }
        }
        let table = ScoreTable::new(rows).unwrap();
        let config = ExperimentConfig {
            models: vec![ModelKind::External],
            calibrators: vec![CalibratorKind::None, CalibratorKind::VennAbers],
            ..small_config()
        };
        let out = run_experiment_on(&config, None, Some(&table)).unwrap();
        assert_eq!(out.table.rows.len(), 2);
        assert!(out.table.rows.iter().all(|r| r.n_folds == 2));
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            out: Some(dir.path().to_path_buf()),
            ..small_config()
        };
        let out = run_experiment_on(&config, Some(&toy_dataset()), None).unwrap();
        let (p, y) =
            load_fold_predictions(dir.path(), ModelKind::Forest, CalibratorKind::VennAbers)
                .unwrap();
        assert_eq!(
            (p, y),
            pooled_predictions(&out.folds, ModelKind::Forest, CalibratorKind::VennAbers)
        );
        let csv = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(csv, out.table.to_csv_string().unwrap());
        assert!(dir.path().join("rep0_fold1_tree_platt.json").exists());
        assert!(dir
            .path()
            .join("reliability_logistic_none_minority.csv")
            .exists());
        assert!(
            load_fold_predictions(dir.path(), ModelKind::Logistic, CalibratorKind::Platt).is_err()
        );
    }

    #[test]
    fn venn_tree_fit_annotates_leaves() {
        let fit = fit_venn_tree(&toy_dataset(), TreeParams::default(), 2, 0.5, 1, Some(2)).unwrap();
        assert!(fit.venn_tree.tree.depth() <= 2);
        let total: usize = fit
            .venn_tree
            .leaves()
            .map(|(_, a)| a.n_calibration_instances.unwrap())
            .sum();
        assert_eq!(total, fit.split.calibration_ids.len());
    }
}
