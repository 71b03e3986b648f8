use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use venncal_core::data::replica::{generate, write_csv, ReplicaConfig, DEFAULT_REPLICA_SEED};
use venncal_core::data::{load_csv, CsvSchema};
use venncal_core::harness::{
    calibrate_scores, export_reliability, fit_venn_tree, load_fold_predictions, run_experiment,
    write_calibrated_scores, ExperimentConfig, ModelKind, ReliabilityScope,
};
use venncal_core::metrics::BinMode;
use venncal_core::models::{load_score_table, TreeParams};
use venncal_core::venn_tree::{extract_rules, format_rules, render_tree};
use venncal_core::CalibratorKind;

#[derive(Parser)]
#[command(
    name = "venncal",
    version,
    about = "Calibrated probabilities for scoring classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated cross-validation of models and calibrators.
    Experiment(ExperimentArgs),
    /// Calibrate an external score table fold by fold.
    CalibrateScores(CalibrateArgs),
    /// Pooled reliability bins from a finished experiment.
    Reliability(ReliabilityArgs),
    /// Decision tree with Venn-Abers intervals in its leaves.
    VennTree(VennTreeArgs),
    /// Write a synthetic predictive-maintenance CSV.
    GenerateData(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BinModeArg {
    Width,
    Frequency,
}

impl From<BinModeArg> for BinMode {
    fn from(m: BinModeArg) -> Self {
        match m {
            BinModeArg::Width => BinMode::Width,
            BinModeArg::Frequency => BinMode::Frequency,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    Minority,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Score table for the `external` model.
    #[arg(long)]
    score_table: Option<PathBuf>,
    /// Comma-separated: tree, forest, logistic, external.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Comma-separated: none, venn-abers, platt, isotonic.
    #[arg(long, value_delimiter = ',')]
    calibrators: Option<Vec<String>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    cal_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long, value_enum)]
    bin_mode: Option<BinModeArg>,
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Maximum tree depth for both the tree and the forest members.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Run folds one after another.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with columns instance_id,fold_id,partition,score,label.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "venn-abers")]
    calibrator: String,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReliabilityArgs {
    /// Output directory of an `experiment` run.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    model: String,
    #[arg(long)]
    calibrator: String,
    #[arg(long, value_enum, default_value = "all")]
    scope: ScopeArg,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, value_enum, default_value = "width")]
    bin_mode: BinModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VennTreeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Depth limit used when growing the tree.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Depth at which the tree is cut for display.
    #[arg(long, default_value_t = 5)]
    display_depth: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    cal_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for venn_tree.dot, rules.txt and venn_tree.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REPLICA_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    rows: usize,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn parse_list<T: std::str::FromStr<Err = venncal_core::Error>>(items: &[String]) -> Result<Vec<T>> {
    items
        .iter()
        .map(|s| s.trim().parse::<T>().map_err(Into::into))
        .collect()
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)
            .with_context(|| format!("cannot read config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.data {
        config.data = Some(v);
    }
    if let Some(v) = args.score_table {
        config.score_table = Some(v);
    }
    if let Some(v) = &args.models {
        config.models = parse_list(v)?;
    }
    if let Some(v) = &args.calibrators {
        config.calibrators = parse_list(v)?;
    }
    if let Some(v) = args.folds {
        config.folds = v;
    }
    if let Some(v) = args.repetitions {
        config.repetitions = v;
    }
    if let Some(v) = args.cal_fraction {
        config.calibration_fraction = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.out {
        config.out = Some(v);
    }
    if let Some(v) = args.bins {
        config.bins = v;
    }
    if let Some(v) = args.bin_mode {
        config.bin_mode = v.into();
    }
    if let Some(v) = args.trees {
        config.forest.n_trees = v;
    }
    if let Some(v) = args.max_depth {
        config.tree.max_depth = Some(v);
        config.forest.tree.max_depth = Some(v);
    }
    if args.serial {
        config.parallel = false;
    }
    let outcome = run_experiment(&config)?;
    let mut out = io::stdout().lock();
    outcome.table.write_csv(&mut out)?;
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let kind: CalibratorKind = args.calibrator.parse()?;
    let table = load_score_table(&args.scores)
        .with_context(|| format!("cannot load score table {}", args.scores.display()))?;
    let rows = calibrate_scores(&table, kind)?;
    let mut w = output(args.out.as_deref())?;
    write_calibrated_scores(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn reliability(args: ReliabilityArgs) -> Result<()> {
    let model: ModelKind = args.model.parse()?;
    let calibrator: CalibratorKind = args.calibrator.parse()?;
    let (p, y) = load_fold_predictions(&args.run_dir, model, calibrator)?;
    let scope = match args.scope {
        ScopeArg::All => ReliabilityScope::All,
        ScopeArg::Minority => ReliabilityScope::Minority,
    };
    let mut w = output(args.out.as_deref())?;
    export_reliability(&p, &y, scope, args.bins, args.bin_mode.into(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn venn_tree(args: VennTreeArgs) -> Result<()> {
    let dataset = load_csv(&args.data, &CsvSchema::ai4i())
        .with_context(|| format!("cannot load {}", args.data.display()))?;
    let params = TreeParams {
        max_depth: args.max_depth,
        ..TreeParams::default()
    };
    let fit = fit_venn_tree(
        &dataset,
        params,
        args.folds,
        args.cal_fraction,
        args.seed,
        Some(args.display_depth),
    )?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let write = |name: &str, text: &str| -> Result<()> {
        let path = args.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    };
    write("venn_tree.dot", &render_tree(&fit.venn_tree))?;
    let rules = extract_rules(&fit.venn_tree);
    write("rules.txt", &format_rules(&rules))?;
    write(
        "venn_tree.json",
        &serde_json::to_string_pretty(&fit.venn_tree)?,
    )?;
    println!(
        "{} leaves, {} rules written to {}",
        fit.venn_tree.tree.n_leaves(),
        rules.len(),
        args.out.display()
    );
    Ok(())
}

fn generate_data(args: GenerateArgs) -> Result<()> {
    if args.rows == 0 {
        bail!("--rows must be positive");
    }
    let records = generate(ReplicaConfig {
        n_rows: args.rows,
        seed: args.seed,
    });
    let mut w = output(args.out.as_deref())?;
    write_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Experiment(a) => experiment(a),
        Command::CalibrateScores(a) => calibrate(a),
        Command::Reliability(a) => reliability(a),
        Command::VennTree(a) => venn_tree(a),
        Command::GenerateData(a) => generate_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
