//! Command-line entry point: `analyze`, `train`, `compare`, `explain`, and
//! `report` subcommands over the library pipeline.
//!
//! Flags override the optional line-oriented `key = value` config file;
//! unknown config keys are errors. All randomness flows from the single
//! `--seed` value through derived streams, so identical invocations produce
//! byte-identical output files.

use crate::dataio::{encode, load_csv, EncodedMatrix, TabularDataset};
use crate::error::{Error, Result};
use crate::eval::{compare_schedules, CompareConfig, MetricsTable};
use crate::explain::{attribute, summarize_report, ModelFn, ShapReport, ShapSummary};
use crate::loss::{NamedSchedule, SchedulePlan, Stage, StageKind};
use crate::model::RecurrentModel;
use crate::resample::ResampleStrategy;
use crate::stats::{chi_square_matrix, vif_prune};
use crate::train::{train, AlphaMode, OptimizerKind, TrainConfig};
use clap::{Args, Parser, Subcommand};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_EPOCHS: usize = 100;
const DEFAULT_LR: f64 = 0.001;
const DEFAULT_BATCH: usize = 32;
const DEFAULT_HIDDEN: usize = 16;
const DEFAULT_FOLDS: usize = 10;
const DEFAULT_K_NEIGHBORS: usize = 5;
const DEFAULT_INSTANCES: usize = 20;
const DEFAULT_PERMUTATIONS: usize = 200;
const DEFAULT_VIF_THRESHOLD: f64 = 10.0;
const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Parser)]
#[command(
    name = "focalstage",
    version,
    about = "Staged focal-loss training pipeline for imbalanced binary classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chi-square association matrix and VIF prune trace
    Analyze(AnalyzeArgs),
    /// Train one schedule; emits checkpoints and an epoch log
    Train(TrainArgs),
    /// Cross-validated comparison of schedules; emits metrics and ROC points
    Compare(CompareArgs),
    /// Shapley summaries from previously written checkpoints
    Explain(ExplainArgs),
    /// Merge prior outputs into one plain-text summary
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Input CSV (UTF-8, comma-delimited, header row)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column name
    #[arg(long)]
    label: Option<String>,
    /// Output directory (default: out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Optional key = value config file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    /// Master seed for all randomness (default: 42)
    #[arg(long)]
    seed: Option<u64>,
    /// Total training epochs (default: 100)
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate (default: 0.001)
    #[arg(long)]
    lr: Option<f64>,
    /// Mini-batch size (default: 32)
    #[arg(long)]
    batch: Option<usize>,
    /// Hidden units (default: 16)
    #[arg(long)]
    hidden: Option<usize>,
    /// Optimizer: adam or sgd (default: adam)
    #[arg(long)]
    optimizer: Option<String>,
    /// Stop after this many epochs without training-loss improvement
    #[arg(long)]
    patience: Option<usize>,
    /// Resampling strategy: none, under, over, smote, hybrid (default: hybrid)
    #[arg(long)]
    resample: Option<String>,
    /// Resampling ratio (default: 1.0; hybrid undersample step: 0.25)
    #[arg(long)]
    ratio: Option<f64>,
    /// SMOTE neighbor count (default: 5)
    #[arg(long)]
    k_neighbors: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Schedule spec: multistage[:g[:e1:e2]], convex[:g], nonconvex[:g], custom
    #[arg(long)]
    schedule: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Schedule specs to compare (repeatable; default: the four standard arms)
    #[arg(long)]
    schedule: Vec<String>,
    /// Cross-validation folds (default: 10)
    #[arg(long)]
    folds: Option<usize>,
    /// Worker threads for fold/schedule evaluation (default: 1)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Master seed for background/instance sampling (default: 42)
    #[arg(long)]
    seed: Option<u64>,
    /// Background rows sampled from the data (default: 50)
    #[arg(long)]
    background_size: Option<usize>,
    /// Exact enumeration limit on feature count (default: 12)
    #[arg(long)]
    exact_limit: Option<usize>,
    /// Instances to explain (default: 20)
    #[arg(long)]
    instances: Option<usize>,
    /// Permutations when sampling is needed (default: 200)
    #[arg(long)]
    permutations: Option<usize>,
    /// Also write per-instance attribution CSVs
    #[arg(long)]
    per_instance: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding prior command outputs (default: out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parse the process arguments, execute, and map errors to exit codes:
/// 0 success, 1 data/pipeline error, 2 usage error (via clap).
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Train(args) => cmd_train(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Report(args) => cmd_report(args),
    }
}

// ---------------------------------------------------------------------------
// Config file

const KNOWN_KEYS: &[&str] = &[
    "data",
    "label",
    "out_dir",
    "seed",
    "epochs",
    "lr",
    "batch",
    "hidden",
    "folds",
    "jobs",
    "optimizer",
    "patience",
    "resample",
    "ratio",
    "k_neighbors",
    "background_size",
    "exact_limit",
    "instances",
    "permutations",
    "vif_threshold",
    "threshold",
    "alpha_pos",
    "alpha_neg",
    "schedule",
    "stage",
];

#[derive(Default)]
struct FileConfig {
    single: BTreeMap<String, String>,
    schedules: Vec<String>,
    stages: Vec<String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = FileConfig::default();
        let Some(path) = path else {
            return Ok(config);
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::InvalidConfig(format!(
                    "line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            match key {
                "schedule" => config.schedules.push(value.to_string()),
                "stage" => config.stages.push(value.to_string()),
                _ => {
                    config.single.insert(key.to_string(), value.to_string());
                }
            }
        }
        Ok(config)
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.single.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::InvalidConfig(format!("key '{key}': cannot parse '{raw}'"))
            }),
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

// ---------------------------------------------------------------------------
// Shared resolution

struct DataArgs {
    matrix: EncodedMatrix,
    dataset: TabularDataset,
    out_dir: PathBuf,
}

fn resolve_data(common: &CommonArgs, config: &FileConfig) -> Result<DataArgs> {
    let data = common
        .data
        .clone()
        .or_else(|| config.single.get("data").map(PathBuf::from))
        .ok_or_else(|| Error::Invalid("--data is required".into()))?;
    let label = common
        .label
        .clone()
        .or_else(|| config.single.get("label").cloned())
        .ok_or_else(|| Error::Invalid("--label is required".into()))?;
    let out_dir = resolve_out_dir(common.out_dir.clone(), config)?;
    let dataset = load_csv(&data, &label)?;
    let matrix = encode(&dataset);
    Ok(DataArgs {
        matrix,
        dataset,
        out_dir,
    })
}

fn resolve_out_dir(flag: Option<PathBuf>, config: &FileConfig) -> Result<PathBuf> {
    let out_dir = flag
        .or_else(|| config.single.get("out_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
        path: out_dir.clone(),
        source,
    })?;
    Ok(out_dir)
}

fn resolve_optimizer(name: &str) -> Result<OptimizerKind> {
    match name {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        other => Err(Error::Invalid(format!(
            "unknown optimizer '{other}' (expected adam or sgd)"
        ))),
    }
}

fn resolve_alpha_mode(config: &FileConfig) -> Result<AlphaMode> {
    let pos: Option<f64> = config.get("alpha_pos")?;
    let neg: Option<f64> = config.get("alpha_neg")?;
    match (pos, neg) {
        (Some(alpha_pos), Some(alpha_neg)) => Ok(AlphaMode::Fixed {
            alpha_pos,
            alpha_neg,
        }),
        (None, None) => Ok(AlphaMode::Balanced),
        _ => Err(Error::InvalidConfig(
            "alpha_pos and alpha_neg must be set together".into(),
        )),
    }
}

fn resolve_resample(
    flags: &TrainFlags,
    config: &FileConfig,
) -> Result<ResampleStrategy> {
    let name = flags
        .resample
        .clone()
        .or_else(|| config.single.get("resample").cloned())
        .unwrap_or_else(|| "hybrid".into());
    let ratio: Option<f64> = match flags.ratio {
        Some(r) => Some(r),
        None => config.get("ratio")?,
    };
    let k = pick(flags.k_neighbors, config.get("k_neighbors")?, DEFAULT_K_NEIGHBORS);
    Ok(match name.as_str() {
        "none" => ResampleStrategy::None,
        "under" => ResampleStrategy::Undersample {
            ratio: ratio.unwrap_or(1.0),
        },
        "over" => ResampleStrategy::Oversample {
            ratio: ratio.unwrap_or(1.0),
        },
        "smote" => ResampleStrategy::Smote {
            k,
            ratio: ratio.unwrap_or(1.0),
        },
        "hybrid" => ResampleStrategy::Hybrid {
            under_ratio: ratio.unwrap_or(0.25),
            k,
        },
        other => {
            return Err(Error::Invalid(format!(
                "unknown resampling strategy '{other}' (expected none, under, over, smote, hybrid)"
            )))
        }
    })
}

fn resolve_train_config(
    flags: &TrainFlags,
    config: &FileConfig,
    schedule: SchedulePlan,
) -> Result<TrainConfig> {
    let optimizer_name = flags
        .optimizer
        .clone()
        .or_else(|| config.single.get("optimizer").cloned())
        .unwrap_or_else(|| "adam".into());
    Ok(TrainConfig {
        learning_rate: pick(flags.lr, config.get("lr")?, DEFAULT_LR),
        batch_size: pick(flags.batch, config.get("batch")?, DEFAULT_BATCH),
        seed: pick(flags.seed, config.get("seed")?, DEFAULT_SEED),
        optimizer: resolve_optimizer(&optimizer_name)?,
        alpha: resolve_alpha_mode(config)?,
        hidden_dim: pick(flags.hidden, config.get("hidden")?, DEFAULT_HIDDEN),
        patience: flags.patience.or(config.get("patience")?),
        ..TrainConfig::default().with_schedule(schedule)
    })
}

// ---------------------------------------------------------------------------
// Schedule parsing

fn parse_schedule_spec(
    spec: &str,
    total_epochs: usize,
    config: &FileConfig,
) -> Result<NamedSchedule> {
    let parts: Vec<&str> = spec.split(':').collect();
    let parse_value = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidSchedule(format!("cannot parse '{s}' in '{spec}'")))
    };
    match parts[0] {
        "multistage" => match parts.len() {
            1 => NamedSchedule::multistage(total_epochs),
            2 => {
                let gamma = parse_value(parts[1])?;
                let default = SchedulePlan::default_multistage(total_epochs)?;
                let (e1, e2) = (
                    default.stages()[0].last_epoch,
                    default.stages()[1].last_epoch,
                );
                Ok(NamedSchedule {
                    name: format!("Multistage(γ={})", crate::loss::fmt_value(gamma)),
                    plan: SchedulePlan::multistage(gamma, e1, e2, total_epochs)?,
                })
            }
            4 => {
                let gamma = parse_value(parts[1])?;
                let e1 = parts[2].parse::<usize>().map_err(|_| {
                    Error::InvalidSchedule(format!("bad cutoff '{}'", parts[2]))
                })?;
                let e2 = parts[3].parse::<usize>().map_err(|_| {
                    Error::InvalidSchedule(format!("bad cutoff '{}'", parts[3]))
                })?;
                Ok(NamedSchedule {
                    name: format!("Multistage(γ={})", crate::loss::fmt_value(gamma)),
                    plan: SchedulePlan::multistage(gamma, e1, e2, total_epochs)?,
                })
            }
            _ => Err(Error::InvalidSchedule(format!(
                "expected multistage[:gamma[:e1:e2]], got '{spec}'"
            ))),
        },
        "convex" => {
            let gamma = if parts.len() > 1 {
                parse_value(parts[1])?
            } else {
                0.0
            };
            NamedSchedule::convex(gamma, total_epochs)
        }
        "nonconvex" => {
            let gamma = if parts.len() > 1 {
                parse_value(parts[1])?
            } else {
                4.0
            };
            NamedSchedule::nonconvex(gamma, total_epochs)
        }
        "custom" => {
            if config.stages.is_empty() {
                return Err(Error::InvalidSchedule(
                    "schedule 'custom' needs stage lines in the config file".into(),
                ));
            }
            custom_plan(&config.stages, total_epochs)
        }
        other => Err(Error::InvalidSchedule(format!(
            "unknown schedule kind '{other}'"
        ))),
    }
}

/// Build a plan from `stage = <kind>:<value>:<first>-<last>` config lines.
fn custom_plan(lines: &[String], total_epochs: usize) -> Result<NamedSchedule> {
    let mut stages = Vec::with_capacity(lines.len());
    for line in lines {
        let bad = || Error::InvalidSchedule(format!(
            "stage line '{line}' must be <kind>:<value>:<first>-<last>"
        ));
        let parts: Vec<&str> = line.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let value: f64 = parts[1].parse().map_err(|_| bad())?;
        let (first, last) = parts[2].split_once('-').ok_or_else(bad)?;
        let first_epoch: usize = first.parse().map_err(|_| bad())?;
        let last_epoch: usize = last.parse().map_err(|_| bad())?;
        let kind = match parts[0] {
            "convex" => StageKind::Convex { gamma: value },
            "power" => StageKind::Power { exponent: value },
            _ => return Err(bad()),
        };
        stages.push(Stage {
            kind,
            first_epoch,
            last_epoch,
        });
    }
    let plan = SchedulePlan::new(stages)?;
    if plan.total_epochs() != total_epochs {
        return Err(Error::InvalidSchedule(format!(
            "custom stages end at epoch {} but total epochs is {total_epochs}",
            plan.total_epochs()
        )));
    }
    Ok(NamedSchedule {
        name: "Custom".into(),
        plan,
    })
}

fn resolve_schedules(
    specs: &[String],
    config: &FileConfig,
    total_epochs: usize,
) -> Result<Vec<NamedSchedule>> {
    let specs: Vec<String> = if !specs.is_empty() {
        specs.to_vec()
    } else if !config.schedules.is_empty() {
        config.schedules.clone()
    } else if !config.stages.is_empty() {
        vec!["custom".into()]
    } else {
        return NamedSchedule::default_comparison(total_epochs);
    };
    specs
        .iter()
        .map(|s| parse_schedule_spec(s, total_epochs, config))
        .collect()
}

// ---------------------------------------------------------------------------
// Output helpers

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn finish_csv(mut writer: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn csv_record_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        record: 0,
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let config = FileConfig::load(args.common.config.as_deref())?;
    let data = resolve_data(&args.common, &config)?;
    let threshold = pick(None, config.get("vif_threshold")?, DEFAULT_VIF_THRESHOLD);

    let chi = chi_square_matrix(&data.dataset)?;
    let chi_path = data.out_dir.join("chi_square_matrix.csv");
    let mut writer = csv_writer(&chi_path)?;
    writer
        .write_record(&chi.feature_names)
        .map_err(|e| csv_record_error(&chi_path, e))?;
    for row in &chi.p_values {
        writer
            .write_record(row.iter().map(|p| fmt6(*p)))
            .map_err(|e| csv_record_error(&chi_path, e))?;
    }
    finish_csv(writer, &chi_path)?;

    // A single feature column cannot be collinear with anything; emit an
    // empty trace rather than rejecting the analysis.
    let (removed, retained) = if data.matrix.n_features() < 2 {
        (Vec::new(), data.matrix.feature_names.clone())
    } else {
        let trace = vif_prune(&data.matrix, threshold)?;
        (trace.removed, trace.retained)
    };
    let mut text = String::new();
    for (name, vif) in &removed {
        writeln!(text, "removed {name} vif={}", fmt6(*vif)).expect("string write");
    }
    write_file(&data.out_dir.join("vif_prune.txt"), &text)?;
    println!(
        "analyze: {} categorical columns, {} features removed, {} retained",
        chi.feature_names.len(),
        removed.len(),
        retained.len()
    );
    Ok(())
}

fn write_epoch_log(path: &Path, logs: &[crate::train::EpochLog]) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer
        .write_record(["epoch", "stage", "mean_loss", "train_accuracy"])
        .map_err(|e| csv_record_error(path, e))?;
    for log in logs {
        writer
            .write_record([
                log.epoch.to_string(),
                log.stage.to_string(),
                fmt6(log.mean_loss),
                fmt6(log.train_accuracy),
            ])
            .map_err(|e| csv_record_error(path, e))?;
    }
    finish_csv(writer, path)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = FileConfig::load(args.common.config.as_deref())?;
    let data = resolve_data(&args.common, &config)?;
    let epochs = pick(args.train.epochs, config.get("epochs")?, DEFAULT_EPOCHS);
    let specs: Vec<String> = args.schedule.clone().into_iter().collect();
    let schedules = resolve_schedules(&specs, &config, epochs)?;
    let schedule = if specs.is_empty() && config.schedules.is_empty() && config.stages.is_empty() {
        NamedSchedule::multistage(epochs)?
    } else {
        schedules
            .into_iter()
            .next()
            .expect("at least one schedule resolved")
    };
    let train_config = resolve_train_config(&args.train, &config, schedule.plan.clone())?;
    let strategy = resolve_resample(&args.train, &config)?;
    let resampled = strategy.apply(&data.matrix, train_config.seed)?;
    let (pos, neg) = resampled.class_counts();
    println!(
        "training '{}' on {} rows ({pos} positive / {neg} negative) for {epochs} epochs",
        schedule.name,
        resampled.n_rows()
    );

    let outcome = train(&resampled, &train_config)?;
    write_epoch_log(&data.out_dir.join("epoch_log.csv"), &outcome.logs)?;
    let slug = schedule.slug();
    for checkpoint in &outcome.checkpoints {
        let path = data.out_dir.join(format!(
            "checkpoint_{slug}_stage_{}.json",
            checkpoint.stage_index + 1
        ));
        checkpoint.model.save(&path)?;
        println!("wrote {}", path.display());
    }
    let final_path = data.out_dir.join(format!("checkpoint_{slug}_final.json"));
    outcome.model.save(&final_path)?;
    println!("wrote {}", final_path.display());
    let last = outcome.logs.last().expect("at least one epoch");
    println!(
        "final epoch {}: stage {}, loss {}, accuracy {}",
        last.epoch,
        last.stage,
        fmt6(last.mean_loss),
        fmt6(last.train_accuracy)
    );
    Ok(())
}

fn write_metrics_csv(path: &Path, table: &MetricsTable) -> Result<()> {
    let mut writer = csv_writer(path)?;
    writer
        .write_record([
            "schedule",
            "fold",
            "loss",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "auc",
        ])
        .map_err(|e| csv_record_error(path, e))?;
    for schedule in &table.schedules {
        for (fi, fold) in schedule.folds.iter().enumerate() {
            writer
                .write_record([
                    schedule.name.clone(),
                    (fi + 1).to_string(),
                    fmt6(fold.loss),
                    fmt6(fold.accuracy),
                    fmt6(fold.precision),
                    fmt6(fold.recall),
                    fmt6(fold.f1),
                    fmt6(fold.auc),
                ])
                .map_err(|e| csv_record_error(path, e))?;
        }
        let mean = &schedule.mean;
        writer
            .write_record([
                schedule.name.clone(),
                "mean".to_string(),
                fmt6(mean.loss),
                fmt6(mean.accuracy),
                fmt6(mean.precision),
                fmt6(mean.recall),
                fmt6(mean.f1),
                fmt6(mean.auc),
            ])
            .map_err(|e| csv_record_error(path, e))?;
    }
    finish_csv(writer, path)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let config = FileConfig::load(args.common.config.as_deref())?;
    let data = resolve_data(&args.common, &config)?;
    let epochs = pick(args.train.epochs, config.get("epochs")?, DEFAULT_EPOCHS);
    let schedules = resolve_schedules(&args.schedule, &config, epochs)?;
    let folds = pick(args.folds, config.get("folds")?, DEFAULT_FOLDS);
    let jobs = pick(args.jobs, config.get("jobs")?, 1usize).max(1);
    let threshold = pick(None, config.get("threshold")?, DEFAULT_THRESHOLD);
    let base = resolve_train_config(
        &args.train,
        &config,
        SchedulePlan::default_multistage(epochs)?,
    )?;
    let compare_config = CompareConfig {
        base,
        folds,
        resample: resolve_resample(&args.train, &config)?,
        threshold,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build thread pool: {e}")))?;
    let table =
        pool.install(|| compare_schedules(&data.matrix, &schedules, &compare_config))?;

    write_metrics_csv(&data.out_dir.join("metrics.csv"), &table)?;
    for schedule in &table.schedules {
        let path = data.out_dir.join(format!("roc_{}.csv", schedule.slug));
        let mut writer = csv_writer(&path)?;
        writer
            .write_record(["fpr", "tpr"])
            .map_err(|e| csv_record_error(&path, e))?;
        for (fpr, tpr) in &schedule.roc_points {
            writer
                .write_record([fmt6(*fpr), fmt6(*tpr)])
                .map_err(|e| csv_record_error(&path, e))?;
        }
        finish_csv(writer, &path)?;
    }
    for schedule in &table.schedules {
        let m = &schedule.mean;
        println!(
            "{}: loss {} accuracy {} precision {} recall {} f1 {} auc {}",
            schedule.name,
            fmt6(m.loss),
            fmt6(m.accuracy),
            fmt6(m.precision),
            fmt6(m.recall),
            fmt6(m.f1),
            fmt6(m.auc)
        );
    }
    Ok(())
}

fn sampled_rows(matrix: &EncodedMatrix, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let take = count.min(matrix.n_rows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = sample(&mut rng, matrix.n_rows(), take).into_vec();
    indices.sort_unstable();
    indices.iter().map(|&i| matrix.row(i).to_vec()).collect()
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let config = FileConfig::load(args.common.config.as_deref())?;
    let data = resolve_data(&args.common, &config)?;
    let seed = pick(args.seed, config.get("seed")?, DEFAULT_SEED);
    let background_size = pick(
        args.background_size,
        config.get("background_size")?,
        crate::explain::DEFAULT_BACKGROUND_SIZE,
    );
    let exact_limit = pick(
        args.exact_limit,
        config.get("exact_limit")?,
        crate::explain::DEFAULT_EXACT_LIMIT,
    );
    let n_instances = pick(args.instances, config.get("instances")?, DEFAULT_INSTANCES);
    let n_permutations = pick(
        args.permutations,
        config.get("permutations")?,
        DEFAULT_PERMUTATIONS,
    );

    let mut checkpoint_paths: Vec<PathBuf> = std::fs::read_dir(&data.out_dir)
        .map_err(|source| Error::Io {
            path: data.out_dir.clone(),
            source,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("checkpoint_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    checkpoint_paths.sort();
    if checkpoint_paths.is_empty() {
        return Err(Error::Invalid(format!(
            "no checkpoint_*.json files in {}; run train first",
            data.out_dir.display()
        )));
    }

    let mut models: Vec<(String, RecurrentModel)> = Vec::new();
    for path in &checkpoint_paths {
        let model = RecurrentModel::load(path)?;
        if model.input_dim() != data.matrix.n_features() {
            return Err(Error::InvalidCheckpoint {
                path: path.clone(),
                message: format!(
                    "model expects {} features but the data has {}",
                    model.input_dim(),
                    data.matrix.n_features()
                ),
            });
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("checkpoint")
            .trim_start_matches("checkpoint_")
            .to_string();
        models.push((stem, model));
    }

    let background = sampled_rows(&data.matrix, background_size, seed);
    let instances = sampled_rows(&data.matrix, n_instances, seed.wrapping_add(1));
    println!(
        "explaining {} checkpoints on {} instances with {} background rows",
        models.len(),
        instances.len(),
        background.len()
    );

    let feature_names = data.matrix.feature_names.clone();
    let mut reports: Vec<(String, ShapReport)> = Vec::new();
    for (name, model) in &models {
        let predict = |row: &[f64]| model.predict_row(row);
        let report = attribute(
            &predict as ModelFn<'_>,
            &instances,
            &background,
            feature_names.clone(),
            exact_limit,
            n_permutations,
            seed.wrapping_add(2),
        )?;
        reports.push((name.clone(), report));
    }
    let summary = ShapSummary {
        feature_names: feature_names.clone(),
        columns: reports
            .iter()
            .map(|(name, report)| summarize_report(report, name))
            .collect(),
    };

    let path = data.out_dir.join("shap_summary.csv");
    let mut writer = csv_writer(&path)?;
    let mut header = vec!["feature_index".to_string(), "feature_name".to_string()];
    header.extend(summary.columns.iter().map(|c| c.name.clone()));
    writer
        .write_record(&header)
        .map_err(|e| csv_record_error(&path, e))?;
    for (j, feature) in summary.feature_names.iter().enumerate() {
        let mut record = vec![j.to_string(), feature.clone()];
        record.extend(summary.columns.iter().map(|c| fmt6(c.mean_abs[j])));
        writer
            .write_record(&record)
            .map_err(|e| csv_record_error(&path, e))?;
    }
    let mut evenness = vec!["evenness".to_string(), String::new()];
    evenness.extend(summary.columns.iter().map(|c| fmt6(c.evenness)));
    writer
        .write_record(&evenness)
        .map_err(|e| csv_record_error(&path, e))?;
    finish_csv(writer, &path)?;

    if args.per_instance {
        for (name, report) in &reports {
            let path = data.out_dir.join(format!("shap_instances_{name}.csv"));
            let mut writer = csv_writer(&path)?;
            let mut header = vec!["instance".to_string(), "base_value".to_string()];
            header.extend(report.feature_names.iter().cloned());
            writer
                .write_record(&header)
                .map_err(|e| csv_record_error(&path, e))?;
            for (i, phi) in report.attributions.iter().enumerate() {
                let mut record = vec![i.to_string(), fmt6(report.base_value)];
                record.extend(phi.iter().map(|v| fmt6(*v)));
                writer
                    .write_record(&record)
                    .map_err(|e| csv_record_error(&path, e))?;
            }
            finish_csv(writer, &path)?;
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let config = FileConfig::load(args.config.as_deref())?;
    let out_dir = resolve_out_dir(args.out_dir, &config)?;
    let mut sections: Vec<String> = Vec::new();

    let chi_path = out_dir.join("chi_square_matrix.csv");
    if chi_path.exists() {
        let mut reader = csv::Reader::from_path(&chi_path)
            .map_err(|e| csv_record_error(&chi_path, e))?;
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| csv_record_error(&chi_path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut low = 0usize;
        let mut pairs = 0usize;
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| csv_record_error(&chi_path, e))?;
            for (j, cell) in record.iter().enumerate() {
                if j > i {
                    pairs += 1;
                    if cell.parse::<f64>().unwrap_or(1.0) < 0.05 {
                        low += 1;
                    }
                }
            }
        }
        sections.push(format!(
            "== association analysis ==\n{} categorical columns; {low} of {pairs} pairs dependent at the 5% level\n",
            names.len()
        ));
    }

    let vif_path = out_dir.join("vif_prune.txt");
    if vif_path.exists() {
        let text = std::fs::read_to_string(&vif_path).map_err(|source| Error::Io {
            path: vif_path.clone(),
            source,
        })?;
        let count = text.lines().count();
        sections.push(format!(
            "== multicollinearity pruning ==\n{count} features removed\n{text}"
        ));
    }

    let log_path = out_dir.join("epoch_log.csv");
    if log_path.exists() {
        let mut reader =
            csv::Reader::from_path(&log_path).map_err(|e| csv_record_error(&log_path, e))?;
        let mut last: Option<Vec<String>> = None;
        let mut epochs = 0usize;
        for record in reader.records() {
            let record = record.map_err(|e| csv_record_error(&log_path, e))?;
            epochs += 1;
            last = Some(record.iter().map(String::from).collect());
        }
        if let Some(last) = last {
            sections.push(format!(
                "== training ==\n{epochs} epochs; final stage {}, loss {}, accuracy {}\n",
                last[1], last[2], last[3]
            ));
        }
    }

    let metrics_path = out_dir.join("metrics.csv");
    if metrics_path.exists() {
        let mut reader = csv::Reader::from_path(&metrics_path)
            .map_err(|e| csv_record_error(&metrics_path, e))?;
        let mut lines =
            vec!["schedule                loss  accuracy precision recall     f1     auc".to_string()];
        for record in reader.records() {
            let record = record.map_err(|e| csv_record_error(&metrics_path, e))?;
            if record.get(1) == Some("mean") {
                lines.push(format!(
                    "{:<22} {:>6} {:>8} {:>9} {:>6} {:>6} {:>7}",
                    record.get(0).unwrap_or(""),
                    &record[2][..record[2].len().min(6)],
                    &record[3][..record[3].len().min(6)],
                    &record[4][..record[4].len().min(6)],
                    &record[5][..record[5].len().min(6)],
                    &record[6][..record[6].len().min(6)],
                    &record[7][..record[7].len().min(6)],
                ));
            }
        }
        sections.push(format!(
            "== schedule comparison (fold means) ==\n{}\n",
            lines.join("\n")
        ));
    }

    let shap_path = out_dir.join("shap_summary.csv");
    if shap_path.exists() {
        let mut reader = csv::Reader::from_path(&shap_path)
            .map_err(|e| csv_record_error(&shap_path, e))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_record_error(&shap_path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut evenness: Option<Vec<String>> = None;
        for record in reader.records() {
            let record = record.map_err(|e| csv_record_error(&shap_path, e))?;
            let row: Vec<String> = record.iter().map(String::from).collect();
            if row[0] == "evenness" {
                evenness = Some(row);
            } else {
                rows.push(row);
            }
        }
        let mut lines = Vec::new();
        for (col, model) in headers.iter().enumerate().skip(2) {
            let mut ranked: Vec<(&str, f64)> = rows
                .iter()
                .map(|r| (r[1].as_str(), r[col].parse::<f64>().unwrap_or(0.0)))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite means"));
            let top: Vec<String> = ranked
                .iter()
                .take(3)
                .map(|(name, v)| format!("{name} ({v:.4})"))
                .collect();
            let even = evenness
                .as_ref()
                .and_then(|e| e.get(col).cloned())
                .unwrap_or_default();
            lines.push(format!(
                "{model}: top features {}; evenness {even}",
                top.join(", ")
            ));
        }
        sections.push(format!("== attribution ==\n{}\n", lines.join("\n")));
    }

    if sections.is_empty() {
        return Err(Error::Invalid(format!(
            "no prior outputs found in {}; run analyze, train, compare, or explain first",
            out_dir.display()
        )));
    }
    let report = sections.join("\n");
    write_file(&out_dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}
