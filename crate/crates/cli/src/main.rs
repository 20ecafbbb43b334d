use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tfn_core::cv::{ablate, check_disjoint, cross_validate_grid, speaker_folds, validation_split};
use tfn_core::data::{dataset_stats, load_dataset, save_dataset, synth_generate, Dataset};
use tfn_core::fusion::FusionVariant;
use tfn_core::inference::Task;
use tfn_core::metrics::MetricRow;
use tfn_core::persist::{load_model, save_model};
use tfn_core::report::{table_header, table_row};
use tfn_core::train::{dataset_loss, evaluate, train, EpochRecord, TrainConfig};
use tfn_core::verify::{run_gradcheck, GradcheckOptions, COMPONENTS};
use tfn_core::TfnError;

mod config;

use config::RunConfigFile;

/// Invalid configuration text; mapped to the config exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Raised when the gradient check exceeds its tolerance.
#[derive(Debug)]
struct ToleranceBreach;

impl std::fmt::Display for ToleranceBreach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("gradient check exceeded tolerance")
    }
}

impl std::error::Error for ToleranceBreach {}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "tfn", version, about = "Tensor Fusion Network training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and print its profile.
    Synth(SynthArgs),
    /// Print the profile of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model on a train/validation split.
    Train(TrainArgs),
    /// Speaker-independent k-fold cross-validation of one variant.
    Cv(CvArgs),
    /// Cross-validate every fusion variant.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Score a saved model on a dataset.
    Eval(EvalArgs),
    /// Print the effective configuration as TOML.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file; its `[synth]` section is used.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `synth.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    variant: Option<FusionVariant>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    variant: Option<FusionVariant>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = tfn_core::verify::DEFAULT_SEEDS)]
    seeds: usize,
    /// Corrupt one component's analytic gradient (checks the checker).
    #[arg(long, value_name = "COMPONENT")]
    inject_fault: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if e.downcast_ref::<ToleranceBreach>().is_some() {
        return EXIT_NUMERIC;
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return EXIT_IO;
    }
    match e.downcast_ref::<TfnError>() {
        Some(TfnError::Config(_) | TfnError::TooFewSpeakers { .. }) => EXIT_CONFIG,
        Some(
            TfnError::Data(_)
            | TfnError::ModelDataMismatch { .. }
            | TfnError::Empty(_)
            | TfnError::LabelOutOfRange { .. }
            | TfnError::SpeakerLeak(_)
            | TfnError::Dimension { .. },
        ) => EXIT_DATA,
        Some(
            TfnError::NonFinite(_)
            | TfnError::NonFiniteGradient(_)
            | TfnError::Diverged { .. }
            | TfnError::AllConfigsDiverged
            | TfnError::NonScalarLoss(_)
            | TfnError::BackwardTwice,
        ) => EXIT_NUMERIC,
        Some(TfnError::Io { .. } | TfnError::ModelFormat(_)) => EXIT_IO,
        _ => 1,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Stats { data } => {
            let d = load_dataset(&data)?;
            print!("{}", dataset_stats(&d)?);
            Ok(())
        }
        Command::Train(a) => cmd_train(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Config { config } => {
            let cfg = RunConfigFile::load_or_default(config.as_deref())?;
            print!("{}", toml::to_string(&cfg).context("rendering config")?);
            Ok(())
        }
    }
}

fn required(flag: Option<PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    match flag.or_else(|| fallback.cloned()) {
        Some(p) => Ok(p),
        None => Err(ConfigError(format!("missing --{name} (or paths.{name} in the config)")).into()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| TfnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = RunConfigFile::load_or_default(a.spec.as_deref())?;
    let out = required(a.out, cfg.paths.out.as_ref(), "out")?;
    let mut spec = cfg.synth;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let data = synth_generate(&spec)?;
    save_dataset(&data, &out)?;
    print!("{}", dataset_stats(&data)?);
    Ok(())
}

/// Loads config and dataset and applies the flag overrides shared by the
/// training commands.
fn setup(common: &Common, variant: Option<FusionVariant>) -> Result<(RunConfigFile, Dataset)> {
    let mut cfg = RunConfigFile::load_or_default(common.config.as_deref())?;
    if let Some(t) = common.task {
        cfg.train.task = t;
    }
    if let Some(v) = variant {
        cfg.train.variant = v;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    for c in cfg.grid() {
        c.validate()?;
    }
    let path = required(common.data.clone(), cfg.paths.data.as_ref(), "data")?;
    let data = load_dataset(&path)?;
    Ok((cfg, data))
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    config: &'a TrainConfig,
    validation_videos: Vec<String>,
    train_size: usize,
    validation_size: usize,
    best_epoch: usize,
    final_train_loss: f64,
    validation: MetricRow,
    history: &'a [EpochRecord],
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (cfg, data) = setup(&a.common, a.variant)?;
    let out = required(a.out, cfg.paths.out.as_ref(), "out")?;
    let all: Vec<usize> = (0..data.len()).collect();
    let (train_idx, val_idx, videos) = validation_split(&data, &all)?;
    let train_set = data.subset(&train_idx);
    let validation = data.subset(&val_idx);
    let config = &cfg.train;
    let outcome = train(config, &train_set, &validation)?;
    save_model(&outcome.model, &out)?;
    let final_train_loss = dataset_loss(&outcome.model, &train_set, config.batch_size)?;
    let (_, val_metrics) = evaluate(&outcome.model, &validation)?;
    println!(
        "trained {} / {} on {} utterances ({} validation, videos {}), best epoch {}",
        config.variant.table_label(),
        config.task,
        train_set.len(),
        validation.len(),
        videos.join(","),
        outcome.best_epoch
    );
    println!("{}", table_header("validation"));
    println!("{}", table_row("", &val_metrics));
    println!("final train loss: {final_train_loss:.6e}");
    println!("model written to {}", out.display());
    let record = TrainRecord {
        config,
        validation_videos: videos,
        train_size: train_set.len(),
        validation_size: validation.len(),
        best_epoch: outcome.best_epoch,
        final_train_loss,
        validation: val_metrics,
        history: &outcome.history,
    };
    let history_path = {
        let mut s = out.clone().into_os_string();
        s.push(".history.json");
        PathBuf::from(s)
    };
    let json = serde_json::to_string_pretty(&record)?;
    write_text(&history_path, &json)?;
    if let Some(r) = a.common.report.as_ref().or(cfg.paths.report.as_ref()) {
        write_text(r, &json)?;
    }
    Ok(())
}

fn folds_or(cli: Option<usize>, cfg: &RunConfigFile) -> usize {
    cli.unwrap_or(cfg.cv.folds)
}

/// Re-derives the folds and aborts if any of them shares a speaker between
/// training and test.
fn assert_speaker_disjoint(data: &Dataset, k: usize, seed: u64) -> Result<()> {
    for fold in speaker_folds(data, k, seed)? {
        check_disjoint(data, &fold)?;
    }
    Ok(())
}

fn cmd_cv(a: CvArgs) -> Result<()> {
    let (cfg, data) = setup(&a.common, a.variant)?;
    let k = folds_or(a.folds, &cfg);
    assert_speaker_disjoint(&data, k, cfg.train.seed)?;
    let report = cross_validate_grid(&data, k, &cfg.grid())?;
    print!("{}", report.table());
    if let Some(r) = a.common.report.as_ref().or(cfg.paths.report.as_ref()) {
        write_text(r, &report.to_json())?;
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let (cfg, data) = setup(&a.common, None)?;
    let k = folds_or(a.folds, &cfg);
    assert_speaker_disjoint(&data, k, cfg.train.seed)?;
    let report = if cfg.grid().len() > 1 {
        let rows = FusionVariant::ABLATION_ORDER
            .iter()
            .map(|&variant| {
                let grid: Vec<TrainConfig> = cfg.grid().into_iter().map(|c| TrainConfig { variant, ..c }).collect();
                cross_validate_grid(&data, k, &grid)
            })
            .collect::<tfn_core::Result<Vec<_>>>()?;
        tfn_core::report::AblationReport {
            task: cfg.train.task,
            rows,
        }
    } else {
        ablate(&data, k, &cfg.train)?
    };
    print!("{}", report.table());
    if let Some(r) = a.common.report.as_ref().or(cfg.paths.report.as_ref()) {
        write_text(r, &report.to_json())?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    if let Some(f) = &a.inject_fault {
        if !COMPONENTS.contains(&f.as_str()) {
            bail!(ConfigError(format!(
                "unknown component `{f}`; expected one of {}",
                COMPONENTS.join(", ")
            )));
        }
    }
    let report = run_gradcheck(&GradcheckOptions {
        seed: a.seed,
        seeds: a.seeds,
        eps: a.eps,
        fault: a.inject_fault,
        ..GradcheckOptions::default()
    })?;
    print!("{}", report.table());
    if let Some(r) = &a.report {
        write_text(r, &serde_json::to_string_pretty(&report)?)?;
    }
    if !report.passed() {
        return Err(ToleranceBreach.into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRecord {
    variant: FusionVariant,
    task: Task,
    utterances: usize,
    metrics: MetricRow,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let (_, metrics) = evaluate(&model, &data)?;
    println!("{}", table_header("model"));
    println!("{}", table_row(&model.config.variant.table_label(), &metrics));
    if let Some(r) = &a.report {
        let rec = EvalRecord {
            variant: model.config.variant,
            task: model.config.task,
            utterances: data.len(),
            metrics,
        };
        write_text(r, &serde_json::to_string_pretty(&rec)?)?;
    }
    Ok(())
}
