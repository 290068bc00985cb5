//! `extrabench` command-line entry point.

mod config;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use extrabench::eval::scatter_dump;
use extrabench::graph::save_dataset;
use extrabench::isomorph::enumerate_connected;
use extrabench::model::{load_checkpoint, save_checkpoint, HeadKind};
use extrabench::pipeline::{
    forward_split, generate_synthetic, load_report, random_split, run_matrix, write_summary,
    CellInputs, RunOptions, SyntheticSpec, TieAdjustment, TrainingMethod,
};
use extrabench::pretext::{build_label_cache, save_label_cache};
use extrabench::ErrorKind;

use config::{load_dataset, RunConfig, VocabConfig};

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<extrabench::Error> for CliError {
    fn from(e: extrabench::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Runtime => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "extrabench", version, about = "Label-extrapolation benchmark for graph regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Forward,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Write all connected unlabeled graphs with N_MIN..=N_MAX nodes.
    EnumerateVocab {
        n_min: usize,
        n_max: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic labeled dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with generator and target settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compute mask, structure and motif labels for every record.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        structures: Option<PathBuf>,
        #[arg(long)]
        motifs: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        mask_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Split labeled records into train and validation ids.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Forward)]
        kind: SplitArg,
        #[arg(long, default_value_t = 2.0 / 92.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Pretrain one method's encoder and save it with a fresh regression head.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// One of the pretraining methods, e.g. task3_train_val.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Fine-tune a checkpoint (or a fresh encoder) on the train split.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run the method x seed matrix described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated method names overriding the config.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// Rebuild the summary files of a run directory and print summary.csv.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn guard(path: &Path, force: bool) -> CliResult {
    if path.exists() && !force {
        return Err(CliError::config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn enumerate_vocab(n_min: usize, n_max: usize, out: &Path, force: bool) -> CliResult {
    let vocab = enumerate_connected(n_min, n_max)?;
    guard(out, force)?;
    vocab.save(out)?;
    let sizes: Vec<String> = (n_min..=n_max)
        .map(|n| {
            let c = vocab.patterns().iter().filter(|g| g.node_count() == n).count();
            format!("{n}:{c}")
        })
        .collect();
    println!("{} structures ({}) -> {}", vocab.len(), sizes.join(" "), out.display());
    Ok(())
}

fn gen_data(n: usize, seed: u64, spec: Option<&Path>, out: &Path, force: bool) -> CliResult {
    let spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    let records = generate_synthetic(n, seed, &spec)?;
    guard(out, force)?;
    save_dataset(out, &records)?;
    let labels = records.iter().filter_map(|r| r.label);
    let (lo, hi) = labels.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    println!("{} records, labels in [{lo}, {hi}] -> {}", records.len(), out.display());
    Ok(())
}

fn label(dataset: &Path, structures: Option<PathBuf>, motifs: Option<PathBuf>, mask_seed: u64, out: &Path, force: bool) -> CliResult {
    let records = load_dataset(dataset)?;
    let vocab = VocabConfig { structures, motifs, ..VocabConfig::default() }.load()?;
    let cache = build_label_cache(&records, mask_seed, &vocab.structures, &vocab.motifs)?;
    guard(out, force)?;
    save_label_cache(out, &cache)?;
    println!(
        "{} records, {} structure bits, {} motif bits -> {}",
        cache.len(),
        vocab.structures.len(),
        vocab.motifs.len(),
        out.display()
    );
    Ok(())
}

fn split(dataset: &Path, kind: SplitArg, fraction: f64, seed: u64, out: &Path, force: bool) -> CliResult {
    let records = load_dataset(dataset)?;
    let spec = match kind {
        SplitArg::Forward => forward_split(&records, fraction)?,
        SplitArg::Random => random_split(&records, fraction, seed)?,
    };
    guard(out, force)?;
    write_json(out, &spec)?;
    println!(
        "train {}, validation {} (requested {}), max train label {}, min validation label {}",
        spec.train.len(),
        spec.validation.len(),
        spec.requested_validation,
        spec.max_train_label,
        spec.min_validation_label
    );
    match spec.tie_adjustment {
        TieAdjustment::None => {}
        TieAdjustment::ToTrain(k) => println!("{k} boundary-tied records moved to train"),
        TieAdjustment::ToValidation(k) => println!("{k} boundary-tied records moved to validation"),
    }
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    records: Vec<extrabench::graph::GraphRecord>,
    split: extrabench::pipeline::SplitSpec,
    labels: Vec<extrabench::pretext::LabelCacheEntry>,
}

fn prepare(config: &Path, need_labels: bool) -> CliResult<Prepared> {
    let cfg = RunConfig::load(config)?;
    let records = cfg.records()?;
    let split = cfg.experiment.split.apply(&records)?;
    let labels = if need_labels {
        let vocab = cfg.vocab.load()?;
        build_label_cache(&records, cfg.experiment.mask_seed, &vocab.structures, &vocab.motifs)?
    } else {
        Vec::new()
    };
    Ok(Prepared { cfg, records, split, labels })
}

fn pretrain(config: &Path, method: &str, seed: u64, out: &Path, force: bool) -> CliResult {
    let method: TrainingMethod = method.parse()?;
    if method.pretext.is_none() {
        return Err(CliError::config("the baseline has no pretraining stage"));
    }
    let p = prepare(config, true)?;
    guard(out, force)?;
    let inputs = CellInputs::new(&p.records, &p.split, &p.labels, &p.cfg.experiment)?;
    let stage = inputs.pretrain_stage(method, seed)?;
    save_checkpoint(&stage.model, out)?;
    println!(
        "{method} seed {seed}: pretext dim {}, loss per epoch {}",
        stage.pretext_dim.unwrap_or(0),
        serde_json::to_string(&stage.epoch_losses)?
    );
    Ok(())
}

fn finetune(config: &Path, checkpoint: Option<&Path>, seed: u64, out: &Path, force: bool) -> CliResult {
    let p = prepare(config, false)?;
    guard(out, force)?;
    fs::create_dir_all(out)?;
    let inputs = CellInputs::new(&p.records, &p.split, &p.labels, &p.cfg.experiment)?;
    let model = match checkpoint {
        Some(path) => {
            let m = load_checkpoint(path)?;
            if m.head() != HeadKind::Regression {
                return Err(CliError::config(format!("{} does not carry a regression head", path.display())));
            }
            m
        }
        None => inputs.pretrain_stage(TrainingMethod::BASELINE, seed)?.model,
    };
    let outcome = inputs.finetune_stage(model, seed)?;
    write_json(&out.join("trace.json"), &outcome.trace)?;
    scatter_dump(&outcome.final_predictions, &outcome.validation_targets, out.join("scatter.csv"))?;
    save_checkpoint(&outcome.model, out.join("model.json"))?;
    if let Some(last) = outcome.trace.last() {
        let corr = last.rank_corr.map_or_else(|| "undefined".to_string(), |c| c.to_string());
        println!(
            "epoch {}: train_mae {} val_mae {} rank_corr {} (n={})",
            last.epoch, last.train_mae, last.val_mae, corr, last.val_count
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    output: Option<PathBuf>,
    methods: Option<Vec<String>>,
    seeds: Option<Vec<u64>>,
    jobs: usize,
    resume: bool,
    force: bool,
) -> CliResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    if let Some(m) = methods {
        cfg.experiment.methods = m.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(s) = seeds {
        cfg.experiment.seeds = s;
    }
    cfg.validate()?;
    let out = cfg.output.clone();
    let occupied = out.join("traces").exists() || out.join("summary.csv").exists();
    if occupied && !resume && !force {
        return Err(CliError::config(format!(
            "{} already holds a run; pass --resume or --force",
            out.display()
        )));
    }
    let records = cfg.records()?;
    let vocab = cfg.vocab.load()?;
    if force && !resume {
        for sub in ["traces", "scatter"] {
            let dir = out.join(sub);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
        }
    }
    fs::create_dir_all(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let options = RunOptions { out_dir: Some(out.clone()), jobs, resume };
    let report = run_matrix(&records, &cfg.experiment, &vocab, &options)?;
    print!("{}", report.summary_csv());
    std::io::stdout().flush()?;
    let failed: Vec<String> = report
        .cells
        .iter()
        .filter(|c| !c.is_ok())
        .map(|c| format!("{}-seed{}", c.method, c.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::runtime(format!("failed cells: {}", failed.join(", "))))
    }
}

fn report(dir: &Path) -> CliResult {
    let report = load_report(dir).map_err(|e| match e {
        extrabench::Error::Io(io) => CliError::data(format!("{}: {io}", dir.display())),
        other => other.into(),
    })?;
    write_summary(dir, &report)?;
    print!("{}", report.summary_csv());
    Ok(())
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::EnumerateVocab { n_min, n_max, out, force } => enumerate_vocab(n_min, n_max, &out, force),
        Command::GenData { n, seed, spec, out, force } => gen_data(n, seed, spec.as_deref(), &out, force),
        Command::Label { dataset, structures, motifs, mask_seed, out, force } => {
            label(&dataset, structures, motifs, mask_seed, &out, force)
        }
        Command::Split { dataset, kind, fraction, seed, out, force } => split(&dataset, kind, fraction, seed, &out, force),
        Command::Pretrain { config, method, seed, out, force } => pretrain(&config, &method, seed, &out, force),
        Command::Finetune { config, checkpoint, seed, out, force } => {
            finetune(&config, checkpoint.as_deref(), seed, &out, force)
        }
        Command::Run { config, output, methods, seeds, jobs, resume, force } => {
            run(&config, output, methods, seeds, jobs, resume, force)
        }
        Command::Report { dir } => report(&dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
