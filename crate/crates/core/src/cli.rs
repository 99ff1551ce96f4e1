//! Commands behind the `blockprune` binary.
//!
//! Exit status: 0 on success, 1 when a command fails at run time, 2 for
//! usage and config errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::Error;
use crate::experiments::{sensitivity_scan, sweep, SweepTable};
use crate::model::{evaluate, load_checkpoint, save_checkpoint, Checkpoint};
use crate::pruner::{load_masks, model_compression, save_masks};
use crate::sparse::{
    bench_spmm, bench_table_csv, comparator_tile, to_block_structured, to_coo, whole_block_prune, StorageCost,
    StorageReport,
};
use crate::trainer::{run_pipeline, PipelineOutcome, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "blockprune", version, about = "Block-structured pruning with reweighted group Lasso")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print resolved settings and progress to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Baseline, reweighted training, pruning and retraining.
    Train,
    /// Run the named `[sweep.NAME]` section of the config.
    Sweep { name: String },
    /// Prune each layer alone and record the accuracy after retraining.
    Sensitivity(SensitivityArgs),
    /// Storage cost of a pruned checkpoint under each format.
    StorageReport(StorageArgs),
    /// Time dense, block-structured and COO products.
    Bench(BenchArgs),
    /// Accuracy of a checkpoint on the held-out set.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Target sparsity of the single pruned layer.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Also scan the embedding and classifier.
    #[arg(long)]
    pub include_embedding_classifier: bool,
}

#[derive(Debug, Args)]
pub struct StorageArgs {
    /// Checkpoint directory (default: OUT/checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Mask file (default: OUT/masks.txt).
    #[arg(long)]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [128, 256, 512])]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.5, 0.8])]
    pub sparsities: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Also write OUT/bench.csv.
    #[arg(long)]
    pub save: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory (default: OUT/checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config_error(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// Loads the config (or the built-in defaults) and applies flag overrides.
fn load_config(cli: &Cli, err: &mut dyn Write) -> Result<Config, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Usage(format!("config file {} not found", path.display())));
            }
            Config::load(path).map_err(config_error)?
        }
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if cli.verbose {
        let source = |flag: bool| {
            if flag {
                "flag"
            } else if cli.config.is_some() {
                "config file"
            } else {
                "default"
            }
        };
        let _ = writeln!(err, "precedence: flags > config file > built-in defaults");
        let _ = writeln!(
            err,
            "config: {}",
            cli.config.as_ref().map_or("built-in defaults".into(), |p| p.display().to_string())
        );
        let _ = writeln!(err, "seed: {} ({})", config.pipeline.train.seed, source(cli.seed.is_some()));
        let _ = writeln!(err, "workers: {} ({})", workers(cli), if cli.workers.is_some() { "flag" } else { "default" });
        let _ = writeln!(err, "out: {}", cli.out.display());
    }
    Ok(config)
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match run(&cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if cli.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    match &cli.command {
        Command::Train => cmd_train(cli, out, err),
        Command::Sweep { name } => cmd_sweep(cli, name, out, err),
        Command::Sensitivity(a) => cmd_sensitivity(cli, a, out, err),
        Command::StorageReport(a) => cmd_storage_report(cli, a, out),
        Command::Bench(a) => cmd_bench(cli, a, out),
        Command::Eval(a) => cmd_eval(cli, a, out, err),
    }
}

fn trajectory_csv(o: &PipelineOutcome, seed: u64) -> String {
    let mut csv = format!("# seed={seed}\n");
    for (i, r) in [&o.baseline, &o.reweight, &o.retrain].into_iter().enumerate() {
        let body = RunReport::to_csv(r);
        let skip = if i == 0 { 0 } else { 1 };
        for line in body.lines().skip(skip) {
            csv.push_str(line);
            csv.push('\n');
        }
    }
    csv
}

fn report_text(o: &PipelineOutcome, seed: u64) -> String {
    let mut s = format!("# seed={seed}\n");
    s.push_str(&format!("pretrained_accuracy {:.6}\n", o.pretrained_accuracy));
    if let Some(d) = o.dense_accuracy {
        s.push_str(&format!("dense_accuracy {d:.6}\n"));
    }
    s.push_str(&format!("final_accuracy {:.6}\n", o.final_accuracy));
    s.push_str(&format!("compression {:.6}\n", o.compression.prunable_rate));
    s.push_str(&format!("sparsity {:.6}\n", o.compression.prunable_sparsity));
    s.push_str(&format!("compression_all_tensors {:.6}\n", o.compression.all_rate));
    s.push_str(&format!(
        "learning_rate {:e}\nbeta1 {}\nbeta2 {}\nadam_epsilon {:e}\nbatch_size {}\n",
        o.retrain.adam.learning_rate, o.retrain.adam.beta1, o.retrain.adam.beta2, o.retrain.adam.epsilon, o.retrain.batch_size
    ));
    for m in &o.masks.masks {
        s.push_str(&format!("layer_sparsity {} {:.6}\n", m.layer_name, m.sparsity()));
    }
    s
}

fn cmd_train(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli, err)?;
    let pc = &config.pipeline;
    let seed = pc.train.seed;
    let outcome = run_pipeline(pc).map_err(|e| match e {
        Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
        other => runtime(format!("train failed in phase {other}")),
    })?;
    let dir = &cli.out;
    save_checkpoint(&dir.join("checkpoint"), &Checkpoint::from_params(&outcome.params, seed))
        .map_err(|e| runtime(format!("writing checkpoint: {e}")))?;
    fs::create_dir_all(dir).map_err(runtime)?;
    save_masks(&dir.join("masks.txt"), &outcome.masks).map_err(|e| runtime(format!("writing masks: {e}")))?;
    let report = report_text(&outcome, seed);
    write_file(&dir.join("report.txt"), &report)?;
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(&outcome, seed))?;
    write!(out, "{report}").map_err(runtime)?;
    Ok(())
}

fn emit_table(cli: &Cli, table: &SweepTable, file: &str, out: &mut dyn Write) -> Result<(), CliError> {
    let csv = table.to_csv();
    write_file(&cli.out.join(file), &csv)?;
    write!(out, "{csv}").map_err(runtime)?;
    if table.failed() > 0 {
        writeln!(out, "# {} of {} cells failed", table.failed(), table.rows.len()).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, name: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli, err)?;
    let spec = config.sweeps.get(name).ok_or_else(|| {
        let known: Vec<&str> = config.sweeps.keys().map(String::as_str).collect();
        CliError::Usage(format!("no sweep named `{name}` in the config (known: {})", known.join(", ")))
    })?;
    let table = sweep(spec, workers(cli)).map_err(runtime)?;
    emit_table(cli, &table, &format!("sweep_{name}.csv"), out)
}

fn cmd_sensitivity(cli: &Cli, a: &SensitivityArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = load_config(cli, err)?;
    let s = &config.sensitivity;
    let ratio = a.ratio.unwrap_or(s.ratio);
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Usage(format!("ratio {ratio} outside (0, 1)")));
    }
    let include = a.include_embedding_classifier || s.include_embedding_classifier;
    let table = sensitivity_scan(&config.pipeline, ratio, s.layers.as_deref(), include, workers(cli)).map_err(runtime)?;
    emit_table(cli, &table, "sensitivity.csv", out)
}

fn storage_line(layer: &str, r: &StorageReport) -> String {
    format!("{layer} {r}\n")
}

/// Per-layer storage under each format, then totals and compression rate.
pub fn storage_report(checkpoint: &Path, masks_path: &Path) -> crate::Result<String> {
    let params = load_checkpoint(checkpoint)?.into_params()?;
    let masks = load_masks(masks_path)?;
    let mut text = String::new();
    let mut totals = [0usize; 4];
    let mut value_totals = [0usize; 4];
    let mut index_totals = [0usize; 4];
    for mask in &masks.masks {
        let w = &params.get(&mask.layer_name)?.matrix;
        if w.shape() != mask.partition.shape() {
            return Err(Error::MaskMismatch(format!(
                "mask for `{}` is {} but the tensor is {}",
                mask.layer_name,
                mask.partition.shape(),
                w.shape()
            )));
        }
        let (tr, tc) = comparator_tile(&mask.partition);
        let reports = [
            w.storage_cost(),
            to_coo(w).storage_cost(),
            whole_block_prune(w, tr, tc, mask.sparsity())?.storage_cost(),
            to_block_structured(w, mask)?.storage_cost(),
        ];
        for (i, r) in reports.iter().enumerate() {
            totals[i] += r.total_units;
            value_totals[i] += r.value_units;
            index_totals[i] += r.index_units;
            text.push_str(&storage_line(&mask.layer_name, r));
        }
    }
    for (i, format) in ["dense", "coo", "whole_block", "block_structured"].into_iter().enumerate() {
        text.push_str(&format!(
            "total {format} total={} values={} index={}\n",
            totals[i], value_totals[i], index_totals[i]
        ));
    }
    let c = model_compression(&params, &masks)?;
    text.push_str(&format!("compression {:.6}\n", c.prunable_rate));
    text.push_str(&format!("compression_all_tensors {:.6}\n", c.all_rate));
    Ok(text)
}

fn cmd_storage_report(cli: &Cli, a: &StorageArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| cli.out.join("checkpoint"));
    let masks = a.masks.clone().unwrap_or_else(|| cli.out.join("masks.txt"));
    let text = storage_report(&ckpt, &masks).map_err(runtime)?;
    write!(out, "{text}").map_err(runtime)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.reps < 3 {
        return Err(CliError::Usage(format!("--reps must be at least 3, got {}", a.reps)));
    }
    if a.sizes.iter().any(|&n| n == 0) || a.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
        return Err(CliError::Usage("sizes must be positive and sparsities in [0, 1)".into()));
    }
    let seed = cli.seed.unwrap_or(42);
    let rows = bench_spmm(&a.sizes, &a.sparsities, a.reps, seed).map_err(runtime)?;
    let csv = bench_table_csv(&rows, seed);
    if a.save {
        write_file(&cli.out.join("bench.csv"), &csv)?;
    }
    write!(out, "{csv}").map_err(runtime)
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut config = load_config(cli, err)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| cli.out.join("checkpoint"));
    let params = load_checkpoint(&ckpt).and_then(|c| c.into_params()).map_err(runtime)?;
    config.pipeline.model = params.config;
    let (_, test) = config.pipeline.datasets().map_err(runtime)?;
    let acc = evaluate(&params, &test).map_err(runtime)?;
    writeln!(out, "# seed={}\naccuracy {acc:.6}", config.pipeline.train.seed).map_err(runtime)
}
