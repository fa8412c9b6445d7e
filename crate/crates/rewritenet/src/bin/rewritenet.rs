//! Command-line entry point: dataset generation, training, evaluation,
//! rule inspection, FLOP estimates, FST verification, and ablation sweeps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or config error,
//! 3 runtime failure (non-finite loss, failed verification).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rewritenet::discrete::Fst;
use rewritenet::error::Error;
use rewritenet::flops::{flops_estimate, FlopParams, ModelKind};
use rewritenet::fstsim;
use rewritenet::layer::{inspect_rules, Model};
use rewritenet::runconfig::KvDoc;
use rewritenet::sweep::{ablation_sweep, render_records, render_table, SweepAxis};
use rewritenet::tasks::{self, SplitSpec};
use rewritenet::train::{evaluate, train, Task, TrainConfig};

/// Environment variable naming the default root for run directories.
const RUN_ROOT_ENV: &str = "REWRITENET_RUN_ROOT";

#[derive(Parser)]
#[command(name = "rewritenet", about = "Differentiable string rewriting models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/valid/test dataset files for one task.
    GenData(GenDataArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Decode every learned rule and count its fires.
    InspectRules(InspectArgs),
    /// Analytic FLOP estimate for one model family.
    Flops(FlopsArgs),
    /// Exhaustively verify a compiled FST against its transducer.
    FstCheck(FstCheckArgs),
    /// Train one model per cell along an ablation axis.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_parser = Task::parse)]
    task: Task,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = tasks::DEFAULT_TRAIN_SIZE)]
    train_size: usize,
    #[arg(long, default_value_t = tasks::DEFAULT_VALID_SIZE)]
    valid_size: usize,
    #[arg(long, default_value_t = tasks::DEFAULT_TEST_SIZE)]
    test_size: usize,
    /// Minimum source length (reversal, compression).
    #[arg(long)]
    min_len: Option<usize>,
    /// Maximum source length (reversal, compression).
    #[arg(long)]
    max_len: Option<usize>,
    /// Largest action-sequence length seen in training (scan length split).
    #[arg(long, default_value_t = 16)]
    train_max_tgt_len: usize,
    /// Keep compression samples whose removal exposes a new occurrence.
    #[arg(long)]
    include_cascades: bool,
    /// Restrict the compression training split to deletion-bearing samples.
    /// Held-out splits keep the full distribution. On the raw mixture the
    /// positional loss favors the all-copy fixpoint and training plateaus
    /// at the no-op fraction.
    #[arg(long)]
    deletion_only_train: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to <run root>/<config stem>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Predictions file; defaults to predictions.tsv next to the data.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset whose sources drive the fire counts.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, value_parser = ModelKind::parse)]
    model: ModelKind,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    rules: usize,
    #[arg(long, default_value_t = 2)]
    lp: usize,
    #[arg(long, default_value_t = 1)]
    lq: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
}

#[derive(Args)]
struct FstCheckArgs {
    #[arg(long)]
    fst: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// rules, layers, or residual.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepAxis,
    #[arg(long)]
    config: PathBuf,
    /// Training steps per cell.
    #[arg(long, default_value_t = 500)]
    budget: usize,
    /// Output root; defaults to <run root>/sweep_<axis>.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<SweepAxis, Error> {
    match s {
        // the plural spelling is accepted as well
        "residuals" => Ok(SweepAxis::Residual),
        other => SweepAxis::parse(other),
    }
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn config_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn gen_data(args: &GenDataArgs) -> Result<(), Error> {
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let sizes = [
        ("train", args.train_size, args.seed),
        ("valid", args.valid_size, args.seed + 1),
        ("test", args.test_size, args.seed + 2),
    ];
    for (name, size, seed) in sizes {
        let records = match args.task {
            Task::Reversal => tasks::gen_reversal(
                args.min_len.unwrap_or(10),
                args.max_len.unwrap_or(30),
                64,
                size,
                seed,
            )?,
            Task::Compression => {
                let min = args.min_len.unwrap_or(3);
                let max = args.max_len.unwrap_or(20);
                if args.deletion_only_train && name == "train" {
                    // oversample, then keep only samples with a deletion
                    let pool = tasks::gen_compression(min, max, size * 8, seed, args.include_cascades)?;
                    let kept: Vec<_> = pool
                        .into_iter()
                        .filter(|r| r.tgt.len() < r.src.len())
                        .take(size)
                        .collect();
                    if kept.len() < size {
                        return Err(Error::InvalidArgument(format!(
                            "only {} deletion-bearing samples available for {size} requested",
                            kept.len()
                        )));
                    }
                    kept
                } else {
                    tasks::gen_compression(min, max, size, seed, args.include_cascades)?
                }
            }
            Task::Scan => {
                let (min_t, max_t) = if name == "test" {
                    (args.train_max_tgt_len + 1, usize::MAX)
                } else {
                    (0, args.train_max_tgt_len)
                };
                tasks::gen_scan(&SplitSpec::new(name, min_t, max_t, seed, size))?
            }
        };
        let path = args.out.join(format!("{name}.tsv"));
        tasks::write_dataset(&records, &path)?;
        println!("wrote {} records to {}", records.len(), path.display());
    }
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<(), Error> {
    let doc = KvDoc::load(&args.config)?;
    let mut cfg = TrainConfig::from_doc(&doc)?;
    if let Some(out) = &args.out {
        cfg.checkpoint_dir = out.clone();
    } else if cfg.checkpoint_dir.as_os_str().is_empty() {
        cfg.checkpoint_dir = run_root().join(config_stem(&args.config));
    }
    let outcome = train(&cfg)?;
    println!(
        "best valid EM {:.4} at step {} (final loss {:.6})",
        outcome.best_em, outcome.best_step, outcome.final_loss
    );
    println!("checkpoint: {}", outcome.best_dir.display());
    println!("metrics: {}", outcome.metrics_path.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), Error> {
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.data.with_file_name("predictions.tsv"));
    let outcome = evaluate(&args.checkpoint, &args.data, Some(&out))?;
    println!("EM {:.4} over {} examples", outcome.em, outcome.predictions.len());
    println!("predictions: {}", out.display());
    Ok(())
}

fn run_inspect(args: &InspectArgs) -> Result<(), Error> {
    let model = Model::load(&args.checkpoint)?;
    let inputs: Vec<Vec<u32>> = match &args.data {
        None => Vec::new(),
        Some(path) => tasks::read_dataset(path)?
            .iter()
            .map(|r| model.config.vocab.encode(&r.src))
            .collect::<Result<_, _>>()?,
    };
    print!("{}", inspect_rules(&model, &inputs)?);
    Ok(())
}

fn run_flops(args: &FlopsArgs) -> Result<(), Error> {
    let params = FlopParams {
        batch: args.batch,
        n: args.n,
        d: args.d,
        rules: args.rules,
        lp: args.lp,
        lq: args.lq,
        layers: args.layers,
        ..FlopParams::default()
    };
    let report = flops_estimate(args.model, &params)?;
    println!("{}", report.render());
    Ok(())
}

fn run_fst_check(args: &FstCheckArgs) -> Result<bool, Error> {
    let fst = Fst::load(&args.fst)?;
    let report = fstsim::verify_exhaustive(&fst, args.max_len)?;
    if report.all_match() {
        println!("PASS: {} inputs up to length {}", report.total, args.max_len);
        Ok(true)
    } else {
        println!(
            "FAIL: {} of {} inputs disagree (first: {:?})",
            report.mismatches.len(),
            report.total,
            report.mismatches.first()
        );
        Ok(false)
    }
}

fn run_sweep(args: &SweepArgs) -> Result<(), Error> {
    let doc = KvDoc::load(&args.config)?;
    let base = TrainConfig::from_doc(&doc)?;
    let axis = args.axis;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| run_root().join(format!("sweep_{}", axis.name())));
    let cells = ablation_sweep(&base, axis, args.budget, &out)?;
    print!("{}", render_table(&cells));
    let records_path = out.join("cells.log");
    std::fs::write(&records_path, render_records(&cells)).map_err(|e| Error::io(&records_path, e))?;
    println!("records: {}", records_path.display());
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NanLoss { .. } | Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successes, everything else is usage
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::InspectRules(args) => run_inspect(args),
        Command::Flops(args) => run_flops(args),
        Command::FstCheck(args) => match run_fst_check(args) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
