//! `lsnet`: generate data, train centrally or federated, evaluate, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsnet_core::harness::{self, run::stage, ExperimentConfig, TrainMode};
use lsnet_core::rfgen::{self, ClassLabel, DatasetConfig};
use lsnet_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lsnet", version, about = "Federated open-set RF emitter authentication")]
struct Cli {
    /// Experiment config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled IQ dataset to disk.
    GenData(GenData),
    /// Centralized training followed by evaluation.
    TrainCentral(TrainCentral),
    /// Federated training followed by evaluation.
    TrainFed(TrainFed),
    /// Evaluate a checkpoint on the configured test set.
    Eval(Eval),
    /// Tables and plots from a run directory (or a directory of runs).
    Report(Report),
    /// Re-execute a run from its run.json manifest.
    Rerun(Rerun),
}

#[derive(Args, Debug)]
struct GenData {
    /// Comma-separated class names (default: all seven).
    #[arg(long, value_delimiter = ',')]
    classes: Vec<ClassLabel>,
    /// Windows per class and SNR level.
    #[arg(long, default_value_t = 250)]
    per_class: usize,
    /// Lowest SNR in dB.
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    snr_min: f64,
    /// Highest SNR in dB (inclusive).
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    snr_max: f64,
    /// SNR grid step in dB.
    #[arg(long, default_value_t = 10.0)]
    snr_step: f64,
}

#[derive(Args, Debug)]
struct TrainCentral {
    /// Training epochs (overrides `train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Train and test on all seven classes (no unknowns).
    #[arg(long)]
    closed_set: bool,
}

#[derive(Args, Debug)]
struct TrainFed {
    /// Total clients the training data is split across.
    #[arg(long)]
    clients: Option<usize>,
    /// Clients per round; several values run a participation sweep into
    /// `<out>/m<value>`.
    #[arg(long, value_delimiter = ',')]
    per_round: Vec<usize>,
    /// Communication rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Local epochs per selected client per round.
    #[arg(long)]
    local_epochs: Option<usize>,
    /// Train and test on all seven classes (no unknowns).
    #[arg(long)]
    closed_set: bool,
}

#[derive(Args, Debug)]
struct Eval {
    /// Model checkpoint written by a training run.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct Report {
    /// Run directory; defaults to `--out`.
    dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Rerun {
    /// `run.json` of the run to repeat; outputs go to `--out`.
    manifest: PathBuf,
}

fn exit_code(stage: Option<&str>) -> u8 {
    match stage {
        Some(stage::CONFIG) => 2,
        Some(stage::DATA) => 3,
        Some(stage::SPECTROGRAM) => 4,
        Some(stage::TRAIN) => 5,
        Some(stage::FEDERATE) => 6,
        Some(stage::EVALUATE) => 7,
        Some(stage::PERSIST) => 8,
        Some(stage::REPORT) => 9,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| Path::new("runs").join(cfg.run_id()))
}

fn print_summary(outcome: &harness::RunOutcome) {
    let r = &outcome.evaluation.report;
    println!("run {} -> {}", outcome.run_id, outcome.run_dir.display());
    println!("  known-class accuracy {:.4}", r.overall_accuracy);
    if let Some(a) = r.auroc {
        println!("  unknown AUROC        {a:.4}");
    }
}

fn gen_data(cli: &Cli, args: &GenData) -> Result<()> {
    let classes = if args.classes.is_empty() {
        ClassLabel::ALL.to_vec()
    } else {
        args.classes.clone()
    };
    let cfg = DatasetConfig {
        classes,
        per_class: args.per_class,
        snr_grid: rfgen::snr_grid(args.snr_min, args.snr_max, args.snr_step)?,
        seed: cli.seed.unwrap_or(0),
        ..DatasetConfig::default()
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let ds = rfgen::build_dataset(&cfg).map_err(|e| e.at_stage(stage::DATA))?;
    let sidecar = rfgen::write_dataset(&out, &ds).map_err(|e| e.at_stage(stage::PERSIST))?;
    println!("wrote {} windows to {}", sidecar.entries.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => gen_data(cli, args),
        Command::TrainCentral(args) => {
            let mut cfg = load_config(cli).map_err(|e| e.at_stage(stage::CONFIG))?;
            cfg.mode = TrainMode::Central;
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if args.closed_set {
                cfg.classes = harness::ClassSplit::closed_set();
            }
            let outcome = harness::run_experiment(&cfg, &out_dir(cli, &cfg))?;
            print_summary(&outcome);
            Ok(())
        }
        Command::TrainFed(args) => {
            let mut cfg = load_config(cli).map_err(|e| e.at_stage(stage::CONFIG))?;
            cfg.mode = TrainMode::Federated;
            if let Some(c) = args.clients {
                cfg.fed.clients = c;
            }
            if let Some(t) = args.rounds {
                cfg.fed.rounds = t;
            }
            if let Some(e) = args.local_epochs {
                cfg.fed.local_epochs = e;
            }
            if args.closed_set {
                cfg.classes = harness::ClassSplit::closed_set();
            }
            let base = out_dir(cli, &cfg);
            match args.per_round.as_slice() {
                [] => print_summary(&harness::run_experiment(&cfg, &base)?),
                [m] => {
                    cfg.fed.clients_per_round = *m;
                    print_summary(&harness::run_experiment(&cfg, &base)?);
                }
                sweep => {
                    for &m in sweep {
                        let mut c = cfg.clone();
                        c.fed.clients_per_round = m;
                        c.run_id = format!("{}-m{m}", cfg.run_id());
                        print_summary(&harness::run_experiment(&c, &base.join(format!("m{m}")))?);
                    }
                }
            }
            Ok(())
        }
        Command::Eval(args) => {
            let cfg = load_config(cli).map_err(|e| e.at_stage(stage::CONFIG))?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
            let ev = harness::evaluate_checkpoint(&cfg, &args.checkpoint, &out)?;
            println!("known-class accuracy {:.4}", ev.report.overall_accuracy);
            if let Some(a) = ev.report.auroc {
                println!("unknown AUROC        {a:.4}");
            }
            Ok(())
        }
        Command::Report(args) => {
            let dir = args
                .dir
                .clone()
                .or_else(|| cli.out.clone())
                .ok_or_else(|| Error::Config("report needs a run directory".into()).at_stage(stage::REPORT))?;
            let bundle = harness::export_report(&dir).map_err(|e| e.at_stage(stage::REPORT))?;
            for f in &bundle.files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Rerun(args) => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::Config("rerun needs --out".into()).at_stage(stage::CONFIG))?;
            print_summary(&harness::rerun_from_manifest(&args.manifest, &out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let stage = e.stage();
            eprintln!("error[{}]: {e}", stage.unwrap_or("unknown"));
            ExitCode::from(exit_code(stage))
        }
    }
}
