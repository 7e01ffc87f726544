use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use railscan::commands::{cmd_eval, cmd_gen_data, cmd_report, cmd_train, ScoreSet};
use railscan::config::{Overrides, RunConfig};
use railscan::inference::ScoreVariant;
use railscan::Error;

#[derive(Parser)]
#[command(name = "railscan", version, about = "Foreign-object detection on track imagery")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train on the normal images of a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory for model.ckpt and train_log.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score the test split and write reports.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ScoreVariant>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Density grids and curves from one or more scores.csv files.
    Report {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Separate normal and abnormal rows into their own columns.
        #[arg(long)]
        by_label: bool,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<ScoreVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut overrides = Overrides {
        seed: cli.seed,
        ..Overrides::default()
    };
    match cli.command {
        Command::GenData { out } => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
            let manifest = cmd_gen_data(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train { dataset, out, epochs } => {
            overrides.dataset = dataset;
            overrides.checkpoint = out.map(|d| d.join("model.ckpt"));
            overrides.epochs = epochs;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
            let outputs = cmd_train(&cfg, |r| {
                eprintln!(
                    "epoch {:>4}  loss_d {:.4}  loss_eg {:.4}  {:.1}s",
                    r.epoch, r.loss_d, r.loss_eg, r.seconds
                )
            })?;
            println!("{}", outputs.checkpoint.display());
        }
        Command::Eval { dataset, checkpoint, variant, out } => {
            overrides.dataset = dataset;
            overrides.checkpoint = checkpoint;
            overrides.variant = variant;
            let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
            let outputs = cmd_eval(&cfg, &out)?;
            println!("{:<12}{:>8}{:>8}{:>8}{:>10}{:>8}{:>8}", "score", "AUROC", "AUPRC", "EER", "Precision", "Recall", "F1");
            for row in &outputs.summary.by_variant {
                let m = &row.metrics;
                println!(
                    "{:<12}{:>8.4}{:>8.4}{:>8.4}{:>10.4}{:>8.4}{:>8.4}",
                    row.variant.name(), m.auroc, m.auprc, m.eer, m.precision, m.recall, m.f1
                );
            }
        }
        Command::Report { scores, by_label, out } => {
            let mut sets = Vec::new();
            for p in &scores {
                let set = ScoreSet::read(p)?;
                if by_label {
                    sets.extend(set.split_by_label());
                } else {
                    sets.push(set);
                }
            }
            let outputs = cmd_report(&sets, &out)?;
            println!("{}", outputs.density.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
