use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use owsc_cli::bench::BenchConfig;
use owsc_cli::commands::{
    cmd_bench, cmd_eval, cmd_export, cmd_synth, cmd_train, BenchArgs, EvalArgs, ExportArgs,
    SynthArgs, TrainArgs,
};
use owsc_cli::CliError;
use owsc_core::evaluator::ClassifierMode;

/// Curriculum metric learning of state-invariant object embeddings.
///
/// Seeds resolve as: --seed flag, then the OWSC_SEED environment variable,
/// then the config file.
#[derive(Debug, Parser)]
#[command(name = "owsc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Classifier {
    Nn,
    Centroid,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic feature file from a JSON SynthConfig.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of each object's states held out for testing.
        #[arg(long, default_value_t = 0.25)]
        test_ratio: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an encoder; writes metrics.csv, checkpoint.owsp, state.owst
    /// and run.json into the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Continue from a state.owst file of an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Do not print per-epoch progress.
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint on the eight recognition and retrieval tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Report CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "nn")]
        classifier: Classifier,
        /// Row key in the report CSV; defaults to a checkpoint digest.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Time per-object partner sampling of S1, S2 and S3.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
        objects_per_category: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        categories: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        /// Epoch whose partition count S3 uses.
        #[arg(long, default_value_t = 50)]
        epoch: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write per-image embeddings of both spaces as CSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            test_ratio,
            seed,
        } => {
            let m = cmd_synth(&SynthArgs {
                config,
                out: out.clone(),
                test_ratio,
                seed,
            })?;
            println!(
                "wrote {} (seed {})",
                out.display(),
                m.seed.unwrap_or_default()
            );
        }
        Command::Train {
            config,
            features,
            out_dir,
            resume,
            seed,
            quiet,
        } => {
            cmd_train(&TrainArgs {
                config,
                features,
                out_dir: out_dir.clone(),
                resume,
                seed,
                quiet,
            })?;
            println!("wrote {}", out_dir.display());
        }
        Command::Eval {
            checkpoint,
            features,
            out,
            classifier,
            run_id,
        } => {
            let classifier = match classifier {
                Classifier::Nn => ClassifierMode::NearestNeighbor,
                Classifier::Centroid => ClassifierMode::Centroid,
            };
            let (table, _) = cmd_eval(&EvalArgs {
                checkpoint,
                features,
                out,
                classifier,
                run_id,
            })?;
            print!("{table}");
        }
        Command::Bench {
            objects_per_category,
            categories,
            dim,
            out,
            repetitions,
            epoch,
            seed,
        } => {
            let config = BenchConfig {
                objects_per_category,
                categories,
                dim,
                repetitions,
                epoch,
                ..BenchConfig::default()
            };
            let (rows, _) = cmd_bench(&BenchArgs { config, seed, out })?;
            println!(
                "{:>14} {:>8} {:>14}",
                "n_obj_per_cat", "strategy", "ns_per_object"
            );
            for r in rows {
                println!(
                    "{:>14} {:>8} {:>14.1}",
                    r.n_obj_per_cat, r.strategy, r.ns_per_object
                );
            }
        }
        Command::Export {
            checkpoint,
            features,
            out,
        } => {
            cmd_export(&ExportArgs {
                checkpoint,
                features,
                out: out.clone(),
            })?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
