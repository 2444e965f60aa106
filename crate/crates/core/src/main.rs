use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rainbow_lab::experiment::{self, ExperimentConfig};
use rainbow_lab::rainbow::{self, Classifier, RainbowModel};
use rainbow_lab::{check, Error};

#[derive(Parser)]
#[command(name = "rainbow-lab", version, about = "Rainbow network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Print pass/fail verdicts of a finished run.
    Summarize { dir: PathBuf },
    /// Sample a Gaussian rainbow network from a saved model.
    Sample {
        model_dir: PathBuf,
        /// Comma-separated layer widths.
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ClassifierArg::Realign)]
        classifier: ClassifierArg,
        /// Directory to save the sampled network to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the quick invariant suite.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Realign,
    Retrain,
}

enum Outcome {
    Passed,
    Failed,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Numeric(_)
        | Error::Training { .. }
        | Error::Degenerate(_)
        | Error::UndefinedSimilarity(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> rainbow_lab::Result<Outcome> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = experiment::run_experiment(&cfg)?;
            let summary = experiment::summarize(&report.dir)?;
            print!("{}", summary.text);
            Ok(if summary.passed { Outcome::Passed } else { Outcome::Failed })
        }
        Command::Summarize { dir } => {
            let summary = experiment::summarize(&dir)?;
            print!("{}", summary.text);
            Ok(if summary.passed { Outcome::Passed } else { Outcome::Failed })
        }
        Command::Sample {
            model_dir,
            widths,
            seed,
            classifier,
            out,
        } => {
            let model = RainbowModel::load(&model_dir)?;
            let dataset = experiment::load_model_dataset(&model_dir)?;
            let classifier = match classifier {
                ClassifierArg::Realign => Classifier::Realign,
                ClassifierArg::Retrain => Classifier::Retrain,
            };
            let (net, m) = rainbow::sample_rainbow_network(&model, &widths, &dataset, seed, classifier)?;
            println!("train accuracy  {:.4}", m.train_accuracy);
            println!("test accuracy   {:.4}", m.test_accuracy);
            for (j, e) in m.alignment_errors.iter().enumerate() {
                println!("layer {} alignment error {:.4}", j + 1, e);
            }
            if let Some(dir) = out {
                net.save(&dir)?;
                println!("saved to {}", dir.display());
            }
            Ok(Outcome::Passed)
        }
        Command::Check => {
            let results = check::run_all();
            let mut ok = true;
            for r in &results {
                println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            Ok(if ok { Outcome::Passed } else { Outcome::Failed })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
