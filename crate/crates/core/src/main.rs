use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tlon::bench::{
    cmd_eval, cmd_finetune, cmd_gen, cmd_report, cmd_train_source, cmd_uq, BenchError, ExperimentConfig,
};

/// Prints a line; a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "tlon", version = tlon::bench::GIT_DESCRIBE, about = "DeepONet transfer-learning experiments")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set finetune.epochs=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate source, target and out-of-distribution datasets.
    Gen,
    /// Train the source model.
    TrainSource,
    /// Run the fine-tuning sweep and write the report.
    Finetune,
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Monte Carlo moments of the surrogate against the solver.
    Uq {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge report CSVs.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write a markdown table.
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    Config,
}

fn run(cli: Cli) -> Result<(), BenchError> {
    if let Command::Report { inputs, out, markdown } = &cli.command {
        let rows = cmd_report(inputs, out, markdown.as_deref())?;
        say!("merged {} rows into {}", rows.len(), out.display());
        return Ok(());
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Gen => {
            for f in cmd_gen(&cfg)?.files {
                say!("wrote {}", f.display());
            }
        }
        Command::TrainSource => {
            let s = cmd_train_source(&cfg)?;
            say!(
                "source model {}: final loss {:.4e}, test relative L2 {:.4}, {:.3} s/epoch",
                s.checkpoint.display(),
                s.final_loss,
                s.test_rel_l2,
                s.seconds_per_epoch
            );
        }
        Command::Finetune => {
            let s = cmd_finetune(&cfg)?;
            for r in &s.rows {
                say!("{:<16} n_t={:<4} {:.4} ± {:.4}", r.mode, r.n_t, r.mean_rel_l2, r.std_rel_l2);
            }
            say!("wrote {}", s.report.display());
        }
        Command::Eval { checkpoint, data } => {
            let err = cmd_eval(&cfg, checkpoint.as_deref(), data.as_deref())?;
            say!("{err:.6}");
        }
        Command::Uq { checkpoint } => {
            let s = cmd_uq(&cfg, checkpoint.as_deref())?;
            say!(
                "{} samples: mean field error {:.4}, variance field error {:.4}",
                s.samples, s.mean_rel_l2, s.variance_rel_l2
            );
        }
        Command::Config => say!("{}", serde_json::to_string_pretty(&cfg)?),
        Command::Report { .. } => unreachable!("handled above"),
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
