use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smoothsnn_cli::{run, Command, Options};

#[derive(Parser)]
#[command(name = "smoothsnn", version, about = "Train and analyse smoothed spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Train a model; writes config.json, metrics.csv and checkpoint/.
    Train(Common),
    /// Prefix-ensemble accuracies and spike counts of a checkpoint.
    Eval(Common),
    /// Membrane statistics, similarities, ensemble metrics, logits and
    /// sensitivity tables.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Only write the sensitivity table; no checkpoint needed.
        #[arg(long)]
        sensitivity: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run config (`-` reads stdin); defaults to `{}`.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run the engine in float64.
    #[arg(long)]
    float64: bool,
    /// Checkpoint directory (default `<out>/checkpoint`).
    #[arg(long, value_name = "DIR")]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn options(self, sensitivity: bool) -> Options {
        Options {
            config: self.config,
            seed: self.seed,
            out: self.out,
            float64: self.float64,
            sensitivity,
            checkpoint: self.checkpoint,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, opts) = match cli.command {
        Sub::Train(c) => (Command::Train, c.options(false)),
        Sub::Eval(c) => (Command::Eval, c.options(false)),
        Sub::Analyze { common, sensitivity } => (Command::Analyze, common.options(sensitivity)),
    };
    match run(cmd, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
