use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use alif_snn::commands;
use alif_snn::data::{data_root, DATA_DIR_ENV};
use alif_snn::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "snn", version, about = "Train and evaluate ALIF spiking networks")]
#[command(after_help = "Datasets are read from $SNN_DATA_DIR (default ./data).\nExit codes: 0 success, 1 usage or config error, 2 numerical failure.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier or VAE from a TOML config.
    Train {
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences on a tiny network.
    Gradcheck {
        config: Option<PathBuf>,
        /// Flip the sign of the tau gradient (negative control).
        #[arg(long)]
        sabotage_tau: bool,
    },
    /// Sample images from a trained VAE.
    Generate {
        checkpoint: PathBuf,
        #[arg(short, long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
    },
    /// Run the tau / threshold initialization and learnability grid.
    Ablate {
        config: PathBuf,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on its configured test split.
    Eval { checkpoint: PathBuf },
    /// Expand an architecture string and print its layer table.
    ParseArch {
        spec: String,
        /// Input shape as C,H,W.
        #[arg(long, default_value = "1,28,28", value_delimiter = ',')]
        input: Vec<usize>,
    },
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<bool, Error> {
    let root = data_root();
    match cli.command {
        Command::Train { config, out: dir, resume } => {
            let cfg = commands::read_config(&config)?;
            commands::train(&cfg, &root, &dir, resume.as_deref(), out)?;
        }
        Command::Gradcheck { config, sabotage_tau } => {
            let cfg = config.as_deref().map(commands::read_config).transpose()?;
            return Ok(commands::gradcheck(cfg.as_ref(), sabotage_tau, out)?.passed());
        }
        Command::Generate { checkpoint, n, seed, out: dir } => {
            commands::generate(&checkpoint, n, seed, &dir, out)?;
        }
        Command::Ablate { config, out: dir } => {
            let cfg = commands::read_config(&config)?;
            commands::ablate(&cfg, &root, &dir, out)?;
        }
        Command::Eval { checkpoint } => {
            commands::eval(&checkpoint, &root, out)?;
        }
        Command::ParseArch { spec, input } => {
            commands::parse_arch_table(&spec, &input, out)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Io { .. }) {
                eprintln!("(datasets are read from ${DATA_DIR_ENV})");
            }
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
