use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use drbsde::cli::{self, Io, Subcommand, EXIT_USAGE};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Reference,
    Solve,
    SweepGrid,
    SweepPenalty,
    FitRate,
    CheckEuropean,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Reference => Subcommand::Reference,
            Command::Solve => Subcommand::Solve,
            Command::SweepGrid => Subcommand::SweepGrid,
            Command::SweepPenalty => Subcommand::SweepPenalty,
            Command::FitRate => Subcommand::FitRate,
            Command::CheckEuropean => Subcommand::CheckEuropean,
        }
    }
}

/// Penalized DRBSDE solver and convergence experiments.
#[derive(Debug, Parser)]
#[command(name = "drbsde", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,

    /// Flat `key = value` config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output CSV path (manifest and timing files are written next to it).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Sweep CSV read by `fit-rate`.
    #[arg(long)]
    csv: Option<PathBuf>,

    /// Worker threads; affects speed only.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: Args) -> drbsde::Result<i32> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| drbsde::Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let cfg = cli::parse_config_with_env(&text, std::env::vars())?;
    for warning in cfg.warnings()? {
        eprintln!("warning: {warning}");
    }

    let io = Io {
        out: args.out,
        csv: args.csv,
    };
    let cmd = Subcommand::from(args.command);
    let mut buffer = Vec::new();
    let result = match args.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| drbsde::Error::InvalidParameter {
                    name: "threads",
                    reason: e.to_string(),
                })?;
            pool.install(|| cli::dispatch(cmd, &cfg, &io, &mut buffer))
        }
        None => cli::dispatch(cmd, &cfg, &io, &mut buffer),
    };
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(&buffer)
        .and_then(|_| stdout.flush())
        .map_err(|e| drbsde::Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })?;
    result
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
