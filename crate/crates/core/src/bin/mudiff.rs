use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mudiff::app::{self, Command, Invocation};
use mudiff::verify::Suite;

#[derive(Parser)]
#[command(name = "mudiff", version, about = "Joint 2D/3D molecular diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a denoiser and write a checkpoint plus loss trace.
    Train(Common),
    /// Draw molecules from a checkpoint.
    Sample(Common),
    /// Score a JSONL file of molecules.
    Eval(Common),
    /// Run the numerical self-checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to one suite; repeatable.
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run config; profile defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `model.layers=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn invocation(command: Command, c: Common) -> Invocation {
    Invocation {
        config: c.config,
        overrides: c.overrides,
        seed: c.seed,
        out: c.out,
        ..Invocation::new(command)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Some(threads) = std::env::var("MUDIFF_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
            log::warn!("could not cap threads at {threads}: {e}");
        }
    }

    let inv = match cli.command {
        Cmd::Train(c) => invocation(Command::Train, c),
        Cmd::Sample(c) => invocation(Command::Sample, c),
        Cmd::Eval(c) => invocation(Command::Eval, c),
        Cmd::Verify { common, suites } => {
            let parsed: Result<Vec<Suite>, String> = suites.iter().map(|s| s.parse()).collect();
            match parsed {
                Ok(suites) => Invocation {
                    suites,
                    ..invocation(Command::Verify, common)
                },
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(app::EXIT_CONFIG as u8);
                }
            }
        }
    };
    match app::run(&inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
