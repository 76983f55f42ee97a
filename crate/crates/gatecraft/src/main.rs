use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gatecraft::commands;
use gatecraft::config::Config;
use gatecraft::report::summary_table;
use gatecraft::{HarnessError, Result};

#[derive(Parser, Debug)]
#[command(name = "gatecraft", version, about = "Train and evaluate budgeted gates between a cheap and an expensive policy")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sweep.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the environment and save the good policy.
    TrainOracle,
    /// Train and calibrate an entropy-based gate (run.method = epi1 | epi2).
    TrainEpi,
    /// Train a gate and weak policy by alternating minimization.
    TrainApi,
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate every method over the p_full and l2 grids.
    Sweep,
    /// Rebuild the summary table from a report CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.sweep.seed_base = seed;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::TrainOracle => println!("{}", commands::train_oracle(&cfg, out)?.display()),
        Command::TrainEpi => println!("{}", commands::train_epi(&cfg, out)?.display()),
        Command::TrainApi => println!("{}", commands::train_api(&cfg, out)?.display()),
        Command::Eval { checkpoint } => {
            let r = commands::eval(&cfg, &checkpoint, out)?;
            print!("{}", summary_table(&[r]));
        }
        Command::Sweep => {
            let s = commands::sweep(&cfg, out)?;
            print!("{}", summary_table(&s.best));
            if s.failures > 0 {
                eprintln!("{} sweep cells failed; see failures.csv", s.failures);
            }
        }
        Command::Report { input } => print!("{}", summary_table(&commands::report_from_csv(&input, out)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &HarnessError) -> u8 {
    e.exit_code() as u8
}
