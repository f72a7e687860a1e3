use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mixcast::cli::{cmd_backtest, cmd_estimate, cmd_simulate, CliError, Overrides};
use mixcast::io::{ModeChoice, RunManifest};

#[derive(Parser, Debug)]
#[command(
    name = "mixcast",
    version,
    about = "Mixture-weight estimation, market simulation and backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation experiment grid.
    Simulate(Common),
    /// Estimate mixture weights from a prior and an observed market portfolio.
    Estimate(Common),
    /// Backtest long-only portfolios on weekly market data.
    Backtest(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail when any replication fails.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Backward,
    Forward,
    Combined,
    All,
}

impl From<Mode> for ModeChoice {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Backward => ModeChoice::Backward,
            Mode::Forward => ModeChoice::Forward,
            Mode::Combined => ModeChoice::Combined,
            Mode::All => ModeChoice::All,
        }
    }
}

type Runner = fn(&Path, &Overrides) -> Result<RunManifest, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (run, c): (Runner, Common) = match cli.command {
        Command::Simulate(c) => (cmd_simulate, c),
        Command::Estimate(c) => (cmd_estimate, c),
        Command::Backtest(c) => (cmd_backtest, c),
    };
    let ov = Overrides {
        seed: c.seed,
        out: c.out,
        replications: c.replications,
        strict: c.strict,
        mode: c.mode.map(Into::into),
    };
    match run(&c.config, &ov) {
        Ok(m) => {
            println!("{}", serde_json::to_string(&m.outputs).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
