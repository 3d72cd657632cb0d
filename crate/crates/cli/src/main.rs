use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conflow_cli::{cmd_compare, cmd_run, cmd_sweep, cmd_verify, CompareMode, Options};

#[derive(Parser)]
#[command(name = "conflow", version, about = "Run and verify generalized normalized Yamabe flows")]
struct Cli {
    /// Output root directory.
    #[arg(long, global = true, env = "CONFLOW_OUT", default_value = "conflow-out")]
    out: PathBuf,

    /// Seed for the random probes of the monotonicity certificate of f.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a flow and write its time series, snapshots and summary.
    Run { config: PathBuf },
    /// Run diagnostics on a run directory, or on a config after running it.
    Verify {
        input: PathBuf,
        /// Comma separated check ids; an empty value runs none.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
    /// Run every variation of a sweep plan.
    Sweep {
        plan: PathBuf,
        /// Worker threads; defaults to the plan's `jobs`.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check two run directories for equivalence.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, value_enum)]
        mode: CompareMode,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut opts = Options {
        out: cli.out,
        seed: cli.seed,
        jobs: 0,
        quiet: cli.quiet,
    };
    let code = match cli.command {
        Command::Run { config } => cmd_run(&config, &opts),
        Command::Verify { input, checks } => {
            // `--checks ""` arrives as a single empty id
            let checks = checks.map(|c| c.into_iter().filter(|s| !s.is_empty()).collect());
            cmd_verify(&input, checks, &opts)
        }
        Command::Sweep { plan, jobs } => {
            opts.jobs = jobs;
            cmd_sweep(&plan, &opts)
        }
        Command::Compare { run_a, run_b, mode } => cmd_compare(&run_a, &run_b, mode, &opts),
    };
    ExitCode::from(code as u8)
}
