use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ofo_core::sensitivity::Topology;
use ofo_cli::commands::{cmd_plot, cmd_powerflow, cmd_robustness, cmd_sensitivity, cmd_simulate};
use ofo_cli::{exit_code, EXIT_INPUT};
use ofo_cli::manifest::{parse_topology, RunManifest};
use ofo_cli::sweep::RunStatus;

#[derive(Parser)]
#[command(name = "ofo", version, about = "Power system simulation with an online feedback optimization controller")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the base-case power flow and print the bus table.
    Powerflow {
        /// Grid file; the bundled IEEE 39-bus system when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Run a scenario and write trajectory.csv, events.log and plots.
    Simulate(RunArgs),
    /// Repeat a scenario once per single-line-removed sensitivity.
    Robustness(RunArgs),
    /// Write the sensitivity matrix at the scheduled set-points.
    Sensitivity(RunArgs),
    /// Regenerate plots from the CSV files in a directory.
    Plot {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Grid file; the bundled IEEE 39-bus system when omitted.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// `nominal` or the id of a line removed from the controller's model.
    #[arg(long, default_value = "nominal", value_parser = parse_topology)]
    sensitivity_topology: Topology,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<RunArgs> for RunManifest {
    fn from(a: RunArgs) -> Self {
        RunManifest { grid: a.grid, scenario: a.scenario, out: a.out, seed: a.seed, topology: a.sensitivity_topology }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Powerflow { grid } => print!("{}", cmd_powerflow(grid.as_deref())?),
        Command::Simulate(a) => {
            let m = RunManifest::from(a);
            cmd_simulate(&m)?;
            println!("wrote {}", m.out.display());
        }
        Command::Robustness(a) => {
            let m = RunManifest::from(a);
            let res = cmd_robustness(&m)?;
            let count = |s: RunStatus| res.perturbed.iter().filter(|r| r.status == s).count();
            let stable = res.attempted().filter(|r| r.stable()).count();
            println!(
                "{} perturbed runs: {} ok ({stable} stable), {} skipped, {} failed; wrote {}",
                res.perturbed.len(),
                count(RunStatus::Ok),
                count(RunStatus::Skipped),
                count(RunStatus::Failed),
                m.out.display()
            );
        }
        Command::Sensitivity(a) => {
            let m = RunManifest::from(a);
            cmd_sensitivity(&m)?;
            println!("wrote {}", m.out.display());
        }
        Command::Plot { out } => println!("{}", cmd_plot(&out)?.join(" ")),
    }
    Ok(())
}

/// The context chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INPUT as u8) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
