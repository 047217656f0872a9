#![allow(clippy::needless_range_loop)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bellsim::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bellsim",
    version,
    about = "Simulate and analyze long-distance Bell tests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the scenario comes from: a preset name or a TOML file.
#[derive(Args, Clone, Debug)]
#[group(required = false, multiple = false)]
struct ScenarioArgs {
    /// Path to a scenario TOML file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario preset.
    #[arg(long, value_parser = ["a", "b", "c", "d"])]
    scenario: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Space-time analysis of a scenario; exit code 1 if any loophole is open.
    Verdict {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Replace both setting generators by deterministic periodic ones.
        #[arg(long)]
        deterministic: bool,
        /// Also write verdict.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a run and write both tag streams plus a manifest.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Override the run duration, s.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Skip the CSV mirrors of the binary tag files.
        #[arg(long)]
        no_csv: bool,
    },
    /// Coincidence analysis of two tag files.
    Analyze {
        /// Directory holding alice.bin and bob.bin, as written by `run`.
        input: Option<PathBuf>,
        #[arg(long, requires = "bob", conflicts_with = "input")]
        alice: Option<PathBuf>,
        #[arg(long, requires = "alice", conflicts_with = "input")]
        bob: Option<PathBuf>,
        /// Coincidence window, ns.
        #[arg(long, default_value_t = 1.5)]
        window: f64,
        /// Skip clock-drift compensation.
        #[arg(long)]
        no_drift: bool,
        /// Also write a Δt histogram around the peak.
        #[arg(long)]
        histogram: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-qubit state tomography from counts or simulated data.
    Tomo {
        /// CSV with columns alice_proj,bob_proj,count.
        #[arg(
            long,
            conflicts_with = "simulate",
            required_unless_present = "simulate"
        )]
        counts: Option<PathBuf>,
        /// Simulate a Werner state: VISIBILITY COUNTS_PER_SETTING.
        #[arg(long, num_args = 2, value_names = ["VISIBILITY", "COUNTS"])]
        simulate: Option<Vec<f64>>,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run all four presets and tabulate verdicts and S.
    #[command(alias = "table2")]
    ScenarioTable {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Override every preset's run duration, s.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the setting bit sequences of a scenario.
    ExportSettings {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Duration to sample, s.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub const EXIT_OPEN: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("BELLSIM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Input(format!(
                "BELLSIM_THREADS must be a positive integer, got '{value}'"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Input(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    configure_threads()?;
    match cli.command {
        Command::Verdict {
            scenario,
            deterministic,
            out,
        } => commands::verdict(&scenario, deterministic, out.as_deref()),
        Command::Run {
            scenario,
            seed,
            duration,
            out,
            no_csv,
        } => commands::run(&scenario, seed, duration, &out, !no_csv),
        Command::Analyze {
            input,
            alice,
            bob,
            window,
            no_drift,
            histogram,
            out,
        } => {
            let (alice, bob) = match (input, alice, bob) {
                (Some(dir), _, _) => (dir.join("alice.bin"), dir.join("bob.bin")),
                (None, Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Input(
                        "give a run directory or both --alice and --bob".into(),
                    ))
                }
            };
            commands::analyze(&alice, &bob, window, !no_drift, histogram, &out)
        }
        Command::Tomo {
            counts,
            simulate,
            bootstrap,
            seed,
            out,
        } => {
            let source = match (counts, simulate) {
                (Some(path), _) => commands::TomoSource::Counts(path),
                (None, Some(v)) => commands::TomoSource::Simulate {
                    visibility: v[0],
                    counts: v[1],
                },
                (None, None) => return Err(Error::Input("give --counts or --simulate".into())),
            };
            commands::tomo(source, bootstrap, seed, &out)
        }
        Command::ScenarioTable {
            seed,
            duration,
            out,
        } => commands::scenario_table(seed, duration, &out),
        Command::ExportSettings {
            scenario,
            seed,
            duration,
            out,
        } => commands::export_settings(&scenario, seed, duration, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            })
        }
    }
}
