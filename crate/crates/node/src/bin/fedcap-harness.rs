use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcap_node::harness::scenario::{resolve, BUNDLED};
use fedcap_node::harness::{
    run_latency_experiment, run_scenario, BenchOptions, Binaries, Format, Mode,
};
use fedcap_node::http::init_tracing;

/// Launches loopback topologies, runs scenarios and latency experiments.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Directory holding the service binaries; defaults to this binary's.
    #[arg(long, global = true)]
    bin_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bundled scenario by name, or a scenario JSON file.
    Scenario {
        name: String,
        /// Print the step report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// List bundled scenarios.
    List,
    /// Measure request latency with and without the enforcement pipeline.
    Bench {
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Artificial per-response delay, e.g. to emulate an inter-domain RTT.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        /// Report file; the text summary is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output format; guessed from the file extension when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn main() -> ExitCode {
    init_tracing();
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: Args) -> anyhow::Result<bool> {
    let bins = match &args.bin_dir {
        Some(d) => Binaries::in_dir(d),
        None => Binaries::beside_current_exe()?,
    };
    match args.command {
        Command::List => {
            for (name, _) in BUNDLED {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Scenario { name, json } => {
            let scenario = resolve(&name)?;
            let report = run_scenario(&scenario, &bins)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
            Ok(report.passed())
        }
        Command::Bench {
            runs,
            mode,
            warmup,
            delay_ms,
            out,
            format,
        } => {
            let opts = BenchOptions {
                runs,
                mode,
                warmup,
                inject_delay_ms: delay_ms,
            };
            let report = run_latency_experiment(&opts, &bins)?;
            print!("{}", report.to_text());
            if let Some(path) = out {
                let format = format.unwrap_or_else(|| Format::from_path(&path));
                report.write(&path, format)?;
                println!("report written to {}", path.display());
            }
            Ok(true)
        }
    }
}
