use std::path::PathBuf;

use clap::Parser;
use fedcap_node::config::CoordinatorConfig;
use fedcap_node::http::{init_tracing, ServiceClock};

/// Domain coordinator.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Start a manual clock at this Unix time and enable POST /admin/clock.
    #[arg(long, value_name = "UNIX_SECS")]
    manual_clock: Option<i64>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_tracing();
    let args = Args::parse();
    let config = CoordinatorConfig::load(&args.config)?;
    fedcap_node::coordinator_server::run(config, ServiceClock::from_flag(args.manual_clock)).await
}
