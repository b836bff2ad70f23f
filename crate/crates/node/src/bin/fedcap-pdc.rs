use std::path::PathBuf;

use clap::Parser;
use fedcap_node::config::PdcConfig;
use fedcap_node::http::{init_tracing, ServiceClock};

/// Cloud policy decision center.
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
    let config = PdcConfig::load(&args.config)?;
    fedcap_node::pdc_server::run(config, ServiceClock::from_flag(args.manual_clock)).await
}
