use std::path::PathBuf;

use clap::Parser;
use fedcap_node::config::{parse_keys, ProviderConfig};
use fedcap_node::http::{init_tracing, ServiceClock};

/// Service provider with capability enforcement.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the listen address from the config file.
    #[arg(long)]
    listen: Option<String>,
    /// Extra trusted issuer keys, comma-separated hex.
    #[arg(long, value_name = "HEX,...")]
    trusted_keys: Option<String>,
    /// Serve resources without authorization (latency baseline only).
    #[arg(long)]
    bypass: bool,
    /// Start a manual clock at this Unix time and enable POST /admin/clock.
    #[arg(long, value_name = "UNIX_SECS")]
    manual_clock: Option<i64>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    init_tracing();
    let args = Args::parse();
    let mut config = ProviderConfig::load(&args.config)?;
    if let Some(l) = args.listen {
        config.listen = l;
    }
    if let Some(keys) = args.trusted_keys {
        config.provider.trusted_issuers.extend(parse_keys(&keys)?);
    }
    fedcap_node::provider_server::run(
        config,
        ServiceClock::from_flag(args.manual_clock),
        args.bypass,
    )
    .await
}
