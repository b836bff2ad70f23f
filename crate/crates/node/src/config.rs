//! Service configuration files (TOML) with environment overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fedcap_core::policy::PolicyRule;
use fedcap_core::provider::ProviderSettings;
use fedcap_core::PublicKey;
use serde::{Deserialize, Serialize};

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn env_override<T: std::str::FromStr>(var: &str, slot: &mut T) -> anyhow::Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Ok(v) = std::env::var(var) {
        *slot = v.parse().map_err(|e| anyhow::anyhow!("{var}={v:?}: {e}"))?;
    }
    Ok(())
}

/// Relative paths in a config file are resolved against its directory.
fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Policy rules are stored as a JSON array.
pub fn load_rules(path: &Path) -> anyhow::Result<Vec<PolicyRule>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading policy file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing policy file {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdcConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub key_file: PathBuf,
    pub policy_file: PathBuf,
    #[serde(default = "default_pdc_name")]
    pub name: String,
    #[serde(default = "default_root_domain")]
    pub domain_id: String,
    /// Journal directory; state is kept in memory only when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

fn default_listen() -> String {
    "127.0.0.1:0".into()
}

fn default_pdc_name() -> String {
    "pdc".into()
}

fn default_root_domain() -> String {
    "cloud".into()
}

fn default_sync_period() -> u64 {
    10
}

fn default_delivery_timeout() -> u64 {
    500
}

impl PdcConfig {
    /// Reads the file, then applies `FEDCAP_LISTEN`, `FEDCAP_KEY_FILE`,
    /// `FEDCAP_POLICY_FILE` and `FEDCAP_DATA_DIR`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: PdcConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut c.key_file);
        resolve(base, &mut c.policy_file);
        if let Some(d) = c.data_dir.as_mut() {
            resolve(base, d);
        }
        env_override("FEDCAP_LISTEN", &mut c.listen)?;
        env_override("FEDCAP_KEY_FILE", &mut c.key_file)?;
        env_override("FEDCAP_POLICY_FILE", &mut c.policy_file)?;
        if let Ok(d) = std::env::var("FEDCAP_DATA_DIR") {
            c.data_dir = Some(d.into());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinatorConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub key_file: PathBuf,
    pub name: String,
    pub domain_id: String,
    pub root_key: PublicKey,
    pub pdc_url: String,
    #[serde(default = "default_sync_period")]
    pub sync_period_secs: u64,
    /// Extra domain rules consulted after the mirrored ones.
    #[serde(default)]
    pub local_rules_file: Option<PathBuf>,
    #[serde(default = "default_delivery_timeout")]
    pub delivery_timeout_ms: u64,
}

impl CoordinatorConfig {
    /// Reads the file, then applies `FEDCAP_LISTEN`, `FEDCAP_KEY_FILE`,
    /// `FEDCAP_PDC_URL` and `FEDCAP_SYNC_PERIOD`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: CoordinatorConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut c.key_file);
        if let Some(f) = c.local_rules_file.as_mut() {
            resolve(base, f);
        }
        env_override("FEDCAP_LISTEN", &mut c.listen)?;
        env_override("FEDCAP_KEY_FILE", &mut c.key_file)?;
        env_override("FEDCAP_PDC_URL", &mut c.pdc_url)?;
        env_override("FEDCAP_SYNC_PERIOD", &mut c.sync_period_secs)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Coordinator to register with at startup.
    #[serde(default)]
    pub coordinator_url: Option<String>,
    /// Address announced to the coordinator; defaults to the bound address.
    #[serde(default)]
    pub advertise: Option<String>,
    /// Artificial delay added to every resource response.
    #[serde(default)]
    pub inject_delay_ms: u64,
    pub provider: ProviderSettings,
}

impl ProviderConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut c: ProviderConfig = read_toml(path)?;
        env_override("FEDCAP_LISTEN", &mut c.listen)?;
        Ok(c)
    }
}

/// Parses `--trusted-keys a,b,c`.
pub fn parse_keys(list: &str) -> anyhow::Result<Vec<PublicKey>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Ok(PublicKey::from_hex(s)?))
        .collect()
}
