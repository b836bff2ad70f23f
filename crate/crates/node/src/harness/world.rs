//! A launched topology: one center, some coordinators and providers, and
//! the subject identities the harness acts for.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use fedcap_core::crypto::sha256;
use fedcap_core::policy::PolicyRule;
use fedcap_core::provider::{ProviderSettings, Resource};
use fedcap_core::{AccessRight, Action, Condition, EntityKind, SigningKey, VirtualIdentity};
use serde::{Deserialize, Serialize};

use crate::api::ClockSet;
use crate::client::JsonClient;
use crate::config::{CoordinatorConfig, PdcConfig, ProviderConfig};
use crate::coordinator_server::CoordinatorStatus;
use crate::identity::{write_key, Entity};

use super::process::{free_port, Binaries, ServiceProcess};

pub const DEFAULT_START_TIME: i64 = 1_700_000_000;
pub const DEFAULT_DOMAIN: &str = "d1";

/// Every key the harness uses is derived from the actor's name.
pub fn key_for(name: &str) -> SigningKey {
    SigningKey::from_seed(*sha256(&[b"fedcap-harness-key", name.as_bytes()]).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RightSpec {
    pub action: Action,
    pub resource: String,
    #[serde(default)]
    pub conditions: Vec<Condition>,
}

impl From<&RightSpec> for AccessRight {
    fn from(r: &RightSpec) -> Self {
        AccessRight::new(r.action, r.resource.clone()).with_conditions(r.conditions.clone())
    }
}

pub fn rights(specs: &[RightSpec]) -> Vec<AccessRight> {
    specs.iter().map(AccessRight::from).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub name: String,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    pub resources: BTreeMap<String, Resource>,
    /// Coordinator the provider registers with at startup.
    #[serde(default)]
    pub coordinator: Option<String>,
    /// Serve resources without the middleware.
    #[serde(default)]
    pub bypass: bool,
    #[serde(default)]
    pub inject_delay_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectSpec {
    pub name: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default = "default_start")]
    pub start_time: i64,
    #[serde(default = "default_domain")]
    pub domain_id: String,
    #[serde(default)]
    pub coordinators: Vec<String>,
    #[serde(default)]
    pub providers: Vec<ProviderSpec>,
    #[serde(default)]
    pub subjects: Vec<SubjectSpec>,
    /// Use the wall clock instead of a harness-controlled one.
    #[serde(default)]
    pub wall_clock: bool,
}

fn default_start() -> i64 {
    DEFAULT_START_TIME
}

fn default_domain() -> String {
    DEFAULT_DOMAIN.into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    /// Attribute equalities the subject must satisfy.
    #[serde(default)]
    pub subject: BTreeMap<String, String>,
    /// Provider name.
    pub object: String,
    pub granted: Vec<RightSpec>,
    pub validity_duration: i64,
}

#[derive(Debug)]
pub struct Node {
    pub entity: Entity,
    pub process: ServiceProcess,
}

pub struct World {
    pub root: Entity,
    pub pdc: ServiceProcess,
    pub coordinators: BTreeMap<String, Node>,
    pub providers: BTreeMap<String, Node>,
    pub subjects: BTreeMap<String, Entity>,
    pub client: JsonClient,
    now: i64,
    manual: bool,
    // Declared last so it outlives the processes that write into it.
    _dir: tempfile::TempDir,
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, toml::to_string(value)?)?;
    Ok(())
}

impl World {
    pub fn launch(
        spec: &TopologySpec,
        rules: &[RuleSpec],
        bins: &Binaries,
    ) -> anyhow::Result<Self> {
        bins.check()?;
        let dir = tempfile::Builder::new().prefix("fedcap-").tempdir()?;
        let d = dir.path();
        let manual = !spec.wall_clock;
        let now = if manual {
            spec.start_time
        } else {
            fedcap_core::Clock::now(&fedcap_core::SystemClock)
        };
        let clock_args = |args: &mut Vec<String>| {
            if manual {
                args.push("--manual-clock".into());
                args.push(now.to_string());
            }
        };

        let mut provider_entities = BTreeMap::new();
        for p in &spec.providers {
            let port = free_port()?;
            let attrs = vec![("address".to_string(), format!("127.0.0.1:{port}"))];
            let e = Entity::new(
                EntityKind::Object,
                &p.name,
                &attrs,
                key_for(&p.name),
                &spec.domain_id,
            )?;
            provider_entities.insert(p.name.clone(), (e, port));
        }
        let policy: Vec<PolicyRule> = rules
            .iter()
            .map(|r| {
                let (obj, _) = provider_entities
                    .get(&r.object)
                    .ok_or_else(|| anyhow!("rule names unknown provider {:?}", r.object))?;
                Ok(PolicyRule {
                    subject_match: r
                        .subject
                        .iter()
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect(),
                    object_vid: obj.vid(),
                    granted: rights(&r.granted),
                    validity_duration: r.validity_duration,
                })
            })
            .collect::<anyhow::Result<_>>()?;

        let pdc_cfg = PdcConfig {
            listen: "127.0.0.1:0".into(),
            key_file: d.join("pdc.key"),
            policy_file: d.join("rules.json"),
            name: "pdc".into(),
            domain_id: "cloud".into(),
            data_dir: None,
        };
        let root = crate::pdc_server::root_entity_with_key(&pdc_cfg, key_for("pdc"))?;
        write_key(&pdc_cfg.key_file, &root.key)?;
        std::fs::write(&pdc_cfg.policy_file, serde_json::to_vec_pretty(&policy)?)?;
        write_toml(&d.join("pdc.toml"), &pdc_cfg)?;
        let mut args = vec![
            "--config".to_string(),
            d.join("pdc.toml").display().to_string(),
        ];
        clock_args(&mut args);
        let pdc = ServiceProcess::spawn("pdc", &bins.pdc, &args, d)?;

        let mut coordinators = BTreeMap::new();
        for name in &spec.coordinators {
            let cfg = CoordinatorConfig {
                listen: "127.0.0.1:0".into(),
                key_file: d.join(format!("{name}.key")),
                name: name.clone(),
                domain_id: spec.domain_id.clone(),
                root_key: root.key.public_key(),
                pdc_url: pdc.url(),
                sync_period_secs: 3600,
                local_rules_file: None,
                delivery_timeout_ms: 500,
            };
            let entity =
                crate::coordinator_server::coordinator_entity_with_key(&cfg, key_for(name))?;
            write_key(&cfg.key_file, &entity.key)?;
            let path = d.join(format!("{name}.toml"));
            write_toml(&path, &cfg)?;
            let mut args = vec!["--config".to_string(), path.display().to_string()];
            clock_args(&mut args);
            let process = ServiceProcess::spawn(name, &bins.coordinator, &args, d)?;
            coordinators.insert(name.clone(), Node { entity, process });
        }

        let mut providers = BTreeMap::new();
        for p in &spec.providers {
            let (entity, port) = provider_entities.remove(&p.name).expect("built above");
            let coordinator_url = match &p.coordinator {
                Some(c) => Some(
                    coordinators
                        .get(c)
                        .ok_or_else(|| {
                            anyhow!("provider {} names unknown coordinator {c}", p.name)
                        })?
                        .process
                        .url(),
                ),
                None => None,
            };
            let cfg = ProviderConfig {
                listen: format!("127.0.0.1:{port}"),
                coordinator_url,
                advertise: None,
                inject_delay_ms: p.inject_delay_ms,
                provider: ProviderSettings {
                    vid: entity.vid(),
                    root_key: root.key.public_key(),
                    trusted_issuers: vec![root.key.public_key()],
                    denied_issuers: vec![],
                    environment: p.environment.clone(),
                    resources: p.resources.clone(),
                    expose_deny_detail: true,
                    strict_chain: None,
                },
            };
            let path = d.join(format!("{}.toml", p.name));
            write_toml(&path, &cfg)?;
            let mut args = vec!["--config".to_string(), path.display().to_string()];
            if p.bypass {
                args.push("--bypass".into());
            }
            clock_args(&mut args);
            let process = ServiceProcess::spawn(&p.name, &bins.provider, &args, d)?;
            providers.insert(p.name.clone(), Node { entity, process });
        }

        let mut subjects = BTreeMap::new();
        for s in &spec.subjects {
            let attrs: Vec<_> = s
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            let e = Entity::new(
                EntityKind::Subject,
                &s.name,
                &attrs,
                key_for(&s.name),
                &spec.domain_id,
            )?;
            subjects.insert(s.name.clone(), e);
        }

        let world = World {
            root,
            pdc,
            coordinators,
            providers,
            subjects,
            client: JsonClient::new(Duration::from_secs(10)),
            now,
            manual,
            _dir: dir,
        };
        for name in world.coordinators.keys() {
            let expected: Vec<VirtualIdentity> = spec
                .providers
                .iter()
                .filter(|p| p.coordinator.as_deref() == Some(name))
                .map(|p| world.providers[&p.name].entity.vid())
                .collect();
            world.wait_for_providers(name, &expected)?;
        }
        Ok(world)
    }

    fn wait_for_providers(
        &self,
        coordinator: &str,
        expected: &[VirtualIdentity],
    ) -> anyhow::Result<()> {
        let url = format!("{}/status", self.coordinators[coordinator].process.url());
        let deadline = Instant::now() + Duration::from_secs(15);
        loop {
            let status: CoordinatorStatus = self.client.get(&url)?;
            if expected
                .iter()
                .all(|v| status.providers.iter().any(|p| p.vid == *v))
            {
                return Ok(());
            }
            if Instant::now() > deadline {
                bail!("providers did not register with {coordinator}");
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    pub fn now(&self) -> i64 {
        if self.manual {
            self.now
        } else {
            fedcap_core::Clock::now(&fedcap_core::SystemClock)
        }
    }

    /// Moves every service's clock forward.
    pub fn advance_clock(&mut self, secs: i64) -> anyhow::Result<()> {
        if !self.manual {
            bail!("topology runs on the wall clock");
        }
        self.now += secs;
        let body = ClockSet { now: self.now };
        let urls: Vec<String> = std::iter::once(self.pdc.url())
            .chain(self.coordinators.values().map(|n| n.process.url()))
            .chain(self.providers.values().map(|n| n.process.url()))
            .collect();
        for u in urls {
            let _: ClockSet = self
                .client
                .post(&format!("{u}/admin/clock"), &body)
                .with_context(|| format!("setting clock at {u}"))?;
        }
        Ok(())
    }

    /// Any named actor: subject, provider, coordinator, or `pdc`.
    pub fn entity(&self, name: &str) -> anyhow::Result<&Entity> {
        if name == "pdc" {
            return Ok(&self.root);
        }
        self.subjects
            .get(name)
            .or_else(|| self.providers.get(name).map(|n| &n.entity))
            .or_else(|| self.coordinators.get(name).map(|n| &n.entity))
            .ok_or_else(|| anyhow!("unknown actor {name:?}"))
    }

    pub fn provider(&self, name: &str) -> anyhow::Result<&Node> {
        self.providers
            .get(name)
            .ok_or_else(|| anyhow!("unknown provider {name:?}"))
    }

    pub fn provider_mut(&mut self, name: &str) -> anyhow::Result<&mut Node> {
        self.providers
            .get_mut(name)
            .ok_or_else(|| anyhow!("unknown provider {name:?}"))
    }

    pub fn coordinator(&self, name: &str) -> anyhow::Result<&Node> {
        self.coordinators
            .get(name)
            .ok_or_else(|| anyhow!("unknown coordinator {name:?}"))
    }

    pub fn pdc_url(&self, path: &str) -> String {
        format!("{}{path}", self.pdc.url())
    }
}
