//! Scripted scenarios: a topology, policy rules and an ordered list of
//! actions with expected outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use fedcap_core::authz::{MeteredStage, StageReport};
use fedcap_core::certificate::{DelegationCertificate, RevocationCertificate};
use fedcap_core::coordinator::{DeliveryReport, ProviderEntry};
use fedcap_core::{CapabilityToken, InternalCapability};
use serde::{Deserialize, Serialize};

use crate::api::*;
use crate::client::CallError;
use crate::coordinator_server::{ProviderRegistered, SyncReport};

use super::process::Binaries;
use super::world::{rights, RightSpec, RuleSpec, TopologySpec, World};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub topology: TopologySpec,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    pub script: Vec<Step>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub op: Op,
    /// `ok`, `rejected`, `noop`, `grant`, `deny:<stage>`, `unauthorized`,
    /// `status:<code>`, `report:<succeeded>/<total>` or `error`.
    pub expect: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tamper {
    /// Flip one byte of the issuer signature.
    Signature,
    /// Swap the subject for another identity.
    Subject,
    /// Widen the granted path without re-signing.
    Resource,
    /// Send bytes that are not a token.
    Garbage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Op {
    /// Registers each actor's profile with the center.
    Register {
        actors: Vec<String>,
    },
    MintIncap {
        object: String,
        rights: Vec<RightSpec>,
    },
    /// Root requests its certificate and offers the domain to `coordinator`.
    Delegate {
        coordinator: String,
    },
    /// A coordinator tries to pass its own certificate on.
    OfferFromCoordinator {
        from: String,
        to: String,
    },
    /// Registers providers with a coordinator.
    Attach {
        coordinator: String,
        providers: Vec<String>,
    },
    Issue {
        subject: String,
        object: String,
        rights: Vec<RightSpec>,
        /// Coordinator name; the center when absent.
        #[serde(default)]
        via: Option<String>,
        save_as: Option<String>,
    },
    Request {
        /// Saved token name; no token header when absent.
        #[serde(default)]
        token: Option<String>,
        provider: String,
        #[serde(default = "get_method")]
        method: String,
        path: String,
        #[serde(default)]
        tamper: Option<Tamper>,
    },
    RevokeSubject {
        subject: String,
        ttl: i64,
        #[serde(default)]
        broadcast_via: Option<String>,
        #[serde(default)]
        save_as: Option<String>,
    },
    /// Re-sends a saved certificate through a coordinator.
    Broadcast {
        coordinator: String,
        certificate: String,
    },
    RevokeCoordinator {
        coordinator: String,
        #[serde(default)]
        save_as: Option<String>,
    },
    RevokeIncap {
        object: String,
    },
    AdvanceClock {
        seconds: i64,
    },
    Sync {
        coordinator: String,
    },
    Suspend {
        provider: String,
    },
    Resume {
        provider: String,
    },
}

fn get_method() -> String {
    "GET".into()
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Register { actors } => write!(f, "register {}", actors.join(",")),
            Op::MintIncap { object, .. } => write!(f, "mint internal capability for {object}"),
            Op::Delegate { coordinator } => write!(f, "delegate domain to {coordinator}"),
            Op::OfferFromCoordinator { from, to } => write!(f, "{from} offers delegation to {to}"),
            Op::Attach {
                coordinator,
                providers,
            } => write!(f, "attach {} to {coordinator}", providers.join(",")),
            Op::Issue {
                subject,
                object,
                via,
                ..
            } => write!(
                f,
                "issue {subject} -> {object} via {}",
                via.as_deref().unwrap_or("pdc")
            ),
            Op::Request {
                token,
                provider,
                method,
                path,
                tamper,
            } => {
                write!(
                    f,
                    "{method} {path} at {provider} with {}",
                    token.as_deref().unwrap_or("no token")
                )?;
                if let Some(t) = tamper {
                    write!(f, " ({t:?} tampered)")?;
                }
                Ok(())
            }
            Op::RevokeSubject { subject, ttl, .. } => write!(f, "revoke {subject} for {ttl}s"),
            Op::Broadcast {
                coordinator,
                certificate,
            } => write!(f, "broadcast {certificate} via {coordinator}"),
            Op::RevokeCoordinator { coordinator, .. } => {
                write!(f, "revoke coordinator {coordinator}")
            }
            Op::RevokeIncap { object } => write!(f, "remove internal capability of {object}"),
            Op::AdvanceClock { seconds } => write!(f, "advance clock {seconds}s"),
            Op::Sync { coordinator } => write!(f, "sync {coordinator}"),
            Op::Suspend { provider } => write!(f, "suspend {provider}"),
            Op::Resume { provider } => write!(f, "resume {provider}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResult {
    pub index: usize,
    pub description: String,
    pub expected: Option<String>,
    pub observed: String,
    pub pass: bool,
    pub detail: String,
    /// Per-stage invocation count change caused by a request.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage_deltas: BTreeMap<MeteredStage, u64>,
    /// For requests: whether exactly the stages up to the deciding one ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_circuit: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub steps: Vec<StepResult>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.steps
            .iter()
            .all(|s| s.pass && s.short_circuit != Some(false))
    }

    pub fn failures(&self) -> Vec<&StepResult> {
        self.steps
            .iter()
            .filter(|s| !s.pass || s.short_circuit == Some(false))
            .collect()
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.name)?;
        for s in &self.steps {
            let mark = if s.pass && s.short_circuit != Some(false) {
                "ok  "
            } else {
                "FAIL"
            };
            write!(
                f,
                "  [{mark}] {:>2}. {:<48} expected {:<18} observed {}",
                s.index,
                s.description,
                s.expected.as_deref().unwrap_or("-"),
                s.observed
            )?;
            if s.short_circuit == Some(false) {
                write!(f, " (stage counters {:?})", s.stage_deltas)?;
            }
            if !s.pass && !s.detail.is_empty() {
                write!(f, " [{}]", s.detail)?;
            }
            writeln!(f)?;
        }
        let failed = self.failures().len();
        writeln!(
            f,
            "{}: {} of {} steps passed",
            if failed == 0 { "PASS" } else { "FAIL" },
            self.steps.len() - failed,
            self.steps.len()
        )
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing scenario {}", path.display()))
    }

    /// Every actor an action names must be defined by the topology.
    pub fn check(&self) -> anyhow::Result<()> {
        let t = &self.topology;
        let providers: Vec<&str> = t.providers.iter().map(|p| p.name.as_str()).collect();
        let subjects: Vec<&str> = t.subjects.iter().map(|s| s.name.as_str()).collect();
        let coords: Vec<&str> = t.coordinators.iter().map(String::as_str).collect();
        let is_p = |n: &str| providers.contains(&n);
        let is_s = |n: &str| subjects.contains(&n);
        let is_c = |n: &str| coords.contains(&n);
        let need = |ok: bool, what: &str, n: &str| {
            if ok {
                Ok(())
            } else {
                Err(anyhow!("scenario {}: unknown {what} {n:?}", self.name))
            }
        };
        for r in &self.rules {
            need(is_p(&r.object), "provider", &r.object)?;
        }
        for step in &self.script {
            match &step.op {
                Op::Register { actors } => {
                    for a in actors {
                        need(a == "pdc" || is_p(a) || is_s(a) || is_c(a), "actor", a)?;
                    }
                }
                Op::MintIncap { object, .. } | Op::RevokeIncap { object } => {
                    need(is_p(object), "provider", object)?
                }
                Op::Delegate { coordinator }
                | Op::Sync { coordinator }
                | Op::RevokeCoordinator { coordinator, .. }
                | Op::Broadcast { coordinator, .. } => {
                    need(is_c(coordinator), "coordinator", coordinator)?
                }
                Op::OfferFromCoordinator { from, to } => {
                    need(is_c(from), "coordinator", from)?;
                    need(is_c(to) || is_p(to) || is_s(to), "actor", to)?;
                }
                Op::Attach {
                    coordinator,
                    providers,
                } => {
                    need(is_c(coordinator), "coordinator", coordinator)?;
                    for p in providers {
                        need(is_p(p), "provider", p)?;
                    }
                }
                Op::Issue {
                    subject,
                    object,
                    via,
                    ..
                } => {
                    need(is_s(subject), "subject", subject)?;
                    need(is_p(object), "provider", object)?;
                    if let Some(c) = via {
                        need(is_c(c), "coordinator", c)?;
                    }
                }
                Op::Request { provider, .. }
                | Op::Suspend { provider }
                | Op::Resume { provider } => need(is_p(provider), "provider", provider)?,
                Op::RevokeSubject {
                    subject,
                    broadcast_via,
                    ..
                } => {
                    need(is_s(subject), "subject", subject)?;
                    if let Some(c) = broadcast_via {
                        need(is_c(c), "coordinator", c)?;
                    }
                }
                Op::AdvanceClock { .. } => {}
            }
        }
        Ok(())
    }
}

/// Built-in scenarios, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "happy-path",
        include_str!("../../scenarios/happy-path.json"),
    ),
    (
        "deny-matrix",
        include_str!("../../scenarios/deny-matrix.json"),
    ),
    (
        "coordinator-swap",
        include_str!("../../scenarios/coordinator-swap.json"),
    ),
    (
        "revocation",
        include_str!("../../scenarios/revocation.json"),
    ),
    (
        "broadcast-fault",
        include_str!("../../scenarios/broadcast-fault.json"),
    ),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenarios parse"))
}

/// A bundled name or a path to a scenario file.
pub fn resolve(name_or_path: &str) -> anyhow::Result<Scenario> {
    match bundled(name_or_path) {
        Some(s) => Ok(s),
        None => Scenario::load(Path::new(name_or_path)),
    }
}

struct Runner {
    world: World,
    tokens: BTreeMap<String, String>,
    certificates: BTreeMap<String, RevocationCertificate>,
}

/// What a step produced, before comparison with the expectation.
struct Observed {
    outcome: String,
    detail: String,
    stage_deltas: BTreeMap<MeteredStage, u64>,
    short_circuit: Option<bool>,
}

impl Observed {
    fn plain(outcome: impl Into<String>) -> Self {
        Observed {
            outcome: outcome.into(),
            detail: String::new(),
            stage_deltas: BTreeMap::new(),
            short_circuit: None,
        }
    }

    fn with_detail(outcome: impl Into<String>, detail: impl fmt::Display) -> Self {
        Observed {
            detail: detail.to_string(),
            ..Observed::plain(outcome)
        }
    }
}

fn call_outcome<T>(r: Result<T, CallError>) -> (Option<T>, Observed) {
    match r {
        Ok(v) => (Some(v), Observed::plain("ok")),
        Err(e @ CallError::Status { .. }) => (None, Observed::with_detail("rejected", e)),
        Err(e) => (None, Observed::with_detail("error", e)),
    }
}

fn report_outcome(r: &DeliveryReport) -> String {
    format!("report:{}/{}", r.succeeded(), r.deliveries.len())
}

/// Runs `scenario` against a fresh topology. Teardown happens when the
/// topology is dropped, whatever the outcome.
pub fn run_scenario(scenario: &Scenario, bins: &Binaries) -> anyhow::Result<ScenarioReport> {
    scenario.check()?;
    let world = World::launch(&scenario.topology, &scenario.rules, bins)
        .with_context(|| format!("launching topology for {}", scenario.name))?;
    let mut runner = Runner {
        world,
        tokens: BTreeMap::new(),
        certificates: BTreeMap::new(),
    };
    let mut steps = Vec::new();
    for (i, step) in scenario.script.iter().enumerate() {
        let obs = runner
            .execute(&step.op)
            .unwrap_or_else(|e| Observed::with_detail("error", format!("{e:#}")));
        let pass = match &step.expect {
            Some(exp) => *exp == obs.outcome,
            None => obs.outcome != "error",
        };
        steps.push(StepResult {
            index: i + 1,
            description: step.op.to_string(),
            expected: step.expect.clone(),
            observed: obs.outcome,
            pass,
            detail: obs.detail,
            stage_deltas: obs.stage_deltas,
            short_circuit: obs.short_circuit,
        });
    }
    Ok(ScenarioReport {
        name: scenario.name.clone(),
        steps,
    })
}

impl Runner {
    fn execute(&mut self, op: &Op) -> anyhow::Result<Observed> {
        let w = &self.world;
        let now = w.now();
        Ok(match op {
            Op::Register { actors } => {
                let mut last = Observed::plain("ok");
                for a in actors {
                    let e = w.entity(a)?;
                    let body = RegisterRequest {
                        profile: e.profile.clone(),
                        owner_sign: e.owner_sign.clone(),
                    };
                    let (_, obs) = call_outcome(
                        w.client
                            .post::<_, RegisterResponse>(&w.pdc_url("/register"), &body),
                    );
                    if obs.outcome != "ok" {
                        last = obs;
                    }
                }
                last
            }
            Op::MintIncap { object, rights: r } => {
                let body = IncapMintRequest {
                    proof: w.root.proof(now),
                    object: w.entity(object)?.vid(),
                    rights: rights(r),
                };
                call_outcome(
                    w.client
                        .post::<_, InternalCapability>(&w.pdc_url("/incap/mint"), &body),
                )
                .1
            }
            Op::Delegate { coordinator } => {
                let root_dc: DelegationCertificate = match w
                    .client
                    .post(&w.pdc_url("/delegation/request"), &w.root.proof(now))
                {
                    Ok(dc) => dc,
                    Err(e) => return Ok(call_outcome::<()>(Err(e)).1),
                };
                let url = format!(
                    "{}/delegation/accept",
                    w.coordinator(coordinator)?.process.url()
                );
                call_outcome(
                    w.client.post::<_, DelegationCertificate>(
                        &url,
                        &DelegationAccept { offer: root_dc },
                    ),
                )
                .1
            }
            Op::OfferFromCoordinator { from, to } => {
                let from_node = w.coordinator(from)?;
                let status: crate::coordinator_server::CoordinatorStatus = w
                    .client
                    .get(&format!("{}/status", from_node.process.url()))?;
                let offer = status
                    .dc
                    .ok_or_else(|| anyhow!("{from} holds no delegation certificate"))?;
                let to_entity = w.entity(to)?;
                let body = DelegationOfferRequest {
                    offer,
                    delegatee: to_entity.proof(now),
                    domain_id: to_entity.profile.domain_id.clone(),
                };
                call_outcome(
                    w.client
                        .post::<_, DelegationCertificate>(&w.pdc_url("/delegation/offer"), &body),
                )
                .1
            }
            Op::Attach {
                coordinator,
                providers,
            } => {
                let url = format!(
                    "{}/provider/register",
                    w.coordinator(coordinator)?.process.url()
                );
                let mut report = DeliveryReport::default();
                for p in providers {
                    let node = w.provider(p)?;
                    let entry = ProviderEntry {
                        vid: node.entity.vid(),
                        address: node.process.addr.clone(),
                    };
                    let r: ProviderRegistered = w.client.post(&url, &entry)?;
                    report.deliveries.extend(r.delivery.deliveries);
                }
                Observed::plain(report_outcome(&report))
            }
            Op::Issue {
                subject,
                object,
                rights: r,
                via,
                save_as,
            } => {
                let body = CapRequest {
                    proof: w.entity(subject)?.proof(now),
                    object: w.entity(object)?.vid(),
                    requested: rights(r),
                };
                let url = match via {
                    Some(c) => format!("{}/cap/request", w.coordinator(c)?.process.url()),
                    None => w.pdc_url("/cap/request"),
                };
                let (text, obs) = call_outcome(w.client.post_text(&url, &body));
                if let (Some(text), Some(name)) = (text, save_as) {
                    self.tokens.insert(name.clone(), text);
                }
                obs
            }
            Op::Request {
                token,
                provider,
                method,
                path,
                tamper,
            } => {
                let raw = match token {
                    Some(t) => Some(
                        self.tokens
                            .get(t)
                            .ok_or_else(|| anyhow!("no saved token {t:?}"))?
                            .clone(),
                    ),
                    None => None,
                };
                let raw = match (raw, tamper) {
                    (Some(r), Some(t)) => Some(tamper_token(&r, *t)?),
                    (r, _) => r,
                };
                self.request(provider, method, path, raw.as_deref())?
            }
            Op::RevokeSubject {
                subject,
                ttl,
                broadcast_via,
                save_as,
            } => {
                let body = CapRevokeRequest {
                    proof: w.root.proof(now),
                    subject: w.entity(subject)?.vid(),
                    ttl: *ttl,
                };
                let cert: RevocationCertificate =
                    match w.client.post(&w.pdc_url("/cap/revoke"), &body) {
                        Ok(c) => c,
                        Err(e) => return Ok(call_outcome::<()>(Err(e)).1),
                    };
                if let Some(name) = save_as {
                    self.certificates.insert(name.clone(), cert.clone());
                }
                match broadcast_via {
                    Some(c) => self.broadcast(c, &cert)?,
                    None => Observed::plain("ok"),
                }
            }
            Op::Broadcast {
                coordinator,
                certificate,
            } => {
                let cert = self
                    .certificates
                    .get(certificate)
                    .ok_or_else(|| anyhow!("no saved certificate {certificate:?}"))?
                    .clone();
                self.broadcast(coordinator, &cert)?
            }
            Op::RevokeCoordinator {
                coordinator,
                save_as,
            } => {
                let body = DelegationRevokeRequest {
                    proof: w.root.proof(now),
                    old: w.entity(coordinator)?.vid(),
                    replacement: None,
                };
                let (resp, obs) =
                    call_outcome(w.client.post::<_, DelegationRevokeResponse>(
                        &w.pdc_url("/delegation/revoke"),
                        &body,
                    ));
                if let (Some(r), Some(name)) = (resp, save_as) {
                    self.certificates.insert(name.clone(), r.certificate);
                }
                obs
            }
            Op::RevokeIncap { object } => {
                let body = IncapRevokeRequest {
                    proof: w.root.proof(now),
                    object: w.entity(object)?.vid(),
                };
                match w
                    .client
                    .post::<_, IncapRevokeResponse>(&w.pdc_url("/incap/revoke"), &body)
                {
                    Ok(r) if r.removed => Observed::plain("ok"),
                    Ok(_) => Observed::plain("noop"),
                    Err(e) => call_outcome::<()>(Err(e)).1,
                }
            }
            Op::AdvanceClock { seconds } => {
                self.world.advance_clock(*seconds)?;
                Observed::plain("ok")
            }
            Op::Sync { coordinator } => {
                let url = format!("{}/admin/sync", w.coordinator(coordinator)?.process.url());
                let r: SyncReport = w.client.post(&url, &())?;
                match r.error {
                    Some(e) => Observed::with_detail("error", e),
                    None => Observed::plain(report_outcome(&r.delivery)),
                }
            }
            Op::Suspend { provider } => {
                self.world.provider_mut(provider)?.process.suspend()?;
                Observed::plain("ok")
            }
            Op::Resume { provider } => {
                self.world.provider_mut(provider)?.process.resume()?;
                Observed::plain("ok")
            }
        })
    }

    fn broadcast(
        &self,
        coordinator: &str,
        cert: &RevocationCertificate,
    ) -> anyhow::Result<Observed> {
        let url = format!(
            "{}/revocation/receive-and-forward",
            self.world.coordinator(coordinator)?.process.url()
        );
        Ok(
            match self.world.client.post::<_, DeliveryReport>(&url, cert) {
                Ok(r) => Observed::plain(report_outcome(&r)),
                Err(e) => call_outcome::<()>(Err(e)).1,
            },
        )
    }

    fn stage_report(&self, provider: &str) -> anyhow::Result<StageReport> {
        let url = format!(
            "{}/metrics/stages",
            self.world.provider(provider)?.process.url()
        );
        Ok(self.world.client.get(&url)?)
    }

    fn request(
        &self,
        provider: &str,
        method: &str,
        path: &str,
        token: Option<&str>,
    ) -> anyhow::Result<Observed> {
        let node = self.world.provider(provider)?;
        let before = self.stage_report(provider)?;
        let method = reqwest::Method::from_bytes(method.as_bytes())
            .map_err(|_| anyhow!("bad method {method:?}"))?;
        let mut req = self
            .world
            .client
            .raw()
            .request(method, format!("{}{path}", node.process.url()));
        if let Some(t) = token {
            req = req.header(TOKEN_HEADER, t);
        }
        let resp = req.send()?;
        let status = resp.status().as_u16();
        let body = resp.text()?;
        let after = self.stage_report(provider)?;
        let deltas: BTreeMap<MeteredStage, u64> = MeteredStage::PIPELINE
            .iter()
            .map(|s| (*s, after.count(*s) - before.count(*s)))
            .collect();
        let (outcome, ran) = match status {
            200 => ("grant".to_string(), Some(MeteredStage::PIPELINE.len())),
            401 => ("unauthorized".to_string(), Some(0)),
            403 => {
                let v: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
                let stage = v["stage"].as_str().unwrap_or("unknown").to_string();
                let ran = MeteredStage::PIPELINE
                    .iter()
                    .position(|s| s.as_str() == stage)
                    .map(|i| i + 1);
                (format!("deny:{stage}"), ran.or(Some(0)))
            }
            other => (format!("status:{other}"), None),
        };
        let short_circuit = ran.map(|n| {
            MeteredStage::PIPELINE
                .iter()
                .enumerate()
                .all(|(i, s)| deltas[s] == u64::from(i < n))
        });
        Ok(Observed {
            outcome,
            detail: body,
            stage_deltas: deltas,
            short_circuit,
        })
    }
}

/// Applies a deliberate modification to a token's JSON text.
pub fn tamper_token(raw: &str, how: Tamper) -> anyhow::Result<String> {
    if how == Tamper::Garbage {
        return Ok(format!("{}!", &raw[..raw.len() / 2]));
    }
    let mut t = CapabilityToken::from_json(raw)?;
    match how {
        Tamper::Signature => {
            let last = t
                .issue_sign
                .0
                .last_mut()
                .ok_or_else(|| anyhow!("token has no signature"))?;
            *last ^= 0x01;
        }
        Tamper::Subject => {
            let mut b = *t.subject.0.as_bytes();
            b[0] ^= 0x80;
            t.subject = fedcap_core::VirtualIdentity(fedcap_core::Digest(b));
        }
        Tamper::Resource => {
            for r in &mut t.access_right {
                r.resource = "/*".into();
            }
        }
        Tamper::Garbage => unreachable!(),
    }
    if t.access_right.is_empty() {
        bail!("token grants nothing");
    }
    Ok(t.to_json())
}
