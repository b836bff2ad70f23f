//! Provider-local authorization pipeline.
//!
//! Stages run in a fixed order and the first failure ends evaluation:
//! revocation list, token times, action grant, conditions, and finally the
//! issuer signature, which is the expensive one.

mod metrics;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use metrics::{MeteredStage, StageMetrics, StageReport, StageStat, StageTimings};

use crate::capability::{verify_token_signature, CapabilityToken};
use crate::crypto::{Digest, PublicKey};
use crate::identity::VirtualIdentity;
use crate::revocation::{check_revocation, RevocationList};
use crate::rights::{AccessRight, Action};

/// Tolerated clock disagreement between issuer and provider, in seconds.
pub const CLOCK_SKEW_SECS: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Revocation,
    TokenTime,
    ActionGrant,
    Condition,
    Signature,
    Granted,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Revocation => "revocation",
            Stage::TokenTime => "token_time",
            Stage::ActionGrant => "action_grant",
            Stage::Condition => "condition",
            Stage::Signature => "signature",
            Stage::Granted => "granted",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        [
            Stage::Revocation,
            Stage::TokenTime,
            Stage::ActionGrant,
            Stage::Condition,
            Stage::Signature,
            Stage::Granted,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }

    fn metered(self) -> Option<MeteredStage> {
        Some(match self {
            Stage::Revocation => MeteredStage::Revocation,
            Stage::TokenTime => MeteredStage::TokenTime,
            Stage::ActionGrant => MeteredStage::ActionGrant,
            Stage::Condition => MeteredStage::Condition,
            Stage::Signature => MeteredStage::Signature,
            Stage::Granted => return None,
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Grant,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub stage: Stage,
    pub detail: String,
}

impl Decision {
    pub fn grant() -> Self {
        Decision {
            outcome: Outcome::Grant,
            stage: Stage::Granted,
            detail: String::new(),
        }
    }

    pub fn deny(stage: Stage, detail: impl Into<String>) -> Self {
        debug_assert_ne!(stage, Stage::Granted);
        Decision {
            outcome: Outcome::Deny,
            stage,
            detail: detail.into(),
        }
    }

    pub fn is_grant(&self) -> bool {
        self.outcome == Outcome::Grant
    }
}

/// The provider's view of one inbound request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    pub method: Action,
    pub uri_path: String,
    pub client_address: String,
    pub now: i64,
    pub environment: BTreeMap<String, String>,
}

impl RequestContext {
    pub fn new(method: Action, uri_path: impl Into<String>, now: i64) -> Self {
        RequestContext {
            method,
            uri_path: uri_path.into(),
            client_address: "127.0.0.1".into(),
            now,
            environment: BTreeMap::new(),
        }
    }

    pub fn with_client(mut self, addr: impl Into<String>) -> Self {
        self.client_address = addr.into();
        self
    }

    pub fn with_env(mut self, key: &str, value: &str) -> Self {
        self.environment.insert(key.into(), value.into());
        self
    }
}

/// Which issuers the provider accepts. Checked at the signature stage along
/// with the signature itself.
#[derive(Debug, Clone, Default)]
pub struct IssuerTrust {
    pub trusted: HashSet<PublicKey>,
    pub denied: HashSet<PublicKey>,
    /// When set, the token's hash chain is recomputed against this object
    /// identity and internal-capability value.
    pub chain: Option<(VirtualIdentity, Digest)>,
}

impl IssuerTrust {
    pub fn trusting(keys: impl IntoIterator<Item = PublicKey>) -> Self {
        IssuerTrust {
            trusted: keys.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn accepts(&self, key: &PublicKey) -> bool {
        self.trusted.contains(key) && !self.denied.contains(key)
    }
}

/// `issue_time <= now + skew` and `start - skew <= now <= end + skew`.
pub fn validate_token_times(token: &CapabilityToken, now: i64) -> bool {
    validate_token_times_with_skew(token, now, CLOCK_SKEW_SECS)
}

pub fn validate_token_times_with_skew(token: &CapabilityToken, now: i64, skew: i64) -> bool {
    token.issue_time <= now + skew && token.starttime - skew <= now && now <= token.endtime + skew
}

/// First access right whose action and resource pattern both match.
pub fn check_action_grant<'t>(
    token: &'t CapabilityToken,
    ctx: &RequestContext,
) -> Option<&'t AccessRight> {
    token
        .access_right
        .iter()
        .find(|r| r.action == ctx.method && r.matches_path(&ctx.uri_path))
}

/// Empty condition list passes; otherwise any one satisfied condition does.
pub fn verify_conditions(matched: &AccessRight, ctx: &RequestContext) -> bool {
    if matched.conditions.is_empty() {
        return true;
    }
    matched.conditions.iter().any(|c| {
        match c.evaluate(ctx.now, &ctx.client_address, &ctx.environment) {
            Ok(ok) => ok,
            Err(e) => {
                tracing::warn!(condition = c.kind(), error = %e, "malformed condition treated as unsatisfied");
                false
            }
        }
    })
}

fn check_signature(token: &CapabilityToken, trust: &IssuerTrust) -> Result<(), &'static str> {
    let key = PublicKey::from_slice(token.issuer.as_slice()).map_err(|_| "malformed issuer key")?;
    if trust.denied.contains(&key) {
        return Err("issuer revoked");
    }
    if !trust.trusted.contains(&key) {
        return Err("untrusted issuer");
    }
    match verify_token_signature(token) {
        Ok(true) => {}
        Ok(false) => return Err("bad signature"),
        Err(_) => return Err("malformed signature"),
    }
    if let Some((vid_o, rnd0)) = &trust.chain {
        if !token.chain_matches(vid_o, rnd0) {
            return Err("capability chain mismatch");
        }
    }
    Ok(())
}

/// Runs the pipeline and records per-stage metrics.
#[derive(Debug)]
pub struct Authorizer {
    metrics: StageMetrics,
    skew: i64,
}

impl Default for Authorizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Authorizer {
    pub fn new() -> Self {
        Authorizer {
            metrics: StageMetrics::default(),
            skew: CLOCK_SKEW_SECS,
        }
    }

    pub fn metrics(&self) -> &StageMetrics {
        &self.metrics
    }

    pub fn authorize(
        &self,
        token: &CapabilityToken,
        ctx: &RequestContext,
        revocations: &RevocationList,
        trust: &IssuerTrust,
    ) -> Decision {
        self.authorize_timed(token, ctx, revocations, trust).0
    }

    pub fn authorize_timed(
        &self,
        token: &CapabilityToken,
        ctx: &RequestContext,
        revocations: &RevocationList,
        trust: &IssuerTrust,
    ) -> (Decision, StageTimings) {
        let mut timings = StageTimings::default();
        let started = Instant::now();
        let decision = self.run(token, ctx, revocations, trust, &mut timings);
        let elapsed = started.elapsed();
        self.metrics.record(MeteredStage::Authorization, elapsed);
        timings.push(MeteredStage::Authorization, elapsed);
        (decision, timings)
    }

    fn run(
        &self,
        token: &CapabilityToken,
        ctx: &RequestContext,
        revocations: &RevocationList,
        trust: &IssuerTrust,
        timings: &mut StageTimings,
    ) -> Decision {
        let mut stage = |st: Stage, check: &mut dyn FnMut() -> Option<Decision>| {
            let t = Instant::now();
            let r = check();
            let d = t.elapsed();
            let m = st.metered().expect("pipeline stage");
            self.metrics.record(m, d);
            timings.push(m, d);
            r
        };

        if let Some(d) = stage(Stage::Revocation, &mut || {
            check_revocation(&token.subject, revocations, ctx.now)
                .then(|| Decision::deny(Stage::Revocation, "subject is revoked"))
        }) {
            return d;
        }
        if let Some(d) = stage(Stage::TokenTime, &mut || {
            (!validate_token_times_with_skew(token, ctx.now, self.skew))
                .then(|| Decision::deny(Stage::TokenTime, "token outside validity window"))
        }) {
            return d;
        }
        let mut matched = None;
        if let Some(d) = stage(Stage::ActionGrant, &mut || {
            matched = check_action_grant(token, ctx);
            matched.is_none().then(|| {
                Decision::deny(
                    Stage::ActionGrant,
                    format!("{} {} not granted", ctx.method, ctx.uri_path),
                )
            })
        }) {
            return d;
        }
        let matched = matched.expect("set by action stage");
        if let Some(d) = stage(Stage::Condition, &mut || {
            (!verify_conditions(matched, ctx))
                .then(|| Decision::deny(Stage::Condition, "no condition satisfied"))
        }) {
            return d;
        }
        if let Some(d) = stage(Stage::Signature, &mut || {
            check_signature(token, trust)
                .err()
                .map(|why| Decision::deny(Stage::Signature, why))
        }) {
            return d;
        }
        Decision::grant()
    }
}
