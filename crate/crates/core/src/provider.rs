//! Edge enforcement point: extracts the token from a request, runs the
//! authorization pipeline and serves or refuses the resource.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::RwLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::authz::{
    Authorizer, Decision, IssuerTrust, MeteredStage, RequestContext, StageReport, StageTimings,
};
use crate::capability::CapabilityToken;
use crate::certificate::{RevocationCertificate, RevocationScope};
use crate::coordinator::CoordinatorIntroduction;
use crate::crypto::{Digest, PublicKey};
use crate::error::{Error, Result};
use crate::identity::{compute_vid, EntityKind, VirtualIdentity};
use crate::revocation::RevocationList;
use crate::rights::Action;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resource {
    pub payload: String,
    /// Simulates a failing handler.
    #[serde(default)]
    pub fail: bool,
}

impl Resource {
    pub fn new(payload: impl Into<String>) -> Self {
        Resource {
            payload: payload.into(),
            fail: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrictChain {
    pub object_vid: VirtualIdentity,
    pub rnd0: Digest,
}

/// Static configuration of one provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSettings {
    pub vid: VirtualIdentity,
    /// Root authority key; coordinator-scope certificates and delegation
    /// certificates must be signed by it.
    pub root_key: PublicKey,
    pub trusted_issuers: Vec<PublicKey>,
    #[serde(default)]
    pub denied_issuers: Vec<PublicKey>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
    #[serde(default)]
    pub resources: BTreeMap<String, Resource>,
    #[serde(default = "yes")]
    pub expose_deny_detail: bool,
    #[serde(default)]
    pub strict_chain: Option<StrictChain>,
}

fn yes() -> bool {
    true
}

impl ProviderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.trusted_issuers.is_empty() {
            return Err(Error::invalid("provider settings", "no trusted issuer key"));
        }
        if let Some(p) = self.resources.keys().find(|p| !p.starts_with('/')) {
            return Err(Error::invalid(
                "provider settings",
                format!("resource {p:?} is not a path"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InboundRequest<'a> {
    pub method: &'a str,
    pub path: &'a str,
    pub token: Option<&'a [u8]>,
    pub client_address: &'a str,
}

#[derive(Debug, Clone)]
pub struct ProviderResponse {
    pub status: u16,
    pub body: Vec<u8>,
    /// `None` when the request never reached the pipeline.
    pub decision: Option<Decision>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result", content = "detail")]
pub enum ApplyOutcome {
    Applied,
    Stale,
    Ignored(String),
}

#[derive(Debug, Default)]
struct Guarded {
    revocations: RevocationList,
    trust: IssuerTrust,
    coordinators: HashMap<VirtualIdentity, PublicKey>,
    revoked_coordinators: BTreeSet<VirtualIdentity>,
}

#[derive(Debug)]
pub struct Provider {
    settings: ProviderSettings,
    authorizer: Authorizer,
    state: RwLock<Guarded>,
}

impl Provider {
    pub fn new(settings: ProviderSettings) -> Result<Self> {
        settings.validate()?;
        let mut trust = IssuerTrust::trusting(settings.trusted_issuers.iter().copied());
        trust.denied = settings.denied_issuers.iter().copied().collect();
        trust.chain = settings
            .strict_chain
            .as_ref()
            .map(|s| (s.object_vid, s.rnd0));
        Ok(Provider {
            settings,
            authorizer: Authorizer::new(),
            state: RwLock::new(Guarded {
                trust,
                ..Default::default()
            }),
        })
    }

    pub fn settings(&self) -> &ProviderSettings {
        &self.settings
    }

    pub fn vid(&self) -> VirtualIdentity {
        self.settings.vid
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Guarded> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Guarded> {
        self.state.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn intercept(&self, req: InboundRequest<'_>, now: i64) -> ProviderResponse {
        let started = Instant::now();
        let mut resp = self.intercept_inner(req, now);
        let total = started.elapsed();
        self.authorizer.metrics().record(MeteredStage::Total, total);
        resp.timings.push(MeteredStage::Total, total);
        resp
    }

    fn intercept_inner(&self, req: InboundRequest<'_>, now: i64) -> ProviderResponse {
        let mut timings = StageTimings::default();
        let t = Instant::now();
        let parsed = match req.token {
            None => Err("missing capability token".to_string()),
            Some(raw) => std::str::from_utf8(raw)
                .map_err(|e| Error::invalid("token", e.to_string()))
                .and_then(CapabilityToken::from_json)
                .map_err(|e| format!("malformed capability token: {e}")),
        };
        let parse_time = t.elapsed();
        self.authorizer
            .metrics()
            .record(MeteredStage::Parse, parse_time);
        timings.push(MeteredStage::Parse, parse_time);
        let token = match parsed {
            Ok(t) => t,
            Err(why) => {
                return ProviderResponse {
                    status: 401,
                    body: json_body(&json!({ "outcome": "deny", "error": why })),
                    decision: None,
                    timings,
                }
            }
        };
        let Ok(method) = req.method.parse::<Action>() else {
            let d = Decision::deny(
                crate::authz::Stage::ActionGrant,
                format!("method {} not supported", req.method),
            );
            return self.denied(d, timings);
        };
        let mut ctx = RequestContext::new(method, req.path, now).with_client(req.client_address);
        ctx.environment = self.settings.environment.clone();
        let (decision, pipeline) = {
            let g = self.read();
            self.authorizer
                .authorize_timed(&token, &ctx, &g.revocations, &g.trust)
        };
        timings.entries.extend(pipeline.entries);
        if !decision.is_grant() {
            return self.denied(decision, timings);
        }
        let (status, body) = match self.settings.resources.get(req.path) {
            None => (404, json_body(&json!({ "error": "no such resource" }))),
            Some(r) if r.fail => (500, json_body(&json!({ "error": "handler failed" }))),
            Some(r) => (200, r.payload.clone().into_bytes()),
        };
        ProviderResponse {
            status,
            body,
            decision: Some(decision),
            timings,
        }
    }

    fn denied(&self, decision: Decision, timings: StageTimings) -> ProviderResponse {
        let body = if self.settings.expose_deny_detail {
            json!({ "outcome": "deny", "stage": decision.stage, "detail": decision.detail })
        } else {
            json!({ "outcome": "deny" })
        };
        ProviderResponse {
            status: 403,
            body: json_body(&body),
            decision: Some(decision),
            timings,
        }
    }

    /// Subject-scope certificates from a trusted issuer go into the
    /// revocation list. Coordinator-scope certificates must come from the
    /// root; the newest one wins and the named coordinator's key joins the
    /// issuer denylist.
    pub fn apply_revocation(&self, cert: &RevocationCertificate, now: i64) -> ApplyOutcome {
        if let Err(e) = cert.verify() {
            tracing::warn!(error = %e, "revocation certificate ignored");
            return ApplyOutcome::Ignored(e.to_string());
        }
        let Ok(issuer) = cert.issuer_key() else {
            return ApplyOutcome::Ignored("malformed issuer".into());
        };
        let mut g = self.write();
        match cert.scope {
            RevocationScope::SubjectCap => {
                if !g.trust.accepts(&issuer) {
                    tracing::warn!(revoked = %cert.revoked_vid, "revocation from untrusted issuer ignored");
                    return ApplyOutcome::Ignored("untrusted issuer".into());
                }
                g.revocations.insert(cert.revoked_vid, cert.expire_time);
                g.revocations.prune(now);
                ApplyOutcome::Applied
            }
            RevocationScope::Coordinator => {
                if issuer != self.settings.root_key {
                    tracing::warn!(revoked = %cert.revoked_vid, "coordinator revocation not signed by root");
                    return ApplyOutcome::Ignored(
                        "coordinator revocation must be root-signed".into(),
                    );
                }
                if !g.revocations.offer_coordinator_certificate(cert) {
                    return ApplyOutcome::Stale;
                }
                g.revoked_coordinators.insert(cert.revoked_vid);
                if let Some(key) = g.coordinators.get(&cert.revoked_vid).copied() {
                    g.trust.denied.insert(key);
                }
                ApplyOutcome::Applied
            }
        }
    }

    /// Trusts a coordinator's key after checking its delegation certificate
    /// and that its profile hashes to the certified identity.
    pub fn introduce_coordinator(
        &self,
        intro: &CoordinatorIntroduction,
        now: i64,
    ) -> Result<VirtualIdentity> {
        intro.dc.verify(&self.settings.root_key)?;
        if !intro.dc.is_current(now) {
            return Err(Error::Rejected(
                "delegation certificate is not current".into(),
            ));
        }
        if intro.profile.entity_kind != EntityKind::Coordinator {
            return Err(Error::Rejected("profile is not a coordinator".into()));
        }
        let vid = compute_vid(&intro.profile, intro.owner_sign.as_slice())?;
        if vid != intro.dc.delegatee_vid {
            return Err(Error::Rejected(
                "profile does not match the certified identity".into(),
            ));
        }
        let key = intro.profile.verifying_key()?;
        let mut g = self.write();
        if g.revoked_coordinators.contains(&vid) || g.trust.denied.contains(&key) {
            return Err(Error::Rejected(format!("coordinator {vid} is revoked")));
        }
        g.coordinators.insert(vid, key);
        g.trust.trusted.insert(key);
        Ok(vid)
    }

    pub fn prune(&self, now: i64) -> usize {
        self.write().revocations.prune(now)
    }

    pub fn is_revoked(&self, subject: &VirtualIdentity, now: i64) -> bool {
        self.read().revocations.is_revoked(subject, now)
    }

    pub fn revocation_count(&self) -> usize {
        self.read().revocations.len()
    }

    pub fn latest_coordinator_certificate(&self) -> Option<RevocationCertificate> {
        self.read().revocations.last_certificate().cloned()
    }

    pub fn denied_issuers(&self) -> Vec<PublicKey> {
        self.read().trust.denied.iter().copied().collect()
    }

    pub fn stage_timing_report(&self) -> StageReport {
        self.authorizer.metrics().report()
    }

    pub fn reset_timings(&self) {
        self.authorizer.metrics().reset();
    }
}

fn json_body(v: &serde_json::Value) -> Vec<u8> {
    serde_json::to_vec(v).expect("json value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authz::Stage;
    use crate::capability::{mint_external_cap, mint_internal_cap, Validity};
    use crate::certificate::DelegationCertificate;
    use crate::crypto::{HexBytes, SigningKey};
    use crate::identity::Profile;
    use crate::rights::AccessRight;
    use rand::{Rng, SeedableRng};

    const NOW: i64 = 1_700_000_000;

    fn root() -> SigningKey {
        SigningKey::from_seed([1; 32])
    }

    fn object() -> VirtualIdentity {
        VirtualIdentity(Digest([7; 32]))
    }

    fn subject() -> VirtualIdentity {
        VirtualIdentity(Digest([8; 32]))
    }

    fn settings() -> ProviderSettings {
        ProviderSettings {
            vid: object(),
            root_key: root().public_key(),
            trusted_issuers: vec![root().public_key()],
            denied_issuers: vec![],
            environment: BTreeMap::new(),
            resources: [
                ("/data".to_string(), Resource::new("reading=42")),
                (
                    "/broken".to_string(),
                    Resource {
                        payload: String::new(),
                        fail: true,
                    },
                ),
            ]
            .into(),
            expose_deny_detail: true,
            strict_chain: None,
        }
    }

    fn token(issuer: &SigningKey, rights: &[AccessRight]) -> Vec<u8> {
        let incap = mint_internal_cap(object(), rights.to_vec()).unwrap();
        let t = mint_external_cap(
            &incap,
            subject(),
            rights,
            &[],
            Validity::new(NOW, NOW + 600),
            "p",
            issuer,
            NOW,
        )
        .unwrap();
        t.to_json().into_bytes()
    }

    fn get(p: &Provider, path: &str, tok: Option<&[u8]>, now: i64) -> ProviderResponse {
        p.intercept(
            InboundRequest {
                method: "GET",
                path,
                token: tok,
                client_address: "127.0.0.1",
            },
            now,
        )
    }

    fn stage(r: &ProviderResponse) -> Option<Stage> {
        r.decision.as_ref().map(|d| d.stage)
    }

    #[test]
    fn intercept_examples() {
        let p = Provider::new(settings()).unwrap();
        let tok = token(
            &root(),
            &[
                AccessRight::new(Action::Get, "/data"),
                AccessRight::new(Action::Get, "/broken"),
                AccessRight::new(Action::Get, "/none"),
            ],
        );
        let r = get(&p, "/data", Some(&tok), NOW);
        assert_eq!((r.status, r.body.as_slice()), (200, &b"reading=42"[..]));
        assert_eq!(get(&p, "/data", None, NOW).status, 401);
        assert_eq!(get(&p, "/data", Some(b"{}"), NOW).status, 401);
        assert_eq!(get(&p, "/broken", Some(&tok), NOW).status, 500);
        assert_eq!(get(&p, "/none", Some(&tok), NOW).status, 404);
        let put_only = token(&root(), &[AccessRight::new(Action::Put, "/data")]);
        let r = get(&p, "/data", Some(&put_only), NOW);
        assert_eq!((r.status, stage(&r)), (403, Some(Stage::ActionGrant)));
        let body: serde_json::Value = serde_json::from_slice(&r.body).unwrap();
        assert_eq!(body["stage"], "action_grant");
        let r = p.intercept(
            InboundRequest {
                method: "PATCH",
                path: "/data",
                token: Some(&tok),
                client_address: "127.0.0.1",
            },
            NOW,
        );
        assert_eq!((r.status, stage(&r)), (403, Some(Stage::ActionGrant)));
        let other = token(
            &SigningKey::from_seed([2; 32]),
            &[AccessRight::new(Action::Get, "/data")],
        );
        assert_eq!(
            stage(&get(&p, "/data", Some(&other), NOW)),
            Some(Stage::Signature)
        );
    }

    #[test]
    fn hidden_detail() {
        let mut s = settings();
        s.expose_deny_detail = false;
        let p = Provider::new(s).unwrap();
        let put_only = token(&root(), &[AccessRight::new(Action::Put, "/data")]);
        let r = get(&p, "/data", Some(&put_only), NOW);
        assert_eq!(r.status, 403);
        assert_eq!(r.body, br#"{"outcome":"deny"}"#);
    }

    #[test]
    fn settings_need_an_issuer() {
        let mut s = settings();
        s.trusted_issuers.clear();
        assert!(Provider::new(s).is_err());
    }

    #[test]
    fn subject_revocation_and_expiry() {
        let p = Provider::new(settings()).unwrap();
        let tok = token(&root(), &[AccessRight::new(Action::Get, "/data")]);
        let cert = RevocationCertificate::issue(
            subject(),
            RevocationScope::SubjectCap,
            NOW,
            NOW + 100,
            &root(),
        )
        .unwrap();
        let mut forged = cert.clone();
        forged.expire_time += 1;
        assert!(matches!(
            p.apply_revocation(&forged, NOW),
            ApplyOutcome::Ignored(_)
        ));
        assert_eq!(p.revocation_count(), 0);
        let untrusted = RevocationCertificate::issue(
            subject(),
            RevocationScope::SubjectCap,
            NOW,
            NOW + 100,
            &SigningKey::from_seed([3; 32]),
        )
        .unwrap();
        assert!(matches!(
            p.apply_revocation(&untrusted, NOW),
            ApplyOutcome::Ignored(_)
        ));
        assert_eq!(p.apply_revocation(&cert, NOW), ApplyOutcome::Applied);
        assert_eq!(
            stage(&get(&p, "/data", Some(&tok), NOW + 1)),
            Some(Stage::Revocation)
        );
        assert_eq!(p.prune(NOW + 100), 1);
        assert_eq!(get(&p, "/data", Some(&tok), NOW + 100).status, 200);
    }

    fn coordinator(seed: u8, issue: i64) -> (SigningKey, CoordinatorIntroduction) {
        let key = SigningKey::from_seed([seed; 32]);
        let profile = Profile::new(
            EntityKind::Coordinator,
            [("name", format!("c{seed}"))],
            &key.public_key(),
            "d1",
        );
        let owner_sign = profile.owner_sign(&key).unwrap();
        let vid = compute_vid(&profile, owner_sign.as_slice()).unwrap();
        let root_vid = VirtualIdentity(Digest([0; 32]));
        let dc = DelegationCertificate::issue(vid, root_vid, "d1", issue, issue + 3600, &root())
            .unwrap();
        (
            key,
            CoordinatorIntroduction {
                profile,
                owner_sign: HexBytes(owner_sign.0),
                dc,
            },
        )
    }

    #[test]
    fn coordinator_nullification() {
        let p = Provider::new(settings()).unwrap();
        let (k1, i1) = coordinator(40, NOW);
        let (k2, i2) = coordinator(41, NOW);
        let t1 = token(&k1, &[AccessRight::new(Action::Get, "/data")]);
        assert_eq!(
            stage(&get(&p, "/data", Some(&t1), NOW)),
            Some(Stage::Signature)
        );
        let mut bad = i1.clone();
        bad.profile.attributes.push(("x".into(), "y".into()));
        assert!(p.introduce_coordinator(&bad, NOW).is_err());
        p.introduce_coordinator(&i1, NOW).unwrap();
        p.introduce_coordinator(&i2, NOW).unwrap();
        assert_eq!(get(&p, "/data", Some(&t1), NOW).status, 200);

        let v1 = i1.dc.delegatee_vid;
        let not_root =
            RevocationCertificate::issue(v1, RevocationScope::Coordinator, NOW, NOW + 10, &k2)
                .unwrap();
        assert!(matches!(
            p.apply_revocation(&not_root, NOW),
            ApplyOutcome::Ignored(_)
        ));
        let newer = RevocationCertificate::issue(
            v1,
            RevocationScope::Coordinator,
            NOW + 5,
            NOW + 10,
            &root(),
        )
        .unwrap();
        assert_eq!(p.apply_revocation(&newer, NOW), ApplyOutcome::Applied);
        let r = get(&p, "/data", Some(&t1), NOW);
        assert_eq!(stage(&r), Some(Stage::Signature));
        assert!(r.decision.unwrap().detail.contains("issuer revoked"));
        assert!(p.introduce_coordinator(&i1, NOW).is_err());

        // An older certificate naming the other coordinator changes nothing.
        let older = RevocationCertificate::issue(
            i2.dc.delegatee_vid,
            RevocationScope::Coordinator,
            NOW,
            NOW + 10,
            &root(),
        )
        .unwrap();
        assert_eq!(p.apply_revocation(&older, NOW), ApplyOutcome::Stale);
        assert_eq!(p.latest_coordinator_certificate(), Some(newer));
        assert_eq!(p.denied_issuers(), vec![k1.public_key()]);
        let t2 = token(&k2, &[AccessRight::new(Action::Get, "/data")]);
        assert_eq!(get(&p, "/data", Some(&t2), NOW).status, 200);
    }

    #[test]
    fn strict_chain() {
        let rights = [AccessRight::new(Action::Get, "/data")];
        let incap = mint_internal_cap(object(), rights.to_vec()).unwrap();
        let mut s = settings();
        s.strict_chain = Some(StrictChain {
            object_vid: object(),
            rnd0: incap.rnd0,
        });
        let p = Provider::new(s.clone()).unwrap();
        assert_eq!(
            get(&p, "/data", Some(&token(&root(), &rights)), NOW).status,
            200
        );
        s.strict_chain = Some(StrictChain {
            object_vid: object(),
            rnd0: Digest([0; 32]),
        });
        let p = Provider::new(s).unwrap();
        assert_eq!(
            stage(&get(&p, "/data", Some(&token(&root(), &rights)), NOW)),
            Some(Stage::Signature)
        );
    }

    #[test]
    fn stage_report() {
        let p = Provider::new(settings()).unwrap();
        let tok = token(&root(), &[AccessRight::new(Action::Get, "/data")]);
        for _ in 0..20 {
            assert_eq!(get(&p, "/data", Some(&tok), NOW).status, 200);
        }
        let rep = p.stage_timing_report();
        assert_eq!(rep.count(MeteredStage::Signature), 20);
        assert_eq!(rep.count(MeteredStage::Parse), 20);
        assert_eq!(rep.count(MeteredStage::Total), 20);
        let sum: f64 = rep.fractions.values().sum();
        assert!(sum <= 1.0 + 1e-9, "{sum}");
        assert!(
            rep.signature_fraction() >= 0.5,
            "{}",
            rep.signature_fraction()
        );
        p.reset_timings();
        assert_eq!(p.stage_timing_report().count(MeteredStage::Signature), 0);
    }

    #[test]
    fn fuzzed_tokens_never_grant() {
        let p = Provider::new(settings()).unwrap();
        let tok = token(&root(), &[AccessRight::new(Action::Get, "/data")]);
        assert_eq!(get(&p, "/data", Some(&tok), NOW).status, 200);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut grants = 0;
        for _ in 0..10_000 {
            let mut m = tok.clone();
            let n = rng.gen_range(1..=4);
            for _ in 0..n {
                let i = rng.gen_range(0..m.len());
                let mut b = rng.gen::<u8>();
                while b == m[i] {
                    b = rng.gen();
                }
                m[i] = b;
            }
            if get(&p, "/data", Some(&m), NOW).status == 200 {
                grants += 1;
            }
        }
        assert_eq!(grants, 0);
    }
}
