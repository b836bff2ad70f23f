//! Acceptance gate. Each criterion prints one `[PASS]` or `[FAIL]` line;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Result};
use fedcap_core::authz::MeteredStage;
use fedcap_core::coordinator::Coordinator;
use fedcap_core::delegation::{Dac, IdentityProof};
use fedcap_core::pdc::Pdc;
use fedcap_core::policy::PolicyRule;
use fedcap_core::pool::SyncDelta;
use fedcap_core::provider::{InboundRequest, Provider, ProviderSettings, Resource};
use fedcap_core::{
    compute_vid, mint_external_cap, mint_internal_cap, verify_token_signature, AccessRight, Action,
    Authorizer, CapabilityToken, Condition, DelegationCertificate, Digest, EntityKind, HexBytes,
    IssuerTrust, Profile, RequestContext, RevocationList, SigningKey, Stage, Validity,
    VirtualIdentity,
};
use fedcap_node::harness::{
    run_latency_experiment, run_scenario, scenario, BenchOptions, Binaries, Mode,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const NOW: i64 = 1_700_000_000;

fn binaries() -> Binaries {
    Binaries {
        pdc: env!("CARGO_BIN_EXE_fedcap-pdc").into(),
        coordinator: env!("CARGO_BIN_EXE_fedcap-coordinator").into(),
        provider: env!("CARGO_BIN_EXE_fedcap-provider").into(),
    }
}

struct Party {
    key: SigningKey,
    profile: Profile,
    sign: HexBytes,
}

impl Party {
    fn new(seed: u64, kind: EntityKind, attrs: &[(&str, &str)]) -> Self {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_le_bytes());
        s[31] = kind as u8 + 1;
        let key = SigningKey::from_seed(s);
        let mut all = vec![("name".to_string(), format!("{kind:?}-{seed}"))];
        all.extend(attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        let profile = Profile::new(kind, all, &key.public_key(), "d1");
        let sign = profile.owner_sign(&key).expect("owner signature");
        Party { key, profile, sign }
    }

    fn vid(&self) -> VirtualIdentity {
        compute_vid(&self.profile, self.sign.as_slice()).expect("vid")
    }

    fn proof(&self, now: i64) -> IdentityProof {
        IdentityProof::create(&self.profile, &self.sign, &self.key, now).expect("proof")
    }
}

fn fixed_vid(b: u8) -> VirtualIdentity {
    VirtualIdentity(Digest([b; 32]))
}

// ---- 1. oracle equivalence ----------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Case {
    revoked: bool,
    get: bool,
    data_path: bool,
    in_window: bool,
    /// 0 no condition, 1 satisfied, 2 unsatisfied.
    condition: u8,
    signed: bool,
}

/// Expected outcome, written directly from the stage order.
fn truth_table(c: Case) -> Stage {
    match c {
        Case { revoked: true, .. } => Stage::Revocation,
        Case {
            in_window: false, ..
        } => Stage::TokenTime,
        Case { get: false, .. }
        | Case {
            data_path: false, ..
        } => Stage::ActionGrant,
        Case { condition: 2, .. } => Stage::Condition,
        Case { signed: false, .. } => Stage::Signature,
        _ => Stage::Granted,
    }
}

fn oracle_equivalence() -> Result<String> {
    let started = Instant::now();
    let issuer = SigningKey::from_seed([3; 32]);
    let trust = IssuerTrust::trusting([issuer.public_key()]);
    let (good, revoked) = (fixed_vid(1), fixed_vid(2));
    let mut rl = RevocationList::new();
    rl.insert(revoked, NOW + 3600);

    let mut cases = Vec::new();
    for revoked in [false, true] {
        for get in [true, false] {
            for data_path in [true, false] {
                for in_window in [true, false] {
                    for condition in 0..3u8 {
                        for signed in [true, false] {
                            cases.push(Case {
                                revoked,
                                get,
                                data_path,
                                in_window,
                                condition,
                                signed,
                            });
                        }
                    }
                }
            }
        }
    }
    ensure!(cases.len() == 96, "universe has {} cases", cases.len());

    let incap = mint_internal_cap(fixed_vid(9), vec![AccessRight::new(Action::Get, "/data")])?;
    let mut agree = 0;
    for c in &cases {
        let conditions = match c.condition {
            0 => vec![],
            1 => vec![Condition::env_equals("zone", "a")],
            _ => vec![Condition::env_equals("zone", "b")],
        };
        let validity = if c.in_window {
            Validity::new(NOW - 60, NOW + 600)
        } else {
            Validity::new(NOW - 4000, NOW - 3000)
        };
        let right = AccessRight::new(Action::Get, "/data").with_conditions(conditions);
        let subject = if c.revoked { revoked } else { good };
        let mut token = mint_external_cap(
            &incap,
            subject,
            &[right],
            &[],
            validity,
            "p:1",
            &issuer,
            validity.start,
        )?;
        if !c.signed {
            token.issue_sign.0[0] ^= 0x01;
        }
        let ctx = RequestContext::new(
            if c.get { Action::Get } else { Action::Post },
            if c.data_path { "/data" } else { "/elsewhere" },
            NOW,
        )
        .with_env("zone", "a");
        let decision = Authorizer::new().authorize(&token, &ctx, &rl, &trust);
        let expected = truth_table(*c);
        if decision.stage == expected && decision.is_grant() == (expected == Stage::Granted) {
            agree += 1;
        } else {
            bail!(
                "{c:?}: engine said {}, oracle says {expected}",
                decision.stage
            );
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{agree}/96 cases agree in {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

// ---- 2. short-circuit ordering ------------------------------------------

fn short_circuit_ordering() -> Result<String> {
    let sc =
        scenario::bundled("deny-matrix").ok_or_else(|| anyhow!("deny-matrix is not bundled"))?;
    let report = run_scenario(&sc, &binaries())?;
    if !report.passed() {
        bail!("scenario failed:\n{report}");
    }
    let mut denied_at = BTreeSet::new();
    for step in &report.steps {
        let Some(short) = step.short_circuit else {
            continue;
        };
        ensure!(
            short,
            "step {} ran stages after the deciding one: {:?}",
            step.index,
            step.stage_deltas
        );
        if let Some(stage) = step.observed.strip_prefix("deny:") {
            let sig_runs = step
                .stage_deltas
                .get(&MeteredStage::Signature)
                .copied()
                .unwrap_or(0);
            if stage != "signature" {
                ensure!(
                    sig_runs == 0,
                    "step {}: signature ran {sig_runs} times for a {stage} denial",
                    step.index
                );
            }
            denied_at.insert(stage.to_string());
        }
    }
    for stage in [
        "revocation",
        "token_time",
        "action_grant",
        "condition",
        "signature",
    ] {
        ensure!(denied_at.contains(stage), "no denial observed at {stage}");
    }
    Ok(format!(
        "denials at {} stages, none ran a later stage",
        denied_at.len()
    ))
}

// ---- 3. tamper resistance -----------------------------------------------

const GOLDEN: &str = include_str!("fixtures/golden_token.json");
const GOLDEN_OBJECT: &str = "d65a85c23ed0f371efb499b1cb67736f4a6ba570b4ea7b40bc2f0e9336f344a5";
const GOLDEN_RND0: &str = "24383687a2f0d17afb4b521962cde97c324197120f524c7ef3c7355d46abcdec";

fn golden_provider() -> Result<Provider> {
    let issuer = SigningKey::from_seed([7; 32]);
    let mut resources = BTreeMap::new();
    resources.insert("/data".to_string(), Resource::new("reading"));
    let settings = ProviderSettings {
        vid: VirtualIdentity::from_hex(GOLDEN_OBJECT)?,
        root_key: issuer.public_key(),
        trusted_issuers: vec![issuer.public_key()],
        denied_issuers: vec![],
        environment: [("location".to_string(), "lab1".to_string())].into(),
        resources,
        expose_deny_detail: true,
        strict_chain: None,
    };
    Ok(Provider::new(settings)?)
}

fn tamper_resistance() -> Result<String> {
    let provider = golden_provider()?;
    let compact = CapabilityToken::from_json(GOLDEN)?.to_json().into_bytes();
    let now = NOW + 100;
    let request = |token: &[u8]| {
        provider.intercept(
            InboundRequest {
                method: "GET",
                path: "/data",
                token: Some(token),
                client_address: "127.0.0.1",
            },
            now,
        )
    };
    ensure!(
        request(&compact).status == 200,
        "unmodified token was not granted"
    );

    let mut rng = StdRng::seed_from_u64(0x7a3f);
    let mut grants = 0;
    let mut multi = 0;
    for _ in 0..10_000 {
        let mut bytes = compact.clone();
        let edits = if rng.gen_bool(0.5) {
            1
        } else {
            rng.gen_range(2..=8)
        };
        multi += usize::from(edits > 1);
        for _ in 0..edits {
            let at = rng.gen_range(0..bytes.len());
            let old = bytes[at];
            bytes[at] = loop {
                let b: u8 = rng.gen();
                if b != old {
                    break b;
                }
            };
        }
        if bytes == compact {
            continue;
        }
        let resp = request(&bytes);
        if resp.status == 200 || resp.decision.as_ref().is_some_and(|d| d.is_grant()) {
            grants += 1;
        }
    }
    ensure!(grants == 0, "{grants} mutated tokens were granted");
    Ok(format!("10000 mutations ({multi} multi-byte), 0 grants"))
}

// ---- 4. revocation end-to-end -------------------------------------------

fn revocation_end_to_end() -> Result<String> {
    let sc = scenario::bundled("revocation").ok_or_else(|| anyhow!("revocation is not bundled"))?;
    let report = run_scenario(&sc, &binaries())?;
    if !report.passed() {
        bail!("scenario failed:\n{report}");
    }
    let outcome = |i: usize| {
        report
            .steps
            .get(i - 1)
            .map(|s| s.observed.as_str())
            .unwrap_or("")
    };
    // Revoked at both providers after one round; regranted after expiry.
    ensure!(
        outcome(9) == "report:2/2",
        "broadcast round: {}",
        outcome(9)
    );
    ensure!(
        outcome(10) == "deny:revocation" && outcome(11) == "deny:revocation",
        "not denied everywhere"
    );
    ensure!(
        outcome(17) == "grant" && outcome(18) == "grant",
        "fresh tokens not granted after expiry"
    );
    Ok(format!(
        "{} steps: denied at 2/2 providers after one broadcast, granted after expiry",
        report.steps.len()
    ))
}

// ---- 5. delegation depth one --------------------------------------------

#[derive(Debug, Clone)]
enum DelegationOp {
    RootRequest,
    /// Offer certificate `cert` (index into everything issued so far) to
    /// party `to` for domain `domain`.
    Offer {
        cert: usize,
        to: usize,
        domain: usize,
    },
    Revoke {
        who: usize,
        replacement: Option<usize>,
    },
    Wait(i64),
}

fn delegation_op() -> impl Strategy<Value = DelegationOp> {
    prop_oneof![
        2 => Just(DelegationOp::RootRequest),
        5 => (any::<usize>(), 0usize..6, 0usize..3)
            .prop_map(|(cert, to, domain)| DelegationOp::Offer { cert, to, domain }),
        2 => (1usize..6, proptest::option::of(1usize..6))
            .prop_map(|(who, replacement)| DelegationOp::Revoke { who, replacement }),
        1 => (0i64..30_000).prop_map(DelegationOp::Wait),
    ]
}

fn delegation_depth_one() -> Result<String> {
    let parties: Vec<Party> = (0..6)
        .map(|i| {
            Party::new(
                i,
                if i == 0 {
                    EntityKind::Pdc
                } else {
                    EntityKind::Coordinator
                },
                &[],
            )
        })
        .collect();
    let directory: BTreeMap<VirtualIdentity, Profile> = parties
        .iter()
        .map(|p| (p.vid(), p.profile.clone()))
        .collect();
    let root = parties[0].vid();
    let rejected_offers = std::cell::Cell::new(0usize);

    let mut runner = TestRunner::new(ProptestConfig {
        cases: 256,
        ..ProptestConfig::default()
    });
    runner
        .run(&proptest::collection::vec(delegation_op(), 0..=50), |ops| {
            let mut dac = Dac::new(parties[0].key.clone(), root, "cloud");
            let mut now = NOW;
            for op in ops {
                match op {
                    DelegationOp::RootRequest => {
                        let _ = dac.request_delegation(&parties[0].proof(now), &directory, now);
                    }
                    DelegationOp::Offer { cert, to, domain } => {
                        if dac.issued().is_empty() {
                            continue;
                        }
                        let offer = dac.issued()[cert % dac.issued().len()].clone();
                        let res = dac.offer_delegation(
                            &offer,
                            &parties[to].proof(now),
                            &format!("d{domain}"),
                            &directory,
                            now,
                        );
                        if offer.delegatee_vid != root {
                            prop_assert!(
                                res.is_err(),
                                "coordinator certificate was accepted as an offer"
                            );
                            rejected_offers.set(rejected_offers.get() + 1);
                        }
                    }
                    DelegationOp::Revoke { who, replacement } => {
                        let proof = replacement.map(|r| parties[r].proof(now));
                        let _ = dac.revoke_delegation(
                            &parties[who].vid(),
                            proof.as_ref(),
                            &directory,
                            now,
                        );
                    }
                    DelegationOp::Wait(s) => now += s,
                }
                for dc in dac.issued() {
                    prop_assert_eq!(dc.depth, 1);
                    prop_assert_eq!(dc.delegator_vid, root);
                }
                for st in dac.domains() {
                    if let Some(dc) = &st.active {
                        prop_assert_eq!(dc.delegator_vid, root, "second-level delegatee active");
                        prop_assert!(dc.delegatee_vid != root);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| anyhow!("{e}"))?;

    // Direct attempts: a coordinator offering with its own DC, or with a
    // certificate it signed itself, never succeeds.
    let mut dac = Dac::new(parties[0].key.clone(), root, "cloud");
    let root_dc = dac.request_delegation(&parties[0].proof(NOW), &directory, NOW)?;
    let c1_dc = dac.offer_delegation(&root_dc, &parties[1].proof(NOW), "d1", &directory, NOW)?;
    ensure!(
        c1_dc.depth == 1 && c1_dc.delegator_vid == root,
        "first-level certificate malformed"
    );
    let forged =
        DelegationCertificate::issue(root, root, "cloud", NOW, NOW + 3600, &parties[1].key)?;
    for offer in [&c1_dc, &forged] {
        for to in &parties[2..] {
            ensure!(
                dac.offer_delegation(offer, &to.proof(NOW), "d2", &directory, NOW)
                    .is_err(),
                "coordinator offer to {} accepted",
                to.vid()
            );
        }
    }
    Ok(format!(
        "256 sequences of up to 50 ops; {} coordinator offers, all rejected",
        rejected_offers.get() + 8
    ))
}

// ---- 6. differential issuance -------------------------------------------

fn delegated_pair(rules: Vec<PolicyRule>) -> Result<(Pdc, Coordinator, Party)> {
    let root = Party::new(100, EntityKind::Pdc, &[]);
    let mut pdc = Pdc::new(root.key.clone(), root.profile.clone(), rules)?;
    let coord_party = Party::new(101, EntityKind::Coordinator, &[]);
    let mut coord = Coordinator::new(
        coord_party.key.clone(),
        coord_party.profile.clone(),
        pdc.public_key(),
    )?;
    pdc.register_entity(coord.profile().clone(), coord.owner_sign().clone())?;
    let root_dc = pdc.request_delegation(&pdc.root_proof(NOW)?, NOW)?;
    let dc = pdc.offer_delegation(&root_dc, &coord.identity_proof(NOW)?, "d1", NOW)?;
    coord.install_dc(dc)?;
    Ok((pdc, coord, coord_party))
}

fn sync(pdc: &Pdc, coord: &mut Coordinator, now: i64) -> Result<()> {
    let dc = coord.dc().ok_or_else(|| anyhow!("no delegation"))?.clone();
    let delta = pdc.sync_domain(&dc, coord.mirror().version(), now)?;
    let wire: SyncDelta = serde_json::from_str(&serde_json::to_string(&delta)?)?;
    coord.apply_sync(&wire)?;
    Ok(())
}

fn rights_key(t: &CapabilityToken) -> Vec<(Action, String, Vec<Condition>)> {
    let mut v: Vec<_> = t
        .access_right
        .iter()
        .map(|r| (r.action, r.resource.clone(), r.conditions.clone()))
        .collect();
    v.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    v
}

fn differential_issuance() -> Result<String> {
    let (mut pdc, mut coord, _) = delegated_pair(vec![])?;
    let subjects: Vec<Party> = [("role", "admin"), ("role", "reader"), ("role", "guest")]
        .iter()
        .enumerate()
        .map(|(i, a)| Party::new(200 + i as u64, EntityKind::Subject, &[*a]))
        .collect();
    let objects: Vec<Party> = (0..2)
        .map(|i| Party::new(300 + i, EntityKind::Object, &[]))
        .collect();
    for p in subjects.iter().chain(&objects) {
        pdc.register_entity(p.profile.clone(), p.sign.clone())?;
    }
    let universe = [
        AccessRight::new(Action::Get, "/data"),
        AccessRight::new(Action::Put, "/data"),
        AccessRight::new(Action::Post, "/cmd"),
        AccessRight::new(Action::Delete, "/data"),
    ];
    for o in &objects {
        pdc.mint_internal_cap(o.vid(), universe[..3].to_vec())?;
    }
    let evening = vec![Condition::time_window("18:00", "23:00")];
    let rules = vec![
        PolicyRule {
            subject_match: vec![("role".into(), "admin".into())],
            object_vid: objects[0].vid(),
            granted: universe.to_vec(),
            validity_duration: 600,
        },
        PolicyRule {
            subject_match: vec![("role".into(), "reader".into())],
            object_vid: objects[0].vid(),
            granted: vec![universe[0].clone().with_conditions(evening.clone())],
            validity_duration: 300,
        },
        PolicyRule {
            subject_match: vec![],
            object_vid: objects[1].vid(),
            granted: vec![universe[0].clone(), universe[2].clone()],
            validity_duration: 120,
        },
        PolicyRule {
            subject_match: vec![("role".into(), "guest".into())],
            object_vid: objects[0].vid(),
            granted: vec![],
            validity_duration: 60,
        },
    ];
    pdc.set_rules(rules)?;
    sync(&pdc, &mut coord, NOW)?;

    let (mut requests, mut issued) = (0, 0);
    for s in &subjects {
        for o in &objects {
            for mask in 1u8..16 {
                let requested: Vec<AccessRight> = (0..4)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| universe[i].clone())
                    .collect();
                requests += 1;
                let a = pdc.issue_external_cap(&s.vid(), &o.vid(), &requested, NOW);
                let b = coord.issue_local_cap(&s.vid(), &o.vid(), &requested, NOW);
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        ensure!(
                            rights_key(&a) == rights_key(&b),
                            "rights differ for mask {mask}"
                        );
                        ensure!(
                            a.endtime - a.starttime == b.endtime - b.starttime
                                && a.subject == b.subject,
                            "validity or subject differ for mask {mask}"
                        );
                        issued += 1;
                    }
                    (Err(_), Err(_)) => {}
                    (a, b) => bail!(
                        "one issuer refused mask {mask}: pdc {:?}, coordinator {:?}",
                        a.err(),
                        b.err()
                    ),
                }
            }
        }
    }
    ensure!(
        issued > 0 && issued < requests,
        "universe did not exercise both outcomes"
    );
    Ok(format!(
        "{requests} requests, {issued} issued identically, {} refused by both",
        requests - issued
    ))
}

// ---- 7. latency shape ---------------------------------------------------

fn latency_shape() -> Result<String> {
    let started = Instant::now();
    let opts = BenchOptions {
        runs: 50,
        mode: Mode::Both,
        ..BenchOptions::default()
    };
    let report = run_latency_experiment(&opts, &binaries())?;
    let elapsed = started.elapsed();
    print!(
        "{}",
        report
            .to_text()
            .lines()
            .map(|l| format!("    {l}\n"))
            .collect::<String>()
    );
    let (b, f) = match (&report.baseline, &report.fedcac) {
        (Some(b), Some(f)) => (b.mean_ms, f.mean_ms),
        _ => bail!("missing baseline or fedcac samples"),
    };
    ensure!(report.runs == 50, "{} runs recorded", report.runs);
    ensure!(f > b, "fedcac mean {f:.3} ms not above baseline {b:.3} ms");
    let overhead = report
        .overhead_ms
        .ok_or_else(|| anyhow!("overhead not reported"))?;
    ensure!(overhead.is_finite(), "overhead is not finite");
    let frac = report
        .signature_fraction
        .ok_or_else(|| anyhow!("signature fraction missing"))?;
    ensure!(frac >= 0.5, "signature fraction {frac:.3} below 0.5");
    let r = &report.reference;
    ensure!(
        (
            r.baseline_ms,
            r.fedcac_ms,
            r.authorization_ms,
            r.signature_fraction
        ) == (31.0, 42.0, 7.823, 0.75),
        "reference values changed"
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "fedcac {f:.3} ms > baseline {b:.3} ms, overhead {overhead:.3} ms, signature {:.0}% in {:.0} ms",
        frac * 100.0,
        elapsed.as_secs_f64() * 1e3
    ))
}

// ---- 8. wire format -----------------------------------------------------

fn wire_format() -> Result<String> {
    let token = CapabilityToken::from_json(GOLDEN)?;
    let again = CapabilityToken::from_json(&token.to_json())?;
    ensure!(token == again, "round trip changed the token");
    let keys: BTreeSet<String> = match serde_json::from_str::<serde_json::Value>(&token.to_json())?
    {
        serde_json::Value::Object(m) => m.keys().cloned().collect(),
        _ => bail!("token is not an object"),
    };
    let expected: BTreeSet<String> = [
        "id",
        "issuer",
        "issue_time",
        "issue_sign",
        "subject",
        "resource",
        "starttime",
        "endtime",
        "access_right",
        "rnd_i",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ensure!(keys == expected, "keys {keys:?}");
    ensure!(
        verify_token_signature(&token)?,
        "golden signature does not verify"
    );
    ensure!(
        token.chain_matches(
            &VirtualIdentity::from_hex(GOLDEN_OBJECT)?,
            &Digest::from_hex(GOLDEN_RND0)?
        ),
        "golden hash chain does not match"
    );

    let mut value: serde_json::Value = serde_json::from_str(GOLDEN)?;
    value["extra"] = serde_json::json!(1);
    ensure!(
        CapabilityToken::from_json(&value.to_string()).is_err(),
        "unknown top-level key accepted"
    );
    let mut value: serde_json::Value = serde_json::from_str(GOLDEN)?;
    value["access_right"][0]["note"] = serde_json::json!("x");
    ensure!(
        CapabilityToken::from_json(&value.to_string()).is_err(),
        "unknown nested key accepted"
    );
    let mut value: serde_json::Value = serde_json::from_str(GOLDEN)?;
    value.as_object_mut().map(|m| m.remove("rnd_i"));
    ensure!(
        CapabilityToken::from_json(&value.to_string()).is_err(),
        "missing key accepted"
    );
    Ok("10 fields round-trip; unknown and missing keys rejected".into())
}

// ---- 9. sync convergence ------------------------------------------------

fn sync_convergence() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut total_changes = 0u64;
    for seq in 0..100 {
        let (mut pdc, mut coord, _) = delegated_pair(vec![])?;
        let mut registered: Vec<Party> = Vec::new();
        let ops = rng.gen_range(5..60);
        for op in 0..ops {
            let now = NOW + op as i64;
            match rng.gen_range(0..6) {
                0 | 1 => {
                    let kind = if rng.gen_bool(0.5) {
                        EntityKind::Subject
                    } else {
                        EntityKind::Object
                    };
                    let role = ["admin", "reader", "guest"][rng.gen_range(0..3)];
                    let p = Party::new(rng.gen_range(1000..1040), kind, &[("role", role)]);
                    if pdc
                        .register_entity(p.profile.clone(), p.sign.clone())
                        .is_ok()
                    {
                        registered.push(p);
                    }
                }
                2 if !registered.is_empty() => {
                    let o = &registered[rng.gen_range(0..registered.len())];
                    let n = rng.gen_range(1..4);
                    let rights = (0..n)
                        .map(|i| {
                            AccessRight::new(Action::ALL[rng.gen_range(0..4)], format!("/r{i}"))
                        })
                        .collect();
                    let _ = pdc.mint_internal_cap(o.vid(), rights);
                }
                3 if !registered.is_empty() => {
                    let o = &registered[rng.gen_range(0..registered.len())];
                    pdc.revoke_internal_cap(&o.vid())?;
                }
                4 if !registered.is_empty() => {
                    let o = &registered[rng.gen_range(0..registered.len())];
                    let rule = PolicyRule {
                        subject_match: vec![("role".into(), "reader".into())],
                        object_vid: o.vid(),
                        granted: vec![AccessRight::new(Action::Get, "/r0")],
                        validity_duration: rng.gen_range(1..1000),
                    };
                    pdc.set_rules(vec![rule])?;
                }
                5 if !registered.is_empty() => {
                    let s = &registered[rng.gen_range(0..registered.len())];
                    pdc.revoke_external_cap(&s.vid(), rng.gen_range(1..10_000), now)?;
                }
                _ => {}
            }
            if rng.gen_bool(0.2) {
                sync(&pdc, &mut coord, now)?;
            }
        }
        sync(&pdc, &mut coord, NOW + ops as i64)?;
        ensure!(
            coord.mirror().state_bytes() == pdc.state().state_bytes(),
            "sequence {seq}: replica diverged at version {} vs {}",
            coord.mirror().version(),
            pdc.version()
        );
        ensure!(
            coord.mirror() == pdc.state(),
            "sequence {seq}: replica differs structurally"
        );
        total_changes += pdc.version();
    }
    Ok(format!(
        "100 sequences, {total_changes} changes, all replicas byte-identical"
    ))
}

// ---- driver -------------------------------------------------------------

type Criterion = (&'static str, fn() -> Result<String>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("short-circuit ordering", short_circuit_ordering),
        ("tamper resistance", tamper_resistance),
        ("revocation end-to-end", revocation_end_to_end),
        ("delegation depth one", delegation_depth_one),
        ("differential issuance", differential_issuance),
        ("latency experiment shape", latency_shape),
        ("wire-format conformance", wire_format),
        ("sync convergence", sync_convergence),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(anyhow!("panicked: {}", panic_text(&p))));
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", n + 1),
            Err(e) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {e:#}", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
