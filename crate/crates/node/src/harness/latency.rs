//! Round-trip latency with and without the enforcement pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context};
use fedcap_core::authz::{MeteredStage, StageTimings};
use fedcap_core::provider::Resource;
use fedcap_core::{Action, InternalCapability};
use serde::{Deserialize, Serialize};

use crate::api::*;

use super::process::Binaries;
use super::world::{ProviderSpec, RightSpec, RuleSpec, SubjectSpec, TopologySpec, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Fedcac,
    Both,
}

impl Mode {
    fn baseline(self) -> bool {
        matches!(self, Mode::Baseline | Mode::Both)
    }

    fn fedcac(self) -> bool {
        matches!(self, Mode::Fedcac | Mode::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl Format {
    /// Guesses from a file extension, defaulting to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("txt") => Format::Text,
            _ => Format::Json,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub runs: usize,
    pub mode: Mode,
    pub warmup: usize,
    pub inject_delay_ms: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            runs: 50,
            mode: Mode::Both,
            warmup: 5,
            inject_delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub run: usize,
    pub baseline_ms: Option<f64>,
    pub fedcac_ms: Option<f64>,
    /// Stage durations reported by the provider for the fedcac request.
    pub stages_ms: BTreeMap<MeteredStage, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_ms: f64,
    /// Sample standard deviation; undefined for a single run.
    pub stddev_ms: Option<f64>,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Summary {
            mean_ms: mean,
            stddev_ms: stddev,
            min_ms: values.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Figures from the original two-device measurement, printed for
/// comparison only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub baseline_ms: f64,
    pub fedcac_ms: f64,
    pub overhead_ms: f64,
    pub authorization_ms: f64,
    pub parse_ms: f64,
    pub signature_fraction: f64,
}

impl Default for Reference {
    fn default() -> Self {
        Reference {
            baseline_ms: 31.0,
            fedcac_ms: 42.0,
            overhead_ms: 11.0,
            authorization_ms: 7.823,
            parse_ms: 3.2,
            signature_fraction: 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: Mode,
    pub runs: usize,
    pub warmup: usize,
    pub inject_delay_ms: u64,
    pub samples: Vec<RunSample>,
    pub baseline: Option<Summary>,
    pub fedcac: Option<Summary>,
    /// mean(fedcac) - mean(baseline).
    pub overhead_ms: Option<f64>,
    pub parse: Option<Summary>,
    pub authorization: Option<Summary>,
    pub stage_means_ms: BTreeMap<MeteredStage, f64>,
    /// Signature time over authorization time, summed across runs.
    pub signature_fraction: Option<f64>,
    pub reference: Reference,
}

pub const CSV_COLUMNS: [&str; 10] = [
    "run",
    "baseline_ms",
    "fedcac_ms",
    "parse_ms",
    "revocation_ms",
    "token_time_ms",
    "action_grant_ms",
    "condition_ms",
    "signature_ms",
    "authorization_ms",
];

const CSV_STAGES: [MeteredStage; 7] = [
    MeteredStage::Parse,
    MeteredStage::Revocation,
    MeteredStage::TokenTime,
    MeteredStage::ActionGrant,
    MeteredStage::Condition,
    MeteredStage::Signature,
    MeteredStage::Authorization,
];

impl LatencyReport {
    pub fn from_samples(opts: &BenchOptions, samples: Vec<RunSample>) -> Self {
        let col = |f: &dyn Fn(&RunSample) -> Option<f64>| -> Vec<f64> {
            samples.iter().filter_map(f).collect()
        };
        let baseline = Summary::of(&col(&|s| s.baseline_ms));
        let fedcac = Summary::of(&col(&|s| s.fedcac_ms));
        let stage = |st: MeteredStage| col(&move |s| s.stages_ms.get(&st).copied());
        let stage_means_ms = MeteredStage::ALL
            .into_iter()
            .filter_map(|st| Summary::of(&stage(st)).map(|s| (st, s.mean_ms)))
            .collect();
        let sig: f64 = stage(MeteredStage::Signature).iter().sum();
        let authz: f64 = stage(MeteredStage::Authorization).iter().sum();
        LatencyReport {
            mode: opts.mode,
            runs: samples.len(),
            warmup: opts.warmup,
            inject_delay_ms: opts.inject_delay_ms,
            overhead_ms: match (&baseline, &fedcac) {
                (Some(b), Some(f)) => Some(f.mean_ms - b.mean_ms),
                _ => None,
            },
            parse: Summary::of(&stage(MeteredStage::Parse)),
            authorization: Summary::of(&stage(MeteredStage::Authorization)),
            signature_fraction: (authz > 0.0).then(|| sig / authz),
            baseline,
            fedcac,
            stage_means_ms,
            samples,
            reference: Reference::default(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for s in &self.samples {
            let mut row = vec![s.run.to_string(), cell(s.baseline_ms), cell(s.fedcac_ms)];
            row.extend(
                CSV_STAGES
                    .iter()
                    .map(|st| cell(s.stages_ms.get(st).copied())),
            );
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let r = &self.reference;
        let mut out = String::new();
        let summary = |out: &mut String, label: &str, s: &Option<Summary>, reference: f64| {
            if let Some(s) = s {
                let sd = match s.stddev_ms {
                    Some(sd) => format!("{sd:.3} ms"),
                    None => "undefined (single run)".into(),
                };
                let _ = writeln!(
                    out,
                    "{label:<14} mean {:.3} ms, stddev {sd}, min {:.3} ms, max {:.3} ms (reference {reference} ms)",
                    s.mean_ms, s.min_ms, s.max_ms
                );
            }
        };
        let _ = writeln!(
            out,
            "latency experiment: {} runs, mode {:?}, warmup {}, injected delay {} ms",
            self.runs, self.mode, self.warmup, self.inject_delay_ms
        );
        summary(&mut out, "baseline:", &self.baseline, r.baseline_ms);
        summary(&mut out, "fedcac:", &self.fedcac, r.fedcac_ms);
        if let Some(o) = self.overhead_ms {
            let _ = writeln!(
                out,
                "pipeline overhead: {o:.3} ms (reference {} ms)",
                r.overhead_ms
            );
        }
        summary(&mut out, "parse:", &self.parse, r.parse_ms);
        summary(
            &mut out,
            "authorization:",
            &self.authorization,
            r.authorization_ms,
        );
        if let Some(f) = self.signature_fraction {
            let _ = writeln!(
                out,
                "signature verification: {:.1}% of authorization time (reference {:.0}%)",
                f * 100.0,
                r.signature_fraction * 100.0
            );
        }
        if !self.stage_means_ms.is_empty() {
            let parts: Vec<String> = self
                .stage_means_ms
                .iter()
                .map(|(st, ms)| format!("{st} {ms:.4}"))
                .collect();
            let _ = writeln!(out, "stage means (ms): {}", parts.join(", "));
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Csv => self.to_csv(),
            Format::Json => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
        }
    }

    pub fn write(&self, path: &Path, format: Format) -> anyhow::Result<()> {
        std::fs::write(path, self.render(format))
            .with_context(|| format!("writing report {}", path.display()))
    }
}

const FEDCAC: &str = "fedcac";
const BASELINE: &str = "baseline";
const PAYLOAD: &str = "{\"temperature\":21.5,\"unit\":\"C\"}";

fn topology(delay: u64) -> TopologySpec {
    let resources: BTreeMap<String, Resource> =
        [("/data".to_string(), Resource::new(PAYLOAD))].into();
    let provider = |name: &str, bypass: bool| ProviderSpec {
        name: name.into(),
        environment: BTreeMap::new(),
        resources: resources.clone(),
        coordinator: None,
        bypass,
        inject_delay_ms: delay,
    };
    TopologySpec {
        start_time: super::world::DEFAULT_START_TIME,
        domain_id: super::world::DEFAULT_DOMAIN.into(),
        coordinators: vec![],
        providers: vec![provider(FEDCAC, false), provider(BASELINE, true)],
        subjects: vec![SubjectSpec {
            name: "client".into(),
            attributes: [("role".to_string(), "reader".to_string())].into(),
        }],
        wall_clock: false,
    }
}

fn data_right() -> RightSpec {
    RightSpec {
        action: Action::Get,
        resource: "/data".into(),
        conditions: vec![],
    }
}

/// Sends one GET and returns (elapsed ms, stage timings).
fn timed_get(world: &World, provider: &str, token: &str) -> anyhow::Result<(f64, StageTimings)> {
    let url = format!("{}/data", world.provider(provider)?.process.url());
    let started = Instant::now();
    let resp = world
        .client
        .raw()
        .get(&url)
        .header(TOKEN_HEADER, token)
        .send()?;
    let status = resp.status();
    let timing = resp
        .headers()
        .get("server-timing")
        .and_then(|v| v.to_str().ok())
        .map(StageTimings::from_header)
        .unwrap_or_default();
    let body = resp.bytes()?;
    let elapsed = started.elapsed().as_secs_f64() * 1e3;
    if status != 200 || body.as_ref() != PAYLOAD.as_bytes() {
        bail!("{provider} answered {status}; the run is invalid");
    }
    Ok((elapsed, timing))
}

pub fn run_latency_experiment(
    opts: &BenchOptions,
    bins: &Binaries,
) -> anyhow::Result<LatencyReport> {
    if opts.runs == 0 {
        bail!("runs must be at least 1");
    }
    let reader = RuleSpec {
        subject: [("role".to_string(), "reader".to_string())].into(),
        object: FEDCAC.into(),
        granted: vec![data_right()],
        validity_duration: 24 * 3600,
    };
    let world = World::launch(&topology(opts.inject_delay_ms), &[reader], bins)?;
    let now = world.now();
    for name in ["client", FEDCAC] {
        let e = world.entity(name)?;
        let _: RegisterResponse = world.client.post(
            &world.pdc_url("/register"),
            &RegisterRequest {
                profile: e.profile.clone(),
                owner_sign: e.owner_sign.clone(),
            },
        )?;
    }
    let _: InternalCapability = world.client.post(
        &world.pdc_url("/incap/mint"),
        &IncapMintRequest {
            proof: world.root.proof(now),
            object: world.entity(FEDCAC)?.vid(),
            rights: vec![(&data_right()).into()],
        },
    )?;
    let token = world.client.post_text(
        &world.pdc_url("/cap/request"),
        &CapRequest {
            proof: world.entity("client")?.proof(now),
            object: world.entity(FEDCAC)?.vid(),
            requested: vec![(&data_right()).into()],
        },
    )?;

    for _ in 0..opts.warmup {
        if opts.mode.baseline() {
            timed_get(&world, BASELINE, &token)?;
        }
        if opts.mode.fedcac() {
            timed_get(&world, FEDCAC, &token)?;
        }
    }
    let mut samples = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let mut sample = RunSample {
            run: run + 1,
            baseline_ms: None,
            fedcac_ms: None,
            stages_ms: BTreeMap::new(),
        };
        // Alternate which mode goes first so neither gets a warmer path.
        let order: &[&str] = if run % 2 == 0 {
            &[BASELINE, FEDCAC]
        } else {
            &[FEDCAC, BASELINE]
        };
        for &which in order {
            if which == BASELINE && opts.mode.baseline() {
                sample.baseline_ms = Some(timed_get(&world, BASELINE, &token)?.0);
            }
            if which == FEDCAC && opts.mode.fedcac() {
                let (ms, timing) = timed_get(&world, FEDCAC, &token)?;
                sample.fedcac_ms = Some(ms);
                sample.stages_ms = timing
                    .entries
                    .iter()
                    .map(|(st, d)| (*st, d.as_secs_f64() * 1e3))
                    .collect();
            }
        }
        samples.push(sample);
    }
    Ok(LatencyReport::from_samples(opts, samples))
}
