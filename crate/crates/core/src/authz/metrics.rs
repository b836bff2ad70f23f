//! Per-stage invocation counters and cumulative timings.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Stages that are counted and timed. The first six run in this order for
/// a request; `Authorization` spans revocation through signature and
/// `Total` spans the whole request including the handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeteredStage {
    Parse,
    Revocation,
    TokenTime,
    ActionGrant,
    Condition,
    Signature,
    Authorization,
    Total,
}

impl MeteredStage {
    pub const ALL: [MeteredStage; 8] = [
        MeteredStage::Parse,
        MeteredStage::Revocation,
        MeteredStage::TokenTime,
        MeteredStage::ActionGrant,
        MeteredStage::Condition,
        MeteredStage::Signature,
        MeteredStage::Authorization,
        MeteredStage::Total,
    ];

    /// The four checks plus revocation, in pipeline order.
    pub const PIPELINE: [MeteredStage; 5] = [
        MeteredStage::Revocation,
        MeteredStage::TokenTime,
        MeteredStage::ActionGrant,
        MeteredStage::Condition,
        MeteredStage::Signature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeteredStage::Parse => "parse",
            MeteredStage::Revocation => "revocation",
            MeteredStage::TokenTime => "token_time",
            MeteredStage::ActionGrant => "action_grant",
            MeteredStage::Condition => "condition",
            MeteredStage::Signature => "signature",
            MeteredStage::Authorization => "authorization",
            MeteredStage::Total => "total",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MeteredStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Default)]
struct Slot {
    count: AtomicU64,
    nanos: AtomicU64,
}

#[derive(Debug, Default)]
pub struct StageMetrics {
    slots: [Slot; 8],
}

impl StageMetrics {
    pub fn record(&self, stage: MeteredStage, elapsed: Duration) {
        let slot = &self.slots[stage.index()];
        slot.count.fetch_add(1, Ordering::Relaxed);
        slot.nanos
            .fetch_add(elapsed.as_nanos() as u64, Ordering::Relaxed);
    }

    pub fn count(&self, stage: MeteredStage) -> u64 {
        self.slots[stage.index()].count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        for s in &self.slots {
            s.count.store(0, Ordering::Relaxed);
            s.nanos.store(0, Ordering::Relaxed);
        }
    }

    pub fn report(&self) -> StageReport {
        let mut stages = BTreeMap::new();
        for st in MeteredStage::ALL {
            let slot = &self.slots[st.index()];
            let count = slot.count.load(Ordering::Relaxed);
            let total_ms = slot.nanos.load(Ordering::Relaxed) as f64 / 1e6;
            stages.insert(
                st,
                StageStat {
                    count,
                    total_ms,
                    mean_ms: if count == 0 {
                        0.0
                    } else {
                        total_ms / count as f64
                    },
                },
            );
        }
        let authz_ms = stages[&MeteredStage::Authorization].total_ms;
        let fractions = MeteredStage::PIPELINE
            .iter()
            .map(|st| {
                let f = if authz_ms > 0.0 {
                    stages[st].total_ms / authz_ms
                } else {
                    0.0
                };
                (*st, f)
            })
            .collect();
        StageReport { stages, fractions }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStat {
    pub count: u64,
    pub total_ms: f64,
    pub mean_ms: f64,
}

/// Snapshot of [`StageMetrics`]. `fractions` are each pipeline stage's share
/// of cumulative authorization time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stages: BTreeMap<MeteredStage, StageStat>,
    pub fractions: BTreeMap<MeteredStage, f64>,
}

impl StageReport {
    pub fn count(&self, stage: MeteredStage) -> u64 {
        self.stages.get(&stage).map_or(0, |s| s.count)
    }

    pub fn signature_fraction(&self) -> f64 {
        self.fractions
            .get(&MeteredStage::Signature)
            .copied()
            .unwrap_or(0.0)
    }
}

/// Durations of one request's stages, for `Server-Timing` style reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub entries: Vec<(MeteredStage, Duration)>,
}

impl StageTimings {
    pub fn get(&self, stage: MeteredStage) -> Option<Duration> {
        self.entries
            .iter()
            .find(|(s, _)| *s == stage)
            .map(|(_, d)| *d)
    }

    pub fn push(&mut self, stage: MeteredStage, d: Duration) {
        self.entries.push((stage, d));
    }

    /// `name;dur=<ms>` entries joined by `, `.
    pub fn to_header(&self) -> String {
        self.entries
            .iter()
            .map(|(s, d)| format!("{};dur={:.4}", s.as_str(), d.as_secs_f64() * 1e3))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Inverse of [`StageTimings::to_header`]; unknown names are skipped.
    pub fn from_header(h: &str) -> Self {
        let mut t = StageTimings::default();
        for part in h.split(',') {
            let Some((name, dur)) = part.trim().split_once(";dur=") else {
                continue;
            };
            let Some(stage) = MeteredStage::ALL.into_iter().find(|s| s.as_str() == name) else {
                continue;
            };
            if let Ok(ms) = dur.parse::<f64>() {
                if ms.is_finite() && ms >= 0.0 {
                    t.push(stage, Duration::from_secs_f64(ms / 1e3));
                }
            }
        }
        t
    }
}
