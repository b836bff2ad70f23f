//! Access rights and the context conditions attached to them.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::canonical::{Canonical, Encoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "GET")]
    Get,
    #[serde(rename = "PUT")]
    Put,
    #[serde(rename = "POST")]
    Post,
    #[serde(rename = "DELETE")]
    Delete,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Get, Action::Put, Action::Post, Action::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Get => "GET",
            Action::Put => "PUT",
            Action::Post => "POST",
            Action::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid("action", s.to_string()))
    }
}

/// Context constraint evaluated on the provider. Parameters are kept in
/// their textual form; a condition that fails [`Condition::validate`] is
/// never satisfied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// Daily UTC clock window `[start, end)`, times as `HH:MM` or `HH:MM:SS`.
    TimeWindow {
        start: String,
        end: String,
    },
    /// UTC weekday names (`mon`, `tuesday`, ...).
    WeekdaySet {
        days: Vec<String>,
    },
    ClientNetwork {
        cidr: String,
    },
    EnvEquals {
        key: String,
        value: String,
    },
}

impl Condition {
    pub fn time_window(start: &str, end: &str) -> Self {
        Condition::TimeWindow {
            start: start.into(),
            end: end.into(),
        }
    }

    pub fn env_equals(key: &str, value: &str) -> Self {
        Condition::EnvEquals {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn client_network(cidr: &str) -> Self {
        Condition::ClientNetwork { cidr: cidr.into() }
    }

    pub fn weekdays<S: Into<String>>(days: impl IntoIterator<Item = S>) -> Self {
        Condition::WeekdaySet {
            days: days.into_iter().map(Into::into).collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Condition::TimeWindow { .. } => "time_window",
            Condition::WeekdaySet { .. } => "weekday_set",
            Condition::ClientNetwork { .. } => "client_network",
            Condition::EnvEquals { .. } => "env_equals",
        }
    }

    /// Evaluates against the request facts. `Err` means the condition itself
    /// is malformed.
    pub fn evaluate(
        &self,
        now: i64,
        client_address: &str,
        environment: &std::collections::BTreeMap<String, String>,
    ) -> Result<bool> {
        match self {
            Condition::TimeWindow { start, end } => {
                let (s, e) = (parse_clock(start)?, parse_clock(end)?);
                if s >= e {
                    return Err(Error::invalid("time_window", "start must precede end"));
                }
                let t = now.rem_euclid(86_400);
                Ok(s <= t && t < e)
            }
            Condition::WeekdaySet { days } => {
                if days.is_empty() {
                    return Err(Error::invalid("weekday_set", "empty"));
                }
                let parsed = days
                    .iter()
                    .map(|d| parse_weekday(d))
                    .collect::<Result<Vec<_>>>()?;
                Ok(parsed.contains(&weekday_of(now)))
            }
            Condition::ClientNetwork { cidr } => {
                let net = IpNet::from_str(cidr)
                    .map_err(|e| Error::invalid("client_network", e.to_string()))?;
                let Ok(ip) = IpAddr::from_str(client_address) else {
                    return Ok(false);
                };
                Ok(net.contains(&ip))
            }
            Condition::EnvEquals { key, value } => {
                Ok(environment.get(key).is_some_and(|v| v == value))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Condition::TimeWindow { start, end } => {
                if parse_clock(start)? >= parse_clock(end)? {
                    return Err(Error::invalid("time_window", "start must precede end"));
                }
            }
            Condition::WeekdaySet { days } => {
                if days.is_empty() {
                    return Err(Error::invalid("weekday_set", "empty"));
                }
                for d in days {
                    parse_weekday(d)?;
                }
            }
            Condition::ClientNetwork { cidr } => {
                IpNet::from_str(cidr)
                    .map_err(|e| Error::invalid("client_network", e.to_string()))?;
            }
            Condition::EnvEquals { key, .. } => {
                if key.is_empty() {
                    return Err(Error::invalid("env_equals", "empty key"));
                }
            }
        }
        Ok(())
    }
}

impl Canonical for Condition {
    const TAG: &'static str = "condition";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(self.kind());
        match self {
            Condition::TimeWindow { start, end } => {
                enc.str(start).str(end);
            }
            Condition::WeekdaySet { days } => {
                enc.str_list(days);
            }
            Condition::ClientNetwork { cidr } => {
                enc.str(cidr);
            }
            Condition::EnvEquals { key, value } => {
                enc.str(key).str(value);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        Condition::validate(self)
    }
}

/// Seconds since midnight.
fn parse_clock(s: &str) -> Result<i64> {
    let bad = || Error::invalid("clock time", s.to_string());
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) || parts.iter().any(|p| p.len() != 2) {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.parse::<i64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let (h, m, sec) = (nums[0], nums[1], nums.get(2).copied().unwrap_or(0));
    if h > 24 || m > 59 || sec > 59 || (h == 24 && (m, sec) != (0, 0)) {
        return Err(bad());
    }
    Ok(h * 3600 + m * 60 + sec)
}

const WEEKDAYS: [&str; 7] = ["sun", "mon", "tue", "wed", "thu", "fri", "sat"];

/// 0 = Sunday.
fn parse_weekday(s: &str) -> Result<usize> {
    let lower = s.to_ascii_lowercase();
    WEEKDAYS
        .iter()
        .position(|d| {
            lower == *d || (lower.len() > 3 && lower.starts_with(d) && full_day(d) == lower)
        })
        .ok_or_else(|| Error::invalid("weekday", s.to_string()))
}

fn full_day(abbrev: &str) -> &'static str {
    match abbrev {
        "sun" => "sunday",
        "mon" => "monday",
        "tue" => "tuesday",
        "wed" => "wednesday",
        "thu" => "thursday",
        "fri" => "friday",
        _ => "saturday",
    }
}

/// UTC weekday of a Unix timestamp, 0 = Sunday. 1970-01-01 was a Thursday.
pub fn weekday_of(unix: i64) -> usize {
    (unix.div_euclid(86_400) + 4).rem_euclid(7) as usize
}

/// An action permitted on a resource path, subject to conditions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessRight {
    pub action: Action,
    pub resource: String,
    pub conditions: Vec<Condition>,
}

impl AccessRight {
    pub fn new(action: Action, resource: impl Into<String>) -> Self {
        AccessRight {
            action,
            resource: resource.into(),
            conditions: Vec::new(),
        }
    }

    pub fn with_conditions(mut self, conditions: Vec<Condition>) -> Self {
        self.conditions = conditions;
        self
    }

    /// Identity of the right for set operations, ignoring conditions.
    pub fn key(&self) -> (Action, &str) {
        (self.action, self.resource.as_str())
    }

    /// Exact match, or a final `*` segment matching exactly one non-empty
    /// path segment.
    pub fn matches_path(&self, path: &str) -> bool {
        match self.resource.strip_suffix("/*") {
            Some(prefix) => path
                .strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('/'))
                .is_some_and(|seg| !seg.is_empty() && !seg.contains('/')),
            None => self.resource == path,
        }
    }
}

impl Canonical for AccessRight {
    const TAG: &'static str = "access_right";

    fn encode_fields(&self, enc: &mut Encoder) {
        enc.str(self.action.as_str())
            .str(&self.resource)
            .list(&self.conditions);
    }

    fn validate(&self) -> Result<()> {
        if !self.resource.starts_with('/') {
            return Err(Error::invalid(
                "access right",
                "resource must begin with '/'",
            ));
        }
        self.conditions.iter().try_for_each(Condition::validate)
    }
}
