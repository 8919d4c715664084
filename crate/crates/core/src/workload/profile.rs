use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub const DEFAULT_STEP_INTERVAL_S: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Low,
    Medium,
    High,
    Custom,
}

impl ProfileName {
    /// Users added per step for the named profiles.
    pub fn step_users(self) -> Option<u32> {
        match self {
            ProfileName::Low => Some(10),
            ProfileName::Medium => Some(20),
            ProfileName::High => Some(40),
            ProfileName::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileName::Low => "low",
            ProfileName::Medium => "medium",
            ProfileName::High => "high",
            ProfileName::Custom => "custom",
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProfileName {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(ProfileName::Low),
            "medium" => Ok(ProfileName::Medium),
            "high" => Ok(ProfileName::High),
            "custom" => Ok(ProfileName::Custom),
            other => Err(ProfileError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("unknown profile `{0}` (expected low, medium, high or custom)")]
    UnknownProfile(String),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("profile `{name}` fixes step_users to {expected}, got {got}")]
    StepUsersMismatch { name: ProfileName, expected: u32, got: u32 },
    #[error("at least one target URL is required")]
    NoTargets,
    #[error("invalid duration `{0}`")]
    Duration(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestTemplate {
    pub method: String,
    /// Joined onto each target URL; empty means the target URL as given.
    pub path: String,
    pub headers: BTreeMap<String, String>,
    pub body: Option<String>,
}

impl Default for RequestTemplate {
    fn default() -> Self {
        RequestTemplate {
            method: "GET".into(),
            path: String::new(),
            headers: BTreeMap::new(),
            body: None,
        }
    }
}

/// A step-ramp closed-loop schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: ProfileName,
    pub step_users: u32,
    #[serde(default = "default_interval")]
    pub step_interval_s: u64,
    pub duration_s: u64,
    pub targets: Vec<Url>,
    #[serde(default)]
    pub request: RequestTemplate,
}

fn default_interval() -> u64 {
    DEFAULT_STEP_INTERVAL_S
}

impl WorkloadProfile {
    /// A named profile (`low`, `medium` or `high`) with the default interval.
    pub fn named(name: ProfileName, duration_s: u64, targets: Vec<Url>) -> Result<Self, ProfileError> {
        let step_users = name
            .step_users()
            .ok_or(ProfileError::UnknownProfile("custom needs explicit step_users".into()))?;
        let p = WorkloadProfile {
            name,
            step_users,
            step_interval_s: DEFAULT_STEP_INTERVAL_S,
            duration_s,
            targets,
            request: RequestTemplate::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_request(mut self, request: RequestTemplate) -> Self {
        self.request = request;
        self
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.step_users == 0 {
            return Err(ProfileError::NotPositive("step_users"));
        }
        if self.step_interval_s == 0 {
            return Err(ProfileError::NotPositive("step_interval_s"));
        }
        if let Some(expected) = self.name.step_users() {
            if expected != self.step_users {
                return Err(ProfileError::StepUsersMismatch {
                    name: self.name,
                    expected,
                    got: self.step_users,
                });
            }
        }
        if self.targets.is_empty() {
            return Err(ProfileError::NoTargets);
        }
        Ok(())
    }

    pub fn concurrency_at(&self, t_s: f64) -> u32 {
        concurrency_at(self, t_s)
    }

    /// Step boundaries strictly inside the run, in seconds.
    pub fn step_starts(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.duration_s).step_by(self.step_interval_s as usize)
    }
}

/// `step_users × (⌊t / step_interval⌋ + 1)` while `0 ≤ t < duration`, else 0.
pub fn concurrency_at(profile: &WorkloadProfile, t_s: f64) -> u32 {
    if !(t_s >= 0.0) || t_s >= profile.duration_s as f64 {
        return 0;
    }
    let step = (t_s / profile.step_interval_s as f64).floor() as u32;
    profile.step_users.saturating_mul(step + 1)
}

/// Parses `90`, `90s`, `2m` or `1h`.
pub fn parse_duration_s(text: &str) -> Result<u64, ProfileError> {
    let t = text.trim();
    let (num, mult) = match t.chars().last() {
        Some('s') => (&t[..t.len() - 1], 1),
        Some('m') => (&t[..t.len() - 1], 60),
        Some('h') => (&t[..t.len() - 1], 3600),
        _ => (t, 1),
    };
    num.parse::<u64>()
        .map(|n| n * mult)
        .map_err(|_| ProfileError::Duration(text.to_string()))
}
