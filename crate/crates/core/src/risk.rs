//! Task-weighted automation risk (Job Automatability Index) and its
//! aggregation over ISCO levels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Importance, Task, MAX_TASKS};

/// Category masses, in tenths: Primary 0.6, Secondary 0.3, Ancillary 0.1.
const CATEGORY_TENTHS: [(Importance, u32); 3] = [
    (Importance::Primary, 6),
    (Importance::Secondary, 3),
    (Importance::Ancillary, 1),
];

pub const HIGH_RISK_CUTOFF: f64 = 60.0;
pub const MEDIUM_RISK_CUTOFF: f64 = 30.0;
/// Upper bound (inclusive) of the "low" side in heterogeneity tables.
pub const HETEROGENEITY_LOW_CUTOFF: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("job has no tasks")]
    EmptyTaskList,
    #[error("job has {0} tasks, at most 15 are allowed")]
    TooManyTasks(usize),
    #[error("risk {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("ISCO level {0} outside 1..=4")]
    BadLevel(usize),
    #[error("no posting for job `{0}`")]
    UnknownJob(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskCategory {
    High,
    Medium,
    Low,
}

impl RiskCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskCategory::High => "High",
            RiskCategory::Medium => "Medium",
            RiskCategory::Low => "Low",
        }
    }
}

/// Importance-weighted share of automatable tasks, in percent.
///
/// Each importance category present in the task list carries its nominal mass
/// (0.6 / 0.3 / 0.1), split equally among that category's tasks; masses are
/// then renormalized over the categories present so the weights sum to one.
pub fn compute_risk(tasks: &[Task]) -> Result<f64, RiskError> {
    if tasks.is_empty() {
        return Err(RiskError::EmptyTaskList);
    }
    if tasks.len() > MAX_TASKS {
        return Err(RiskError::TooManyTasks(tasks.len()));
    }
    let mut present = 0u32;
    let mut automatable_mass = 0.0;
    for (importance, tenths) in CATEGORY_TENTHS {
        let (n, auto) = tasks
            .iter()
            .filter(|t| t.importance == importance)
            .fold((0u32, 0u32), |(n, a), t| (n + 1, a + u32::from(t.automatable)));
        if n == 0 {
            continue;
        }
        present += tenths;
        automatable_mass += f64::from(tenths) * f64::from(auto) / f64::from(n);
    }
    Ok(100.0 * automatable_mass / f64::from(present))
}

pub fn categorize_risk(rho: f64) -> Result<RiskCategory, RiskError> {
    if !(0.0..=100.0).contains(&rho) {
        return Err(RiskError::OutOfRange(rho));
    }
    Ok(if rho >= HIGH_RISK_CUTOFF {
        RiskCategory::High
    } else if rho >= MEDIUM_RISK_CUTOFF {
        RiskCategory::Medium
    } else {
        RiskCategory::Low
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRiskProfile {
    pub job_id: String,
    pub rho: f64,
    pub category: RiskCategory,
}

impl JobRiskProfile {
    pub fn from_tasks(job_id: impl Into<String>, tasks: &[Task]) -> Result<Self, RiskError> {
        let rho = compute_risk(tasks)?;
        Ok(Self {
            job_id: job_id.into(),
            rho,
            category: categorize_risk(rho)?,
        })
    }
}

/// Risk profiles keyed by job id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskIndex {
    profiles: BTreeMap<String, JobRiskProfile>,
}

impl RiskIndex {
    pub fn from_corpus(corpus: &Corpus) -> Result<Self, RiskError> {
        corpus
            .postings
            .iter()
            .map(|p| JobRiskProfile::from_tasks(&p.id, &p.tasks))
            .collect::<Result<Vec<_>, _>>()
            .map(Self::from_profiles)
    }

    pub fn from_profiles(profiles: impl IntoIterator<Item = JobRiskProfile>) -> Self {
        Self {
            profiles: profiles
                .into_iter()
                .map(|p| (p.job_id.clone(), p))
                .collect(),
        }
    }

    pub fn get(&self, job_id: &str) -> Option<&JobRiskProfile> {
        self.profiles.get(job_id)
    }

    pub fn rho(&self, job_id: &str) -> Option<f64> {
        self.profiles.get(job_id).map(|p| p.rho)
    }

    pub fn iter(&self) -> impl Iterator<Item = &JobRiskProfile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAggregate {
    pub group_code: String,
    pub label: String,
    pub n: usize,
    pub mean_rho: f64,
    /// Population standard deviation.
    pub sigma: f64,
    /// Percent of jobs with rho >= 60.
    pub high_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IscoAggregation {
    pub level: usize,
    pub min_n: usize,
    pub rows: Vec<RiskAggregate>,
    /// Pooled row over every job in a surviving group; `None` when no group survives.
    pub overall: Option<RiskAggregate>,
}

/// ISCO-08 major group names.
pub fn isco_major_label(digit: &str) -> &'static str {
    match digit {
        "0" => "Armed Forces Occupations",
        "1" => "Managers",
        "2" => "Professionals",
        "3" => "Technicians & Associates",
        "4" => "Clerical Support Workers",
        "5" => "Service & Sales Workers",
        "6" => "Skilled Agricultural Workers",
        "7" => "Craft & Related Workers",
        "8" => "Plant & Machine Operators",
        "9" => "Elementary Occupations",
        _ => "",
    }
}

fn describe(code: String, label: String, rhos: &[f64]) -> RiskAggregate {
    let n = rhos.len();
    let mean = rhos.iter().sum::<f64>() / n as f64;
    let var = rhos.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let high = rhos.iter().filter(|r| **r >= HIGH_RISK_CUTOFF).count();
    RiskAggregate {
        group_code: code,
        label,
        n,
        mean_rho: mean,
        sigma: var.sqrt(),
        high_share: 100.0 * high as f64 / n as f64,
    }
}

/// Groups profiles by ISCO prefix of `level` digits, drops groups with fewer
/// than `min_n` jobs, and sorts by mean risk (descending, ties by code).
pub fn aggregate_by_isco(
    risk: &RiskIndex,
    corpus: &Corpus,
    level: usize,
    min_n: usize,
) -> Result<IscoAggregation, RiskError> {
    if !(1..=4).contains(&level) {
        return Err(RiskError::BadLevel(level));
    }
    let isco: BTreeMap<&str, &str> = corpus
        .postings
        .iter()
        .map(|p| (p.id.as_str(), p.isco4.as_str()))
        .collect();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for profile in risk.iter() {
        let code = isco
            .get(profile.job_id.as_str())
            .ok_or_else(|| RiskError::UnknownJob(profile.job_id.clone()))?;
        groups
            .entry(code[..level].to_string())
            .or_default()
            .push(profile.rho);
    }
    let mut pooled = Vec::new();
    let mut rows: Vec<RiskAggregate> = groups
        .into_iter()
        .filter(|(_, rhos)| rhos.len() >= min_n && !rhos.is_empty())
        .map(|(code, rhos)| {
            pooled.extend_from_slice(&rhos);
            let label = if level == 1 {
                isco_major_label(&code).to_string()
            } else {
                String::new()
            };
            describe(code, label, &rhos)
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_rho
            .total_cmp(&a.mean_rho)
            .then_with(|| a.group_code.cmp(&b.group_code))
    });
    let overall = (!pooled.is_empty())
        .then(|| describe("TOTAL".into(), "Total/Weighted Avg".into(), &pooled));
    Ok(IscoAggregation {
        level,
        min_n,
        rows,
        overall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityRow {
    pub isco3: String,
    /// `None` when no job falls in the group.
    pub mean_rho: Option<f64>,
    pub high_count: usize,
    pub low_count: usize,
    /// `low / (high + low)`; `None` (undefined) when both counts are zero.
    pub low_share: Option<f64>,
}

pub fn low_share(high_count: usize, low_count: usize) -> Option<f64> {
    let total = high_count + low_count;
    (total > 0).then(|| low_count as f64 / total as f64)
}

/// Counts high (rho >= 60) and low (rho <= 40) jobs inside each requested ISCO-3 group.
pub fn heterogeneity_table(
    risk: &RiskIndex,
    corpus: &Corpus,
    isco3_codes: &[String],
) -> Vec<HeterogeneityRow> {
    isco3_codes
        .iter()
        .map(|code| {
            let rhos: Vec<f64> = corpus
                .postings
                .iter()
                .filter(|p| p.isco_prefix(3) == code)
                .filter_map(|p| risk.rho(&p.id))
                .collect();
            let high_count = rhos.iter().filter(|r| **r >= HIGH_RISK_CUTOFF).count();
            let low_count = rhos
                .iter()
                .filter(|r| **r <= HETEROGENEITY_LOW_CUTOFF)
                .count();
            HeterogeneityRow {
                isco3: code.clone(),
                mean_rho: (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64),
                high_count,
                low_count,
                low_share: low_share(high_count, low_count),
            }
        })
        .collect()
}
