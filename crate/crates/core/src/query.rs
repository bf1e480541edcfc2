//! Read-only queries over a pipeline artifact. Everything the HTTP service
//! answers is computed here, so responses are pure functions of
//! (artifact, request).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::KnowledgeGraph;
use crate::metrics::BridgeSkillMetrics;
use crate::risk::{RiskCategory, RiskIndex};
use crate::transitions::{
    candidates_for_neighborhood, Candidate, SafeHarborEntry, SensitivityRow, ThresholdConfig, TransitionError,
};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("profile lists no activities")]
    EmptyProfile,
    #[error("invalid thresholds: {0}")]
    BadThreshold(String),
    #[error("invalid pagination: {0}")]
    BadPagination(String),
    #[error("artifact data error: {0}")]
    Data(String),
}

impl QueryError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::UnknownJob(_) => "unknown_job",
            QueryError::UnknownActivity(_) => "unknown_activity",
            QueryError::EmptyProfile => "empty_profile",
            QueryError::BadThreshold(_) => "bad_threshold",
            QueryError::BadPagination(_) => "bad_pagination",
            QueryError::Data(_) => "artifact_error",
        }
    }

    /// HTTP status the error maps to.
    pub fn status(&self) -> u16 {
        match self {
            QueryError::UnknownJob(_) => 404,
            QueryError::Data(_) => 500,
            _ => 422,
        }
    }
}

impl From<TransitionError> for QueryError {
    fn from(e: TransitionError) -> Self {
        match e {
            TransitionError::UnknownJob(id) => QueryError::UnknownJob(id),
            TransitionError::BadThreshold(m) => QueryError::BadThreshold(m),
            other => QueryError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub seed: Option<u64>,
    pub n_jobs: usize,
    pub n_activities: usize,
    pub n_tools: usize,
    pub n_performs: usize,
    pub n_uses: usize,
    pub n_pathways: usize,
    pub n_communities: usize,
    pub modularity: f64,
}

/// Everything the service needs, precomputed by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub meta: ArtifactMeta,
    pub default_config: ThresholdConfig,
    pub graph: KnowledgeGraph,
    pub risk: RiskIndex,
    /// Ranked by connection pairs.
    pub bridge_skills: Vec<BridgeSkillMetrics>,
    /// Ranked by in-degree under `default_config`.
    pub safe_harbors: Vec<SafeHarborEntry>,
    pub sensitivity: Vec<SensitivityRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSummary {
    pub id: String,
    pub title: String,
    pub isco4: String,
    pub rho: f64,
    pub category: RiskCategory,
    pub n_activities: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEntity {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDetail {
    #[serde(flatten)]
    pub summary: JobSummary,
    pub activities: Vec<NamedEntity>,
    pub tools: Vec<NamedEntity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Destination {
    pub target: String,
    pub title: String,
    pub target_rho: f64,
    /// `None` when the source risk is unknown.
    pub delta_rho: Option<f64>,
    pub shared_count: usize,
    pub transfer_rate: f64,
    pub jaccard: f64,
    pub shared: Vec<String>,
    pub gap: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub limit: usize,
    pub offset: usize,
}

impl Default for Page {
    fn default() -> Self {
        Self {
            limit: DEFAULT_LIMIT,
            offset: 0,
        }
    }
}

impl Page {
    pub fn new(limit: Option<usize>, offset: Option<usize>) -> Result<Self, QueryError> {
        let limit = limit.unwrap_or(DEFAULT_LIMIT);
        if limit > MAX_LIMIT {
            return Err(QueryError::BadPagination(format!("limit must not exceed {MAX_LIMIT}")));
        }
        Ok(Self {
            limit,
            offset: offset.unwrap_or(0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionList {
    /// Source job id, or `None` for a custom profile.
    pub source: Option<String>,
    pub config: ThresholdConfig,
    /// Set when no source risk was given, so the risk-drop clause was skipped.
    pub risk_unfiltered: bool,
    /// Destinations before pagination.
    pub total: usize,
    pub limit: usize,
    pub offset: usize,
    pub items: Vec<Destination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfProfile {
    pub activities: Vec<String>,
    #[serde(default)]
    pub rho: Option<f64>,
}

/// Thresholds from request parameters. `tau` defaults to the artifact
/// default; `phi` is optional (absent means tau-only).
pub fn request_config(tau: Option<usize>, phi: Option<f64>, default: &ThresholdConfig) -> Result<ThresholdConfig, QueryError> {
    let cfg = ThresholdConfig {
        tau: tau.unwrap_or(default.tau),
        phi,
        require_risk_drop: true,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub struct QueryEngine {
    artifact: Artifact,
    digest: String,
}

impl QueryEngine {
    pub fn new(artifact: Artifact, digest: String) -> Self {
        Self { artifact, digest }
    }

    /// Loads a serialized artifact; the digest is the SHA-256 of its bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, QueryError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| QueryError::Data(e.to_string()))?;
        let artifact: Artifact = serde_json::from_slice(&bytes).map_err(|e| QueryError::Data(e.to_string()))?;
        Ok(Self::new(artifact, hex::encode(Sha256::digest(&bytes))))
    }

    pub fn artifact(&self) -> &Artifact {
        &self.artifact
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    fn graph(&self) -> &KnowledgeGraph {
        &self.artifact.graph
    }

    fn summary(&self, j: usize) -> Result<JobSummary, QueryError> {
        let node = self.graph().job(j);
        let p = self
            .artifact
            .risk
            .get(&node.id)
            .ok_or_else(|| QueryError::Data(format!("no risk profile for `{}`", node.id)))?;
        Ok(JobSummary {
            id: node.id.clone(),
            title: node.title.clone(),
            isco4: node.isco4.clone(),
            rho: p.rho,
            category: p.category,
            n_activities: self.graph().neighborhood(j).len(),
        })
    }

    /// Case-insensitive substring match on id or title, in id order.
    pub fn search_jobs(&self, query: &str, page: &Page) -> Result<Vec<JobSummary>, QueryError> {
        let needle = query.trim().to_lowercase();
        let g = self.graph();
        let mut hits: Vec<usize> = (0..g.n_jobs())
            .filter(|&j| {
                let node = g.job(j);
                needle.is_empty()
                    || node.id.to_lowercase().contains(&needle)
                    || node.title.to_lowercase().contains(&needle)
            })
            .collect();
        hits.sort_by(|a, b| g.job(*a).id.cmp(&g.job(*b).id));
        hits.into_iter()
            .skip(page.offset)
            .take(page.limit)
            .map(|j| self.summary(j))
            .collect()
    }

    pub fn job_detail(&self, id: &str) -> Result<JobDetail, QueryError> {
        let g = self.graph();
        let j = g.job_idx(id).ok_or_else(|| QueryError::UnknownJob(id.to_string()))?;
        let ns = g.neighborhood(j);
        Ok(JobDetail {
            summary: self.summary(j)?,
            activities: ns
                .iter()
                .map(|&a| NamedEntity {
                    id: g.activity(a).id.clone(),
                    label: g.activity(a).label.clone(),
                })
                .collect(),
            tools: g
                .tools_of(ns)
                .into_iter()
                .map(|t| NamedEntity {
                    id: g.tool(t).id.clone(),
                    label: g.tool(t).label.clone(),
                })
                .collect(),
        })
    }

    fn destinations(&self, cands: Vec<Candidate>, source_rho: Option<f64>) -> Vec<Destination> {
        let g = self.graph();
        let ids = |idx: &[usize]| {
            let mut v: Vec<String> = idx.iter().map(|&a| g.activity(a).id.clone()).collect();
            v.sort();
            v
        };
        let mut out: Vec<Destination> = cands
            .into_iter()
            .map(|c| Destination {
                target: g.job(c.target).id.clone(),
                title: g.job(c.target).title.clone(),
                target_rho: c.target_rho,
                delta_rho: source_rho.map(|s| c.target_rho - s),
                shared_count: c.shared.len(),
                transfer_rate: c.transfer_rate,
                jaccard: c.jaccard,
                shared: ids(&c.shared),
                gap: ids(&c.gap),
            })
            .collect();
        // Ascending target risk is ascending delta for a fixed source.
        out.sort_by(|a, b| a.target_rho.total_cmp(&b.target_rho).then_with(|| a.target.cmp(&b.target)));
        out
    }

    fn paged(
        &self,
        source: Option<String>,
        config: ThresholdConfig,
        risk_unfiltered: bool,
        all: Vec<Destination>,
        page: &Page,
    ) -> TransitionList {
        TransitionList {
            source,
            config,
            risk_unfiltered,
            total: all.len(),
            limit: page.limit,
            offset: page.offset,
            items: all.into_iter().skip(page.offset).take(page.limit).collect(),
        }
    }

    /// Realistic destinations from an existing job, largest risk drop first.
    pub fn list_transitions_for_job(
        &self,
        id: &str,
        cfg: &ThresholdConfig,
        page: &Page,
    ) -> Result<TransitionList, QueryError> {
        let g = self.graph();
        let j = g.job_idx(id).ok_or_else(|| QueryError::UnknownJob(id.to_string()))?;
        cfg.validate()?;
        let rho = self.summary(j)?.rho;
        let cands = candidates_for_neighborhood(g, &self.artifact.risk, g.neighborhood(j), Some(rho), Some(j), cfg)?;
        let all = self.destinations(cands, Some(rho));
        Ok(self.paged(Some(id.to_string()), *cfg, false, all, page))
    }

    /// Realistic destinations for a custom activity set. Without a risk
    /// value the risk-drop clause is skipped and the result is flagged.
    pub fn what_if(&self, profile: &WhatIfProfile, cfg: &ThresholdConfig, page: &Page) -> Result<TransitionList, QueryError> {
        cfg.validate()?;
        if profile.activities.is_empty() {
            return Err(QueryError::EmptyProfile);
        }
        if let Some(r) = profile.rho {
            if !(0.0..=100.0).contains(&r) {
                return Err(QueryError::BadThreshold(format!("rho must lie in [0, 100], got {r}")));
            }
        }
        let g = self.graph();
        let ns: BTreeSet<usize> = profile
            .activities
            .iter()
            .map(|a| g.activity_idx(a).ok_or_else(|| QueryError::UnknownActivity(a.clone())))
            .collect::<Result<_, _>>()?;
        let ns: Vec<usize> = ns.into_iter().collect();
        let cands = candidates_for_neighborhood(g, &self.artifact.risk, &ns, profile.rho, None, cfg)?;
        let all = self.destinations(cands, profile.rho);
        Ok(self.paged(None, *cfg, profile.rho.is_none(), all, page))
    }

    pub fn bridge_skills(&self, top: usize) -> &[BridgeSkillMetrics] {
        let b = &self.artifact.bridge_skills;
        &b[..top.min(b.len())]
    }

    pub fn safe_harbors(&self, top: usize) -> &[SafeHarborEntry] {
        let h = &self.artifact.safe_harbors;
        &h[..top.min(h.len())]
    }

    pub fn sensitivity(&self) -> &[SensitivityRow] {
        &self.artifact.sensitivity
    }
}
