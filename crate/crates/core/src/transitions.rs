//! Realistic career transitions under the dual threshold, and the analyses
//! built on the resulting network.
//!
//! A move from source `s` to target `t` is realistic when
//! `rho(t) < rho(s)`, `|N(s) ∩ N(t)| >= tau` and, if `phi` is set,
//! `|N(s) ∩ N(t)| / |N(s)| >= phi`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::KnowledgeGraph;
use crate::risk::{RiskCategory, RiskIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` performs no activities")]
    EmptySourceNeighborhood(String),
    #[error("no risk profile for job `{0}`")]
    MissingRisk(String),
    #[error("invalid thresholds: {0}")]
    BadThreshold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Minimum shared activities.
    pub tau: usize,
    /// Minimum share of the source's activities that transfer; `None` for
    /// tau-only mode.
    pub phi: Option<f64>,
    pub require_risk_drop: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            tau: 3,
            phi: Some(0.5),
            require_risk_drop: true,
        }
    }
}

impl ThresholdConfig {
    pub fn new(tau: usize, phi: Option<f64>) -> Result<Self, TransitionError> {
        let cfg = Self {
            tau,
            phi,
            require_risk_drop: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TransitionError> {
        if self.tau < 1 {
            return Err(TransitionError::BadThreshold("tau must be at least 1".into()));
        }
        if let Some(phi) = self.phi {
            if !(phi > 0.0 && phi <= 1.0) {
                return Err(TransitionError::BadThreshold(format!(
                    "phi must lie in (0, 1], got {phi}"
                )));
            }
        }
        Ok(())
    }

    /// `phi` rendered with two decimals, or `-` in tau-only mode.
    pub fn phi_label(&self) -> String {
        self.phi.map_or_else(|| "-".to_string(), |p| format!("{p:.2}"))
    }

    /// Componentwise `self <= other`: every pathway admitted by `other` is
    /// admitted by `self`.
    pub fn is_looser_or_equal(&self, other: &ThresholdConfig) -> bool {
        let phi_ok = match (self.phi, other.phi) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => a <= b,
        };
        self.tau <= other.tau && phi_ok && (!self.require_risk_drop || other.require_risk_drop)
    }
}

/// The thirteen configurations of the extended sensitivity grid.
pub fn table14_grid() -> Vec<ThresholdConfig> {
    let rows: [(Option<f64>, &[usize]); 5] = [
        (None, &[3, 4, 5]),
        (Some(0.30), &[3, 4, 5]),
        (Some(0.40), &[3, 4]),
        (Some(0.50), &[3, 4, 5]),
        (Some(0.60), &[3, 4]),
    ];
    rows.iter()
        .flat_map(|(phi, taus)| {
            taus.iter().map(move |&tau| ThresholdConfig {
                tau,
                phi: *phi,
                require_risk_drop: true,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    /// Shared activity ids, sorted.
    pub shared: Vec<String>,
    pub transfer_rate: f64,
    pub jaccard: f64,
}

/// Sorted intersection of two sorted index lists and the size of their union.
fn intersect(a: &[usize], b: &[usize]) -> (Vec<usize>, usize) {
    let (mut i, mut j) = (0, 0);
    let mut shared = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - shared.len();
    (shared, union)
}

fn job_index(g: &KnowledgeGraph, id: &str) -> Result<usize, TransitionError> {
    g.job_idx(id).ok_or_else(|| TransitionError::UnknownJob(id.to_string()))
}

fn rho_of(g: &KnowledgeGraph, risk: &RiskIndex, job: usize) -> Result<f64, TransitionError> {
    let id = &g.job(job).id;
    risk.rho(id).ok_or_else(|| TransitionError::MissingRisk(id.clone()))
}

fn activity_ids(g: &KnowledgeGraph, idx: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = idx.iter().map(|&a| g.activity(a).id.clone()).collect();
    ids.sort();
    ids
}

pub fn pairwise_overlap(g: &KnowledgeGraph, source: &str, target: &str) -> Result<Overlap, TransitionError> {
    let s = job_index(g, source)?;
    let t = job_index(g, target)?;
    let ns = g.neighborhood(s);
    if ns.is_empty() {
        return Err(TransitionError::EmptySourceNeighborhood(source.to_string()));
    }
    let (shared, union) = intersect(ns, g.neighborhood(t));
    Ok(Overlap {
        transfer_rate: shared.len() as f64 / ns.len() as f64,
        jaccard: shared.len() as f64 / union as f64,
        shared: activity_ids(g, &shared),
    })
}

/// The dual-threshold rule on precomputed quantities. `rho` is
/// `(source, target)`; `None` skips the risk clause.
pub fn passes(cfg: &ThresholdConfig, shared: usize, source_size: usize, rho: Option<(f64, f64)>) -> bool {
    if shared < cfg.tau {
        return false;
    }
    if let Some(phi) = cfg.phi {
        if source_size == 0 || (shared as f64 / source_size as f64) < phi {
            return false;
        }
    }
    match rho {
        Some((s, t)) if cfg.require_risk_drop => t < s,
        _ => true,
    }
}

pub fn is_realistic_transition(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    source: &str,
    target: &str,
    cfg: &ThresholdConfig,
) -> Result<bool, TransitionError> {
    let s = job_index(g, source)?;
    let t = job_index(g, target)?;
    let (shared, _) = intersect(g.neighborhood(s), g.neighborhood(t));
    let rho = (rho_of(g, risk, s)?, rho_of(g, risk, t)?);
    Ok(passes(cfg, shared.len(), g.neighborhood(s).len(), Some(rho)))
}

/// A qualifying target for a given source neighborhood, by job index.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: usize,
    pub shared: Vec<usize>,
    pub gap: Vec<usize>,
    pub transfer_rate: f64,
    pub jaccard: f64,
    pub target_rho: f64,
}

/// Every job other than `exclude` that a worker with activity set `ns`
/// (sorted, deduplicated) and risk `source_rho` could realistically move to,
/// in job-index order. Only jobs sharing at least one activity are scanned,
/// which is exhaustive because `tau >= 1`.
pub fn candidates_for_neighborhood(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    ns: &[usize],
    source_rho: Option<f64>,
    exclude: Option<usize>,
    cfg: &ThresholdConfig,
) -> Result<Vec<Candidate>, TransitionError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &a in ns {
        for &j in g.activity_jobs(a) {
            *counts.entry(j).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for (t, n_shared) in counts {
        if Some(t) == exclude {
            continue;
        }
        let target_rho = rho_of(g, risk, t)?;
        if !passes(cfg, n_shared, ns.len(), source_rho.map(|s| (s, target_rho))) {
            continue;
        }
        let nt = g.neighborhood(t);
        let (shared, union) = intersect(ns, nt);
        let gap: Vec<usize> = nt.iter().copied().filter(|a| shared.binary_search(a).is_err()).collect();
        out.push(Candidate {
            target: t,
            transfer_rate: shared.len() as f64 / ns.len() as f64,
            jaccard: shared.len() as f64 / union as f64,
            shared,
            gap,
            target_rho,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPathway {
    pub source: String,
    pub target: String,
    /// Activity ids in both neighborhoods, sorted.
    pub shared: Vec<String>,
    /// Activity ids of the target missing from the source, sorted.
    pub gap: Vec<String>,
    pub shared_count: usize,
    pub transfer_rate: f64,
    pub jaccard: f64,
    /// `rho(target) - rho(source)`; negative is safer.
    pub delta_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionNetwork {
    /// Sorted by (source id, target id).
    pub pathways: Vec<TransitionPathway>,
    /// High-risk job ids, sorted.
    pub source_universe: Vec<String>,
    pub config: ThresholdConfig,
}

/// High-risk job ids, sorted.
pub fn high_risk_sources(g: &KnowledgeGraph, risk: &RiskIndex) -> Result<Vec<String>, TransitionError> {
    let mut out = Vec::new();
    for job in g.jobs() {
        let p = risk
            .get(&job.id)
            .ok_or_else(|| TransitionError::MissingRisk(job.id.clone()))?;
        if p.category == RiskCategory::High {
            out.push(job.id.clone());
        }
    }
    out.sort();
    Ok(out)
}

pub fn enumerate_transition_network(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    cfg: &ThresholdConfig,
) -> Result<TransitionNetwork, TransitionError> {
    cfg.validate()?;
    let universe = high_risk_sources(g, risk)?;
    let per_source: Vec<Vec<TransitionPathway>> = universe
        .par_iter()
        .map(|id| {
            let s = job_index(g, id)?;
            let rho_s = rho_of(g, risk, s)?;
            let cands = candidates_for_neighborhood(g, risk, g.neighborhood(s), Some(rho_s), Some(s), cfg)?;
            Ok(cands
                .into_iter()
                .map(|c| TransitionPathway {
                    source: id.clone(),
                    target: g.job(c.target).id.clone(),
                    shared_count: c.shared.len(),
                    shared: activity_ids(g, &c.shared),
                    gap: activity_ids(g, &c.gap),
                    transfer_rate: c.transfer_rate,
                    jaccard: c.jaccard,
                    delta_rho: c.target_rho - rho_s,
                })
                .collect())
        })
        .collect::<Result<_, TransitionError>>()?;
    let mut pathways: Vec<TransitionPathway> = per_source.into_iter().flatten().collect();
    pathways.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
    Ok(TransitionNetwork {
        pathways,
        source_universe: universe,
        config: *cfg,
    })
}

/// Degree threshold for "sources with many options".
pub const MANY_OPTIONS: usize = 10;
/// In-degree threshold for hub destinations.
pub const HUB_IN_DEGREE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub n_pathways: usize,
    pub mean_shared: Option<f64>,
    pub max_shared: usize,
    pub mean_transfer: Option<f64>,
    pub unique_sources: usize,
    pub mean_out_degree: Option<f64>,
    /// Sources with more than [`MANY_OPTIONS`] pathways.
    pub sources_many_options: usize,
    pub unique_destinations: usize,
    pub mean_in_degree: Option<f64>,
    /// Destinations with in-degree above [`HUB_IN_DEGREE`].
    pub hub_destinations: usize,
    pub mean_delta_rho: Option<f64>,
    /// Most negative `delta_rho`.
    pub max_risk_reduction: Option<f64>,
    pub source_universe: usize,
    /// `unique_sources / source_universe`.
    pub coverage: Option<f64>,
    /// `1 - coverage`.
    pub reskilling_gap: Option<f64>,
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Share of the source universe with at least one pathway.
pub fn coverage(unique_sources: usize, universe: usize) -> Option<f64> {
    (universe > 0).then(|| unique_sources as f64 / universe as f64)
}

pub fn transition_network_stats(tn: &TransitionNetwork) -> TransitionStats {
    let p = &tn.pathways;
    let n = p.len();
    let mut out_deg: BTreeMap<&str, usize> = BTreeMap::new();
    let mut in_deg: BTreeMap<&str, usize> = BTreeMap::new();
    for x in p {
        *out_deg.entry(&x.source).or_default() += 1;
        *in_deg.entry(&x.target).or_default() += 1;
    }
    let cov = coverage(out_deg.len(), tn.source_universe.len());
    TransitionStats {
        n_pathways: n,
        mean_shared: mean(p.iter().map(|x| x.shared_count as f64).sum(), n),
        max_shared: p.iter().map(|x| x.shared_count).max().unwrap_or(0),
        mean_transfer: mean(p.iter().map(|x| x.transfer_rate).sum(), n),
        unique_sources: out_deg.len(),
        mean_out_degree: mean(n as f64, out_deg.len()),
        sources_many_options: out_deg.values().filter(|d| **d > MANY_OPTIONS).count(),
        unique_destinations: in_deg.len(),
        mean_in_degree: mean(n as f64, in_deg.len()),
        hub_destinations: in_deg.values().filter(|d| **d > HUB_IN_DEGREE).count(),
        mean_delta_rho: mean(p.iter().map(|x| x.delta_rho).sum(), n),
        max_risk_reduction: p.iter().map(|x| x.delta_rho).reduce(f64::min),
        source_universe: tn.source_universe.len(),
        coverage: cov,
        reskilling_gap: cov.map(|c| 1.0 - c),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeHarborEntry {
    pub target: String,
    pub title: String,
    pub rho: f64,
    /// Distinct sources reaching the target.
    pub k_in: usize,
    pub mean_jaccard: f64,
    /// `|N(target)|`.
    pub n_activities: usize,
    /// Distinct other jobs sharing at least one activity with the target.
    pub bridge: usize,
}

/// Jobs other than `job` sharing at least one activity with it.
pub fn bridge_count(g: &KnowledgeGraph, job: usize) -> usize {
    g.neighborhood(job)
        .iter()
        .flat_map(|&a| g.activity_jobs(a).iter().copied())
        .filter(|&j| j != job)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Destinations by in-degree descending, then mean Jaccard descending, then id.
pub fn rank_safe_harbors(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    tn: &TransitionNetwork,
    top_k: usize,
) -> Result<Vec<SafeHarborEntry>, TransitionError> {
    let mut incoming: BTreeMap<&str, (BTreeSet<&str>, f64, usize)> = BTreeMap::new();
    for p in &tn.pathways {
        let e = incoming.entry(&p.target).or_default();
        e.0.insert(&p.source);
        e.1 += p.jaccard;
        e.2 += 1;
    }
    let mut rows = Vec::with_capacity(incoming.len());
    for (target, (sources, jsum, n)) in incoming {
        let t = job_index(g, target)?;
        rows.push(SafeHarborEntry {
            target: target.to_string(),
            title: g.job(t).title.clone(),
            rho: rho_of(g, risk, t)?,
            k_in: sources.len(),
            mean_jaccard: jsum / n as f64,
            n_activities: g.neighborhood(t).len(),
            bridge: bridge_count(g, t),
        });
    }
    rows.sort_by(|a, b| {
        b.k_in
            .cmp(&a.k_in)
            .then(b.mean_jaccard.total_cmp(&a.mean_jaccard))
            .then_with(|| a.target.cmp(&b.target))
    });
    rows.truncate(top_k);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSkillStat {
    pub activity_id: String,
    pub label: String,
    pub f_gap: usize,
    /// `f_gap / |T|`.
    pub share: f64,
    /// Running sum of `share` down the ranking; may exceed 1.
    pub cumulative: f64,
}

/// Gap activities by frequency descending, then id.
pub fn gap_skill_frequencies(g: &KnowledgeGraph, tn: &TransitionNetwork, top_k: usize) -> Vec<GapSkillStat> {
    let total = tn.pathways.len();
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &tn.pathways {
        for a in &p.gap {
            *freq.entry(a).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(top_k);
    let mut cumulative = 0.0;
    ranked
        .into_iter()
        .map(|(id, f)| {
            let share = f as f64 / total as f64;
            cumulative += share;
            GapSkillStat {
                activity_id: id.to_string(),
                label: g
                    .activity_idx(id)
                    .map_or_else(|| id.to_string(), |a| g.activity(a).label.clone()),
                f_gap: f,
                share,
                cumulative,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub source: String,
    pub target: String,
    pub shared_activities: Vec<String>,
    /// Source activities not needed by the target.
    pub unused_activities: Vec<String>,
    pub gap_activities: Vec<String>,
    pub shared_tools: Vec<String>,
    pub unused_tools: Vec<String>,
    pub gap_tools: Vec<String>,
    pub n_gap: usize,
}

pub fn decompose_transition(g: &KnowledgeGraph, source: &str, target: &str) -> Result<Decomposition, TransitionError> {
    let s = job_index(g, source)?;
    let t = job_index(g, target)?;
    let split = |a: &BTreeSet<String>, b: &BTreeSet<String>| {
        (
            a.intersection(b).cloned().collect::<Vec<_>>(),
            a.difference(b).cloned().collect::<Vec<_>>(),
            b.difference(a).cloned().collect::<Vec<_>>(),
        )
    };
    let acts = |j: usize| -> BTreeSet<String> { g.neighborhood(j).iter().map(|&a| g.activity(a).id.clone()).collect() };
    let tools = |j: usize| -> BTreeSet<String> {
        g.tools_of(g.neighborhood(j)).into_iter().map(|x| g.tool(x).id.clone()).collect()
    };
    let (shared_activities, unused_activities, gap_activities) = split(&acts(s), &acts(t));
    let (shared_tools, unused_tools, gap_tools) = split(&tools(s), &tools(t));
    Ok(Decomposition {
        source: source.to_string(),
        target: target.to_string(),
        n_gap: gap_activities.len(),
        shared_activities,
        unused_activities,
        gap_activities,
        shared_tools,
        unused_tools,
        gap_tools,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub config: ThresholdConfig,
    pub n_pathways: usize,
    pub mean_shared: Option<f64>,
    pub mean_transfer: Option<f64>,
    pub unique_sources: usize,
    pub coverage: Option<f64>,
}

/// One fresh enumeration per configuration.
pub fn threshold_sensitivity_grid(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    configs: &[ThresholdConfig],
) -> Result<Vec<SensitivityRow>, TransitionError> {
    if configs.is_empty() {
        return Err(TransitionError::BadThreshold("empty configuration list".into()));
    }
    configs
        .iter()
        .map(|cfg| {
            let tn = enumerate_transition_network(g, risk, cfg)?;
            let st = transition_network_stats(&tn);
            Ok(SensitivityRow {
                config: *cfg,
                n_pathways: st.n_pathways,
                mean_shared: st.mean_shared,
                mean_transfer: st.mean_transfer,
                unique_sources: st.unique_sources,
                coverage: st.coverage,
            })
        })
        .collect()
}
