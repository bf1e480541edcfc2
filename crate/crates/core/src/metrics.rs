//! Bridge-skill metrics: betweenness, cross-community connection pairs, ISCO
//! diversity and the importance product.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CommunityPartition, KnowledgeGraph};
use crate::risk::RiskIndex;

/// Low-risk ceiling for Tier 1 bridge skills (mean ρ strictly below).
pub const TIER1_MAX_RHO: f64 = 35.0;
/// Ceiling for Tier 2 (mean ρ strictly below).
pub const TIER2_MAX_RHO: f64 = 45.0;

/// Sources per parallel Brandes chunk. Fixed so that floating-point sums are
/// accumulated in the same order on every run.
const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("no risk profile for job `{0}`")]
    MissingRisk(String),
    #[error("partition covers {got} of {expected} nodes")]
    PartialPartition { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Universal,
    Tier1,
    Tier2,
    Untiered,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Universal => "Universal",
            Tier::Tier1 => "Tier1",
            Tier::Tier2 => "Tier2",
            Tier::Untiered => "Untiered",
        }
    }
}

/// Exact unnormalized betweenness of every node of an undirected unit-weight
/// graph. Each unordered pair `{s, t}` contributes once.
pub fn betweenness(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut state = BrandesState::new(n);
            for &s in chunk {
                state.accumulate(adj, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    for t in total.iter_mut() {
        *t /= 2.0;
    }
    total
}

struct BrandesState {
    sigma: Vec<f64>,
    dist: Vec<i64>,
    delta: Vec<f64>,
    preds: Vec<Vec<usize>>,
    stack: Vec<usize>,
    queue: VecDeque<usize>,
}

impl BrandesState {
    fn new(n: usize) -> Self {
        Self {
            sigma: vec![0.0; n],
            dist: vec![-1; n],
            delta: vec![0.0; n],
            preds: vec![Vec::new(); n],
            stack: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
        }
    }

    fn accumulate(&mut self, adj: &[Vec<usize>], s: usize, acc: &mut [f64]) {
        for &v in &self.stack {
            self.sigma[v] = 0.0;
            self.dist[v] = -1;
            self.delta[v] = 0.0;
            self.preds[v].clear();
        }
        self.stack.clear();
        self.sigma[s] = 1.0;
        self.dist[s] = 0;
        self.queue.push_back(s);
        while let Some(v) = self.queue.pop_front() {
            self.stack.push(v);
            for &w in &adj[v] {
                if self.dist[w] < 0 {
                    self.dist[w] = self.dist[v] + 1;
                    self.queue.push_back(w);
                }
                if self.dist[w] == self.dist[v] + 1 {
                    self.sigma[w] += self.sigma[v];
                    self.preds[w].push(v);
                }
            }
        }
        for i in (0..self.stack.len()).rev() {
            let w = self.stack[i];
            for j in 0..self.preds[w].len() {
                let v = self.preds[w][j];
                self.delta[v] += self.sigma[v] / self.sigma[w] * (1.0 + self.delta[w]);
            }
            if w != s {
                acc[w] += self.delta[w];
            }
        }
    }
}

/// Betweenness over the flat node space, computed on the PERFORMS subgraph;
/// tool nodes are isolated there and score 0.
pub fn betweenness_centrality(g: &KnowledgeGraph) -> Result<Vec<f64>, MetricsError> {
    if g.n_nodes() == 0 {
        return Err(MetricsError::EmptyGraph);
    }
    Ok(betweenness(&g.adjacency(false)))
}

/// `sum_{i<j} L_i L_j` over per-community link counts.
pub fn connection_pairs_from_counts(counts: &[u64]) -> u64 {
    let sum: u64 = counts.iter().sum();
    let squares: u64 = counts.iter().map(|c| c * c).sum();
    (sum * sum - squares) / 2
}

/// Jobs adjacent to `activity`, counted per community.
fn community_links(g: &KnowledgeGraph, partition: &CommunityPartition, activity: usize) -> Vec<u64> {
    let mut links: BTreeMap<usize, u64> = BTreeMap::new();
    for &j in g.activity_jobs(activity) {
        *links.entry(partition.community_of(g.job_node(j))).or_default() += 1;
    }
    links.into_values().collect()
}

fn check_partition(g: &KnowledgeGraph, partition: &CommunityPartition) -> Result<(), MetricsError> {
    if partition.assignment.len() != g.n_nodes() {
        return Err(MetricsError::PartialPartition {
            expected: g.n_nodes(),
            got: partition.assignment.len(),
        });
    }
    Ok(())
}

pub fn connection_pairs(
    g: &KnowledgeGraph,
    partition: &CommunityPartition,
    activity_id: &str,
) -> Result<u64, MetricsError> {
    check_partition(g, partition)?;
    let a = g
        .activity_idx(activity_id)
        .ok_or_else(|| MetricsError::UnknownActivity(activity_id.to_string()))?;
    Ok(connection_pairs_from_counts(&community_links(g, partition, a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillImportance {
    pub activity_id: String,
    pub label: String,
    /// Jobs performing the activity.
    pub k: u64,
    /// Distinct ISCO-2 prefixes among those jobs.
    pub d_isco: u64,
    /// `k * d_isco`.
    pub i_pr: u64,
    /// Mean ρ of adjacent jobs; `None` when `k = 0`.
    pub mean_rho: Option<f64>,
    pub tier: Tier,
}

/// Universal iff `d_isco` reaches the positive corpus maximum; otherwise by
/// mean risk band.
pub fn tier_for(d_isco: u64, max_d_isco: u64, mean_rho: Option<f64>) -> Tier {
    if max_d_isco > 0 && d_isco == max_d_isco {
        return Tier::Universal;
    }
    match mean_rho {
        Some(r) if r < TIER1_MAX_RHO => Tier::Tier1,
        Some(r) if r < TIER2_MAX_RHO => Tier::Tier2,
        _ => Tier::Untiered,
    }
}

fn d_isco(g: &KnowledgeGraph, activity: usize) -> u64 {
    g.activity_jobs(activity)
        .iter()
        .map(|&j| g.job(j).isco4.get(..2).unwrap_or(&g.job(j).isco4))
        .collect::<BTreeSet<_>>()
        .len() as u64
}

fn mean_adjacent_rho(g: &KnowledgeGraph, risk: &RiskIndex, activity: usize) -> Result<Option<f64>, MetricsError> {
    let jobs = g.activity_jobs(activity);
    if jobs.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for &j in jobs {
        let id = &g.job(j).id;
        sum += risk.rho(id).ok_or_else(|| MetricsError::MissingRisk(id.clone()))?;
    }
    Ok(Some(sum / jobs.len() as f64))
}

fn max_d_isco(g: &KnowledgeGraph) -> u64 {
    (0..g.n_activities()).map(|a| d_isco(g, a)).max().unwrap_or(0)
}

fn importance_of(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    activity: usize,
    max_d: u64,
) -> Result<SkillImportance, MetricsError> {
    let node = g.activity(activity);
    let k = g.activity_jobs(activity).len() as u64;
    let d = d_isco(g, activity);
    let mean_rho = mean_adjacent_rho(g, risk, activity)?;
    Ok(SkillImportance {
        activity_id: node.id.clone(),
        label: node.label.clone(),
        k,
        d_isco: d,
        i_pr: k * d,
        mean_rho,
        tier: tier_for(d, max_d, mean_rho),
    })
}

pub fn skill_importance(
    g: &KnowledgeGraph,
    risk: &RiskIndex,
    activity_id: &str,
) -> Result<SkillImportance, MetricsError> {
    let a = g
        .activity_idx(activity_id)
        .ok_or_else(|| MetricsError::UnknownActivity(activity_id.to_string()))?;
    importance_of(g, risk, a, max_d_isco(g))
}

/// Importance of every activity, in activity order.
pub fn importance_table(g: &KnowledgeGraph, risk: &RiskIndex) -> Result<Vec<SkillImportance>, MetricsError> {
    let max_d = max_d_isco(g);
    (0..g.n_activities())
        .map(|a| importance_of(g, risk, a, max_d))
        .collect()
}

/// Sorted by `i_pr` descending, then `k` descending, then id.
pub fn rank_by_importance(mut rows: Vec<SkillImportance>, top_n: usize) -> Vec<SkillImportance> {
    rows.sort_by(|a, b| {
        b.i_pr
            .cmp(&a.i_pr)
            .then(b.k.cmp(&a.k))
            .then_with(|| a.activity_id.cmp(&b.activity_id))
    });
    rows.truncate(top_n);
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSkillMetrics {
    pub activity_id: String,
    pub label: String,
    pub c_b: f64,
    pub c_p: u64,
    pub k: u64,
    pub d_isco: u64,
    pub i_pr: u64,
    pub mean_rho: Option<f64>,
    pub tier: Tier,
}

/// Every metric for every activity, in activity order.
pub fn bridge_skill_metrics(
    g: &KnowledgeGraph,
    partition: &CommunityPartition,
    risk: &RiskIndex,
) -> Result<Vec<BridgeSkillMetrics>, MetricsError> {
    check_partition(g, partition)?;
    let cb = betweenness_centrality(g)?;
    let importance = importance_table(g, risk)?;
    Ok(importance
        .into_iter()
        .enumerate()
        .map(|(a, imp)| BridgeSkillMetrics {
            activity_id: imp.activity_id,
            label: imp.label,
            c_b: cb[g.activity_node(a)],
            c_p: connection_pairs_from_counts(&community_links(g, partition, a)),
            k: imp.k,
            d_isco: imp.d_isco,
            i_pr: imp.i_pr,
            mean_rho: imp.mean_rho,
            tier: imp.tier,
        })
        .collect())
}

/// Sorted by `c_p` descending, then `k` descending, then id.
pub fn rank_bridge_skills(mut rows: Vec<BridgeSkillMetrics>, top_n: usize) -> Vec<BridgeSkillMetrics> {
    rows.sort_by(|a, b| {
        b.c_p
            .cmp(&a.c_p)
            .then(b.k.cmp(&a.k))
            .then_with(|| a.activity_id.cmp(&b.activity_id))
    });
    rows.truncate(top_n);
    rows
}
