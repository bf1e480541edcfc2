//! Louvain community detection and modularity on the undirected, unit-weight
//! union of PERFORMS and USES edges.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, KnowledgeGraph, NodeId, NodeKind};
use crate::risk::RiskIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    /// Community of every node in the flat node space. Ids are dense and
    /// numbered by first appearance in node order.
    pub assignment: Vec<usize>,
    pub q: f64,
}

impl CommunityPartition {
    pub fn n_communities(&self) -> usize {
        self.assignment.iter().max().map_or(0, |m| m + 1)
    }

    pub fn community_of(&self, node: NodeId) -> usize {
        self.assignment[node]
    }
}

/// Newman modularity `sum_c (e_cc - a_c^2)` of a unit-weight edge list.
/// A graph without edges has modularity 0.
pub fn modularity_of_edges(edges: &[(usize, usize)], assignment: &[usize]) -> f64 {
    let m = edges.len() as f64;
    if edges.is_empty() {
        return 0.0;
    }
    let mut internal: HashMap<usize, f64> = HashMap::new();
    let mut degree: HashMap<usize, f64> = HashMap::new();
    for &(u, v) in edges {
        let (cu, cv) = (assignment[u], assignment[v]);
        if cu == cv {
            *internal.entry(cu).or_default() += 1.0;
        }
        *degree.entry(cu).or_default() += 1.0;
        *degree.entry(cv).or_default() += 1.0;
    }
    let mut communities: Vec<usize> = degree.keys().copied().collect();
    communities.sort_unstable();
    communities
        .into_iter()
        .map(|c| {
            let e = internal.get(&c).copied().unwrap_or(0.0) / m;
            let a = degree[&c] / (2.0 * m);
            e - a * a
        })
        .sum()
}

/// Modularity of a full-node assignment on the PERFORMS + USES graph.
pub fn modularity(g: &KnowledgeGraph, assignment: &[usize]) -> Result<f64, GraphError> {
    if assignment.len() != g.n_nodes() {
        return Err(GraphError::PartialAssignment {
            expected: g.n_nodes(),
            got: assignment.len(),
        });
    }
    Ok(modularity_of_edges(&g.edges(true), assignment))
}

/// Weighted graph used across Louvain levels. `self_loops[i]` counts internal
/// edges folded into node `i`; each contributes twice to its degree.
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    total_weight: f64,
}

impl LevelGraph {
    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut self_loops = vec![0.0; n];
        for &(u, v) in edges {
            if u == v {
                self_loops[u] += 1.0;
            } else {
                *weights[u].entry(v).or_default() += 1.0;
                *weights[v].entry(u).or_default() += 1.0;
            }
        }
        Self::from_weights(weights, self_loops)
    }

    fn from_weights(weights: Vec<BTreeMap<usize, f64>>, self_loops: Vec<f64>) -> Self {
        let adj: Vec<Vec<(usize, f64)>> = weights
            .into_iter()
            .map(|w| w.into_iter().collect())
            .collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loops)
            .map(|(nbrs, s)| 2.0 * s + nbrs.iter().map(|(_, w)| w).sum::<f64>())
            .collect();
        let total_weight = degree.iter().sum::<f64>() / 2.0;
        Self {
            adj,
            self_loops,
            degree,
            total_weight,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Local-moving phase. Returns the dense community of each node and
    /// whether any node moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.len();
        let mut community: Vec<usize> = (0..n).collect();
        let mut tot: Vec<f64> = self.degree.clone();
        let two_m = 2.0 * self.total_weight;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut moved_any = false;
        let mut link: Vec<f64> = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        loop {
            let mut moved = false;
            for &node in &order {
                let k = self.degree[node];
                if k == 0.0 {
                    continue;
                }
                let own = community[node];
                for &(nbr, w) in &self.adj[node] {
                    let c = community[nbr];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                tot[own] -= k;
                let gain = |c: usize, l: f64| l - tot[c] * k / two_m;
                let mut best = own;
                let mut best_gain = gain(own, link[own]);
                for &c in &touched {
                    let g = gain(c, link[c]);
                    if c != own && g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += k;
                if best != own {
                    community[node] = best;
                    moved = true;
                    moved_any = true;
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        (renumber(&community), moved_any)
    }

    fn aggregate(&self, community: &[usize]) -> Self {
        let k = community.iter().max().map_or(0, |m| m + 1);
        let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loops = vec![0.0; k];
        for (u, nbrs) in self.adj.iter().enumerate() {
            let cu = community[u];
            self_loops[cu] += self.self_loops[u];
            for &(v, w) in nbrs {
                let cv = community[v];
                if cu == cv {
                    // Each internal edge is seen from both endpoints.
                    self_loops[cu] += w / 2.0;
                } else {
                    *weights[cu].entry(cv).or_default() += w;
                }
            }
        }
        Self::from_weights(weights, self_loops)
    }
}

/// Dense relabeling by first appearance.
fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Component label of every node (dense, by first appearance).
pub fn connected_components(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru.max(rv)] = ru.min(rv);
        }
    }
    let roots: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
    renumber(&roots)
}

/// Two-phase Louvain over `n` nodes. Node visitation order is shuffled per
/// level from `seed`, so results are reproducible.
pub fn louvain_on_edges(n: usize, edges: &[(usize, usize)], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = LevelGraph::from_edges(n, edges);
    loop {
        let (community, moved) = level.local_moves(&mut rng);
        if !moved {
            break;
        }
        for m in membership.iter_mut() {
            *m = community[*m];
        }
        level = level.aggregate(&community);
    }
    let membership = renumber(&membership);
    // A local optimum can in principle sit below zero; the component
    // partition never does.
    if modularity_of_edges(edges, &membership) < 0.0 {
        return connected_components(n, edges);
    }
    membership
}

pub fn louvain_partition(g: &KnowledgeGraph, seed: u64) -> Result<CommunityPartition, GraphError> {
    if g.n_nodes() == 0 {
        return Err(GraphError::EmptyGraph("nodes"));
    }
    let edges = g.edges(true);
    let assignment = louvain_on_edges(g.n_nodes(), &edges, seed);
    let q = modularity_of_edges(&edges, &assignment);
    Ok(CommunityPartition { assignment, q })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub community_id: usize,
    /// Jobs + activities + tools.
    pub size: usize,
    pub n_jobs: usize,
    pub n_activities: usize,
    pub n_tools: usize,
    /// Mean risk of member jobs; `None` for a community without jobs.
    pub mean_rho: Option<f64>,
    /// Internal edges / edges with at least one endpoint inside. A community
    /// without any incident edge has no boundary and scores 1.
    pub q_int: f64,
    pub sample_titles: Vec<String>,
}

pub fn community_summaries(
    g: &KnowledgeGraph,
    partition: &CommunityPartition,
    risk: &RiskIndex,
) -> Vec<CommunitySummary> {
    let k = partition.n_communities();
    let mut out: Vec<CommunitySummary> = (0..k)
        .map(|c| CommunitySummary {
            community_id: c,
            size: 0,
            n_jobs: 0,
            n_activities: 0,
            n_tools: 0,
            mean_rho: None,
            q_int: 1.0,
            sample_titles: Vec::new(),
        })
        .collect();
    let mut rho_sum = vec![(0.0, 0usize); k];
    for node in 0..g.n_nodes() {
        let c = partition.assignment[node];
        let s = &mut out[c];
        s.size += 1;
        match g.node(node) {
            (NodeKind::Job, j) => {
                s.n_jobs += 1;
                if s.sample_titles.len() < 3 {
                    s.sample_titles.push(g.job(j).title.clone());
                }
                if let Some(rho) = risk.rho(&g.job(j).id) {
                    rho_sum[c].0 += rho;
                    rho_sum[c].1 += 1;
                }
            }
            (NodeKind::Activity, _) => s.n_activities += 1,
            (NodeKind::Tool, _) => s.n_tools += 1,
        }
    }
    let mut internal = vec![0usize; k];
    let mut incident = vec![0usize; k];
    for (u, v) in g.edges(true) {
        let (cu, cv) = (partition.assignment[u], partition.assignment[v]);
        incident[cu] += 1;
        if cu == cv {
            internal[cu] += 1;
        } else {
            incident[cv] += 1;
        }
    }
    for (c, s) in out.iter_mut().enumerate() {
        if incident[c] > 0 {
            s.q_int = internal[c] as f64 / incident[c] as f64;
        }
        if rho_sum[c].1 > 0 {
            s.mean_rho = Some(rho_sum[c].0 / rho_sum[c].1 as f64);
        }
    }
    out.sort_by(|a, b| b.size.cmp(&a.size).then(a.community_id.cmp(&b.community_id)));
    out
}
