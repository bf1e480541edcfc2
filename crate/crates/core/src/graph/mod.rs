//! The tripartite knowledge graph: jobs PERFORM activities, activities USE tools.
//!
//! Nodes are addressed two ways: per-kind indices (`job`, `activity`, `tool`)
//! for the bipartite views, and a flat [`NodeId`] space (jobs first, then
//! activities, then tools) for whole-graph algorithms.

mod community;
mod powerlaw;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Resolver, SkillCluster};
use crate::corpus::Corpus;

pub use community::{
    community_summaries, connected_components, louvain_on_edges, louvain_partition, modularity,
    modularity_of_edges, CommunityPartition, CommunitySummary,
};
pub use powerlaw::{fit_power_law, hurwitz_zeta, PowerLawError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("mention `{0}` does not resolve to any cluster")]
    UnresolvedMention(String),
    #[error("graph has no {0}")]
    EmptyGraph(&'static str),
    #[error("duplicate {kind} node `{id}`")]
    DuplicateNode { kind: &'static str, id: String },
    #[error("edge references unknown {kind} `{id}`")]
    UnknownNode { kind: &'static str, id: String },
    #[error("assignment covers {got} of {expected} nodes")]
    PartialAssignment { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Job,
    Activity,
    Tool,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Job => "job",
            NodeKind::Activity => "activity",
            NodeKind::Tool => "tool",
        }
    }
}

/// Index into the flat node space of a [`KnowledgeGraph`].
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobNode {
    pub id: String,
    pub title: String,
    pub isco4: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub label: String,
}

/// Serialized form of a graph: node tables plus edge lists by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphData {
    pub jobs: Vec<JobNode>,
    pub activities: Vec<EntityNode>,
    pub tools: Vec<EntityNode>,
    pub performs: Vec<(String, String)>,
    pub uses: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphData", into = "GraphData")]
pub struct KnowledgeGraph {
    jobs: Vec<JobNode>,
    activities: Vec<EntityNode>,
    tools: Vec<EntityNode>,
    job_activities: Vec<Vec<usize>>,
    activity_jobs: Vec<Vec<usize>>,
    activity_tools: Vec<Vec<usize>>,
    tool_activities: Vec<Vec<usize>>,
    job_index: HashMap<String, usize>,
    activity_index: HashMap<String, usize>,
    tool_index: HashMap<String, usize>,
}

/// Incremental graph construction by node id. Duplicate edges collapse.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    jobs: Vec<JobNode>,
    activities: Vec<EntityNode>,
    tools: Vec<EntityNode>,
    job_index: HashMap<String, usize>,
    activity_index: HashMap<String, usize>,
    tool_index: HashMap<String, usize>,
    performs: BTreeSet<(usize, usize)>,
    uses: BTreeSet<(usize, usize)>,
}

fn insert_node<T>(
    nodes: &mut Vec<T>,
    index: &mut HashMap<String, usize>,
    kind: &'static str,
    id: &str,
    node: T,
) -> Result<usize, GraphError> {
    if index.contains_key(id) {
        return Err(GraphError::DuplicateNode {
            kind,
            id: id.to_string(),
        });
    }
    index.insert(id.to_string(), nodes.len());
    nodes.push(node);
    Ok(nodes.len() - 1)
}

fn lookup(index: &HashMap<String, usize>, kind: &'static str, id: &str) -> Result<usize, GraphError> {
    index.get(id).copied().ok_or_else(|| GraphError::UnknownNode {
        kind,
        id: id.to_string(),
    })
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn job(&mut self, id: &str, title: &str, isco4: &str) -> Result<&mut Self, GraphError> {
        let node = JobNode {
            id: id.into(),
            title: title.into(),
            isco4: isco4.into(),
        };
        insert_node(&mut self.jobs, &mut self.job_index, "job", id, node)?;
        Ok(self)
    }

    pub fn activity(&mut self, id: &str, label: &str) -> Result<&mut Self, GraphError> {
        let node = EntityNode {
            id: id.into(),
            label: label.into(),
        };
        insert_node(&mut self.activities, &mut self.activity_index, "activity", id, node)?;
        Ok(self)
    }

    pub fn tool(&mut self, id: &str, label: &str) -> Result<&mut Self, GraphError> {
        let node = EntityNode {
            id: id.into(),
            label: label.into(),
        };
        insert_node(&mut self.tools, &mut self.tool_index, "tool", id, node)?;
        Ok(self)
    }

    pub fn performs(&mut self, job: &str, activity: &str) -> Result<&mut Self, GraphError> {
        let j = lookup(&self.job_index, "job", job)?;
        let a = lookup(&self.activity_index, "activity", activity)?;
        self.performs.insert((j, a));
        Ok(self)
    }

    pub fn uses(&mut self, activity: &str, tool: &str) -> Result<&mut Self, GraphError> {
        let a = lookup(&self.activity_index, "activity", activity)?;
        let t = lookup(&self.tool_index, "tool", tool)?;
        self.uses.insert((a, t));
        Ok(self)
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut job_activities = vec![Vec::new(); self.jobs.len()];
        let mut activity_jobs = vec![Vec::new(); self.activities.len()];
        for &(j, a) in &self.performs {
            job_activities[j].push(a);
            activity_jobs[a].push(j);
        }
        let mut activity_tools = vec![Vec::new(); self.activities.len()];
        let mut tool_activities = vec![Vec::new(); self.tools.len()];
        for &(a, t) in &self.uses {
            activity_tools[a].push(t);
            tool_activities[t].push(a);
        }
        for list in activity_jobs.iter_mut().chain(tool_activities.iter_mut()) {
            list.sort_unstable();
        }
        KnowledgeGraph {
            jobs: self.jobs,
            activities: self.activities,
            tools: self.tools,
            job_activities,
            activity_jobs,
            activity_tools,
            tool_activities,
            job_index: self.job_index,
            activity_index: self.activity_index,
            tool_index: self.tool_index,
        }
    }
}

/// One job node per posting, one activity/tool node per cluster. A PERFORMS
/// edge links each job to its resolved activities; a USES edge links every
/// resolved activity of a posting to every resolved tool of the same posting.
pub fn build_graph(
    corpus: &Corpus,
    activity_clusters: &[SkillCluster],
    tool_clusters: &[SkillCluster],
) -> Result<KnowledgeGraph, GraphError> {
    let mut b = GraphBuilder::new();
    for c in activity_clusters {
        b.activity(&c.canonical_id, &c.representative)?;
    }
    for c in tool_clusters {
        b.tool(&c.canonical_id, &c.representative)?;
    }
    let activities = Resolver::new(activity_clusters);
    let tools = Resolver::new(tool_clusters);
    for posting in &corpus.postings {
        b.job(&posting.id, &posting.title, &posting.isco4)?;
        let resolve = |resolver: &Resolver, form: &String| {
            resolver
                .resolve(form)
                .map(str::to_string)
                .ok_or_else(|| GraphError::UnresolvedMention(form.clone()))
        };
        let acts = posting
            .activities
            .iter()
            .map(|f| resolve(&activities, f))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let tls = posting
            .tools
            .iter()
            .map(|f| resolve(&tools, f))
            .collect::<Result<BTreeSet<_>, _>>()?;
        for a in &acts {
            b.performs(&posting.id, a)?;
            for t in &tls {
                b.uses(a, t)?;
            }
        }
    }
    Ok(b.build())
}

impl KnowledgeGraph {
    pub fn n_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn n_activities(&self) -> usize {
        self.activities.len()
    }

    pub fn n_tools(&self) -> usize {
        self.tools.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.jobs.len() + self.activities.len() + self.tools.len()
    }

    pub fn n_performs(&self) -> usize {
        self.job_activities.iter().map(Vec::len).sum()
    }

    pub fn n_uses(&self) -> usize {
        self.activity_tools.iter().map(Vec::len).sum()
    }

    pub fn jobs(&self) -> &[JobNode] {
        &self.jobs
    }

    pub fn activities(&self) -> &[EntityNode] {
        &self.activities
    }

    pub fn tools(&self) -> &[EntityNode] {
        &self.tools
    }

    pub fn job(&self, idx: usize) -> &JobNode {
        &self.jobs[idx]
    }

    pub fn activity(&self, idx: usize) -> &EntityNode {
        &self.activities[idx]
    }

    pub fn tool(&self, idx: usize) -> &EntityNode {
        &self.tools[idx]
    }

    pub fn job_idx(&self, id: &str) -> Option<usize> {
        self.job_index.get(id).copied()
    }

    pub fn activity_idx(&self, id: &str) -> Option<usize> {
        self.activity_index.get(id).copied()
    }

    pub fn tool_idx(&self, id: &str) -> Option<usize> {
        self.tool_index.get(id).copied()
    }

    /// N(j): sorted activity indices performed by job `j`.
    pub fn neighborhood(&self, job: usize) -> &[usize] {
        &self.job_activities[job]
    }

    /// Sorted job indices performing activity `a`.
    pub fn activity_jobs(&self, activity: usize) -> &[usize] {
        &self.activity_jobs[activity]
    }

    pub fn activity_tools(&self, activity: usize) -> &[usize] {
        &self.activity_tools[activity]
    }

    /// Tools reachable from a set of activities through USES edges.
    pub fn tools_of(&self, activities: &[usize]) -> BTreeSet<usize> {
        activities
            .iter()
            .flat_map(|&a| self.activity_tools[a].iter().copied())
            .collect()
    }

    pub fn job_node(&self, job: usize) -> NodeId {
        job
    }

    pub fn activity_node(&self, activity: usize) -> NodeId {
        self.jobs.len() + activity
    }

    pub fn tool_node(&self, tool: usize) -> NodeId {
        self.jobs.len() + self.activities.len() + tool
    }

    /// Kind and per-kind index of a flat node id.
    pub fn node(&self, id: NodeId) -> (NodeKind, usize) {
        let nj = self.jobs.len();
        let na = self.activities.len();
        if id < nj {
            (NodeKind::Job, id)
        } else if id < nj + na {
            (NodeKind::Activity, id - nj)
        } else {
            (NodeKind::Tool, id - nj - na)
        }
    }

    pub fn node_id_str(&self, id: NodeId) -> &str {
        match self.node(id) {
            (NodeKind::Job, i) => &self.jobs[i].id,
            (NodeKind::Activity, i) => &self.activities[i].id,
            (NodeKind::Tool, i) => &self.tools[i].id,
        }
    }

    pub fn node_label(&self, id: NodeId) -> &str {
        match self.node(id) {
            (NodeKind::Job, i) => &self.jobs[i].title,
            (NodeKind::Activity, i) => &self.activities[i].label,
            (NodeKind::Tool, i) => &self.tools[i].label,
        }
    }

    /// Undirected edges in the flat node space: PERFORMS edges, then USES
    /// edges when `include_uses` is set.
    pub fn edges(&self, include_uses: bool) -> Vec<(NodeId, NodeId)> {
        let mut edges: Vec<(NodeId, NodeId)> = self
            .job_activities
            .iter()
            .enumerate()
            .flat_map(|(j, acts)| acts.iter().map(move |&a| (j, a)))
            .map(|(j, a)| (self.job_node(j), self.activity_node(a)))
            .collect();
        if include_uses {
            edges.extend(
                self.activity_tools
                    .iter()
                    .enumerate()
                    .flat_map(|(a, ts)| ts.iter().map(move |&t| (a, t)))
                    .map(|(a, t)| (self.activity_node(a), self.tool_node(t))),
            );
        }
        edges
    }

    /// Adjacency lists over the flat node space.
    pub fn adjacency(&self, include_uses: bool) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for (u, v) in self.edges(include_uses) {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn to_data(&self) -> GraphData {
        GraphData {
            jobs: self.jobs.clone(),
            activities: self.activities.clone(),
            tools: self.tools.clone(),
            performs: self
                .job_activities
                .iter()
                .enumerate()
                .flat_map(|(j, acts)| {
                    acts.iter()
                        .map(move |&a| (self.jobs[j].id.clone(), self.activities[a].id.clone()))
                })
                .collect(),
            uses: self
                .activity_tools
                .iter()
                .enumerate()
                .flat_map(|(a, ts)| {
                    ts.iter()
                        .map(move |&t| (self.activities[a].id.clone(), self.tools[t].id.clone()))
                })
                .collect(),
        }
    }
}

impl TryFrom<GraphData> for KnowledgeGraph {
    type Error = GraphError;

    fn try_from(data: GraphData) -> Result<Self, Self::Error> {
        let mut b = GraphBuilder::new();
        for j in &data.jobs {
            b.job(&j.id, &j.title, &j.isco4)?;
        }
        for a in &data.activities {
            b.activity(&a.id, &a.label)?;
        }
        for t in &data.tools {
            b.tool(&t.id, &t.label)?;
        }
        for (j, a) in &data.performs {
            b.performs(j, a)?;
        }
        for (a, t) in &data.uses {
            b.uses(a, t)?;
        }
        Ok(b.build())
    }
}

impl From<KnowledgeGraph> for GraphData {
    fn from(g: KnowledgeGraph) -> Self {
        g.to_data()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyStats {
    pub n_jobs: usize,
    pub n_activities: usize,
    pub n_tools: usize,
    /// Job-activity (PERFORMS) edges.
    pub n_edges: usize,
    pub n_uses_edges: usize,
    pub bipartite_density: f64,
    pub mean_degree: f64,
    /// Largest job degree.
    pub max_degree: usize,
    /// Discrete power-law exponent of the job and activity degree multiset;
    /// `None` when the fit is not possible.
    pub gamma: Option<f64>,
}

/// Average PERFORMS degree of a job.
pub fn mean_degree(n_performs: usize, n_jobs: usize) -> f64 {
    n_performs as f64 / n_jobs as f64
}

/// Share of possible job-activity pairs that are PERFORMS edges.
pub fn bipartite_density(n_performs: usize, n_jobs: usize, n_activities: usize) -> f64 {
    n_performs as f64 / (n_jobs as f64 * n_activities as f64)
}

pub fn topology_stats(g: &KnowledgeGraph) -> Result<TopologyStats, GraphError> {
    if g.n_jobs() == 0 {
        return Err(GraphError::EmptyGraph("jobs"));
    }
    if g.n_activities() == 0 {
        return Err(GraphError::EmptyGraph("activities"));
    }
    let n_edges = g.n_performs();
    let degrees: Vec<u64> = g
        .job_activities
        .iter()
        .chain(g.activity_jobs.iter())
        .map(|n| n.len() as u64)
        .filter(|d| *d > 0)
        .collect();
    Ok(TopologyStats {
        n_jobs: g.n_jobs(),
        n_activities: g.n_activities(),
        n_tools: g.n_tools(),
        n_edges,
        n_uses_edges: g.n_uses(),
        bipartite_density: bipartite_density(n_edges, g.n_jobs(), g.n_activities()),
        mean_degree: mean_degree(n_edges, g.n_jobs()),
        max_degree: g.job_activities.iter().map(Vec::len).max().unwrap_or(0),
        gamma: fit_power_law(&degrees, 1).ok(),
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Builds a graph from `(job, [activities])` rows; every job gets ISCO 1111.
    pub fn bipartite(rows: &[(&str, &[&str])]) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let mut acts = BTreeSet::new();
        for (_, a) in rows {
            acts.extend(a.iter().copied());
        }
        for a in &acts {
            b.activity(a, a).unwrap();
        }
        for (j, a) in rows {
            b.job(j, j, "1111").unwrap();
            for x in a.iter() {
                b.performs(j, x).unwrap();
            }
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::EntityKind;
    use crate::corpus::{Importance, JobPosting, Provenance, Source, Task};

    fn posting(id: &str, activities: &[&str], tools: &[&str]) -> JobPosting {
        JobPosting {
            id: id.into(),
            title: format!("title {id}"),
            employer: "e".into(),
            source: Source::Synthetic,
            isco4: "2411".into(),
            tasks: vec![Task::new("t", Importance::Primary, true)],
            activities: activities.iter().map(|s| s.to_string()).collect(),
            tools: tools.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn cluster(id: &str, kind: EntityKind, members: &[&str]) -> SkillCluster {
        SkillCluster {
            canonical_id: id.into(),
            kind,
            representative: members[0].into(),
            members: members.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn corpus(postings: Vec<JobPosting>) -> Corpus {
        Corpus {
            postings,
            provenance: Provenance::Loaded,
            seed: None,
        }
    }

    #[test]
    fn synonyms_resolve_to_one_activity() {
        let c = corpus(vec![posting("J1", &["Excel"], &[]), posting("J2", &["MS Excel"], &[])]);
        let acts = [cluster("A1", EntityKind::Activity, &["Excel", "MS Excel"])];
        let g = build_graph(&c, &acts, &[]).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_performs(), 2);
        assert_eq!(g.activity_jobs(0), &[0, 1]);
    }

    #[test]
    fn co_mentioned_tool_gets_uses_edge() {
        let c = corpus(vec![
            posting("J1", &["Budgeting"], &["Excel"]),
            posting("J2", &["Auditing"], &[]),
        ]);
        let acts = [
            cluster("A1", EntityKind::Activity, &["Budgeting"]),
            cluster("A2", EntityKind::Activity, &["Auditing"]),
        ];
        let tools = [cluster("T1", EntityKind::Tool, &["Excel"])];
        let g = build_graph(&c, &acts, &tools).unwrap();
        let data = g.to_data();
        assert_eq!(data.uses, vec![("A1".to_string(), "T1".to_string())]);
        assert_eq!(g.tools_of(g.neighborhood(0)), BTreeSet::from([0]));
        assert!(g.tools_of(g.neighborhood(1)).is_empty());
    }

    #[test]
    fn repeated_mentions_collapse() {
        let c = corpus(vec![posting("J1", &["Excel", "MS Excel", "Excel"], &[])]);
        let acts = [cluster("A1", EntityKind::Activity, &["Excel", "MS Excel"])];
        let g = build_graph(&c, &acts, &[]).unwrap();
        assert_eq!(g.n_performs(), 1);
    }

    #[test]
    fn unresolved_mention_is_an_error() {
        let c = corpus(vec![posting("J1", &["Excel"], &["SAP"])]);
        let acts = [cluster("A1", EntityKind::Activity, &["Excel"])];
        assert_eq!(
            build_graph(&c, &acts, &[]).unwrap_err(),
            GraphError::UnresolvedMention("SAP".into())
        );
    }

    #[test]
    fn serde_round_trip_rebuilds_indices() {
        let c = corpus(vec![posting("J1", &["a", "b"], &["t"]), posting("J2", &["b"], &[])]);
        let acts = [
            cluster("A1", EntityKind::Activity, &["a"]),
            cluster("A2", EntityKind::Activity, &["b"]),
        ];
        let tools = [cluster("T1", EntityKind::Tool, &["t"])];
        let g = build_graph(&c, &acts, &tools).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: KnowledgeGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.job_idx("J2"), Some(1));
    }

    #[test]
    fn reference_topology_arithmetic() {
        assert_eq!(format!("{:.2}", mean_degree(84_346, 9_978)), "8.45");
        assert_eq!(format!("{:.5}", bipartite_density(84_346, 9_978, 19_766)), "0.00043");
    }

    #[test]
    fn single_edge_topology() {
        let g = fixtures::bipartite(&[("J1", &["a"])]);
        let stats = topology_stats(&g).unwrap();
        assert_eq!(stats.mean_degree, 1.0);
        assert_eq!(stats.bipartite_density, 1.0);
        assert_eq!(stats.max_degree, 1);
        assert_eq!(stats.gamma, None);
    }

    #[test]
    fn empty_graph_topology_fails() {
        let g = GraphBuilder::new().build();
        assert_eq!(topology_stats(&g), Err(GraphError::EmptyGraph("jobs")));
    }

    #[test]
    fn neighborhoods_sum_to_edge_count() {
        let g = fixtures::bipartite(&[("J1", &["a", "b"]), ("J2", &["b", "c", "d"]), ("J3", &[])]);
        let total: usize = (0..g.n_jobs()).map(|j| g.neighborhood(j).len()).sum();
        assert_eq!(total, g.n_performs());
        assert_eq!(total, 5);
    }
}
