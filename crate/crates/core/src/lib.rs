//! Labor-market skill graph toolkit.
//!
//! The crate turns a corpus of job postings into a tripartite knowledge graph
//! (jobs PERFORM activities, activities USE tools) and runs the analysis suite
//! over it:
//!
//! * [`corpus`]: ingestion, de-duplication and a seeded synthetic generator.
//! * [`risk`]: task-weighted automation risk and ISCO aggregation.
//! * [`cluster`]: leader-follower entity resolution and its validation statistics.
//! * [`graph`]: graph construction, topology statistics, Louvain communities.
//! * [`metrics`]: bridge-skill ranking (betweenness, connection pairs, importance).
//! * [`transitions`]: dual-threshold transition enumeration and derived tables.
//! * [`query`]: read-only query engine used by the HTTP service.
//! * [`pipeline`] / [`report`]: configuration-driven orchestration and report emission.

pub mod cluster;
pub mod corpus;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod query;
pub mod report;
pub mod risk;
pub mod transitions;

pub use cluster::{ClusterConfig, EmbeddingProvider, EntityKind, SkillCluster, StubProvider};
pub use corpus::{Corpus, Importance, JobPosting, Source, SynthConfig, SyntheticCorpus, Task};
pub use graph::{CommunityPartition, KnowledgeGraph, TopologyStats};
pub use risk::{JobRiskProfile, RiskCategory, RiskIndex};
pub use transitions::{ThresholdConfig, TransitionNetwork, TransitionPathway};
