//! Configuration-driven orchestration: ingest, cluster, build the graph, run
//! every analysis and emit the report bundle with a digest manifest.
//!
//! Stages cache their outputs under `<out_dir>/artifacts/`, keyed by a
//! fingerprint of the effective configuration, so a stage subcommand reuses
//! upstream work only when it was produced by the same configuration.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{
    collect_forms, judge_against_truth, labeled_pairs_from_truth, leader_follower, parse_labeled_pairs,
    stratified_validation_sample, theta_sensitivity_grid, validation_report, ClusterConfig, ClusterError,
    EmbeddingProvider, EntityKind, PrecomputedProvider, SizeBand, SkillCluster, Stratum, StubProvider,
    ThetaRow, Tier, ValidationReport, ValidationSample, DEFAULT_THETA,
};
use crate::cluster::validation::{DEFAULT_VALIDATION_SEED, Z_95};
use crate::corpus::{
    deduplicate, generate_synthetic_corpus, load_postings, Corpus, CorpusError, SynthConfig, SyntheticTruth,
    DEFAULT_TITLE_THRESHOLD,
};
use crate::graph::{
    build_graph, community_summaries, louvain_partition, topology_stats, CommunityPartition, GraphError,
    KnowledgeGraph,
};
use crate::metrics::{bridge_skill_metrics, importance_table, rank_bridge_skills, rank_by_importance, MetricsError};
use crate::query::{Artifact, ArtifactMeta};
use crate::report::{self, Format, Table};
use crate::risk::{aggregate_by_isco, heterogeneity_table, RiskError, RiskIndex};
use crate::transitions::{
    decompose_transition, enumerate_transition_network, gap_skill_frequencies, rank_safe_harbors, table14_grid,
    threshold_sensitivity_grid, transition_network_stats, ThresholdConfig, TransitionError, TransitionNetwork,
};

/// Prefix of environment variables that override configuration values.
pub const ENV_PREFIX: &str = "SKILLGRAPH_";

pub const ARTIFACT_DIR: &str = "artifacts";
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// Process exit status: 1 for configuration errors, 2 for data and i/o errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io { .. } => 2,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::BadConfig(m) => PipelineError::Config(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::BadTheta(_) | ClusterError::BadGrid { .. } | ClusterError::BadZ(_) => {
                PipelineError::Config(e.to_string())
            }
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<TransitionError> for PipelineError {
    fn from(e: TransitionError) -> Self {
        match e {
            TransitionError::BadThreshold(m) => PipelineError::Config(m),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(GraphError, MetricsError, RiskError);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdEntry {
    pub tau: usize,
    #[serde(default)]
    pub phi: Option<f64>,
}

impl ThresholdEntry {
    pub fn config(&self) -> Result<ThresholdConfig, PipelineError> {
        Ok(ThresholdConfig::new(self.tau, self.phi)?)
    }
}

/// Synthetic corpus parameters; omitted fields take generator defaults and
/// the seed defaults to the top-level seed. Map keys are ISCO major digits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: Option<u64>,
    pub n_jobs: Option<usize>,
    pub isco_mix: Option<BTreeMap<String, f64>>,
    pub canonical_activities: Option<usize>,
    pub canonical_tools: Option<usize>,
    pub variants_min: Option<usize>,
    pub variants_max: Option<usize>,
    pub automatable_bias: Option<BTreeMap<String, f64>>,
}

fn digit_map(name: &str, m: &BTreeMap<String, f64>) -> Result<BTreeMap<u8, f64>, PipelineError> {
    m.iter()
        .map(|(k, v)| {
            k.parse::<u8>()
                .ok()
                .filter(|d| *d <= 9)
                .map(|d| (d, *v))
                .ok_or_else(|| PipelineError::Config(format!("{name}: key `{k}` is not an ISCO major digit")))
        })
        .collect()
}

impl SyntheticSection {
    pub fn synth_config(&self, default_seed: u64) -> Result<SynthConfig, PipelineError> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            seed: self.seed.unwrap_or(default_seed),
            n_jobs: self.n_jobs.unwrap_or(d.n_jobs),
            isco_mix: match &self.isco_mix {
                Some(m) => digit_map("isco_mix", m)?,
                None => d.isco_mix,
            },
            canonical_activities: self.canonical_activities.unwrap_or(d.canonical_activities),
            canonical_tools: self.canonical_tools.unwrap_or(d.canonical_tools),
            synonym_variants_per_canonical: (
                self.variants_min.unwrap_or(d.synonym_variants_per_canonical.0),
                self.variants_max.unwrap_or(d.synonym_variants_per_canonical.1),
            ),
            automatable_bias: match &self.automatable_bias {
                Some(m) => digit_map("automatable_bias", m)?,
                None => d.automatable_bias,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exactly one of `path` and `synthetic`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGridSection {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Labeled pairs drawn from ground truth when no pair file is given.
    pub n_pairs: usize,
}

impl Default for ThetaGridSection {
    fn default() -> Self {
        Self {
            lo: 0.80,
            hi: 0.95,
            step: 0.01,
            n_pairs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub seed: u64,
    pub z: f64,
    /// Requested sample size per `kind` -> size band label (`2`, `3-5`, `6-10`, `11+`).
    pub sizes: BTreeMap<String, BTreeMap<String, usize>>,
    /// Judgment file (`canonical_id<TAB>CORRECT|MINOR|MAJOR`); synthetic
    /// corpora are judged against ground truth when absent.
    pub judgments: Option<PathBuf>,
}

impl Default for ValidationSection {
    fn default() -> Self {
        let sizes = |v: [usize; 4]| -> BTreeMap<String, usize> {
            SizeBand::ALL.iter().zip(v).map(|(b, n)| (b.label().to_string(), n)).collect()
        };
        Self {
            seed: DEFAULT_VALIDATION_SEED,
            z: Z_95,
            sizes: BTreeMap::from([
                ("activity".to_string(), sizes([381, 131, 49, 4])),
                ("tool".to_string(), sizes([420, 97, 3, 0])),
            ]),
            judgments: None,
        }
    }
}

impl ValidationSection {
    pub fn requested(&self) -> Result<BTreeMap<Stratum, usize>, PipelineError> {
        let mut out = BTreeMap::new();
        for (kind, bands) in &self.sizes {
            let kind = match kind.as_str() {
                "activity" => EntityKind::Activity,
                "tool" => EntityKind::Tool,
                other => return Err(PipelineError::Config(format!("validation.sizes: unknown kind `{other}`"))),
            };
            for (label, n) in bands {
                let band = SizeBand::ALL
                    .into_iter()
                    .find(|b| b.label() == label)
                    .ok_or_else(|| PipelineError::Config(format!("validation.sizes: unknown band `{label}`")))?;
                out.insert(Stratum::new(kind, band), *n);
            }
        }
        Ok(out)
    }
}

fn default_seed() -> u64 {
    7
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_levels() -> Vec<usize> {
    vec![1, 2]
}
fn default_min_n() -> usize {
    50
}
fn default_thresholds() -> Vec<ThresholdEntry> {
    [(3, None), (3, Some(0.30)), (4, Some(0.30)), (3, Some(0.50)), (5, Some(0.50))]
        .into_iter()
        .map(|(tau, phi)| ThresholdEntry { tau, phi })
        .collect()
}
fn default_transition() -> ThresholdEntry {
    ThresholdEntry { tau: 3, phi: Some(0.5) }
}
fn default_dedup() -> Option<f64> {
    Some(DEFAULT_TITLE_THRESHOLD)
}
fn default_heterogeneity() -> Vec<String> {
    ["331", "241", "216", "333"].map(String::from).to_vec()
}
fn default_top_n() -> usize {
    10
}
fn default_exemplars() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_levels")]
    pub isco_levels: Vec<usize>,
    #[serde(default = "default_min_n")]
    pub min_n: usize,
    /// Title Jaccard threshold for de-duplication; `None` disables it.
    #[serde(default = "default_dedup")]
    pub dedup_threshold: Option<f64>,
    /// Configuration for the transition network tables.
    #[serde(default = "default_transition")]
    pub transition: ThresholdEntry,
    /// Rows of the threshold sensitivity table.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<ThresholdEntry>,
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity_codes: Vec<String>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_exemplars")]
    pub exemplars: usize,
    /// Labeled pair file for the theta grid.
    #[serde(default)]
    pub labeled_pairs: Option<PathBuf>,
    /// Precomputed embeddings (`{"text", "vector"}` lines); the deterministic
    /// stub provider is used when absent.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub theta_grid: ThetaGridSection,
    #[serde(default)]
    pub validation: ValidationSection,
    pub corpus: CorpusSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.corpus.path.as_mut(),
            self.labeled_pairs.as_mut(),
            self.embeddings.as_mut(),
            self.validation.judgments.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Applies `SKILLGRAPH_SEED`, `SKILLGRAPH_OUT`, `SKILLGRAPH_THETA`,
    /// `SKILLGRAPH_CORPUS` and `SKILLGRAPH_N_JOBS` from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), PipelineError> {
        let bad = |k: &str, v: &str| PipelineError::Config(format!("{k}={v} is not valid"));
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match name {
                "SEED" => self.seed = value.parse().map_err(|_| bad(&key, &value))?,
                "OUT" => self.out_dir = PathBuf::from(&value),
                "THETA" => self.theta = value.parse().map_err(|_| bad(&key, &value))?,
                "CORPUS" => {
                    self.corpus = CorpusSection {
                        path: Some(PathBuf::from(&value)),
                        synthetic: None,
                    }
                }
                "N_JOBS" => {
                    let n = value.parse().map_err(|_| bad(&key, &value))?;
                    self.corpus.synthetic.get_or_insert_with(Default::default).n_jobs = Some(n);
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        ClusterConfig::new(self.theta)?;
        match (&self.corpus.path, &self.corpus.synthetic) {
            (Some(_), None) => {}
            (None, Some(s)) => {
                s.synth_config(self.seed)?;
            }
            _ => {
                return Err(PipelineError::Config(
                    "corpus needs exactly one of `path` and `synthetic`".into(),
                ))
            }
        }
        if let Some(&level) = self.isco_levels.iter().find(|l| !(1..=4).contains(*l)) {
            return Err(PipelineError::Config(format!("ISCO level {level} is outside 1-4")));
        }
        if let Some(t) = self.dedup_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(PipelineError::Config(format!("dedup_threshold {t} is outside [0, 1]")));
            }
        }
        self.transition.config()?;
        if self.thresholds.is_empty() {
            return Err(PipelineError::Config("thresholds list is empty".into()));
        }
        for t in &self.thresholds {
            t.config()?;
        }
        if let Some(code) = self
            .heterogeneity_codes
            .iter()
            .find(|c| c.len() != 3 || !c.bytes().all(|b| b.is_ascii_digit()))
        {
            return Err(PipelineError::Config(format!("`{code}` is not a 3-digit ISCO code")));
        }
        crate::cluster::threshold_grid(self.theta_grid.lo, self.theta_grid.hi, self.theta_grid.step)?;
        if !(self.validation.z > 0.0) {
            return Err(PipelineError::Config("validation.z must be positive".into()));
        }
        self.validation.requested()?;
        Ok(())
    }

    /// SHA-256 of every setting that affects results (the output directory
    /// does not).
    pub fn fingerprint(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub corpus: Corpus,
    pub truth: Option<SyntheticTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustered {
    pub activities: Vec<SkillCluster>,
    pub tools: Vec<SkillCluster>,
}

impl Clustered {
    pub fn all(&self) -> impl Iterator<Item = &SkillCluster> {
        self.activities.iter().chain(&self.tools)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Built {
    pub graph: KnowledgeGraph,
    pub partition: CommunityPartition,
    pub risk: RiskIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_fingerprint: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, value).map_err(|e| PipelineError::io(path, e))?;
    out.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
    out.flush().map_err(|e| PipelineError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// Parses `canonical_id<TAB>CORRECT|MINOR|MAJOR` lines.
pub fn parse_judgments(text: &str) -> Result<BTreeMap<String, Tier>, PipelineError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || PipelineError::Data(format!("judgment line {}: expected `id<TAB>TIER`", i + 1));
        let (id, tier) = line.split_once('\t').ok_or_else(bad)?;
        let tier = match tier.trim() {
            "CORRECT" => Tier::Correct,
            "MINOR" => Tier::Minor,
            "MAJOR" => Tier::Major,
            _ => return Err(bad()),
        };
        out.insert(id.to_string(), tier);
    }
    Ok(out)
}

/// Outputs of the transition stage.
pub struct TransitionOutputs {
    pub network: TransitionNetwork,
    pub tables: Vec<Table>,
    pub safe_harbors: Vec<crate::transitions::SafeHarborEntry>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    format: Format,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, format: Format) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg, format })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn artifact_dir(&self) -> PathBuf {
        self.cfg.out_dir.join(ARTIFACT_DIR)
    }

    fn ensure_dirs(&self) -> Result<(), PipelineError> {
        let dir = self.artifact_dir();
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))
    }

    fn cache_path(&self, name: &str) -> PathBuf {
        self.artifact_dir().join(name)
    }

    /// Whether the cached artifacts were produced by this configuration.
    fn cache_valid(&self) -> bool {
        fs::read_to_string(self.cache_path("fingerprint"))
            .map(|f| f.trim() == self.cfg.fingerprint())
            .unwrap_or(false)
    }

    fn cached<T: DeserializeOwned>(&self, name: &str) -> Option<T> {
        let path = self.cache_path(name);
        (self.cache_valid() && path.exists())
            .then(|| read_json(&path).ok())
            .flatten()
    }

    fn store<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        self.ensure_dirs()?;
        if !self.cache_valid() {
            // A new configuration invalidates every upstream artifact.
            for stale in ["ingest.json", "clusters.json", "graph.json", "partition.json"] {
                let _ = fs::remove_file(self.cache_path(stale));
            }
            let fp = self.cache_path("fingerprint");
            fs::write(&fp, format!("{}\n", self.cfg.fingerprint())).map_err(|e| PipelineError::io(&fp, e))?;
        }
        write_json(&self.cache_path(name), value)
    }

    pub fn ingest(&self) -> Result<Ingested, PipelineError> {
        let ingested = match (&self.cfg.corpus.path, &self.cfg.corpus.synthetic) {
            (Some(path), _) => Ingested {
                corpus: load_postings(path)?,
                truth: None,
            },
            (None, Some(s)) => {
                let synth = generate_synthetic_corpus(&s.synth_config(self.cfg.seed)?)?;
                Ingested {
                    corpus: synth.corpus,
                    truth: Some(synth.truth),
                }
            }
            (None, None) => unreachable!("validated"),
        };
        let corpus = match self.cfg.dedup_threshold {
            Some(t) => deduplicate(&ingested.corpus, t),
            None => ingested.corpus,
        };
        let out = Ingested {
            corpus,
            truth: ingested.truth,
        };
        self.store("ingest.json", &out)?;
        let jsonl = self.cache_path("corpus.jsonl");
        let file = File::create(&jsonl).map_err(|e| PipelineError::io(&jsonl, e))?;
        out.corpus
            .write_jsonl(BufWriter::new(file))
            .map_err(|e| PipelineError::io(&jsonl, e))?;
        Ok(out)
    }

    pub fn ingested(&self) -> Result<Ingested, PipelineError> {
        match self.cached("ingest.json") {
            Some(x) => Ok(x),
            None => self.ingest(),
        }
    }

    fn provider(&self, truth: Option<&SyntheticTruth>) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        if let Some(path) = &self.cfg.embeddings {
            let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
            let p = PrecomputedProvider::from_reader(BufReader::new(file)).map_err(|e| PipelineError::Data(e.to_string()))?;
            return Ok(Box::new(p));
        }
        Ok(Box::new(match truth {
            Some(t) => StubProvider::new(t.canonical_keys()),
            None => StubProvider::without_truth(),
        }))
    }

    fn forms(corpus: &Corpus) -> (Vec<String>, Vec<String>) {
        (
            collect_forms(corpus.postings.iter().flat_map(|p| &p.activities)),
            collect_forms(corpus.postings.iter().flat_map(|p| &p.tools)),
        )
    }

    pub fn cluster(&self, ing: &Ingested) -> Result<Clustered, PipelineError> {
        let provider = self.provider(ing.truth.as_ref())?;
        let cfg = ClusterConfig::new(self.cfg.theta)?;
        let (acts, tools) = Self::forms(&ing.corpus);
        let run = |forms: &[String], kind| -> Result<Vec<SkillCluster>, PipelineError> {
            if forms.is_empty() {
                return Ok(Vec::new());
            }
            Ok(leader_follower(forms, provider.as_ref(), kind, &cfg)?)
        };
        let out = Clustered {
            activities: run(&acts, EntityKind::Activity)?,
            tools: run(&tools, EntityKind::Tool)?,
        };
        self.store("clusters.json", &out)?;
        Ok(out)
    }

    pub fn clustered(&self, ing: &Ingested) -> Result<Clustered, PipelineError> {
        match self.cached("clusters.json") {
            Some(x) => Ok(x),
            None => self.cluster(ing),
        }
    }

    pub fn build(&self, ing: &Ingested, cl: &Clustered) -> Result<Built, PipelineError> {
        let graph = build_graph(&ing.corpus, &cl.activities, &cl.tools)?;
        let partition = louvain_partition(&graph, self.cfg.seed)?;
        self.store("graph.json", &graph)?;
        self.store("partition.json", &partition)?;
        Ok(Built {
            risk: RiskIndex::from_corpus(&ing.corpus)?,
            graph,
            partition,
        })
    }

    pub fn built(&self, ing: &Ingested, cl: &Clustered) -> Result<Built, PipelineError> {
        match (self.cached("graph.json"), self.cached("partition.json")) {
            (Some(graph), Some(partition)) => Ok(Built {
                graph,
                partition,
                risk: RiskIndex::from_corpus(&ing.corpus)?,
            }),
            _ => self.build(ing, cl),
        }
    }

    /// Upstream stages, from cache where valid.
    pub fn prepare(&self) -> Result<(Ingested, Clustered, Built), PipelineError> {
        let ing = self.ingested()?;
        let cl = self.clustered(&ing)?;
        let built = self.built(&ing, &cl)?;
        Ok((ing, cl, built))
    }

    pub fn graph_tables(&self, b: &Built) -> Result<Vec<Table>, PipelineError> {
        Ok(vec![
            report::topology_table(&topology_stats(&b.graph)?, &b.partition),
            report::nodes_table(&b.graph),
            report::edges_table(&b.graph),
        ])
    }

    pub fn analysis_tables(&self, ing: &Ingested, b: &Built) -> Result<Vec<Table>, PipelineError> {
        let mut tables = Vec::new();
        for &level in &self.cfg.isco_levels {
            tables.push(report::risk_table(&aggregate_by_isco(&b.risk, &ing.corpus, level, self.cfg.min_n)?));
        }
        tables.push(report::heterogeneity_report(&heterogeneity_table(
            &b.risk,
            &ing.corpus,
            &self.cfg.heterogeneity_codes,
        )));
        let mut communities = community_summaries(&b.graph, &b.partition, &b.risk);
        communities.truncate(self.cfg.top_n);
        tables.push(report::communities_table(&communities));
        let bridge = rank_bridge_skills(bridge_skill_metrics(&b.graph, &b.partition, &b.risk)?, self.cfg.top_n);
        tables.push(report::bridge_table(&bridge));
        let importance = rank_by_importance(importance_table(&b.graph, &b.risk)?, self.cfg.top_n);
        tables.push(report::importance_report(&importance));
        Ok(tables)
    }

    pub fn transition_outputs(&self, b: &Built) -> Result<TransitionOutputs, PipelineError> {
        let cfg = self.cfg.transition.config()?;
        let network = enumerate_transition_network(&b.graph, &b.risk, &cfg)?;
        let stats = transition_network_stats(&network);
        let safe_harbors = rank_safe_harbors(&b.graph, &b.risk, &network, usize::MAX)?;
        let gaps = gap_skill_frequencies(&b.graph, &network, self.cfg.top_n);

        // Exemplars: largest risk drops, one per source.
        let mut order: Vec<&crate::transitions::TransitionPathway> = network.pathways.iter().collect();
        order.sort_by(|a, c| {
            a.delta_rho
                .total_cmp(&c.delta_rho)
                .then_with(|| (&a.source, &a.target).cmp(&(&c.source, &c.target)))
        });
        let mut seen = std::collections::BTreeSet::new();
        let exemplars: Vec<_> = order
            .into_iter()
            .filter(|p| seen.insert(p.source.as_str()))
            .take(self.cfg.exemplars)
            .collect();
        let rho = |id: &str| b.risk.rho(id).unwrap_or(f64::NAN);
        let rows: Vec<(&str, &str, f64, f64, f64, f64)> = exemplars
            .iter()
            .map(|p| (p.source.as_str(), p.target.as_str(), rho(&p.source), rho(&p.target), p.delta_rho, p.jaccard))
            .collect();
        let decomps = exemplars
            .iter()
            .map(|p| decompose_transition(&b.graph, &p.source, &p.target))
            .collect::<Result<Vec<_>, _>>()?;

        let top_harbors: Vec<_> = safe_harbors.iter().take(self.cfg.top_n).cloned().collect();
        let tables = vec![
            report::transition_stats_table(&stats),
            report::pathways_table(&network),
            report::safe_harbor_table(&top_harbors),
            report::gap_skill_table(&gaps),
            report::exemplar_table(&b.graph, &rows),
            report::decomposition_table(&decomps),
        ];
        Ok(TransitionOutputs {
            network,
            tables,
            safe_harbors,
        })
    }

    fn labeled_pairs(&self, ing: &Ingested, forms: &[String]) -> Result<Vec<crate::cluster::LabeledPair>, PipelineError> {
        if let Some(path) = &self.cfg.labeled_pairs {
            let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
            return Ok(parse_labeled_pairs(file)?);
        }
        Ok(match &ing.truth {
            Some(t) => labeled_pairs_from_truth(forms, &t.canonical_keys(), self.cfg.theta_grid.n_pairs, self.cfg.seed),
            None => Vec::new(),
        })
    }

    /// Theta grid over the pooled activity and tool forms. Without labeled
    /// pairs the table is emitted with headers only.
    pub fn theta_rows(&self, ing: &Ingested) -> Result<Vec<ThetaRow>, PipelineError> {
        let (acts, tools) = Self::forms(&ing.corpus);
        let forms = collect_forms(acts.iter().chain(&tools));
        let pairs = self.labeled_pairs(ing, &forms)?;
        if pairs.is_empty() || forms.is_empty() {
            return Ok(Vec::new());
        }
        let provider = self.provider(ing.truth.as_ref())?;
        let g = &self.cfg.theta_grid;
        Ok(theta_sensitivity_grid(&forms, provider.as_ref(), &pairs, g.lo, g.hi, g.step)?)
    }

    pub fn sensitivity_tables(&self, ing: &Ingested, b: &Built) -> Result<(Vec<Table>, Vec<crate::transitions::SensitivityRow>), PipelineError> {
        let configs = self
            .cfg
            .thresholds
            .iter()
            .map(ThresholdEntry::config)
            .collect::<Result<Vec<_>, _>>()?;
        let main = threshold_sensitivity_grid(&b.graph, &b.risk, &configs)?;
        let extended = threshold_sensitivity_grid(&b.graph, &b.risk, &table14_grid())?;
        let tables = vec![
            report::theta_table(&self.theta_rows(ing)?),
            report::sensitivity_table("table3_threshold_sensitivity", &main),
            report::sensitivity_table("table14_extended_sensitivity", &extended),
        ];
        Ok((tables, extended))
    }

    pub fn validation(&self, ing: &Ingested, cl: &Clustered) -> Result<(ValidationSample, Option<ValidationReport>), PipelineError> {
        let clusters: Vec<SkillCluster> = cl.all().cloned().collect();
        let v = &self.cfg.validation;
        let sample = stratified_validation_sample(&clusters, &v.requested()?, v.seed);
        let judgments = match (&v.judgments, &ing.truth) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                Some(parse_judgments(&text)?)
            }
            (None, Some(truth)) => Some(judge_against_truth(&clusters, &truth.canonical_keys())),
            (None, None) => None,
        };
        let report = judgments
            .map(|j| validation_report(&sample, &j, v.z))
            .transpose()?;
        Ok((sample, report))
    }

    pub fn validation_tables(&self, ing: &Ingested, cl: &Clustered) -> Result<Vec<Table>, PipelineError> {
        let (sample, report) = self.validation(ing, cl)?;
        let mut plan = Table::new("validation_plan", &["kind", "band", "population", "sample_size"]);
        for s in &sample.plan.strata {
            plan.push(vec![
                report::Cell::text(s.stratum.kind.as_str()),
                report::Cell::text(s.stratum.band.label()),
                report::Cell::int(s.population),
                report::Cell::int(s.sample_size),
            ]);
        }
        let mut tables = vec![plan];
        if let Some(r) = report {
            tables.push(report::validation_summary_table(&r));
            tables.push(report::validation_detail_table(&r));
        }
        Ok(tables)
    }

    pub fn write_tables(&self, tables: &[Table]) -> Result<Vec<String>, PipelineError> {
        let dir = &self.cfg.out_dir;
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        tables
            .iter()
            .map(|t| t.write(dir, self.format).map_err(|e| PipelineError::io(&dir.join(t.file_name(self.format)), e)))
            .collect()
    }

    /// The full run: every stage recomputed, every table written, then the
    /// service artifact and the manifest.
    pub fn run(&self) -> Result<Manifest, PipelineError> {
        let ing = self.ingest()?;
        let cl = self.cluster(&ing)?;
        let built = self.build(&ing, &cl)?;
        let mut tables = self.graph_tables(&built)?;
        tables.extend(self.analysis_tables(&ing, &built)?);
        let tr = self.transition_outputs(&built)?;
        tables.extend(tr.tables);
        let (sens, extended) = self.sensitivity_tables(&ing, &built)?;
        tables.extend(sens);
        tables.extend(self.validation_tables(&ing, &cl)?);
        let mut files = self.write_tables(&tables)?;

        let artifact = Artifact {
            meta: ArtifactMeta {
                seed: ing.corpus.seed,
                n_jobs: built.graph.n_jobs(),
                n_activities: built.graph.n_activities(),
                n_tools: built.graph.n_tools(),
                n_performs: built.graph.n_performs(),
                n_uses: built.graph.n_uses(),
                n_pathways: tr.network.pathways.len(),
                n_communities: built.partition.n_communities(),
                modularity: built.partition.q,
            },
            default_config: tr.network.config,
            bridge_skills: rank_bridge_skills(
                bridge_skill_metrics(&built.graph, &built.partition, &built.risk)?,
                usize::MAX,
            ),
            safe_harbors: tr.safe_harbors,
            sensitivity: extended,
            graph: built.graph,
            risk: built.risk,
        };
        write_json(&self.cfg.out_dir.join(ARTIFACT_FILE), &artifact)?;
        files.push(ARTIFACT_FILE.to_string());
        self.write_manifest(files)
    }

    /// Writes `manifest.json` listing `files` (relative to the output
    /// directory) with their SHA-256 digests, sorted by name.
    pub fn write_manifest(&self, mut files: Vec<String>) -> Result<Manifest, PipelineError> {
        files.sort();
        files.dedup();
        let entries = files
            .into_iter()
            .map(|file| {
                let sha256 = sha256_file(&self.cfg.out_dir.join(&file))?;
                Ok(ManifestEntry { file, sha256 })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let manifest = Manifest {
            config_fingerprint: self.cfg.fingerprint(),
            files: entries,
        };
        let path = self.cfg.out_dir.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| PipelineError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &manifest).map_err(|e| PipelineError::io(&path, e))?;
        out.write_all(b"\n").map_err(|e| PipelineError::io(&path, e))?;
        out.flush().map_err(|e| PipelineError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[corpus.synthetic]\nn_jobs = 40\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.theta, 0.88);
        assert_eq!(cfg.thresholds.len(), 5);
        cfg.validate().unwrap();
        let synth = cfg.corpus.synthetic.as_ref().unwrap().synth_config(cfg.seed).unwrap();
        assert_eq!((synth.seed, synth.n_jobs), (7, 40));
    }

    #[test]
    fn theta_out_of_range_is_config_error() {
        let cfg = PipelineConfig::from_toml_str(&format!("theta = 1.5\n{MINIMAL}")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn corpus_source_must_be_unique() {
        let both = "[corpus]\npath = \"x.jsonl\"\n[corpus.synthetic]\nn_jobs = 3\n";
        let cfg = PipelineConfig::from_toml_str(both).unwrap();
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let neither = PipelineConfig::from_toml_str("[corpus]\n").unwrap();
        assert!(matches!(neither.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml_str(&format!("thta = 0.9\n{MINIMAL}")).is_err());
    }

    #[test]
    fn synthetic_maps_use_digit_keys() {
        let text = "[corpus.synthetic]\nisco_mix = { \"1\" = 0.5, \"4\" = 0.5 }\nautomatable_bias = { \"4\" = 0.7, \"1\" = 0.2 }\n";
        let cfg = PipelineConfig::from_toml_str(text).unwrap();
        let s = cfg.corpus.synthetic.unwrap().synth_config(1).unwrap();
        assert_eq!(s.isco_mix, BTreeMap::from([(1, 0.5), (4, 0.5)]));
        let bad = PipelineConfig::from_toml_str("[corpus.synthetic]\nisco_mix = { \"x\" = 1.0 }\n").unwrap();
        assert_eq!(bad.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn env_overrides() {
        let mut cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        cfg.apply_env([
            ("SKILLGRAPH_SEED".to_string(), "11".to_string()),
            ("SKILLGRAPH_THETA".to_string(), "0.9".to_string()),
            ("SKILLGRAPH_N_JOBS".to_string(), "12".to_string()),
            ("OTHER_SEED".to_string(), "99".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.theta, 0.9);
        assert_eq!(cfg.corpus.synthetic.unwrap().n_jobs, Some(12));
        let mut cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        assert!(cfg.apply_env([("SKILLGRAPH_SEED".to_string(), "x".to_string())]).is_err());
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let a = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 8;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn judgments_parse() {
        let j = parse_judgments("A00001\tCORRECT\nT00002\tMAJOR\n\n").unwrap();
        assert_eq!(j.len(), 2);
        assert_eq!(j["T00002"], Tier::Major);
        assert!(parse_judgments("A1 CORRECT").is_err());
    }

    #[test]
    fn default_validation_plan_covers_all_strata() {
        assert_eq!(ValidationSection::default().requested().unwrap().len(), 8);
    }
}
