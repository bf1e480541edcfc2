//! Entity resolution: leader-follower clustering of surface forms over
//! embeddings, the similarity-threshold sensitivity grid, and the stratified
//! validation protocol.

mod embedding;
pub mod validation;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedding::{
    cosine, normalize_form, EmbeddingProvider, PrecomputedProvider, ProviderError, StubProvider,
};
pub use validation::{
    judge_against_truth, stratified_validation_sample, validation_report, wilson_interval,
    SizeBand, Stratum, StratumPlan, Tier, ValidationPlan, ValidationReport, ValidationRow,
    ValidationSample,
};

pub const DEFAULT_THETA: f64 = 0.88;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no surface forms to cluster")]
    EmptyInput,
    #[error("surface form `{0}` appears more than once")]
    DuplicateForm(String),
    #[error("threshold {0} outside [-1, 1]")]
    BadTheta(f64),
    #[error("invalid grid: lo={lo}, hi={hi}, step={step}")]
    BadGrid { lo: f64, hi: f64, step: f64 },
    #[error("no labeled pairs supplied")]
    EmptyLabels,
    #[error("labeled pair references unknown form `{0}`")]
    UnknownForm(String),
    #[error("labeled-pair line {0} is not `formA<TAB>formB<TAB>0|1`")]
    BadLabelLine(usize),
    #[error("invalid counts: {errors} errors out of {n}")]
    BadCounts { errors: u64, n: u64 },
    #[error("z must be positive, got {0}")]
    BadZ(f64),
    #[error("no judgment for sampled cluster `{0}`")]
    MissingJudgment(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Activity,
    Tool,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Activity => "activity",
            EntityKind::Tool => "tool",
        }
    }

    fn id_prefix(self) -> char {
        match self {
            EntityKind::Activity => 'A',
            EntityKind::Tool => 'T',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCluster {
    pub canonical_id: String,
    pub kind: EntityKind,
    /// The leader form that founded the cluster.
    pub representative: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Join the qualifying leader with maximum similarity.
    #[default]
    BestLeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub theta: f64,
    #[serde(default)]
    pub assignment: Assignment,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            assignment: Assignment::BestLeader,
        }
    }
}

impl ClusterConfig {
    pub fn new(theta: f64) -> Result<Self, ClusterError> {
        let cfg = Self {
            theta,
            assignment: Assignment::BestLeader,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(ClusterError::BadTheta(self.theta));
        }
        Ok(())
    }
}

/// Single-pass leader-follower assignment over items `0..n`.
///
/// Item `i` joins the leader `l` maximizing `sim(i, l)` among leaders with
/// `sim(i, l) > theta` (ties go to the earliest leader); otherwise it becomes
/// a new leader. Returns the cluster index of every item, clusters numbered
/// in founding order, together with the leader item of each cluster.
pub fn leader_follower_assign(
    n: usize,
    theta: f64,
    sim: impl Fn(usize, usize) -> f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut leaders: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(n);
    for item in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (cluster, &leader) in leaders.iter().enumerate() {
            let s = sim(item, leader);
            if s > theta && best.is_none_or(|(_, b)| s > b) {
                best = Some((cluster, s));
            }
        }
        match best {
            Some((cluster, _)) => assignment.push(cluster),
            None => {
                assignment.push(leaders.len());
                leaders.push(item);
            }
        }
    }
    (assignment, leaders)
}

fn embed_all(
    forms: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Vec<f64>>, ClusterError> {
    let mut seen = HashSet::with_capacity(forms.len());
    if let Some(dup) = forms.iter().find(|f| !seen.insert(f.as_str())) {
        return Err(ClusterError::DuplicateForm(dup.clone()));
    }
    let vectors = forms
        .par_iter()
        .map(|f| provider.embed(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(vectors)
}

fn clusters_from_assignment(
    forms: &[String],
    kind: EntityKind,
    assignment: &[usize],
    leaders: &[usize],
) -> Vec<SkillCluster> {
    let mut clusters: Vec<SkillCluster> = leaders
        .iter()
        .enumerate()
        .map(|(c, &leader)| SkillCluster {
            canonical_id: format!("{}{:05}", kind.id_prefix(), c + 1),
            kind,
            representative: forms[leader].clone(),
            members: Vec::new(),
        })
        .collect();
    for (form, &c) in forms.iter().zip(assignment) {
        clusters[c].members.push(form.clone());
    }
    clusters
}

/// Clusters `forms` (in input order) into canonical entities of `kind`.
pub fn leader_follower(
    forms: &[String],
    provider: &dyn EmbeddingProvider,
    kind: EntityKind,
    cfg: &ClusterConfig,
) -> Result<Vec<SkillCluster>, ClusterError> {
    cfg.validate()?;
    if forms.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let vectors = embed_all(forms, provider)?;
    let (assignment, leaders) =
        leader_follower_assign(forms.len(), cfg.theta, |i, j| cosine(&vectors[i], &vectors[j]));
    Ok(clusters_from_assignment(forms, kind, &assignment, &leaders))
}

/// Surface form -> canonical id lookup over a set of clusters.
#[derive(Debug, Clone, Default)]
pub struct Resolver {
    index: HashMap<String, String>,
}

impl Resolver {
    pub fn new<'a>(clusters: impl IntoIterator<Item = &'a SkillCluster>) -> Self {
        let mut index = HashMap::new();
        for cluster in clusters {
            for member in &cluster.members {
                index.insert(member.clone(), cluster.canonical_id.clone());
            }
        }
        Self { index }
    }

    pub fn resolve(&self, form: &str) -> Option<&str> {
        self.index.get(form).map(String::as_str)
    }
}

/// Distinct mentions of one kind across a corpus, in first-seen order.
pub fn collect_forms<'a>(mentions: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    let mut seen = HashSet::new();
    mentions
        .into_iter()
        .filter(|m| seen.insert(m.as_str()))
        .cloned()
        .collect()
}

/// Builds clusters directly from a form -> canonical map (ground truth),
/// preserving the first-seen order of `forms`.
pub fn clusters_from_truth(
    forms: &[String],
    truth: &BTreeMap<String, String>,
    kind: EntityKind,
) -> Vec<SkillCluster> {
    let mut order: Vec<String> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut assignment = Vec::with_capacity(forms.len());
    let mut leaders = Vec::new();
    for (i, form) in forms.iter().enumerate() {
        let canon = truth.get(form).cloned().unwrap_or_else(|| form.clone());
        let next = order.len();
        let c = *slot.entry(canon.clone()).or_insert_with(|| {
            order.push(canon);
            leaders.push(i);
            next
        });
        assignment.push(c);
    }
    clusters_from_assignment(forms, kind, &assignment, &leaders)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: String,
    pub b: String,
    pub same_concept: bool,
}

/// Parses `formA<TAB>formB<TAB>0|1` lines; blank lines are skipped.
pub fn parse_labeled_pairs<R: Read>(reader: R) -> Result<Vec<LabeledPair>, ClusterError> {
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|_| ClusterError::BadLabelLine(idx + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let same_concept = match fields.as_slice() {
            [_, _, "1"] => true,
            [_, _, "0"] => false,
            _ => return Err(ClusterError::BadLabelLine(idx + 1)),
        };
        pairs.push(LabeledPair {
            a: fields[0].to_string(),
            b: fields[1].to_string(),
            same_concept,
        });
    }
    Ok(pairs)
}

pub fn format_labeled_pairs(pairs: &[LabeledPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.a, p.b, u8::from(p.same_concept)))
        .collect()
}

/// Draws up to `n` labeled pairs from a ground-truth map, half same-concept
/// and half different-concept, deterministically for `seed`.
pub fn labeled_pairs_from_truth(
    forms: &[String],
    truth: &BTreeMap<String, String>,
    n: usize,
    seed: u64,
) -> Vec<LabeledPair> {
    let mut by_canon: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for form in forms {
        if let Some(c) = truth.get(form) {
            by_canon.entry(c).or_default().push(form);
        }
    }
    let multi: Vec<&Vec<&String>> = by_canon.values().filter(|v| v.len() >= 2).collect();
    let groups: Vec<&Vec<&String>> = by_canon.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut attempts = 0;
    while pairs.len() < n && attempts < n * 20 {
        attempts += 1;
        let same = pairs.len() % 2 == 0;
        let (a, b) = if same {
            let Some(group) = multi.choose(&mut rng) else {
                continue;
            };
            let two: Vec<&&String> = group.choose_multiple(&mut rng, 2).collect();
            (two[0].as_str(), two[1].as_str())
        } else {
            if groups.len() < 2 {
                continue;
            }
            let two: Vec<&&Vec<&String>> = groups.choose_multiple(&mut rng, 2).collect();
            let (Some(a), Some(b)) = (two[0].choose(&mut rng), two[1].choose(&mut rng)) else {
                continue;
            };
            (a.as_str(), b.as_str())
        };
        let key = if a < b { (a, b) } else { (b, a) };
        if seen.insert(key) {
            pairs.push(LabeledPair {
                a: a.to_string(),
                b: b.to_string(),
                same_concept: same,
            });
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta: f64,
    pub n_clusters: usize,
    /// Correctly merged / all merged labeled pairs; `None` when nothing merged.
    pub precision: Option<f64>,
    /// Correctly merged / all same-concept labeled pairs; `None` without positives.
    pub recall: Option<f64>,
}

/// Inclusive grid `lo, lo + step, ..., hi`, with values rounded to 1e-9 so
/// that decimal steps do not drift.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, ClusterError> {
    if !(lo <= hi) || !(step > 0.0) || lo < -1.0 || hi > 1.0 {
        return Err(ClusterError::BadGrid { lo, hi, step });
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Re-clusters `forms` at every threshold of the grid and scores the result
/// against `labeled_pairs` (a pair counts as merged iff both forms share a cluster).
pub fn theta_sensitivity_grid(
    forms: &[String],
    provider: &dyn EmbeddingProvider,
    labeled_pairs: &[LabeledPair],
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<Vec<ThetaRow>, ClusterError> {
    if labeled_pairs.is_empty() {
        return Err(ClusterError::EmptyLabels);
    }
    if forms.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let grid = threshold_grid(lo, hi, step)?;
    let position: HashMap<&str, usize> = forms
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let pair_idx = labeled_pairs
        .iter()
        .map(|p| {
            let a = position
                .get(p.a.as_str())
                .ok_or_else(|| ClusterError::UnknownForm(p.a.clone()))?;
            let b = position
                .get(p.b.as_str())
                .ok_or_else(|| ClusterError::UnknownForm(p.b.clone()))?;
            Ok((*a, *b, p.same_concept))
        })
        .collect::<Result<Vec<_>, ClusterError>>()?;
    let vectors = embed_all(forms, provider)?;
    let positives = pair_idx.iter().filter(|p| p.2).count();

    Ok(grid
        .into_iter()
        .map(|theta| {
            let (assignment, leaders) = leader_follower_assign(forms.len(), theta, |i, j| {
                cosine(&vectors[i], &vectors[j])
            });
            let (mut merged, mut correct) = (0usize, 0usize);
            for &(a, b, same) in &pair_idx {
                if assignment[a] == assignment[b] {
                    merged += 1;
                    correct += usize::from(same);
                }
            }
            ThetaRow {
                theta,
                n_clusters: leaders.len(),
                precision: (merged > 0).then(|| correct as f64 / merged as f64),
                recall: (positives > 0).then(|| correct as f64 / positives as f64),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Provider returning fixed vectors.
    struct Fixed(BTreeMap<String, Vec<f64>>);

    impl EmbeddingProvider for Fixed {
        fn dimension(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
            self.0
                .get(text)
                .cloned()
                .ok_or_else(|| ProviderError::UnknownText(text.into()))
        }
    }

    fn unit(angle_cos: f64) -> Vec<f64> {
        vec![angle_cos, (1.0 - angle_cos * angle_cos).sqrt()]
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_strings_share_a_cluster() {
        let provider = StubProvider::without_truth();
        let forms = strings(&["Excel", "excel"]);
        let clusters =
            leader_follower(&forms, &provider, EntityKind::Tool, &ClusterConfig::default())
                .unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, forms);
        assert_eq!(clusters[0].representative, "Excel");
        assert_eq!(clusters[0].canonical_id, "T00001");
    }

    #[test]
    fn similarity_equal_to_theta_does_not_merge() {
        let (assignment, leaders) = leader_follower_assign(2, 0.88, |_, _| 0.88);
        assert_eq!(assignment, vec![0, 1]);
        assert_eq!(leaders, vec![0, 1]);
        let (assignment, _) = leader_follower_assign(2, 0.88, |_, _| 0.880_000_1);
        assert_eq!(assignment, vec![0, 0]);
    }

    #[test]
    fn best_leader_wins_over_first_leader() {
        // Leaders A and B (cos 0.5); C is closer to B.
        let provider = Fixed(BTreeMap::from([
            ("A".to_string(), unit(1.0)),
            ("B".to_string(), unit(0.5)),
            ("C".to_string(), unit(0.8)),
        ]));
        let forms = strings(&["A", "B", "C"]);
        let clusters = leader_follower(
            &forms,
            &provider,
            EntityKind::Activity,
            &ClusterConfig::new(0.75).unwrap(),
        )
        .unwrap();
        // cos(C, A) = 0.8, cos(C, B) = cos(acos .8 - acos .5) ~ 0.98
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[1].members, strings(&["B", "C"]));
    }

    #[test]
    fn rejects_bad_input() {
        let provider = StubProvider::without_truth();
        let cfg = ClusterConfig::default();
        assert_eq!(
            leader_follower(&[], &provider, EntityKind::Tool, &cfg),
            Err(ClusterError::EmptyInput)
        );
        assert_eq!(
            leader_follower(&strings(&["a", "a"]), &provider, EntityKind::Tool, &cfg),
            Err(ClusterError::DuplicateForm("a".into()))
        );
        assert_eq!(ClusterConfig::new(1.5), Err(ClusterError::BadTheta(1.5)));
    }

    #[test]
    fn provider_failure_propagates() {
        let provider = Fixed(BTreeMap::new());
        let err = leader_follower(
            &strings(&["x"]),
            &provider,
            EntityKind::Tool,
            &ClusterConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ClusterError::Provider(ProviderError::UnknownText(_))));
    }

    #[test]
    fn grid_has_sixteen_points() {
        let grid = threshold_grid(0.80, 0.95, 0.01).unwrap();
        assert_eq!(grid.len(), 16);
        assert_eq!(grid[0], 0.80);
        assert_eq!(grid[8], 0.88);
        assert_eq!(grid[15], 0.95);
        assert!(threshold_grid(0.9, 0.8, 0.01).is_err());
        assert!(threshold_grid(0.8, 0.9, 0.0).is_err());
    }

    #[test]
    fn perfect_labels_score_one() {
        let truth = BTreeMap::from([
            ("Excel".to_string(), "excel".to_string()),
            ("MS Excel".to_string(), "excel".to_string()),
            ("SAP".to_string(), "sap".to_string()),
        ]);
        let provider = StubProvider::new(truth);
        let forms = strings(&["Excel", "MS Excel", "SAP"]);
        let labels = vec![
            LabeledPair {
                a: "Excel".into(),
                b: "MS Excel".into(),
                same_concept: true,
            },
            LabeledPair {
                a: "Excel".into(),
                b: "SAP".into(),
                same_concept: false,
            },
        ];
        let rows = theta_sensitivity_grid(&forms, &provider, &labels, 0.88, 0.88, 0.01).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_clusters, 2);
        assert_eq!(rows[0].precision, Some(1.0));
        assert_eq!(rows[0].recall, Some(1.0));

        assert_eq!(
            theta_sensitivity_grid(&forms, &provider, &[], 0.8, 0.9, 0.01),
            Err(ClusterError::EmptyLabels)
        );
        let unknown = vec![LabeledPair {
            a: "Excel".into(),
            b: "Jira".into(),
            same_concept: false,
        }];
        assert_eq!(
            theta_sensitivity_grid(&forms, &provider, &unknown, 0.8, 0.9, 0.01),
            Err(ClusterError::UnknownForm("Jira".into()))
        );
    }

    #[test]
    fn labeled_pair_file_format() {
        let pairs = parse_labeled_pairs("Excel\tMS Excel\t1\n\nExcel\tSAP\t0\n".as_bytes()).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].same_concept);
        assert!(!pairs[1].same_concept);
        assert_eq!(format_labeled_pairs(&pairs), "Excel\tMS Excel\t1\nExcel\tSAP\t0\n");
        assert_eq!(
            parse_labeled_pairs("a\tb\t2\n".as_bytes()),
            Err(ClusterError::BadLabelLine(1))
        );
        assert_eq!(
            parse_labeled_pairs("a b 1\n".as_bytes()),
            Err(ClusterError::BadLabelLine(1))
        );
    }

    #[test]
    fn truth_clusters_keep_first_seen_order() {
        let truth = BTreeMap::from([
            ("b".to_string(), "B".to_string()),
            ("a".to_string(), "A".to_string()),
            ("a2".to_string(), "A".to_string()),
        ]);
        let clusters =
            clusters_from_truth(&strings(&["b", "a", "a2", "z"]), &truth, EntityKind::Activity);
        let members: Vec<_> = clusters.iter().map(|c| c.members.clone()).collect();
        assert_eq!(
            members,
            vec![strings(&["b"]), strings(&["a", "a2"]), strings(&["z"])]
        );
    }

    #[test]
    fn truth_pairs_are_balanced_and_distinct() {
        let mut truth = BTreeMap::new();
        let mut forms = Vec::new();
        for c in 0..10 {
            for v in 0..3 {
                let f = format!("f{c}-{v}");
                truth.insert(f.clone(), format!("c{c}"));
                forms.push(f);
            }
        }
        let pairs = labeled_pairs_from_truth(&forms, &truth, 40, 1);
        assert_eq!(pairs.len(), 40);
        assert_eq!(pairs.iter().filter(|p| p.same_concept).count(), 20);
        for p in &pairs {
            assert_eq!(truth[&p.a] == truth[&p.b], p.same_concept);
        }
        assert_eq!(pairs, labeled_pairs_from_truth(&forms, &truth, 40, 1));
    }
}
