//! Job-posting corpora: line-delimited ingestion, title de-duplication and a
//! seeded synthetic generator with known synonym structure.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fields every corpus record must carry, in file order.
pub const RECORD_FIELDS: [&str; 8] = [
    "id", "title", "employer", "source", "isco4", "tasks", "activities", "tools",
];

pub const MAX_TASKS: usize = 15;

/// Default title-similarity cutoff for [`deduplicate`].
pub const DEFAULT_TITLE_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate posting id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: ISCO code `{code}` is not four digits")]
    BadIsco { line: usize, code: String },
    #[error("line {line}: {count} tasks, expected 1..=15")]
    TaskCount { line: usize, count: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    /// 1-based line of the offending record, when the error is tied to one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::MissingField { line, .. }
            | CorpusError::BadIsco { line, .. }
            | CorpusError::TaskCount { line, .. }
            | CorpusError::Malformed { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Wuzzuf,
    Linkedin,
    Forasna,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Importance {
    #[serde(rename = "P")]
    Primary,
    #[serde(rename = "S")]
    Secondary,
    #[serde(rename = "A")]
    Ancillary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub description: String,
    pub importance: Importance,
    pub automatable: bool,
}

impl Task {
    pub fn new(description: impl Into<String>, importance: Importance, automatable: bool) -> Self {
        Self {
            description: description.into(),
            importance,
            automatable,
        }
    }
}

/// One job posting. Field order matches the on-disk record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPosting {
    pub id: String,
    pub title: String,
    pub employer: String,
    pub source: Source,
    pub isco4: String,
    pub tasks: Vec<Task>,
    /// Activity surface forms as extracted from the posting.
    pub activities: Vec<String>,
    /// Tool surface forms as extracted from the posting.
    pub tools: Vec<String>,
}

impl JobPosting {
    /// ISCO prefix of `level` digits (1..=4).
    pub fn isco_prefix(&self, level: usize) -> &str {
        &self.isco4[..level.min(self.isco4.len())]
    }
}

pub fn is_valid_isco4(code: &str) -> bool {
    code.len() == 4 && code.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Loaded,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub postings: Vec<JobPosting>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&JobPosting> {
        self.postings.iter().find(|p| p.id == id)
    }

    /// Writes the corpus in the line-delimited record format read by [`parse_postings`].
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for posting in &self.postings {
            serde_json::to_writer(&mut out, posting)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Loads a line-delimited corpus file.
pub fn load_postings(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = File::open(path)?;
    parse_postings(BufReader::new(file))
}

/// Parses line-delimited posting records. Blank lines are skipped; line numbers
/// in errors are 1-based physical lines.
pub fn parse_postings<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut postings = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let posting = parse_record(&line, line_no)?;
        if !seen.insert(posting.id.clone()) {
            return Err(CorpusError::DuplicateId(posting.id));
        }
        postings.push(posting);
    }
    Ok(Corpus {
        postings,
        provenance: Provenance::Loaded,
        seed: None,
    })
}

fn parse_record(line: &str, line_no: usize) -> Result<JobPosting, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
    let object = value.as_object().ok_or_else(|| CorpusError::Malformed {
        line: line_no,
        message: "record is not an object".into(),
    })?;
    if let Some(field) = RECORD_FIELDS.iter().find(|f| !object.contains_key(**f)) {
        return Err(CorpusError::MissingField {
            line: line_no,
            field,
        });
    }
    if let Some(code) = object.get("isco4").and_then(|v| v.as_str()) {
        if !is_valid_isco4(code) {
            return Err(CorpusError::BadIsco {
                line: line_no,
                code: code.to_string(),
            });
        }
    }
    let posting: JobPosting =
        serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
    if posting.tasks.is_empty() || posting.tasks.len() > MAX_TASKS {
        return Err(CorpusError::TaskCount {
            line: line_no,
            count: posting.tasks.len(),
        });
    }
    Ok(posting)
}

/// Lowercased alphanumeric token set of a title.
pub fn title_tokens(title: &str) -> BTreeSet<String> {
    title
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token-set Jaccard similarity of two titles. Two empty titles are identical.
pub fn title_jaccard(a: &str, b: &str) -> f64 {
    jaccard(&title_tokens(a), &title_tokens(b))
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Collapses same-employer postings whose titles are more similar than
/// `title_threshold` onto the first-seen posting. Output order is stable.
pub fn deduplicate(corpus: &Corpus, title_threshold: f64) -> Corpus {
    let mut kept: Vec<JobPosting> = Vec::with_capacity(corpus.len());
    let mut kept_tokens: BTreeMap<&str, Vec<BTreeSet<String>>> = BTreeMap::new();
    for posting in &corpus.postings {
        let tokens = title_tokens(&posting.title);
        let same_employer = kept_tokens.entry(posting.employer.as_str()).or_default();
        if same_employer
            .iter()
            .any(|other| jaccard(&tokens, other) > title_threshold)
        {
            continue;
        }
        same_employer.push(tokens);
        kept.push(posting.clone());
    }
    Corpus {
        postings: kept,
        provenance: corpus.provenance,
        seed: corpus.seed,
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_jobs: usize,
    /// ISCO major-group digit -> share of jobs.
    pub isco_mix: BTreeMap<u8, f64>,
    pub canonical_activities: usize,
    pub canonical_tools: usize,
    /// Inclusive range of surface forms per canonical entity (the canonical name counts).
    pub synonym_variants_per_canonical: (usize, usize),
    /// ISCO major-group digit -> probability that a task is automatable.
    pub automatable_bias: BTreeMap<u8, f64>,
}

/// Automatable probability for groups missing from `automatable_bias`.
pub const DEFAULT_AUTOMATABLE_BIAS: f64 = 0.4;

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_jobs: 500,
            isco_mix: BTreeMap::from([(1, 0.25), (2, 0.35), (3, 0.15), (4, 0.15), (5, 0.10)]),
            canonical_activities: 240,
            canonical_tools: 60,
            synonym_variants_per_canonical: (1, 4),
            automatable_bias: BTreeMap::from([
                (1, 0.25),
                (2, 0.40),
                (3, 0.50),
                (4, 0.70),
                (5, 0.45),
            ]),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: String| Err(CorpusError::BadConfig(msg));
        if self.isco_mix.is_empty() {
            return bad("isco_mix is empty".into());
        }
        if let Some(d) = self
            .isco_mix
            .keys()
            .chain(self.automatable_bias.keys())
            .find(|d| **d > 9)
        {
            return bad(format!("ISCO major group {d} is not a single digit"));
        }
        if self.isco_mix.values().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("isco_mix proportions must lie in [0, 1]".into());
        }
        let total: f64 = self.isco_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("isco_mix proportions sum to {total}, expected 1"));
        }
        if self
            .automatable_bias
            .values()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("automatable_bias probabilities must lie in [0, 1]".into());
        }
        let (lo, hi) = self.synonym_variants_per_canonical;
        if lo == 0 || lo > hi {
            return bad(format!("variant range ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }

    fn bias(&self, major: u8) -> f64 {
        self.automatable_bias
            .get(&major)
            .copied()
            .unwrap_or(DEFAULT_AUTOMATABLE_BIAS)
    }
}

/// Ground truth for a synthetic corpus: surface form -> canonical name.
/// Kept out of the corpus itself; used only for scoring and for the stub embedder.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub activities: BTreeMap<String, String>,
    pub tools: BTreeMap<String, String>,
}

impl SyntheticTruth {
    /// Combined form -> canonical lookup, with canonical keys namespaced by kind.
    pub fn canonical_keys(&self) -> BTreeMap<String, String> {
        let mut keys = BTreeMap::new();
        for (form, canon) in &self.activities {
            keys.insert(form.clone(), format!("activity:{canon}"));
        }
        for (form, canon) in &self.tools {
            keys.insert(form.clone(), format!("tool:{canon}"));
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: SyntheticTruth,
}

const ACTIVITY_VERBS: [&str; 20] = [
    "Budget", "Process", "Customer", "Inventory", "Quality", "Project", "Sales", "Payroll",
    "Vendor", "Risk", "Compliance", "Data", "Contract", "Training", "Report", "Network",
    "Product", "Talent", "Event", "Facility",
];
const ACTIVITY_OBJECTS: [&str; 24] = [
    "Management", "Analysis", "Planning", "Coordination", "Reporting", "Improvement",
    "Monitoring", "Development", "Operations", "Assessment", "Documentation", "Support",
    "Auditing", "Forecasting", "Scheduling", "Negotiation", "Review", "Design", "Testing",
    "Administration", "Optimization", "Tracking", "Reconciliation", "Strategy",
];
const TOOL_NAMES: [&str; 30] = [
    "Excel", "SAP", "Salesforce", "Jira", "Oracle", "Tableau", "Power BI", "QuickBooks",
    "AutoCAD", "Photoshop", "Illustrator", "Python", "SQL Server", "Outlook", "Trello",
    "HubSpot", "Zendesk", "Odoo", "Primavera", "Revit", "Figma", "Slack", "Asana", "Git",
    "Docker", "Workday", "Sage", "Canva", "Looker", "Notion",
];
const ROLE_NOUNS: [&str; 8] = [
    "Specialist", "Officer", "Coordinator", "Analyst", "Manager", "Clerk", "Technician",
    "Associate",
];
const SENIORITY: [&str; 4] = ["", "Senior ", "Junior ", "Lead "];
const ACTIVITY_PREFIXES: [&str; 3] = ["Advanced", "Applied", "Professional"];
const TOOL_PREFIXES: [&str; 3] = ["MS", "Pro", "Advanced"];
const ABBREVIATIONS: [(&str, &str); 8] = [
    ("Management", "Mgmt"),
    ("Development", "Dev"),
    ("Operations", "Ops"),
    ("Administration", "Admin"),
    ("Documentation", "Docs"),
    ("Coordination", "Coord."),
    ("Optimization", "Optim."),
    ("Reconciliation", "Recon."),
];

fn canonical_activity_name(i: usize) -> String {
    let verbs = ACTIVITY_VERBS.len();
    let objects = ACTIVITY_OBJECTS.len();
    let base = format!(
        "{} {}",
        ACTIVITY_VERBS[i % verbs],
        ACTIVITY_OBJECTS[(i / verbs + i) % objects]
    );
    match i / (verbs * objects) {
        0 => base,
        round => format!("{base} {}", round + 1),
    }
}

fn canonical_tool_name(i: usize) -> String {
    match i / TOOL_NAMES.len() {
        0 => TOOL_NAMES[i].to_string(),
        round => format!("{} {}", TOOL_NAMES[i % TOOL_NAMES.len()], round + 1),
    }
}

fn abbreviate(name: &str) -> String {
    let mut out = name.to_string();
    for (long, short) in ABBREVIATIONS {
        if out.contains(long) {
            return out.replace(long, short);
        }
    }
    if let Some(last) = out.split(' ').next_back() {
        if last.chars().count() > 4 {
            let cut: String = last.chars().take(4).collect();
            let keep = out.len() - last.len();
            out.truncate(keep);
            out.push_str(&cut);
            out.push('.');
        }
    }
    out
}

/// The `n`-th surface variant of `name`; variant 0 is the name itself.
fn surface_variant(name: &str, n: usize, prefixes: &[&str; 3]) -> String {
    match n {
        0 => name.to_string(),
        1 => name.to_lowercase(),
        2 => format!("{} {name}", prefixes[0]),
        3 => abbreviate(name),
        4 => name.to_uppercase(),
        5 => format!("{} {name}", prefixes[1]),
        6 => abbreviate(name).to_lowercase(),
        7 => format!("{} {name}", prefixes[2]),
        _ => format!("{} {}", prefixes[n % 3], abbreviate(name)).to_lowercase(),
    }
}

struct Entity {
    forms: Vec<String>,
}

fn synthesize_entities(
    names: Vec<String>,
    prefixes: &[&str; 3],
    range: (usize, usize),
    rng: &mut ChaCha8Rng,
    truth: &mut BTreeMap<String, String>,
    taken: &mut HashSet<String>,
) -> Vec<Entity> {
    names
        .into_iter()
        .map(|name| {
            let wanted = rng.random_range(range.0..=range.1);
            let mut forms = Vec::with_capacity(wanted);
            let mut n = 0;
            while forms.len() < wanted && n < wanted + 8 {
                let form = surface_variant(&name, n, prefixes);
                n += 1;
                if taken.insert(form.clone()) {
                    truth.insert(form.clone(), name.clone());
                    forms.push(form);
                }
            }
            Entity { forms }
        })
        .collect()
}

/// Generates a deterministic corpus for `cfg.seed`.
///
/// Jobs are grouped into ISCO-3 families; each family draws its activities
/// from a shared template (family-specific activities, a few cross-family
/// hubs, and borrowings from a sibling family), so neighborhoods overlap the
/// way real occupational clusters do. Every mention is a surface variant of
/// a canonical entity and the variant map is returned as [`SyntheticTruth`].
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut truth = SyntheticTruth::default();
    let mut taken = HashSet::new();

    let activities = synthesize_entities(
        (0..cfg.canonical_activities).map(canonical_activity_name).collect(),
        &ACTIVITY_PREFIXES,
        cfg.synonym_variants_per_canonical,
        &mut rng,
        &mut truth.activities,
        &mut taken,
    );
    let tools = synthesize_entities(
        (0..cfg.canonical_tools).map(canonical_tool_name).collect(),
        &TOOL_PREFIXES,
        cfg.synonym_variants_per_canonical,
        &mut rng,
        &mut truth.tools,
        &mut taken,
    );

    // Each activity is paired with up to two tools it is typically used with.
    let activity_tools: Vec<Vec<usize>> = (0..activities.len())
        .map(|i| {
            if tools.is_empty() {
                return Vec::new();
            }
            let mut ts = vec![(i * 7) % tools.len()];
            let extra = rng.random_range(0..tools.len());
            if extra != ts[0] && rng.random_bool(0.5) {
                ts.push(extra);
            }
            ts
        })
        .collect();

    // ISCO-3 families: three sub-major groups per major group, two minor groups each.
    let mut families: Vec<String> = Vec::new();
    for major in cfg.isco_mix.keys() {
        for sub in 1..=3 {
            for minor in 1..=2 {
                families.push(format!("{major}{sub}{minor}"));
            }
        }
    }
    let n_hubs = if activities.is_empty() {
        0
    } else {
        (activities.len() / 10).max(1)
    };
    let mut own: Vec<Vec<usize>> = vec![Vec::new(); families.len()];
    for (slot, a) in (n_hubs..activities.len()).enumerate() {
        own[slot % families.len()].push(a);
    }
    let templates: Vec<Vec<usize>> = (0..families.len())
        .map(|f| {
            let mut t = own[f].clone();
            if n_hubs > 0 {
                for _ in 0..2 {
                    t.push(rng.random_range(0..n_hubs));
                }
            }
            // Sibling family in the same major group (six families per group).
            let sibling = (f / 6) * 6 + rng.random_range(0..6);
            if sibling != f {
                let borrowed: Vec<usize> =
                    own[sibling].choose_multiple(&mut rng, 2).copied().collect();
                t.extend(borrowed);
            }
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let family_titles: Vec<String> = (0..families.len())
        .map(|f| {
            let object = ACTIVITY_VERBS[rng.random_range(0..ACTIVITY_VERBS.len())];
            let role = ROLE_NOUNS[(f + rng.random_range(0..ROLE_NOUNS.len())) % ROLE_NOUNS.len()];
            format!("{object} {role}")
        })
        .collect();

    let majors: Vec<(u8, f64)> = cfg.isco_mix.iter().map(|(k, v)| (*k, *v)).collect();
    let n_employers = (cfg.n_jobs / 10).max(5);
    let mut postings = Vec::with_capacity(cfg.n_jobs);
    for j in 0..cfg.n_jobs {
        let major = pick_weighted(&majors, rng.random::<f64>());
        let family = {
            let base = majors.iter().position(|(m, _)| *m == major).unwrap_or(0) * 6;
            base + rng.random_range(0..6)
        };
        let isco3 = &families[family];
        let isco4 = format!("{isco3}{}", rng.random_range(1..=3));

        let template = &templates[family];
        let mut chosen: Vec<usize> = if template.is_empty() {
            Vec::new()
        } else {
            let hi = template.len().min(12);
            let lo = hi.min(4);
            let k = rng.random_range(lo..=hi);
            template.choose_multiple(&mut rng, k).copied().collect()
        };
        if !activities.is_empty() && rng.random_bool(0.2) {
            chosen.push(rng.random_range(0..activities.len()));
        }
        chosen.sort_unstable();
        chosen.dedup();
        chosen.shuffle(&mut rng);

        let mut activity_mentions = Vec::with_capacity(chosen.len());
        let mut tool_mentions: Vec<String> = Vec::new();
        for &a in &chosen {
            if let Some(form) = activities[a].forms.choose(&mut rng) {
                activity_mentions.push(form.clone());
            }
            if rng.random_bool(0.5) {
                if let Some(&t) = activity_tools[a].choose(&mut rng) {
                    if let Some(form) = tools[t].forms.choose(&mut rng) {
                        if !tool_mentions.contains(form) {
                            tool_mentions.push(form.clone());
                        }
                    }
                }
            }
        }

        let bias = cfg.bias(major);
        let n_tasks = rng.random_range(3..=10);
        let tasks = (0..n_tasks)
            .map(|t| {
                let importance = if t == 0 {
                    Importance::Primary
                } else {
                    match rng.random_range(0..10) {
                        0..=2 => Importance::Primary,
                        3..=6 => Importance::Secondary,
                        _ => Importance::Ancillary,
                    }
                };
                Task {
                    description: format!("task {} of job {}", t + 1, j + 1),
                    importance,
                    automatable: rng.random_bool(bias),
                }
            })
            .collect();

        let seniority = SENIORITY[rng.random_range(0..SENIORITY.len())];
        postings.push(JobPosting {
            id: format!("J{:05}", j + 1),
            title: format!("{seniority}{}", family_titles[family]),
            employer: format!("Employer {:03}", rng.random_range(0..n_employers) + 1),
            source: Source::Synthetic,
            isco4,
            tasks,
            activities: activity_mentions,
            tools: tool_mentions,
        });
    }

    Ok(SyntheticCorpus {
        corpus: Corpus {
            postings,
            provenance: Provenance::Synthetic,
            seed: Some(cfg.seed),
        },
        truth,
    })
}

fn pick_weighted(items: &[(u8, f64)], u: f64) -> u8 {
    let mut acc = 0.0;
    for (key, weight) in items {
        acc += weight;
        if u < acc {
            return *key;
        }
    }
    items.last().map(|(k, _)| *k).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, title: &str, employer: &str) -> String {
        format!(
            r#"{{"id":"{id}","title":"{title}","employer":"{employer}","source":"wuzzuf","isco4":"4110","tasks":[{{"description":"type","importance":"P","automatable":true}}],"activities":["Data Entry"],"tools":["Excel"]}}"#
        )
    }

    fn posting(id: &str, title: &str, employer: &str) -> JobPosting {
        serde_json::from_str(&record(id, title, employer)).unwrap()
    }

    fn corpus_of(postings: Vec<JobPosting>) -> Corpus {
        Corpus {
            postings,
            provenance: Provenance::Loaded,
            seed: None,
        }
    }

    #[test]
    fn loads_two_records() {
        let text = format!("{}\n{}\n", record("J1", "Clerk", "A"), record("J2", "Clerk", "B"));
        let corpus = parse_postings(text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.postings[1].id, "J2");
        assert_eq!(corpus.postings[0].tasks[0].importance, Importance::Primary);
    }

    #[test]
    fn missing_title_is_reported_with_line() {
        let text = r#"{"id":"J1","employer":"A","source":"wuzzuf","isco4":"4110","tasks":[],"activities":[],"tools":[]}"#;
        match parse_postings(text.as_bytes()) {
            Err(CorpusError::MissingField { line: 1, field: "title" }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}\n", record("J1", "Clerk", "A"), record("J1", "Other", "B"));
        match parse_postings(text.as_bytes()) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "J1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_isco_rejected() {
        let text = record("J1", "Clerk", "A").replace("4110", "41A0");
        assert!(matches!(
            parse_postings(text.as_bytes()),
            Err(CorpusError::BadIsco { line: 1, .. })
        ));
        let short = record("J1", "Clerk", "A").replace("4110", "411");
        assert!(matches!(
            parse_postings(short.as_bytes()),
            Err(CorpusError::BadIsco { .. })
        ));
    }

    #[test]
    fn task_count_outside_range_rejected() {
        let empty = record("J1", "Clerk", "A").replace(
            r#"[{"description":"type","importance":"P","automatable":true}]"#,
            "[]",
        );
        assert!(matches!(
            parse_postings(empty.as_bytes()),
            Err(CorpusError::TaskCount { count: 0, .. })
        ));
        let task = r#"{"description":"t","importance":"S","automatable":false}"#;
        let many = vec![task; 16].join(",");
        let sixteen = record("J1", "Clerk", "A").replace(
            r#"[{"description":"type","importance":"P","automatable":true}]"#,
            &format!("[{many}]"),
        );
        assert!(matches!(
            parse_postings(sixteen.as_bytes()),
            Err(CorpusError::TaskCount { count: 16, .. })
        ));
    }

    #[test]
    fn written_corpus_parses_back() {
        let corpus = corpus_of(vec![posting("J1", "Clerk", "A"), posting("J2", "Analyst", "A")]);
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert!(line.starts_with(r#"{"id":"J1","title":"Clerk","employer":"A","source":"wuzzuf","isco4":"4110","tasks":"#));
        assert_eq!(parse_postings(buf.as_slice()).unwrap().postings, corpus.postings);
    }

    #[test]
    fn reordered_title_collapses() {
        assert_eq!(
            title_jaccard("senior data entry clerk", "data entry clerk senior"),
            1.0
        );
        let corpus = corpus_of(vec![
            posting("J1", "senior data entry clerk", "Acme"),
            posting("J2", "Data-Entry Clerk, Senior", "Acme"),
        ]);
        let out = deduplicate(&corpus, DEFAULT_TITLE_THRESHOLD);
        assert_eq!(out.len(), 1);
        assert_eq!(out.postings[0].id, "J1");
    }

    #[test]
    fn jaccard_exactly_at_threshold_keeps_both() {
        // 17 shared tokens over a union of 20 tokens = 0.85.
        let shared: Vec<String> = (0..17).map(|i| format!("w{i}")).collect();
        let a = format!("{} a1 a2", shared.join(" "));
        let b = format!("{} b1", shared.join(" "));
        assert_eq!(title_jaccard(&a, &b), 17.0 / 20.0);
        let corpus = corpus_of(vec![posting("J1", &a, "Acme"), posting("J2", &b, "Acme")]);
        assert_eq!(deduplicate(&corpus, 0.85).len(), 2);
    }

    #[test]
    fn different_employers_never_merge() {
        let corpus = corpus_of(vec![
            posting("J1", "Accountant", "Acme"),
            posting("J2", "Accountant", "Globex"),
        ]);
        assert_eq!(deduplicate(&corpus, 0.85).len(), 2);
    }

    #[test]
    fn empty_corpus_passes_through() {
        assert!(deduplicate(&corpus_of(Vec::new()), 0.85).is_empty());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig {
            seed: 42,
            n_jobs: 120,
            ..SynthConfig::default()
        };
        let a = generate_synthetic_corpus(&cfg).unwrap();
        let b = generate_synthetic_corpus(&cfg).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.corpus.write_jsonl(&mut ba).unwrap();
        b.corpus.write_jsonl(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(a.truth, b.truth);

        let c = generate_synthetic_corpus(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.corpus.postings, c.corpus.postings);
    }

    #[test]
    fn synthetic_zero_jobs() {
        let cfg = SynthConfig {
            n_jobs: 0,
            ..SynthConfig::default()
        };
        let out = generate_synthetic_corpus(&cfg).unwrap();
        assert!(out.corpus.is_empty());
        assert_eq!(out.corpus.seed, Some(cfg.seed));
    }

    #[test]
    fn synthetic_postings_satisfy_record_invariants() {
        let out = generate_synthetic_corpus(&SynthConfig::default()).unwrap();
        let mut ids = HashSet::new();
        for p in &out.corpus.postings {
            assert!(ids.insert(p.id.clone()));
            assert!(is_valid_isco4(&p.isco4), "{}", p.isco4);
            assert!((1..=MAX_TASKS).contains(&p.tasks.len()));
            for form in &p.activities {
                assert!(out.truth.activities.contains_key(form), "{form}");
            }
            for form in &p.tools {
                assert!(out.truth.tools.contains_key(form), "{form}");
            }
        }
        // Each form belongs to exactly one canonical, across both kinds.
        let overlap = out
            .truth
            .activities
            .keys()
            .filter(|f| out.truth.tools.contains_key(*f))
            .count();
        assert_eq!(overlap, 0);
    }

    #[test]
    fn bad_synth_config_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.isco_mix.insert(9, 0.2);
        assert!(matches!(
            generate_synthetic_corpus(&cfg),
            Err(CorpusError::BadConfig(_))
        ));
        let cfg = SynthConfig {
            automatable_bias: BTreeMap::from([(4, 1.5)]),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            synonym_variants_per_canonical: (3, 2),
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn abbreviations() {
        assert_eq!(abbreviate("Budget Management"), "Budget Mgmt");
        assert_eq!(abbreviate("Risk Assessment"), "Risk Asse.");
        assert_eq!(abbreviate("Excel"), "Exce.");
        assert_eq!(abbreviate("SAP"), "SAP");
    }
}
