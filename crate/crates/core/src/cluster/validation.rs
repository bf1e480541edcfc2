//! Stratified cluster-validation sampling and Wilson-score error reporting.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClusterError, EntityKind, SkillCluster};

/// Seed used by the reference validation protocol.
pub const DEFAULT_VALIDATION_SEED: u64 = 2025;
pub const Z_95: f64 = 1.96;

/// Cluster-size band. Singleton clusters carry no merge decision and fall in no band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBand {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3-5")]
    ThreeToFive,
    #[serde(rename = "6-10")]
    SixToTen,
    #[serde(rename = "11+")]
    ElevenPlus,
}

impl SizeBand {
    pub const ALL: [SizeBand; 4] = [
        SizeBand::Two,
        SizeBand::ThreeToFive,
        SizeBand::SixToTen,
        SizeBand::ElevenPlus,
    ];

    pub fn of(size: usize) -> Option<SizeBand> {
        match size {
            0 | 1 => None,
            2 => Some(SizeBand::Two),
            3..=5 => Some(SizeBand::ThreeToFive),
            6..=10 => Some(SizeBand::SixToTen),
            _ => Some(SizeBand::ElevenPlus),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBand::Two => "2 variants",
            SizeBand::ThreeToFive => "3-5 variants",
            SizeBand::SixToTen => "6-10 variants",
            SizeBand::ElevenPlus => "11+ variants",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub kind: EntityKind,
    pub band: SizeBand,
}

impl Stratum {
    pub fn new(kind: EntityKind, band: SizeBand) -> Self {
        Self { kind, band }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumPlan {
    pub stratum: Stratum,
    pub population: usize,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationPlan {
    pub strata: Vec<StratumPlan>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSample {
    pub plan: ValidationPlan,
    /// Sampled canonical ids per stratum, in population order.
    pub samples: BTreeMap<Stratum, Vec<String>>,
}

impl ValidationSample {
    pub fn sampled_ids(&self) -> impl Iterator<Item = &String> {
        self.samples.values().flatten()
    }
}

/// Uniform without-replacement sample of cluster ids per (kind, size band)
/// stratum. Requested sizes are capped at the stratum population; strata
/// absent from `requested` get a sample size of zero.
pub fn stratified_validation_sample(
    clusters: &[SkillCluster],
    requested: &BTreeMap<Stratum, usize>,
    seed: u64,
) -> ValidationSample {
    let mut population: BTreeMap<Stratum, Vec<&str>> = BTreeMap::new();
    for cluster in clusters {
        if let Some(band) = SizeBand::of(cluster.members.len()) {
            population
                .entry(Stratum::new(cluster.kind, band))
                .or_default()
                .push(&cluster.canonical_id);
        }
    }
    let strata: BTreeSet<Stratum> = population.keys().chain(requested.keys()).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans = Vec::new();
    let mut samples = BTreeMap::new();
    for stratum in strata {
        let members = population.get(&stratum).map(Vec::as_slice).unwrap_or(&[]);
        let size = requested.get(&stratum).copied().unwrap_or(0).min(members.len());
        let mut picked = rand::seq::index::sample(&mut rng, members.len(), size).into_vec();
        picked.sort_unstable();
        plans.push(StratumPlan {
            stratum,
            population: members.len(),
            sample_size: size,
        });
        samples.insert(
            stratum,
            picked.into_iter().map(|i| members[i].to_string()).collect(),
        );
    }
    ValidationSample {
        plan: ValidationPlan {
            strata: plans,
            seed,
        },
        samples,
    }
}

/// Wilson score interval for `errors` out of `n`, clamped to [0, 1].
pub fn wilson_interval(errors: u64, n: u64, z: f64) -> Result<(f64, f64), ClusterError> {
    if n == 0 || errors > n {
        return Err(ClusterError::BadCounts { errors, n });
    }
    if !(z > 0.0) {
        return Err(ClusterError::BadZ(z));
    }
    let n_f = n as f64;
    let p = errors as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Correct,
    Minor,
    Major,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub kind: Option<EntityKind>,
    /// `None` for subtotal and combined rows.
    pub band: Option<SizeBand>,
    pub samples: u64,
    pub correct: u64,
    pub minor: u64,
    pub major: u64,
    /// Major / samples; `None` for an empty row.
    pub error_rate: Option<f64>,
    pub wilson: Option<(f64, f64)>,
}

impl ValidationRow {
    fn new(kind: Option<EntityKind>, band: Option<SizeBand>, counts: [u64; 3], z: f64) -> Self {
        let [correct, minor, major] = counts;
        let samples = correct + minor + major;
        Self {
            kind,
            band,
            samples,
            correct,
            minor,
            major,
            error_rate: (samples > 0).then(|| major as f64 / samples as f64),
            wilson: wilson_interval(major, samples, z).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub strata: Vec<ValidationRow>,
    pub subtotals: Vec<ValidationRow>,
    pub combined: ValidationRow,
}

impl ValidationReport {
    /// Builds the report from `[correct, minor, major]` counts per stratum.
    pub fn from_counts(counts: &BTreeMap<Stratum, [u64; 3]>, z: f64) -> Self {
        let mut by_kind: BTreeMap<EntityKind, [u64; 3]> = BTreeMap::new();
        let mut total = [0u64; 3];
        let strata = counts
            .iter()
            .map(|(stratum, c)| {
                let sub = by_kind.entry(stratum.kind).or_default();
                for i in 0..3 {
                    sub[i] += c[i];
                    total[i] += c[i];
                }
                ValidationRow::new(Some(stratum.kind), Some(stratum.band), *c, z)
            })
            .collect();
        let subtotals = by_kind
            .into_iter()
            .map(|(kind, c)| ValidationRow::new(Some(kind), None, c, z))
            .collect();
        Self {
            strata,
            subtotals,
            combined: ValidationRow::new(None, None, total, z),
        }
    }
}

/// Tallies one judgment per sampled cluster into a [`ValidationReport`].
pub fn validation_report(
    sample: &ValidationSample,
    judgments: &BTreeMap<String, Tier>,
    z: f64,
) -> Result<ValidationReport, ClusterError> {
    let mut counts = BTreeMap::new();
    for (stratum, ids) in &sample.samples {
        let mut c = [0u64; 3];
        for id in ids {
            let tier = judgments
                .get(id)
                .ok_or_else(|| ClusterError::MissingJudgment(id.clone()))?;
            c[*tier as usize] += 1;
        }
        counts.insert(*stratum, c);
    }
    Ok(ValidationReport::from_counts(&counts, z))
}

/// Judges clusters against a form -> canonical map: a cluster mixing
/// canonicals is a MAJOR error, otherwise CORRECT.
pub fn judge_against_truth(
    clusters: &[SkillCluster],
    truth: &BTreeMap<String, String>,
) -> BTreeMap<String, Tier> {
    clusters
        .iter()
        .map(|c| {
            let canon: BTreeSet<&str> = c
                .members
                .iter()
                .map(|m| truth.get(m).map(String::as_str).unwrap_or(m.as_str()))
                .collect();
            let tier = if canon.len() > 1 { Tier::Major } else { Tier::Correct };
            (c.canonical_id.clone(), tier)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(kind: EntityKind, size: usize, count: usize, start: usize) -> Vec<SkillCluster> {
        (0..count)
            .map(|i| SkillCluster {
                canonical_id: format!("{}{:05}", kind.as_str(), start + i),
                kind,
                representative: format!("c{i}-0"),
                members: (0..size).map(|m| format!("c{}-{m}", start + i)).collect(),
            })
            .collect()
    }

    #[test]
    fn bands() {
        assert_eq!(SizeBand::of(1), None);
        assert_eq!(SizeBand::of(2), Some(SizeBand::Two));
        assert_eq!(SizeBand::of(5), Some(SizeBand::ThreeToFive));
        assert_eq!(SizeBand::of(6), Some(SizeBand::SixToTen));
        assert_eq!(SizeBand::of(11), Some(SizeBand::ElevenPlus));
    }

    #[test]
    fn tool_pairs_sampled_at_requested_size() {
        let cs = clusters(EntityKind::Tool, 2, 543, 0);
        let stratum = Stratum::new(EntityKind::Tool, SizeBand::Two);
        let sample = stratified_validation_sample(&cs, &BTreeMap::from([(stratum, 420)]), 2025);
        assert_eq!(sample.samples[&stratum].len(), 420);
        assert_eq!(sample.plan.strata[0].population, 543);
        let distinct: BTreeSet<_> = sample.samples[&stratum].iter().collect();
        assert_eq!(distinct.len(), 420);
    }

    #[test]
    fn request_capped_at_population() {
        let cs = clusters(EntityKind::Activity, 7, 3, 0);
        let stratum = Stratum::new(EntityKind::Activity, SizeBand::SixToTen);
        let sample = stratified_validation_sample(&cs, &BTreeMap::from([(stratum, 100)]), 1);
        assert_eq!(sample.samples[&stratum].len(), 3);
        assert_eq!(sample.plan.strata[0].sample_size, 3);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut cs = clusters(EntityKind::Activity, 2, 200, 0);
        cs.extend(clusters(EntityKind::Activity, 4, 80, 1000));
        let req = BTreeMap::from([
            (Stratum::new(EntityKind::Activity, SizeBand::Two), 50),
            (Stratum::new(EntityKind::Activity, SizeBand::ThreeToFive), 20),
        ]);
        let a = stratified_validation_sample(&cs, &req, 2025);
        assert_eq!(a, stratified_validation_sample(&cs, &req, 2025));
        assert_ne!(a, stratified_validation_sample(&cs, &req, 2026));
    }

    #[test]
    fn wilson_combined_reference() {
        let (lo, hi) = wilson_interval(8, 1085, Z_95).unwrap();
        assert_eq!(format!("{:.2}", lo * 100.0), "0.37");
        assert_eq!(format!("{:.2}", hi * 100.0), "1.45");
    }

    #[test]
    fn wilson_zero_errors() {
        let (lo, hi) = wilson_interval(0, 565, Z_95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi * 100.0 - 0.67).abs() <= 0.02, "{hi}");
    }

    #[test]
    fn wilson_all_errors_clamped() {
        let (lo, hi) = wilson_interval(30, 30, Z_95).unwrap();
        assert!(hi <= 1.0);
        assert!(lo < 1.0);
        assert!(matches!(
            wilson_interval(3, 2, Z_95),
            Err(ClusterError::BadCounts { .. })
        ));
        assert!(wilson_interval(0, 0, Z_95).is_err());
        assert!(wilson_interval(0, 5, 0.0).is_err());
    }

    fn reference_counts() -> BTreeMap<Stratum, [u64; 3]> {
        use EntityKind::*;
        use SizeBand::*;
        BTreeMap::from([
            (Stratum::new(Tool, Two), [398, 14, 8]),
            (Stratum::new(Tool, ThreeToFive), [90, 7, 0]),
            (Stratum::new(Tool, SixToTen), [3, 0, 0]),
            (Stratum::new(Activity, Two), [364, 17, 0]),
            (Stratum::new(Activity, ThreeToFive), [129, 2, 0]),
            (Stratum::new(Activity, SixToTen), [49, 0, 0]),
            (Stratum::new(Activity, ElevenPlus), [4, 0, 0]),
        ])
    }

    #[test]
    fn report_reproduces_reference_subtotals() {
        let report = ValidationReport::from_counts(&reference_counts(), Z_95);
        let activity = &report.subtotals[0];
        let tool = &report.subtotals[1];
        assert_eq!(activity.kind, Some(EntityKind::Activity));
        assert_eq!((activity.samples, activity.major), (565, 0));
        assert_eq!(activity.error_rate, Some(0.0));
        assert_eq!((tool.samples, tool.correct, tool.minor, tool.major), (520, 491, 21, 8));
        assert_eq!(format!("{:.2}", tool.error_rate.unwrap() * 100.0), "1.54");
        assert_eq!(report.combined.samples, 1085);
        assert_eq!(format!("{:.2}", report.combined.error_rate.unwrap() * 100.0), "0.74");
        let tool_two = report
            .strata
            .iter()
            .find(|r| r.kind == Some(EntityKind::Tool) && r.band == Some(SizeBand::Two))
            .unwrap();
        assert_eq!(format!("{:.2}", tool_two.error_rate.unwrap() * 100.0), "1.90");
    }

    #[test]
    fn report_from_judgments() {
        let cs = clusters(EntityKind::Tool, 2, 10, 0);
        let stratum = Stratum::new(EntityKind::Tool, SizeBand::Two);
        let sample = stratified_validation_sample(&cs, &BTreeMap::from([(stratum, 4)]), 3);
        let mut judgments: BTreeMap<String, Tier> = cs
            .iter()
            .map(|c| (c.canonical_id.clone(), Tier::Correct))
            .collect();
        let report = validation_report(&sample, &judgments, Z_95).unwrap();
        assert_eq!(report.combined.samples, 4);
        assert_eq!(report.combined.minor, 0);
        assert_eq!(report.combined.error_rate, Some(0.0));

        let first = sample.samples[&stratum][0].clone();
        judgments.insert(first.clone(), Tier::Major);
        let report = validation_report(&sample, &judgments, Z_95).unwrap();
        assert_eq!(report.combined.major, 1);
        judgments.remove(&first);
        assert_eq!(
            validation_report(&sample, &judgments, Z_95),
            Err(ClusterError::MissingJudgment(first))
        );
    }

    #[test]
    fn truth_judge_flags_mixed_clusters() {
        let truth = BTreeMap::from([
            ("a".to_string(), "X".to_string()),
            ("b".to_string(), "X".to_string()),
            ("c".to_string(), "Y".to_string()),
        ]);
        let cs = vec![
            SkillCluster {
                canonical_id: "A1".into(),
                kind: EntityKind::Activity,
                representative: "a".into(),
                members: vec!["a".into(), "b".into()],
            },
            SkillCluster {
                canonical_id: "A2".into(),
                kind: EntityKind::Activity,
                representative: "a".into(),
                members: vec!["a".into(), "c".into()],
            },
        ];
        let j = judge_against_truth(&cs, &truth);
        assert_eq!(j["A1"], Tier::Correct);
        assert_eq!(j["A2"], Tier::Major);
    }
}
