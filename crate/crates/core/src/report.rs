//! Report tables and their CSV / JSON emission.
//!
//! Every table has a fixed column order. Numbers are rounded half away from
//! zero at a per-column precision: percentages to 1 decimal, error rates and
//! their intervals to 2, fractions to 4, counts as integers. An undefined
//! value renders as `undefined` in CSV and `null` in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cluster::{ThetaRow, ValidationReport, ValidationRow};
use crate::graph::{CommunityPartition, CommunitySummary, KnowledgeGraph, TopologyStats};
use crate::metrics::{BridgeSkillMetrics, SkillImportance};
use crate::risk::{HeterogeneityRow, IscoAggregation, RiskAggregate};
use crate::transitions::{
    Decomposition, GapSkillStat, SafeHarborEntry, SensitivityRow, TransitionNetwork, TransitionStats,
};

pub const UNDEFINED: &str = "undefined";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Structured,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Structured => "json",
        }
    }
}

/// Rounds half away from zero at `decimals` places. A small guard absorbs
/// binary representation error, so 24.75 rounds to 24.8.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let r = (scaled + 0.5 + 1e-9 * scaled.max(1.0)).floor() / scale;
    if r == 0.0 {
        0.0
    } else {
        r.copysign(x)
    }
}

pub fn format_fixed(x: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(x, decimals))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Num { value: f64, decimals: u32 },
    Text(String),
    Undefined,
}

impl Cell {
    pub fn int(n: impl TryInto<i64>) -> Cell {
        n.try_into().map_or(Cell::Undefined, Cell::Int)
    }

    pub fn num(value: f64, decimals: u32) -> Cell {
        if value.is_finite() {
            Cell::Num { value, decimals }
        } else {
            Cell::Undefined
        }
    }

    pub fn num_opt(value: Option<f64>, decimals: u32) -> Cell {
        value.map_or(Cell::Undefined, |v| Cell::num(v, decimals))
    }

    /// A value already in percent, 1 decimal.
    pub fn pct(value: Option<f64>) -> Cell {
        Cell::num_opt(value, 1)
    }

    /// A fraction shown as a percentage, 1 decimal.
    pub fn share(value: Option<f64>) -> Cell {
        Cell::num_opt(value.map(|v| v * 100.0), 1)
    }

    /// A fraction shown as a percentage, 2 decimals.
    pub fn rate(value: Option<f64>) -> Cell {
        Cell::num_opt(value.map(|v| v * 100.0), 2)
    }

    /// A fraction, 4 decimals.
    pub fn frac(value: Option<f64>) -> Cell {
        Cell::num_opt(value, 4)
    }

    pub fn text(s: impl Into<String>) -> Cell {
        Cell::Text(s.into())
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Int(n) => n.to_string(),
            Cell::Num { value, decimals } => format_fixed(*value, *decimals),
            Cell::Text(s) => s.clone(),
            Cell::Undefined => UNDEFINED.to_string(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(n) => Value::from(*n),
            Cell::Num { value, decimals } => format_fixed(*value, *decimals)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Undefined => Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self, format: Format) -> String {
        format!("{}.{}", self.name, format.extension())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"columns": [...], "rows": [[...], ...]}`.
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "columns": self.columns,
            "rows": self.rows.iter().map(|r| r.iter().map(Cell::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        })
    }

    pub fn write(&self, dir: &Path, format: Format) -> std::io::Result<String> {
        let name = self.file_name(format);
        let mut out = BufWriter::new(File::create(dir.join(&name))?);
        match format {
            Format::Csv => self.write_csv(&mut out).map_err(std::io::Error::other)?,
            Format::Structured => {
                serde_json::to_writer_pretty(&mut out, &self.to_json())?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()?;
        Ok(name)
    }
}

pub fn theta_table(rows: &[ThetaRow]) -> Table {
    let mut t = Table::new("table2_theta_sensitivity", &["theta", "n_clusters", "precision", "recall"]);
    for r in rows {
        t.push(vec![
            Cell::num(r.theta, 2),
            Cell::int(r.n_clusters),
            Cell::frac(r.precision),
            Cell::frac(r.recall),
        ]);
    }
    t
}

pub fn sensitivity_table(name: &str, rows: &[SensitivityRow]) -> Table {
    let mut t = Table::new(
        name,
        &["tau", "phi", "n_pathways", "mean_shared", "mean_transfer", "unique_sources", "coverage"],
    );
    for r in rows {
        t.push(vec![
            Cell::int(r.config.tau),
            Cell::text(r.config.phi_label()),
            Cell::int(r.n_pathways),
            Cell::num_opt(r.mean_shared, 1),
            Cell::share(r.mean_transfer),
            Cell::int(r.unique_sources),
            Cell::share(r.coverage),
        ]);
    }
    t
}

const VALIDATION_COLUMNS: [&str; 9] = [
    "kind", "band", "samples", "correct", "minor", "major", "error_rate", "ci_low", "ci_high",
];

fn validation_row(r: &ValidationRow) -> Vec<Cell> {
    vec![
        Cell::text(r.kind.map_or("combined", |k| k.as_str())),
        Cell::text(r.band.map_or("all", |b| b.label())),
        Cell::int(r.samples),
        Cell::int(r.correct),
        Cell::int(r.minor),
        Cell::int(r.major),
        Cell::rate(r.error_rate),
        Cell::rate(r.wilson.map(|w| w.0)),
        Cell::rate(r.wilson.map(|w| w.1)),
    ]
}

/// Per-kind subtotals and the combined row.
pub fn validation_summary_table(report: &ValidationReport) -> Table {
    let mut t = Table::new("table4_validation_summary", &VALIDATION_COLUMNS);
    for r in report.subtotals.iter().chain(std::iter::once(&report.combined)) {
        t.push(validation_row(r));
    }
    t
}

/// Every stratum, then subtotals, then the combined row.
pub fn validation_detail_table(report: &ValidationReport) -> Table {
    let mut t = Table::new("table13_validation_detail", &VALIDATION_COLUMNS);
    for r in report
        .strata
        .iter()
        .chain(&report.subtotals)
        .chain(std::iter::once(&report.combined))
    {
        t.push(validation_row(r));
    }
    t
}

fn risk_row(r: &RiskAggregate) -> Vec<Cell> {
    vec![
        Cell::text(&r.group_code),
        Cell::text(&r.label),
        Cell::int(r.n),
        Cell::pct(Some(r.mean_rho)),
        Cell::num(r.sigma, 1),
        Cell::pct(Some(r.high_share)),
    ]
}

pub fn risk_table(agg: &IscoAggregation) -> Table {
    let mut t = Table::new(
        format!("table5_risk_isco{}", agg.level),
        &["group_code", "label", "n", "mean_rho", "sigma", "high_share"],
    );
    for r in agg.rows.iter().chain(agg.overall.as_ref()) {
        t.push(risk_row(r));
    }
    t
}

pub fn heterogeneity_report(rows: &[HeterogeneityRow]) -> Table {
    let mut t = Table::new(
        "table6_heterogeneity",
        &["isco3", "mean_rho", "high_count", "low_count", "low_share"],
    );
    for r in rows {
        t.push(vec![
            Cell::text(&r.isco3),
            Cell::pct(r.mean_rho),
            Cell::int(r.high_count),
            Cell::int(r.low_count),
            Cell::share(r.low_share),
        ]);
    }
    t
}

pub fn topology_table(stats: &TopologyStats, partition: &CommunityPartition) -> Table {
    let mut t = Table::new("topology", &["metric", "value"]);
    let rows: Vec<(&str, Cell)> = vec![
        ("n_jobs", Cell::int(stats.n_jobs)),
        ("n_activities", Cell::int(stats.n_activities)),
        ("n_tools", Cell::int(stats.n_tools)),
        ("n_performs_edges", Cell::int(stats.n_edges)),
        ("n_uses_edges", Cell::int(stats.n_uses_edges)),
        ("mean_degree", Cell::num(stats.mean_degree, 2)),
        ("bipartite_density", Cell::num(stats.bipartite_density, 5)),
        ("max_degree", Cell::int(stats.max_degree)),
        ("gamma", Cell::num_opt(stats.gamma, 2)),
        ("n_communities", Cell::int(partition.n_communities())),
        ("modularity", Cell::num(partition.q, 4)),
    ];
    for (k, v) in rows {
        t.push(vec![Cell::text(k), v]);
    }
    t
}

pub fn communities_table(rows: &[CommunitySummary]) -> Table {
    let mut t = Table::new(
        "table7_communities",
        &[
            "rank", "community_id", "size", "n_jobs", "n_activities", "n_tools", "mean_rho", "q_int", "sample_titles",
        ],
    );
    for (i, r) in rows.iter().enumerate() {
        t.push(vec![
            Cell::int(i + 1),
            Cell::int(r.community_id),
            Cell::int(r.size),
            Cell::int(r.n_jobs),
            Cell::int(r.n_activities),
            Cell::int(r.n_tools),
            Cell::pct(r.mean_rho),
            Cell::frac(Some(r.q_int)),
            Cell::text(r.sample_titles.join("; ")),
        ]);
    }
    t
}

pub fn bridge_table(rows: &[BridgeSkillMetrics]) -> Table {
    let mut t = Table::new(
        "bridge_skills",
        &["rank", "activity_id", "activity", "c_b", "c_p", "k", "d_isco", "mean_rho", "tier"],
    );
    for (i, r) in rows.iter().enumerate() {
        t.push(vec![
            Cell::int(i + 1),
            Cell::text(&r.activity_id),
            Cell::text(&r.label),
            Cell::num(r.c_b, 2),
            Cell::int(r.c_p),
            Cell::int(r.k),
            Cell::int(r.d_isco),
            Cell::pct(r.mean_rho),
            Cell::text(r.tier.as_str()),
        ]);
    }
    t
}

pub fn importance_report(rows: &[SkillImportance]) -> Table {
    let mut t = Table::new(
        "table8_importance",
        &["rank", "activity", "k", "d_isco", "i_pr", "mean_rho", "tier"],
    );
    for (i, r) in rows.iter().enumerate() {
        t.push(vec![
            Cell::int(i + 1),
            Cell::text(&r.label),
            Cell::int(r.k),
            Cell::int(r.d_isco),
            Cell::int(r.i_pr),
            Cell::pct(r.mean_rho),
            Cell::text(r.tier.as_str()),
        ]);
    }
    t
}

pub fn transition_stats_table(s: &TransitionStats) -> Table {
    let mut t = Table::new("table9_transition_stats", &["metric", "value"]);
    let rows: Vec<(&str, Cell)> = vec![
        ("n_pathways", Cell::int(s.n_pathways)),
        ("mean_shared", Cell::num_opt(s.mean_shared, 1)),
        ("max_shared", Cell::int(s.max_shared)),
        ("mean_transfer", Cell::share(s.mean_transfer)),
        ("unique_sources", Cell::int(s.unique_sources)),
        ("mean_out_degree", Cell::num_opt(s.mean_out_degree, 1)),
        ("sources_many_options", Cell::int(s.sources_many_options)),
        ("unique_destinations", Cell::int(s.unique_destinations)),
        ("mean_in_degree", Cell::num_opt(s.mean_in_degree, 1)),
        ("hub_destinations", Cell::int(s.hub_destinations)),
        ("mean_delta_rho", Cell::pct(s.mean_delta_rho)),
        ("max_risk_reduction", Cell::pct(s.max_risk_reduction)),
        ("source_universe", Cell::int(s.source_universe)),
        ("coverage", Cell::share(s.coverage)),
        ("reskilling_gap", Cell::share(s.reskilling_gap)),
    ];
    for (k, v) in rows {
        t.push(vec![Cell::text(k), v]);
    }
    t
}

pub fn pathways_table(tn: &TransitionNetwork) -> Table {
    let mut t = Table::new(
        "pathways",
        &["source", "target", "shared_count", "transfer", "jaccard", "delta_rho"],
    );
    for p in &tn.pathways {
        t.push(vec![
            Cell::text(&p.source),
            Cell::text(&p.target),
            Cell::int(p.shared_count),
            Cell::frac(Some(p.transfer_rate)),
            Cell::frac(Some(p.jaccard)),
            Cell::pct(Some(p.delta_rho)),
        ]);
    }
    t
}

pub fn safe_harbor_table(rows: &[SafeHarborEntry]) -> Table {
    let mut t = Table::new(
        "table10_safe_harbors",
        &["rank", "target", "title", "rho", "k_in", "mean_jaccard", "n_activities", "bridge"],
    );
    for (i, r) in rows.iter().enumerate() {
        t.push(vec![
            Cell::int(i + 1),
            Cell::text(&r.target),
            Cell::text(&r.title),
            Cell::pct(Some(r.rho)),
            Cell::int(r.k_in),
            Cell::frac(Some(r.mean_jaccard)),
            Cell::int(r.n_activities),
            Cell::int(r.bridge),
        ]);
    }
    t
}

pub fn gap_skill_table(rows: &[GapSkillStat]) -> Table {
    let mut t = Table::new(
        "table11_gap_skills",
        &["rank", "activity_id", "activity", "f_gap", "share", "cumulative"],
    );
    for (i, r) in rows.iter().enumerate() {
        t.push(vec![
            Cell::int(i + 1),
            Cell::text(&r.activity_id),
            Cell::text(&r.label),
            Cell::int(r.f_gap),
            Cell::share(Some(r.share)),
            Cell::share(Some(r.cumulative)),
        ]);
    }
    t
}

/// Exemplar pathways: `(source, target, rho_s, rho_t, delta_rho, jaccard)`.
pub fn exemplar_table(g: &KnowledgeGraph, rows: &[(&str, &str, f64, f64, f64, f64)]) -> Table {
    let mut t = Table::new(
        "table12_exemplars",
        &["source", "source_title", "target", "target_title", "rho_s", "rho_t", "delta_rho", "jaccard"],
    );
    let title = |id: &str| g.job_idx(id).map_or_else(String::new, |j| g.job(j).title.clone());
    for &(s, tg, rs, rt, d, j) in rows {
        t.push(vec![
            Cell::text(s),
            Cell::text(title(s)),
            Cell::text(tg),
            Cell::text(title(tg)),
            Cell::pct(Some(rs)),
            Cell::pct(Some(rt)),
            Cell::pct(Some(d)),
            Cell::frac(Some(j)),
        ]);
    }
    t
}

pub fn decomposition_table(rows: &[Decomposition]) -> Table {
    let mut t = Table::new(
        "table13_decomposition",
        &[
            "source",
            "target",
            "shared_activities",
            "gap_activities",
            "unused_activities",
            "shared_tools",
            "gap_tools",
            "unused_tools",
            "n_gap",
        ],
    );
    for d in rows {
        t.push(vec![
            Cell::text(&d.source),
            Cell::text(&d.target),
            Cell::text(d.shared_activities.join(";")),
            Cell::text(d.gap_activities.join(";")),
            Cell::text(d.unused_activities.join(";")),
            Cell::text(d.shared_tools.join(";")),
            Cell::text(d.gap_tools.join(";")),
            Cell::text(d.unused_tools.join(";")),
            Cell::int(d.n_gap),
        ]);
    }
    t
}

/// Node table `id,kind,label` in flat node order.
pub fn nodes_table(g: &KnowledgeGraph) -> Table {
    let mut t = Table::new("graph_nodes", &["id", "kind", "label"]);
    for id in 0..g.n_nodes() {
        t.push(vec![
            Cell::text(g.node_id_str(id)),
            Cell::text(g.node(id).0.as_str()),
            Cell::text(g.node_label(id)),
        ]);
    }
    t
}

/// Edge table `src,dst,kind`: PERFORMS edges then USES edges.
pub fn edges_table(g: &KnowledgeGraph) -> Table {
    let mut t = Table::new("graph_edges", &["src", "dst", "kind"]);
    let data = g.to_data();
    for (kind, edges) in [("performs", &data.performs), ("uses", &data.uses)] {
        for (a, b) in edges {
            t.push(vec![Cell::text(a), Cell::text(b), Cell::text(kind)]);
        }
    }
    t
}
