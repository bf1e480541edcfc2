//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillgraph::cluster::{clusters_from_truth, collect_forms, validation::{wilson_interval, Z_95}, EntityKind};
use skillgraph::corpus::{generate_synthetic_corpus, Importance, SynthConfig, Task};
use skillgraph::graph::{
    bipartite_density, build_graph, louvain_on_edges, mean_degree, modularity_of_edges, CommunityPartition,
    GraphBuilder, KnowledgeGraph,
};
use skillgraph::metrics::{
    betweenness, connection_pairs, connection_pairs_from_counts, importance_table, rank_by_importance, Tier,
};
use skillgraph::pipeline::{Pipeline, PipelineConfig};
use skillgraph::report::{format_fixed, Format};
use skillgraph::risk::{aggregate_by_isco, categorize_risk, compute_risk, low_share, JobRiskProfile, RiskIndex};
use skillgraph::transitions::{enumerate_transition_network, table14_grid};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    check(elapsed < limit, format!("{what} took {elapsed:?}, limit {limit:?}"))
}

fn wilson_reproduction() -> Outcome {
    let start = Instant::now();
    let combined = wilson_interval(8, 1085, Z_95).map_err(|e| e.to_string())?;
    let activities = wilson_interval(0, 565, Z_95).map_err(|e| e.to_string())?;
    let tools = wilson_interval(8, 520, Z_95).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_millis(1), "three intervals")?;
    let pct = |x: f64| format_fixed(100.0 * x, 2);
    let rendered = (pct(combined.0), pct(combined.1));
    check(rendered == ("0.37".into(), "1.45".into()), format!("(8, 1085) rendered {rendered:?}"))?;
    for ((lo, hi), (plo, phi)) in [(activities, (0.00, 0.67)), (tools, (0.78, 3.00))] {
        check(
            (100.0 * lo - plo).abs() <= 0.02 && (100.0 * hi - phi).abs() <= 0.02,
            format!("[{:.4}, {:.4}] vs printed [{plo}, {phi}]", 100.0 * lo, 100.0 * hi),
        )?;
    }
    Ok(format!(
        "[{}%, {}%], [{}%, {}%], [{}%, {}%]",
        rendered.0,
        rendered.1,
        pct(activities.0),
        pct(activities.1),
        pct(tools.0),
        pct(tools.1)
    ))
}

fn topology_arithmetic() -> Outcome {
    let start = Instant::now();
    let k = mean_degree(84_346, 9_978);
    let d = bipartite_density(84_346, 9_978, 19_766);
    within(start.elapsed(), Duration::from_millis(1), "topology formulas")?;
    let (k, d) = (format_fixed(k, 2), format_fixed(d, 5));
    check(k == "8.45" && d == "0.00043", format!("mean degree {k}, density {d}"))?;
    Ok(format!("mean degree {k}, density {d}"))
}

fn heterogeneity_semantics() -> Outcome {
    let rows = [(76, 25, 24.8), (230, 163, 41.5), (168, 137, 44.9), (41, 106, 72.1)];
    let mut got = Vec::new();
    for (high, low, printed) in rows {
        let share = 100.0 * low_share(high, low).ok_or("undefined share")?;
        check((share - printed).abs() <= 0.05, format!("({high}, {low}) -> {share:.3}, printed {printed}"))?;
        got.push(format_fixed(share, 1));
    }
    Ok(got.join(", "))
}

/// Rows 1-10 of the importance table: (k, d_isco, printed product, mean rho, printed tier).
const IMPORTANCE_ROWS: [(usize, usize, u64, f64, Tier); 10] = [
    (529, 27, 14_283, 42.3, Tier::Universal),
    (387, 27, 10_449, 34.6, Tier::Universal),
    (577, 15, 8_655, 33.0, Tier::Tier1),
    (328, 22, 7_216, 40.8, Tier::Tier2),
    (355, 18, 6_390, 33.0, Tier::Tier1),
    (293, 21, 6_153, 38.9, Tier::Tier2),
    (321, 17, 5_457, 37.8, Tier::Tier2),
    (411, 12, 4_932, 30.7, Tier::Tier1),
    (342, 14, 4_788, 29.4, Tier::Tier1),
    (467, 10, 4_670, 28.7, Tier::Tier1),
];

fn importance_products() -> Outcome {
    // One activity per row, performed by k dedicated jobs spread over d ISCO-2 groups.
    let mut b = GraphBuilder::new();
    let mut profiles = Vec::new();
    for (row, &(k, d, _, rho, _)) in IMPORTANCE_ROWS.iter().enumerate() {
        let act = format!("A{row:02}");
        b.activity(&act, &act).map_err(|e| e.to_string())?;
        for i in 0..k {
            let id = format!("J{row:02}_{i:04}");
            let isco = format!("{:02}11", 10 + i % d);
            b.job(&id, &id, &isco).map_err(|e| e.to_string())?;
            b.performs(&id, &act).map_err(|e| e.to_string())?;
            profiles.push(JobRiskProfile {
                job_id: id,
                rho,
                category: categorize_risk(rho).map_err(|e| e.to_string())?,
            });
        }
    }
    let g = b.build();
    let risk = RiskIndex::from_profiles(profiles);
    let ranked = rank_by_importance(importance_table(&g, &risk).map_err(|e| e.to_string())?, 10);
    for (i, (r, &(k, d, product, _, tier))) in ranked.iter().zip(IMPORTANCE_ROWS.iter()).enumerate() {
        check(
            r.activity_id == format!("A{i:02}") && r.k as usize == k && r.d_isco as usize == d,
            format!("rank {} is {} (k {}, d {})", i + 1, r.activity_id, r.k, r.d_isco),
        )?;
        check(r.i_pr == product, format!("rank {}: {} != {product}", i + 1, r.i_pr))?;
        check(r.tier == tier, format!("rank {}: tier {:?} != {tier:?}", i + 1, r.tier))?;
    }
    check(ranked.len() == 10, "fewer than 10 rows")?;
    Ok("10/10 products and tiers".into())
}

fn random_bipartite(rng: &mut ChaCha8Rng, n_jobs: usize, n_acts: usize, p: f64) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    for a in 0..n_acts {
        b.activity(&format!("A{a}"), "a").unwrap();
    }
    for j in 0..n_jobs {
        b.job(&format!("J{j}"), "j", "1111").unwrap();
        for a in 0..n_acts {
            if rng.random_bool(p) {
                b.performs(&format!("J{j}"), &format!("A{a}")).unwrap();
            }
        }
    }
    b.build()
}

fn connection_pair_oracle() -> Outcome {
    check(connection_pairs_from_counts(&[10, 20]) == 200, "{10, 20} != 200")?;
    let mut nonzero = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_jobs = rng.random_range(3..25);
        let n_acts = rng.random_range(1..8);
        let g = random_bipartite(&mut rng, n_jobs, n_acts, 0.4);
        let assignment: Vec<usize> = (0..g.n_nodes()).map(|_| rng.random_range(0..3)).collect();
        let partition = CommunityPartition { assignment, q: 0.0 };
        for a in 0..g.n_activities() {
            let jobs = g.activity_jobs(a);
            // Pairwise oracle: unordered job pairs split across communities.
            let mut pairs = 0u64;
            for (i, &x) in jobs.iter().enumerate() {
                for &y in &jobs[i + 1..] {
                    if partition.community_of(g.job_node(x)) != partition.community_of(g.job_node(y)) {
                        pairs += 1;
                    }
                }
            }
            let got = connection_pairs(&g, &partition, &g.activity(a).id).map_err(|e| e.to_string())?;
            check(got == pairs, format!("seed {seed}, activity {a}: {got} != {pairs}"))?;
            nonzero += usize::from(pairs > 0);
        }
    }
    check(nonzero > 100, format!("only {nonzero} non-trivial cases"))?;
    Ok(format!("100 seeds, {nonzero} activities with c_p > 0"))
}

fn bfs(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut queue = std::collections::VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(dist[v].unwrap() + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Every shortest s-t path, found by depth-first search along edges that
/// reduce the distance to t by one.
fn shortest_paths(adj: &[Vec<usize>], s: usize, dist_t: &[Option<usize>]) -> Vec<Vec<usize>> {
    fn walk(adj: &[Vec<usize>], v: usize, dist_t: &[Option<usize>], path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if dist_t[v] == Some(0) {
            out.push(path.clone());
            return;
        }
        for &w in &adj[v] {
            if dist_t[w].is_some() && dist_t[w].unwrap() + 1 == dist_t[v].unwrap() {
                path.push(w);
                walk(adj, w, dist_t, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    if dist_t[s].is_some() {
        walk(adj, s, dist_t, &mut vec![s], &mut out);
    }
    out
}

fn betweenness_oracle() -> Outcome {
    let start = Instant::now();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let n = rng.random_range(2..=12);
        let p = rng.random_range(0.15..0.6);
        let mut adj = vec![Vec::new(); n];
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    adj[u].push(v);
                    adj[v].push(u);
                }
            }
        }
        let mut oracle = vec![0.0; n];
        for t in 0..n {
            let dist_t = bfs(&adj, t);
            for s in 0..t {
                let paths = shortest_paths(&adj, s, &dist_t);
                if paths.is_empty() {
                    continue;
                }
                let total = paths.len() as f64;
                for path in &paths {
                    for &v in &path[1..path.len() - 1] {
                        oracle[v] += 1.0 / total;
                    }
                }
            }
        }
        let got = betweenness(&adj);
        for v in 0..n {
            check(
                (got[v] - oracle[v]).abs() < 1e-9,
                format!("seed {seed}, node {v}: {} != {}", got[v], oracle[v]),
            )?;
        }
    }
    within(start.elapsed(), Duration::from_secs(5), "50 graphs")?;
    Ok(format!("50 graphs in {:?}", start.elapsed()))
}

fn modularity_identities() -> Outcome {
    let triangles = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)];
    let whole = modularity_of_edges(&triangles, &[0; 6]);
    check(whole.abs() < 1e-12, format!("Q(all-in-one) = {whole}"))?;
    let split = modularity_of_edges(&triangles, &[0, 0, 0, 1, 1, 1]);
    check((split - 0.5).abs() < 1e-12, format!("Q(two K3) = {split}"))?;
    let mut bridged = triangles.to_vec();
    bridged.push((2, 3));
    for seed in 0..10 {
        let found = louvain_on_edges(6, &bridged, seed);
        check(found == vec![0, 0, 0, 1, 1, 1], format!("seed {seed}: {found:?}"))?;
    }
    Ok(format!("Q(one) = {whole:.1e}, Q(two K3) = {split}, bridged pair recovered on 10 seeds"))
}

type PathwayKey = (String, String, usize);

fn transition_oracle() -> Outcome {
    let grid = table14_grid();
    let mut total = 0usize;
    let mut nested = 0usize;
    for seed in 0..100u64 {
        let cfg = SynthConfig {
            seed,
            n_jobs: 8 + (seed as usize % 23),
            canonical_activities: 12,
            canonical_tools: 4,
            synonym_variants_per_canonical: (1, 3),
            ..SynthConfig::default()
        };
        let synth = generate_synthetic_corpus(&cfg).map_err(|e| e.to_string())?;
        let corpus = &synth.corpus;
        let keys = synth.truth.canonical_keys();
        let acts = collect_forms(corpus.postings.iter().flat_map(|p| &p.activities));
        let tools = collect_forms(corpus.postings.iter().flat_map(|p| &p.tools));
        let g = build_graph(
            corpus,
            &clusters_from_truth(&acts, &keys, EntityKind::Activity),
            &clusters_from_truth(&tools, &keys, EntityKind::Tool),
        )
        .map_err(|e| e.to_string())?;
        let risk = RiskIndex::from_corpus(corpus).map_err(|e| e.to_string())?;

        // Oracle neighborhoods come straight from the postings.
        let hoods: Vec<(String, BTreeSet<String>, f64)> = corpus
            .postings
            .iter()
            .map(|p| {
                let ns = p.activities.iter().map(|f| keys.get(f).cloned().unwrap_or_else(|| f.clone())).collect();
                (p.id.clone(), ns, risk.rho(&p.id).unwrap())
            })
            .collect();
        let mut sets: Vec<BTreeSet<PathwayKey>> = Vec::new();
        for tc in &grid {
            let mut oracle = BTreeSet::new();
            for (s, ns, rs) in &hoods {
                if *rs < 60.0 {
                    continue;
                }
                for (t, nt, rt) in &hoods {
                    let shared = ns.intersection(nt).count();
                    let transfer_ok = tc.phi.is_none_or(|phi| shared as f64 / ns.len() as f64 >= phi);
                    if s != t && shared >= tc.tau && transfer_ok && rt < rs {
                        oracle.insert((s.clone(), t.clone(), shared));
                    }
                }
            }
            let got: BTreeSet<PathwayKey> = enumerate_transition_network(&g, &risk, tc)
                .map_err(|e| e.to_string())?
                .pathways
                .into_iter()
                .map(|p| (p.source, p.target, p.shared_count))
                .collect();
            check(
                got == oracle,
                format!("seed {seed}, (tau {}, phi {}): {} vs oracle {}", tc.tau, tc.phi_label(), got.len(), oracle.len()),
            )?;
            total += got.len();
            sets.push(got);
        }
        for (i, a) in grid.iter().enumerate() {
            for (j, b) in grid.iter().enumerate() {
                if i != j && a.is_looser_or_equal(b) {
                    check(sets[j].is_subset(&sets[i]), format!("seed {seed}: config {j} not within config {i}"))?;
                    nested += 1;
                }
            }
        }
    }
    check(total > 0, "no pathways in any corpus")?;
    Ok(format!("100 corpora x {} configs, {total} pathways, {nested} nesting checks", grid.len()))
}

fn risk_formula() -> Outcome {
    let t = |imp, auto| Task::new("t", imp, auto);
    let cases = [
        (vec![t(Importance::Primary, true)], 100.0),
        (
            vec![t(Importance::Primary, true), t(Importance::Secondary, false), t(Importance::Ancillary, true)],
            70.0,
        ),
        (
            vec![t(Importance::Primary, false), t(Importance::Secondary, false), t(Importance::Ancillary, false)],
            0.0,
        ),
    ];
    for (tasks, want) in &cases {
        let got = compute_risk(tasks).map_err(|e| e.to_string())?;
        check(got == *want, format!("{got} != {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2_024);
    let imps = [Importance::Primary, Importance::Secondary, Importance::Ancillary];
    let mut flips = 0;
    for case in 0..1_000 {
        let n = rng.random_range(1..=15);
        let mut tasks: Vec<Task> = (0..n)
            .map(|_| t(imps[rng.random_range(0..3)], rng.random_bool(0.5)))
            .collect();
        let before = compute_risk(&tasks).map_err(|e| e.to_string())?;
        if let Some(i) = (0..n).find(|&i| !tasks[i].automatable) {
            tasks[i].automatable = true;
            let after = compute_risk(&tasks).map_err(|e| e.to_string())?;
            check(after >= before, format!("case {case}: {before} -> {after}"))?;
            flips += 1;
        }
    }
    Ok(format!("3 examples exact, {flips} monotonicity flips over 1000 lists"))
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    let mut slowest = Duration::ZERO;
    for run in ["a", "b"] {
        let mut cfg = PipelineConfig::from_toml_str("seed = 7\n[corpus.synthetic]\nn_jobs = 500\n").map_err(|e| e.to_string())?;
        cfg.out_dir = tmp.path().join(run);
        let start = Instant::now();
        let manifest = Pipeline::new(cfg, Format::Csv).and_then(|p| p.run()).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        manifests.push(manifest);
    }
    within(slowest, Duration::from_secs(60), "pipeline run")?;
    check(manifests[0] == manifests[1], "manifests differ")?;
    let a = std::fs::read(tmp.path().join("a/manifest.json")).map_err(|e| e.to_string())?;
    let b = std::fs::read(tmp.path().join("b/manifest.json")).map_err(|e| e.to_string())?;
    check(a == b, "manifest files differ")?;
    Ok(format!("{} files identical, slowest run {:?}", manifests[0].files.len(), slowest))
}

fn synthetic_gradient() -> Outcome {
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let cfg = SynthConfig {
            seed,
            automatable_bias: BTreeMap::from([(4, 0.7), (1, 0.2)]),
            ..SynthConfig::default()
        };
        let corpus = generate_synthetic_corpus(&cfg).map_err(|e| e.to_string())?.corpus;
        let risk = RiskIndex::from_corpus(&corpus).map_err(|e| e.to_string())?;
        let agg = aggregate_by_isco(&risk, &corpus, 1, 1).map_err(|e| e.to_string())?;
        let mean = |code: &str| agg.rows.iter().find(|r| r.group_code == code).map(|r| r.mean_rho);
        let (m4, m1) = (mean("4").ok_or("no ISCO 4 group")?, mean("1").ok_or("no ISCO 1 group")?);
        check(m4 > m1, format!("seed {seed}: ISCO 4 {m4:.1} <= ISCO 1 {m1:.1}"))?;
        gaps.push(m4 - m1);
    }
    let min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!("10/10 seeds, smallest gap {min:.1} points"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("wilson interval reproduction", wilson_reproduction),
        ("topology arithmetic", topology_arithmetic),
        ("heterogeneity semantics", heterogeneity_semantics),
        ("importance products", importance_products),
        ("connection pairs", connection_pair_oracle),
        ("betweenness oracle equivalence", betweenness_oracle),
        ("modularity identities", modularity_identities),
        ("transition rule oracle equivalence", transition_oracle),
        ("risk formula", risk_formula),
        ("end-to-end determinism", end_to_end_determinism),
        ("synthetic gradient", synthetic_gradient),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
