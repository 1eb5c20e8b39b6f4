use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rankgraph::eval::{
    eval_edge_recall, eval_engagement_recall, generate_synthetic, random_baseline_recall, EdgeRecallConfig,
    EngagementRecallConfig, Interaction, InteractionLog, SyntheticConfig,
};
use rankgraph::graph::{ingest_edges, ingest_reader, GraphSchema, HeteroGraph, IdDictionary};
use rankgraph::model::FeatureStore;
use rankgraph::rng::{stream, Rng};
use rankgraph::serving::EmbeddingTable;
use rankgraph::{Error, Tensor};

const PAIR_SCHEMA: &str = r#"{"node_types": [
    {"name": "user", "feature_blocks": [{"name": "a", "dim": 1}]},
    {"name": "item", "feature_blocks": [{"name": "b", "dim": 1}]}],
  "relations": [{"name": "click", "src": "user", "dst": "item", "kind": "engagement"}]}"#;

fn random_unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn one_hot(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn table(node_type: &str, rows: Vec<Vec<f64>>, ids: Vec<String>) -> EmbeddingTable {
    EmbeddingTable::new(node_type, 0, [0; 32], Tensor::from_rows(&rows).unwrap(), ids).unwrap()
}

/// `pairs` disjoint click edges u{p} → i{p}.
fn matching_graph(pairs: usize) -> HeteroGraph {
    let schema = GraphSchema::from_json(PAIR_SCHEMA).unwrap();
    let text: String = (0..pairs).map(|p| format!("click\tu{p}\ti{p}\t1\n")).collect();
    ingest_reader(text.as_bytes(), &schema, None).unwrap()
}

fn pair_tables(pairs: usize, mut row: impl FnMut(&str, usize) -> Vec<f64>) -> Vec<EmbeddingTable> {
    let mut out = Vec::new();
    for t in ["user", "item"] {
        let rows = (0..pairs).map(|p| row(t, p)).collect();
        let ids = (0..pairs).map(|p| format!("{}{p}", &t[..1])).collect();
        out.push(table(t, rows, ids));
    }
    out
}

#[test]
fn baseline_formula_and_clamping() {
    assert!((random_baseline_recall(101, 10).unwrap() - 0.1).abs() < 1e-15);
    assert_eq!(random_baseline_recall(50, 49).unwrap(), 1.0);
    assert_eq!(random_baseline_recall(50, 80).unwrap(), 1.0);
    assert!(random_baseline_recall(1, 1).is_err());
    assert!(random_baseline_recall(10, 0).is_err());
}

#[test]
fn mutual_nearest_neighbors_give_full_recall() {
    let pairs = 30;
    let g = matching_graph(pairs);
    let tables = pair_tables(pairs, |_, p| one_hot(pairs, p));
    let cfg = EdgeRecallConfig {
        sample_size: 1000,
        ks: vec![1, 5, 10, 50, 100],
        ..Default::default()
    };
    let report = eval_edge_recall(&tables, &g, &cfg).unwrap();
    assert_eq!(report.sampled_edges, pairs);
    assert_eq!(report.candidates, 2 * pairs);
    for (&k, &r) in &report.recall {
        assert_eq!(r, 1.0, "recall@{k}");
    }
}

#[test]
fn random_embeddings_match_the_analytic_baseline() {
    // 50 disjoint edges → M = 100 candidates, one partner each
    let pairs = 50;
    let g = matching_graph(pairs);
    let k = 10;
    let cfg = EdgeRecallConfig {
        ks: vec![k],
        ..Default::default()
    };
    let trials = 200;
    let mut total = 0.0;
    for seed in 0..trials {
        let mut rng = stream(seed, "mc");
        let tables = pair_tables(pairs, |_, _| random_unit(&mut rng, 16));
        let report = eval_edge_recall(&tables, &g, &cfg).unwrap();
        assert_eq!(report.candidates, 100);
        total += report.recall[&k];
    }
    let mean = total / trials as f64;
    let expected = random_baseline_recall(100, k).unwrap();
    assert!((mean - expected).abs() <= 0.02, "Monte-Carlo {mean} vs {expected}");
}

#[test]
fn missing_node_is_named() {
    let g = matching_graph(3);
    let mut tables = pair_tables(3, |_, p| one_hot(3, p));
    tables[1] = table("item", vec![one_hot(3, 0), one_hot(3, 1)], vec!["i0".into(), "i1".into()]);
    let err = eval_edge_recall(&tables, &g, &EdgeRecallConfig::default()).unwrap_err();
    assert!(matches!(&err, Error::NotFound(m) if m.contains("item:i2")), "{err}");
}

#[test]
fn edge_recall_sample_is_seeded() {
    let pairs = 40;
    let g = matching_graph(pairs);
    let mut rng = stream(3, "t");
    let tables = pair_tables(pairs, |_, _| random_unit(&mut rng, 8));
    let cfg = |seed| EdgeRecallConfig {
        sample_size: 10,
        ks: vec![1, 3],
        seed,
        ..Default::default()
    };
    let a = eval_edge_recall(&tables, &g, &cfg(5)).unwrap();
    let b = eval_edge_recall(&tables, &g, &cfg(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sampled_edges, 10);
    assert_eq!(a.candidates, 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn edge_recall_is_monotone_and_complete(seed in any::<u64>(), n_edges in 3usize..40) {
        let mut rng = stream(seed, "edges");
        let schema = GraphSchema::from_json(PAIR_SCHEMA).unwrap();
        let text: String = (0..n_edges)
            .map(|_| format!("click\tu{}\ti{}\t1\n", rng.random_range(0..12), rng.random_range(0..12)))
            .collect();
        let g = ingest_reader(text.as_bytes(), &schema, None).unwrap();
        let tables: Vec<EmbeddingTable> = [0, 1]
            .iter()
            .map(|&t| {
                let name = &schema.node_types[t].name;
                let ids = g.ids().externals(t).to_vec();
                let rows = ids.iter().map(|_| random_unit(&mut rng, 4)).collect();
                table(name, rows, ids)
            })
            .collect();
        let m = g.total_nodes();
        let ks: Vec<usize> = (1..m).collect();
        let cfg = EdgeRecallConfig { ks, seed, ..Default::default() };
        let report = eval_edge_recall(&tables, &g, &cfg).unwrap();
        let values: Vec<f64> = report.recall.values().copied().collect();
        for w in values.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert_eq!(report.recall[&(report.candidates - 1)], 1.0);
    }
}

fn item_table(rows: Vec<Vec<f64>>) -> EmbeddingTable {
    let ids = (0..rows.len()).map(|i| format!("i{i}")).collect();
    table("item", rows, ids)
}

fn hit(hour: i64, user: &str, item: usize, kind: &str, weight: f64) -> Interaction {
    Interaction {
        hour,
        user: user.into(),
        item: format!("i{item}"),
        kind: kind.into(),
        weight,
    }
}

fn engagement_cfg(ks: Vec<usize>, neighbors: usize) -> EngagementRecallConfig {
    EngagementRecallConfig {
        eval_hour: 10,
        window: 10,
        neighbors,
        ks,
        ..Default::default()
    }
}

#[test]
fn predicted_horizon_items_give_full_recall() {
    // i0 and i1 are near-duplicates; u triggers on i0 and engages with i1
    let t = item_table(vec![vec![1.0, 0.0], vec![0.99, 0.141067359796659], vec![0.0, 1.0], vec![-1.0, 0.0]]);
    let log = InteractionLog::new(vec![hit(5, "u", 0, "click", 1.0), hit(12, "u", 1, "click", 1.0)]).unwrap();
    let report = eval_engagement_recall(&t, &log, &engagement_cfg(vec![1, 2, 3], 1)).unwrap();
    assert_eq!(report.recall[&1], 1.0);
    assert_eq!(report.users_evaluated, 1);
}

#[test]
fn disjoint_predictions_give_zero_recall() {
    let t = item_table(vec![vec![1.0, 0.0], vec![0.99, 0.141067359796659], vec![0.0, 1.0], vec![-1.0, 0.0]]);
    let log = InteractionLog::new(vec![hit(5, "u", 0, "click", 1.0), hit(12, "u", 3, "click", 1.0)]).unwrap();
    let report = eval_engagement_recall(&t, &log, &engagement_cfg(vec![1, 2], 2)).unwrap();
    assert_eq!(report.recall[&1], 0.0);
    assert_eq!(report.recall[&2], 0.0);
}

#[test]
fn no_ground_truth_is_an_error_and_absent_triggers_are_counted() {
    let t = item_table(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let log = InteractionLog::new(vec![hit(5, "u", 0, "click", 1.0), hit(30, "u", 1, "click", 1.0)]).unwrap();
    assert!(eval_engagement_recall(&t, &log, &engagement_cfg(vec![1], 1)).is_err());

    let log = InteractionLog::new(vec![
        hit(5, "u", 0, "click", 1.0),
        hit(6, "u", 9, "click", 1.0),
        hit(11, "u", 1, "click", 1.0),
    ])
    .unwrap();
    let report = eval_engagement_recall(&t, &log, &engagement_cfg(vec![1], 1)).unwrap();
    assert_eq!(report.skipped_triggers, 1);
}

#[test]
fn users_without_ground_truth_are_excluded() {
    let t = item_table(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let log = InteractionLog::new(vec![
        hit(5, "a", 0, "click", 1.0),
        hit(11, "a", 0, "click", 1.0),
        hit(5, "b", 1, "click", 1.0),
    ])
    .unwrap();
    let report = eval_engagement_recall(&t, &log, &engagement_cfg(vec![1], 1)).unwrap();
    assert_eq!((report.users_evaluated, report.users_excluded), (1, 1));
}

#[test]
fn trigger_weight_outweighs_similarity() {
    // strong trigger i0 (weight 3) at cos 0.5 beats weak trigger i2 (weight 1) at cos 0.9
    let s = (1.0f64 - 0.25).sqrt();
    let s2 = (1.0f64 - 0.81).sqrt();
    let t = item_table(vec![vec![1.0, 0.0, 0.0], vec![0.5, s, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, s2, 0.9]]);
    let log = InteractionLog::new(vec![
        hit(5, "u", 0, "share", 1.0),
        hit(5, "u", 2, "click", 1.0),
        hit(11, "u", 1, "click", 1.0),
    ])
    .unwrap();
    let mut cfg = engagement_cfg(vec![1], 1);
    cfg.type_weights = BTreeMap::from([("share".to_string(), 3.0)]);
    // neighbour lists: i0 → i1 (cos 0.5), i2 → i3 (cos 0.9); scores 1.5 vs 0.9
    assert_eq!(eval_engagement_recall(&t, &log, &cfg).unwrap().recall[&1], 1.0);
    cfg.type_weights.clear();
    assert_eq!(eval_engagement_recall(&t, &log, &cfg).unwrap().recall[&1], 0.0);
}

fn random_log(rng: &mut Rng, n_items: usize) -> InteractionLog {
    let kinds = ["click", "like", "share"];
    let records = (0..400)
        .map(|_| {
            hit(
                rng.random_range(0..30),
                &format!("u{}", rng.random_range(0..15)),
                rng.random_range(0..n_items),
                kinds[rng.random_range(0..3)],
                rng.random_range(0.5..2.0),
            )
        })
        .collect();
    InteractionLog::new(records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn engagement_recall_monotone_and_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = stream(seed, "engagement");
        let n_items = 60;
        let t = item_table((0..n_items).map(|_| random_unit(&mut rng, 5)).collect());
        let log = random_log(&mut rng, n_items);
        let weights = BTreeMap::from([
            ("click".to_string(), 1.0),
            ("like".to_string(), 2.5),
            ("share".to_string(), 4.0),
        ]);
        let cfg = EngagementRecallConfig {
            eval_hour: 15,
            window: 10,
            neighbors: 5,
            ks: vec![1, 5, 10, 20, 40],
            type_weights: weights.clone(),
            eval_span_hours: 5,
            ..Default::default()
        };
        let base = eval_engagement_recall(&t, &log, &cfg).unwrap();
        let values: Vec<f64> = base.recall.values().copied().collect();
        for w in values.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let scaled = EngagementRecallConfig {
            type_weights: weights.iter().map(|(k, v)| (k.clone(), v * scale)).collect(),
            ..cfg.clone()
        };
        let other = eval_engagement_recall(&t, &log, &scaled).unwrap();
        for k in &cfg.ks {
            prop_assert!((base.recall[k] - other.recall[k]).abs() <= 1e-10);
        }
        prop_assert_eq!(eval_engagement_recall(&t, &log, &cfg).unwrap(), base);
    }
}

#[test]
fn log_round_trips_through_tsv() {
    let mut rng = stream(1, "log");
    let log = random_log(&mut rng, 10);
    let mut buf = Vec::new();
    log.write_tsv(&mut buf).unwrap();
    assert_eq!(InteractionLog::read_tsv(buf.as_slice()).unwrap(), log);
    assert!(InteractionLog::read_tsv("1\tu\ti\tclick\t0\n".as_bytes()).is_err());
    assert!(InteractionLog::read_tsv("1\tu\ti\tclick\n".as_bytes()).is_err());
}

#[test]
fn generator_rejects_flat_partition() {
    let cfg = SyntheticConfig {
        p_in: 0.05,
        p_out: 0.05,
        ..Default::default()
    };
    assert!(generate_synthetic(&cfg).is_err());
    let cfg = SyntheticConfig {
        communities: 1,
        ..Default::default()
    };
    assert!(generate_synthetic(&cfg).is_err());
}

#[test]
fn generator_is_seeded() {
    let cfg = SyntheticConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        generate_synthetic(&cfg).unwrap().write_dir(d.path()).unwrap();
    }
    for f in rankgraph::eval::SyntheticData::FILES {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let other = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(other.edges, generate_synthetic(&SyntheticConfig::default()).unwrap().edges);
}

#[test]
fn default_intra_fraction_matches_block_sizes() {
    // 8 communities of 25 users and 25 items each
    let cfg = SyntheticConfig::default();
    let intra_pairs = 8.0 * 25.0 * 25.0;
    let inter_pairs = 200.0 * 200.0 - intra_pairs;
    let expected: f64 = intra_pairs * 0.2 / (intra_pairs * 0.2 + inter_pairs * 0.01);
    assert!((expected - 1000.0 / 1350.0).abs() < 1e-12);
    assert!((rankgraph::eval::expected_intra_fraction(&cfg) - expected).abs() < 1e-12);
    let data = generate_synthetic(&cfg).unwrap();
    let observed = data.intra_fraction(&cfg);
    assert!((observed - expected).abs() < 0.03, "observed {observed}, expected {expected}");
    let n = data.edges.len() as f64;
    assert!((n - 1350.0).abs() < 4.0 * 1350f64.sqrt(), "edge count {n}");
}

#[test]
fn noiseless_features_have_intra_community_neighbors() {
    let cfg = SyntheticConfig {
        feature_noise: 0.0,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    for (t, blocks) in data.features.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..blocks[0].rows())
            .map(|i| blocks.iter().flat_map(|b| b.row(i).to_vec()).collect())
            .collect();
        for (i, a) in rows.iter().enumerate() {
            let nearest = (0..rows.len())
                .filter(|&j| j != i)
                .min_by(|&x, &y| {
                    let d = |j: usize| a.iter().zip(&rows[j]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                    d(x).total_cmp(&d(y))
                })
                .unwrap();
            assert_eq!(data.communities[t][i], data.communities[t][nearest]);
        }
    }
}

#[test]
fn generated_files_pass_ingestion() {
    let cfg = SyntheticConfig::default();
    let data = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write_dir(dir.path()).unwrap();
    let p = |f: &str| dir.path().join(f);
    let schema = GraphSchema::load(&p("schema.json")).unwrap();
    assert_eq!(schema, data.schema);
    let ids = IdDictionary::load(&schema, &p("nodes.tsv")).unwrap();
    let g = ingest_edges(&p("edges.tsv"), &schema, Some(ids.clone())).unwrap();
    g.validate().unwrap();
    assert_eq!(g.node_count(0), cfg.users);
    assert_eq!(g.node_count(1), cfg.items);
    assert_eq!(g.edge_count(schema.require_relation("click").unwrap()), data.edges.len());
    let next = ingest_edges(&p("next_edges.tsv"), &schema, Some(ids)).unwrap();
    assert_eq!(next.ids(), g.ids());
    let features = FeatureStore::load(&g, &p("features.tsv")).unwrap();
    assert_eq!(features.block(1, 0), &data.features[1][0]);
    let log = InteractionLog::load(&p("log.tsv")).unwrap();
    assert_eq!(log, data.log);
    assert!(log.records().iter().all(|r| g.ids().get(0, &r.user).is_some() && g.ids().get(1, &r.item).is_some()));
}
