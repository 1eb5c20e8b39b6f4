//! Shared fixtures for the kernel benches.

use std::fmt::Write as _;

use rankgraph::eval::{generate_synthetic, SyntheticConfig};
use rankgraph::graph::{ingest_reader, HeteroGraph};
use rankgraph::model::FeatureStore;
use rankgraph::rng::stream;
use rankgraph::serving::EmbeddingTable;
use rankgraph::Tensor;
use rand_distr::{Distribution, StandardNormal};

/// Planted-partition graph with `n` users and `n` items, plus its features.
pub fn synthetic_graph(n: usize) -> (HeteroGraph, FeatureStore) {
    let cfg = SyntheticConfig {
        users: n,
        items: n,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&cfg).expect("valid generator config");
    let mut tsv = String::new();
    for (r, s, d, w) in &data.edges {
        writeln!(tsv, "{r}\t{s}\t{d}\t{w}").unwrap();
    }
    let g = ingest_reader(tsv.as_bytes(), &data.schema, Some(data.nodes)).expect("generated edges ingest");
    let features = FeatureStore::new(&g, data.features).expect("generated features fit");
    (g, features)
}

/// `n × d` table of random unit rows.
pub fn random_table(n: usize, d: usize, seed: u64) -> EmbeddingTable {
    let mut rng = stream(seed, "bench-table");
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(row.iter().map(|x| x / norm));
    }
    let m = Tensor::from_vec(n, d, data).expect("finite rows");
    let ids = (0..n).map(|i| format!("n{i}")).collect();
    EmbeddingTable::new("node", 0, [0; 32], m, ids).expect("consistent table")
}
