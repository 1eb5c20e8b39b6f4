use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, RelationKind, TypeId};
use crate::rng::stream;
use crate::serving::{dot, top_k, EmbeddingTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeRecallConfig {
    pub sample_size: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
    /// relations to sample from; empty means all non-self-loop relations
    pub relations: Vec<String>,
}

impl Default for EdgeRecallConfig {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            ks: vec![5, 10, 50, 100],
            seed: 0,
            relations: Vec::new(),
        }
    }
}

impl EdgeRecallConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(Error::validation("sample_size must be >= 1"));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::validation("ks must be non-empty with every k >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecallReport {
    pub recall: BTreeMap<usize, f64>,
    pub sampled_edges: usize,
    /// distinct endpoints of the sampled edges (M)
    pub candidates: usize,
    pub seed: u64,
    pub config: EdgeRecallConfig,
}

/// Per-table lookup of `(type, local id)` rows by external id.
fn resolve<'a>(
    tables: &'a [EmbeddingTable],
    g: &HeteroGraph,
    node: (TypeId, u32),
) -> Result<&'a [f64]> {
    let type_name = &g.schema().node_types[node.0].name;
    let ext = g.ids().external(node.0, node.1);
    let table = tables
        .iter()
        .find(|t| t.node_type() == type_name)
        .ok_or_else(|| Error::NotFound(format!("no embedding table for node type {type_name:?}")))?;
    let row = table
        .lookup(ext)
        .ok_or_else(|| Error::NotFound(format!("node {type_name}:{ext} missing from embedding table")))?;
    Ok(table.row(row))
}

/// Next-period edge recall over the endpoints of a sample of edges.
pub fn eval_edge_recall(
    tables: &[EmbeddingTable],
    next: &HeteroGraph,
    cfg: &EdgeRecallConfig,
) -> Result<EdgeRecallReport> {
    cfg.validate()?;
    if let Some(t) = tables.iter().find(|t| t.head() != tables[0].head()) {
        return Err(Error::validation(format!("tables mix heads {} and {}", tables[0].head(), t.head())));
    }
    let relations: Vec<_> = if cfg.relations.is_empty() {
        (0..next.relations().len())
            .filter(|&r| next.relation(r).kind != RelationKind::SelfLoop)
            .collect()
    } else {
        cfg.relations
            .iter()
            .map(|n| next.schema().require_relation(n))
            .collect::<Result<_>>()?
    };
    let mut edges = Vec::new();
    for &r in &relations {
        let rel = next.relation(r);
        for (s, d, _) in next.edges(r) {
            edges.push(((rel.src_type, s), (rel.dst_type, d)));
        }
    }
    if edges.is_empty() {
        return Err(Error::validation("next-period graph has no edges to sample"));
    }
    let mut rng = stream(cfg.seed, "edge-recall");
    let take = cfg.sample_size.min(edges.len());
    let mut picked: Vec<usize> = index::sample(&mut rng, edges.len(), take).into_vec();
    picked.sort_unstable();
    let sample: Vec<_> = picked.iter().map(|&i| edges[i]).filter(|(a, b)| a != b).collect();

    let nodes: Vec<(TypeId, u32)> = sample
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |n: &(TypeId, u32)| nodes.binary_search(n).expect("endpoint is a candidate") as u32;
    let mut truth: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); nodes.len()];
    for (a, b) in &sample {
        let (i, j) = (pos(a), pos(b));
        truth[i as usize].insert(j);
        truth[j as usize].insert(i);
    }
    let rows: Vec<&[f64]> = nodes.iter().map(|&n| resolve(tables, next, n)).collect::<Result<_>>()?;
    let k_max = *cfg.ks.iter().max().expect("validated non-empty");

    let per_node: Vec<Vec<f64>> = (0..nodes.len())
        .into_par_iter()
        .filter(|&i| !truth[i].is_empty())
        .map(|i| {
            let scored = (0..nodes.len() as u32)
                .filter(|&j| j as usize != i)
                .map(|j| (j, dot(rows[i], rows[j as usize])))
                .collect();
            let ranked = top_k(scored, k_max);
            let gt = &truth[i];
            cfg.ks
                .iter()
                .map(|&k| {
                    let hits = ranked.iter().take(k).filter(|(j, _)| gt.contains(j)).count();
                    hits as f64 / gt.len() as f64
                })
                .collect()
        })
        .collect();
    let mut recall = BTreeMap::new();
    for (c, &k) in cfg.ks.iter().enumerate() {
        let total: f64 = per_node.iter().map(|r| r[c]).sum();
        recall.insert(k, total / per_node.len() as f64);
    }
    Ok(EdgeRecallReport {
        recall,
        sampled_edges: sample.len(),
        candidates: nodes.len(),
        seed: cfg.seed,
        config: cfg.clone(),
    })
}
