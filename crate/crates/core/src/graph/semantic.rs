//! Two-hop co-engagement: `w(u,v) = Σ_m w(u,m)·w(v,m)` over shared middle nodes.

use std::collections::HashMap;

use super::schema::{RelationId, RelationKind, TypeId};
use super::store::HeteroGraph;
use crate::error::{Error, Result};

/// Which endpoint of the relation the projected nodes belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Project source nodes through shared destinations.
    Source,
    /// Project destination nodes through shared sources.
    Destination,
}

/// Symmetric co-engagement edges over one endpoint type of `rel`.
///
/// A pair `{u, v}` (u ≠ v) is kept when its weight is positive, at least
/// `min_weight`, and `v` is among the `top_k` strongest partners of `u` or
/// vice versa (ties broken by ascending id). Both directions are returned,
/// sorted by `(src, dst)`.
pub fn co_engagement(
    g: &HeteroGraph,
    rel: RelationId,
    side: Side,
    top_k: usize,
    min_weight: f64,
) -> Result<Vec<(u32, u32, f64)>> {
    if rel >= g.relations().len() {
        return Err(Error::NotFound(format!("relation id {rel}")));
    }
    if top_k == 0 {
        return Err(Error::validation("top_k must be >= 1"));
    }
    // rows of `middle` are the shared nodes; entries are projected endpoints
    let middle = match side {
        Side::Source => g.in_csr(rel),
        Side::Destination => g.out_csr(rel),
    };
    let mut pair_weight: HashMap<(u32, u32), f64> = HashMap::new();
    for m in 0..middle.n_rows() {
        let (ends, ws) = middle.row(m);
        for a in 0..ends.len() {
            for b in a + 1..ends.len() {
                *pair_weight.entry((ends[a], ends[b])).or_insert(0.0) += ws[a] * ws[b];
            }
        }
    }

    let endpoint_type = projected_type(g, rel, side);
    let n = g.node_count(endpoint_type);
    let mut partners: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (&(u, v), &w) in &pair_weight {
        if w > 0.0 && w >= min_weight {
            partners[u as usize].push((v, w));
            partners[v as usize].push((u, w));
        }
    }
    let mut keep: Vec<(u32, u32, f64)> = Vec::new();
    for (u, list) in partners.iter_mut().enumerate() {
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(v, w) in list.iter().take(top_k) {
            keep.push((u as u32, v, w));
            keep.push((v, u as u32, w));
        }
    }
    keep.sort_by_key(|e| (e.0, e.1));
    keep.dedup_by_key(|e| (e.0, e.1));
    Ok(keep)
}

pub fn projected_type(g: &HeteroGraph, rel: RelationId, side: Side) -> TypeId {
    let r = g.relation(rel);
    match side {
        Side::Source => r.src_type,
        Side::Destination => r.dst_type,
    }
}

/// Adds a semantic relation over the source type of `via_relation`.
pub fn derive_semantic_edges(
    g: &HeteroGraph,
    via_relation: RelationId,
    new_relation_name: &str,
    top_k: usize,
    min_weight: f64,
) -> Result<HeteroGraph> {
    let edges = co_engagement(g, via_relation, Side::Source, top_k, min_weight)?;
    let t = g.relation(via_relation).src_type;
    g.with_relation(new_relation_name, t, t, RelationKind::Semantic, &edges)
}
