use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use super::schema::RelationId;
use super::store::HeteroGraph;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Positive training pairs drawn from one relation.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBatch {
    pub relation: RelationId,
    pub pairs: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
}

/// Weight-proportional edge sampler for one relation.
#[derive(Clone, Debug)]
pub struct EdgeSampler {
    relation: RelationId,
    edges: Vec<(u32, u32, f64)>,
    dist: WeightedIndex<f64>,
}

impl EdgeSampler {
    pub fn new(g: &HeteroGraph, relation: RelationId) -> Result<Self> {
        if relation >= g.relations().len() {
            return Err(Error::NotFound(format!("relation id {relation}")));
        }
        let edges = g.edges(relation);
        let name = &g.relation(relation).name;
        if edges.is_empty() {
            return Err(Error::validation(format!("relation {name:?} has no edges to sample")));
        }
        let dist = WeightedIndex::new(edges.iter().map(|e| e.2))
            .map_err(|e| Error::validation(format!("relation {name:?}: {e}")))?;
        Ok(Self { relation, edges, dist })
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> EdgeBatch {
        let mut pairs = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (s, d, w) = self.edges[self.dist.sample(rng)];
            pairs.push((s, d));
            weights.push(w);
        }
        EdgeBatch {
            relation: self.relation,
            pairs,
            weights,
        }
    }
}

/// One batch per listed relation, edges drawn with probability ∝ weight.
pub fn sample_edge_batch(
    g: &HeteroGraph,
    relations: &[RelationId],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<EdgeBatch>> {
    if batch_size == 0 {
        return Err(Error::validation("batch_size must be >= 1"));
    }
    relations
        .iter()
        .map(|&r| Ok(EdgeSampler::new(g, r)?.sample(batch_size, rng)))
        .collect()
}
