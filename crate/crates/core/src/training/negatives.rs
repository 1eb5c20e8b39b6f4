use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::numeric::Tensor;
use crate::rng::Rng;

/// Bounded FIFO of recent embedding rows for one (node type, head).
#[derive(Clone, Debug, PartialEq)]
pub struct NegativePool {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(u32, Vec<f64>)>,
}

impl NegativePool {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Appends one row, evicting the oldest once full.
    pub fn push(&mut self, node: u32, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape {
                op: "pool_push",
                left: (1, self.dim),
                right: (1, row.len()),
            });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((node, row.to_vec()));
        Ok(())
    }

    /// Inserts the listed rows of an embedding matrix in order.
    pub fn extend_from(&mut self, embeddings: &Tensor, nodes: &[u32]) -> Result<()> {
        for &n in nodes {
            self.push(n, embeddings.row(n as usize))?;
        }
        Ok(())
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.entries.iter().map(|(n, r)| (*n, r.as_slice()))
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<(u32, &[f64])>> {
        if self.entries.is_empty() {
            return Err(Error::validation("negative pool is empty"));
        }
        Ok((0..n)
            .map(|_| {
                let (node, row) = &self.entries[rng.random_range(0..self.entries.len())];
                (*node, row.as_slice())
            })
            .collect())
    }
}

/// In-batch negatives for one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InBatchNegatives {
    pub nodes: Vec<u32>,
    /// fewer eligible candidates than requested
    pub short: bool,
}

/// Draws up to `n_neg` distinct negatives for the anchor of `pairs[k]`.
///
/// Candidates are the partner endpoints of the other pairs in the batch,
/// minus the positive itself and minus any true neighbor of the anchor in
/// `anchor_adj` (rows indexed by anchor id). With `reverse` the pair is read
/// as (partner, anchor).
pub fn sample_in_batch_negatives(
    pairs: &[(u32, u32)],
    k: usize,
    reverse: bool,
    anchor_adj: &Csr,
    n_neg: usize,
    rng: &mut Rng,
) -> Result<InBatchNegatives> {
    let split = |p: (u32, u32)| if reverse { (p.1, p.0) } else { p };
    let (anchor, positive) = split(pairs[k]);
    let mut partners: Vec<u32> = pairs.iter().map(|&p| split(p).1).collect();
    partners.sort_unstable();
    partners.dedup();
    if partners.len() < 2 {
        return Err(Error::validation("in-batch negatives need at least 2 distinct destinations in the batch"));
    }
    let (nbrs, _) = anchor_adj.row(anchor as usize);
    let mut candidates: Vec<u32> = pairs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &p)| split(p).1)
        .filter(|&c| c != positive && nbrs.binary_search(&c).is_err())
        .collect();
    candidates.sort_unstable();
    candidates.dedup();
    let short = candidates.len() < n_neg;
    let take = n_neg.min(candidates.len());
    let nodes = index::sample(rng, candidates.len(), take)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    Ok(InBatchNegatives { nodes, short })
}

/// Heads whose embedding of the positive serves as a negative for `head`.
pub fn semantic_negative_heads(head: usize, n_heads: usize) -> Vec<usize> {
    (0..n_heads).filter(|&h| h != head).collect()
}

/// Rows of `per_head` (one row per head for the positive) other than `head`.
pub fn semantic_negatives(per_head: &Tensor, head: usize) -> Vec<Vec<f64>> {
    semantic_negative_heads(head, per_head.rows())
        .into_iter()
        .map(|h| per_head.row(h).to_vec())
        .collect()
}
