use rayon::prelude::*;

use super::table::{dot, EmbeddingTable};
use crate::error::{Error, Result};

/// Descending score, then ascending id. Scores are finite; `+0.0` and `-0.0` tie.
pub(crate) fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Keeps the best `k` of `scored` under [`rank_order`], sorted.
pub(crate) fn top_k(mut scored: Vec<(u32, f64)>, k: usize) -> Vec<(u32, f64)> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Exact top-`k` rows by cosine to row `query`, excluding the query itself.
pub fn knn(table: &EmbeddingTable, query: u32, k: usize) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    if query as usize >= table.len() {
        return Err(Error::NotFound(format!("node {query} not in table of {} rows", table.len())));
    }
    let q = table.row(query);
    let scored = (0..table.len() as u32)
        .filter(|&j| j != query)
        .map(|j| (j, dot(q, table.row(j))))
        .collect();
    Ok(top_k(scored, k))
}

/// [`knn`] addressed by external id.
pub fn knn_external(table: &EmbeddingTable, query: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = table.require(query)?;
    Ok(knn(table, q, k)?
        .into_iter()
        .map(|(j, s)| (table.external(j).to_string(), s))
        .collect())
}

/// Neighbor lists for every row, computed in parallel; order of the result is by row.
pub fn knn_all(table: &EmbeddingTable, k: usize) -> Result<Vec<Vec<(u32, f64)>>> {
    (0..table.len() as u32).into_par_iter().map(|q| knn(table, q, k)).collect()
}
