use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::table::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numeric::{Tensor, NORM_GUARD};
use crate::rng::Rng;

/// Spherical k-means result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `K × d`, unit rows
    pub centroids: Tensor,
    pub assignment: Vec<usize>,
    /// `Σ 1 − cos(x, c_x)` at the final assignment
    pub inertia: f64,
    /// inertia after each assignment step
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn assign(x: &Tensor, centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let assignment = (0..x.rows())
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for (c, cent) in centroids.iter().enumerate() {
                let s = dot(x.row(i), cent);
                if s > best.1 {
                    best = (c, s);
                }
            }
            inertia += (1.0 - best.1).max(0.0);
            best.0
        })
        .collect();
    (assignment, inertia)
}

fn seed_centroids(x: &Tensor, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|i| (1.0 - dot(x.row(i), x.row(chosen[0]))).max(0.0)).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every remaining row duplicates a chosen one
            let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            rest[rng.random_range(0..rest.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((1.0 - dot(x.row(i), x.row(next))).max(0.0));
        }
    }
    chosen
}

/// Spherical k-means with k-means++ seeding. Fails if inertia ever rises.
pub fn cluster(table: &EmbeddingTable, k: usize, max_iters: usize, rng: &mut Rng) -> Result<ClusterModel> {
    let x = table.matrix();
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!("cluster count must be in 1..={n}, got {k}")));
    }
    let d = x.cols();
    let mut centroids: Vec<Vec<f64>> = if k == n {
        (0..n).map(|i| x.row(i).to_vec()).collect()
    } else {
        seed_centroids(x, k, rng).into_iter().map(|i| x.row(i).to_vec()).collect()
    };
    let (mut assignment, mut inertia) = assign(x, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        for (i, &c) in assignment.iter().enumerate() {
            for (s, v) in sums[c].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for (c, s) in sums.iter().enumerate() {
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= NORM_GUARD {
                centroids[c] = s.iter().map(|v| v / norm).collect();
            }
        }
        let (next, next_inertia) = assign(x, &centroids);
        if next_inertia > inertia + 1e-9 * inertia.max(1.0) {
            return Err(Error::validation(format!(
                "k-means inertia rose from {inertia} to {next_inertia} at iteration {iterations}"
            )));
        }
        history.push(next_inertia);
        let stable = next == assignment;
        assignment = next;
        inertia = next_inertia;
        if stable {
            converged = true;
            break;
        }
    }
    Ok(ClusterModel {
        centroids: Tensor::from_vec(k, d, centroids.concat())?,
        assignment,
        inertia,
        history,
        iterations,
        converged,
    })
}
