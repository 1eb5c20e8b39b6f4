use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{Interaction, InteractionLog};
use crate::error::{Error, Result};
use crate::serving::{knn, rank_order, EmbeddingTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngagementRecallConfig {
    /// evaluation hour t
    pub eval_hour: i64,
    /// triggers come from [t − window, t]
    pub window: i64,
    /// nearest neighbors retrieved per trigger
    pub neighbors: usize,
    /// ground truth from (t + horizon_start − 1, t + horizon_end]
    pub horizon_start: i64,
    pub horizon_end: i64,
    pub ks: Vec<usize>,
    /// per interaction type; unlisted types weigh 1
    pub type_weights: BTreeMap<String, f64>,
    /// evaluate hours t, t+1, ..., t+span−1 and pool the user-hours
    pub eval_span_hours: i64,
}

impl Default for EngagementRecallConfig {
    fn default() -> Self {
        Self {
            eval_hour: 168,
            window: 168,
            neighbors: 20,
            horizon_start: 1,
            horizon_end: 4,
            ks: vec![100, 200, 500],
            type_weights: BTreeMap::new(),
            eval_span_hours: 1,
        }
    }
}

impl EngagementRecallConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_start < 1 || self.horizon_end < self.horizon_start {
            return Err(Error::validation("horizon must satisfy 1 <= horizon_start <= horizon_end"));
        }
        if self.window < 0 || self.eval_span_hours < 1 {
            return Err(Error::validation("window must be >= 0 and eval_span_hours >= 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::validation("neighbors must be >= 1"));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::validation("ks must be non-empty with every k >= 1"));
        }
        if let Some((k, w)) = self.type_weights.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::validation(format!("type weight for {k:?} must be > 0, got {w}")));
        }
        Ok(())
    }

    fn type_weight(&self, kind: &str) -> f64 {
        self.type_weights.get(kind).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementRecallReport {
    pub recall: BTreeMap<usize, f64>,
    /// (user, hour) units with at least one ground-truth item
    pub users_evaluated: usize,
    /// (user, hour) units seen in the log without ground truth
    pub users_excluded: usize,
    /// trigger occurrences whose item is absent from the table
    pub skipped_triggers: usize,
    pub config: EngagementRecallConfig,
}

/// Trigger-expansion recall: each trigger item contributes its nearest
/// neighbors scored `trigger_weight × cosine`; duplicates keep the max.
pub fn eval_engagement_recall(
    table: &EmbeddingTable,
    log: &InteractionLog,
    cfg: &EngagementRecallConfig,
) -> Result<EngagementRecallReport> {
    cfg.validate()?;
    let mut by_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for r in log.records() {
        by_user.entry(r.user.as_str()).or_default().push(r);
    }
    let in_range = |user: &str, lo: i64, hi: i64| -> Vec<&Interaction> {
        by_user[user].iter().copied().filter(|r| r.hour >= lo && r.hour <= hi).collect()
    };
    let first = cfg.eval_hour;
    let last = cfg.eval_hour + cfg.eval_span_hours - 1;

    // neighbor lists for every item that can act as a trigger
    let mut trigger_items: Vec<u32> = log
        .between(first - cfg.window, last)
        .iter()
        .filter_map(|r| table.lookup(&r.item))
        .collect();
    trigger_items.sort_unstable();
    trigger_items.dedup();
    let lists: Vec<Vec<(u32, f64)>> = trigger_items
        .par_iter()
        .map(|&i| knn(table, i, cfg.neighbors))
        .collect::<Result<_>>()?;
    let neighbors: HashMap<u32, &Vec<(u32, f64)>> = trigger_items.iter().copied().zip(lists.iter()).collect();

    let k_max = *cfg.ks.iter().max().expect("validated non-empty");
    let units: Vec<(i64, &str)> = (first..=last).flat_map(|t| by_user.keys().map(move |&u| (t, u))).collect();
    let per_unit: Vec<(Option<Vec<f64>>, usize)> = units
        .par_iter()
        .map(|&(t, user)| {
            let truth: BTreeSet<&str> = in_range(user, t + cfg.horizon_start, t + cfg.horizon_end)
                .iter()
                .map(|r| r.item.as_str())
                .collect();
            let mut triggers: BTreeMap<u32, f64> = BTreeMap::new();
            let mut skipped = 0;
            for r in in_range(user, t - cfg.window, t) {
                match table.lookup(&r.item) {
                    Some(i) => *triggers.entry(i).or_insert(0.0) += r.weight * cfg.type_weight(&r.kind),
                    None => skipped += 1,
                }
            }
            if truth.is_empty() {
                return (None, skipped);
            }
            let mut best: BTreeMap<u32, f64> = BTreeMap::new();
            for (item, tw) in &triggers {
                for &(j, cos) in neighbors[item].iter() {
                    let s = tw * cos;
                    let e = best.entry(j).or_insert(f64::NEG_INFINITY);
                    if s > *e {
                        *e = s;
                    }
                }
            }
            let mut ranked: Vec<(u32, f64)> = best.into_iter().collect();
            ranked.sort_unstable_by(rank_order);
            ranked.truncate(k_max);
            let recalls = cfg
                .ks
                .iter()
                .map(|&k| {
                    let hits = ranked
                        .iter()
                        .take(k)
                        .filter(|(j, _)| truth.contains(table.external(*j)))
                        .count();
                    hits as f64 / truth.len() as f64
                })
                .collect();
            (Some(recalls), skipped)
        })
        .collect();

    let evaluated: Vec<&Vec<f64>> = per_unit.iter().filter_map(|(r, _)| r.as_ref()).collect();
    if evaluated.is_empty() {
        return Err(Error::validation("no user has ground-truth items in the horizon"));
    }
    let mut recall = BTreeMap::new();
    for (c, &k) in cfg.ks.iter().enumerate() {
        let total: f64 = evaluated.iter().map(|r| r[c]).sum();
        recall.insert(k, total / evaluated.len() as f64);
    }
    Ok(EngagementRecallReport {
        recall,
        users_evaluated: evaluated.len(),
        users_excluded: per_unit.len() - evaluated.len(),
        skipped_triggers: per_unit.iter().map(|(_, s)| s).sum(),
        config: cfg.clone(),
    })
}
