//! Planted-partition users × items with community features and an hourly log.

use std::collections::BTreeSet;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::log::{Interaction, InteractionLog};
use crate::error::{create_file, Error, Result};
use crate::graph::{FeatureBlock, GraphSchema, IdDictionary, RelationKind};
use crate::model::write_feature_rows;
use crate::numeric::Tensor;
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub w_in: f64,
    pub w_out: f64,
    /// user feature blocks, then the single item block
    pub user_block_dims: Vec<usize>,
    pub item_dim: usize,
    /// per-coordinate noise s.d. around unit-variance community centroids
    pub feature_noise: f64,
    /// share of current edges that recur in the next period
    pub persistence: f64,
    pub log_hours: i64,
    /// interaction probability per user per hour
    pub log_rate: f64,
    /// probability that a logged interaction stays inside the user's community
    pub log_intra: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 200,
            communities: 8,
            p_in: 0.2,
            p_out: 0.01,
            w_in: 1.0,
            w_out: 1.0,
            user_block_dims: vec![8, 8],
            item_dim: 16,
            feature_noise: 1.0,
            persistence: 0.5,
            log_hours: 196,
            log_rate: 0.03,
            log_intra: 0.9,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 {
            return Err(Error::validation("need at least 2 communities"));
        }
        if self.users < self.communities || self.items < self.communities {
            return Err(Error::validation("every community needs at least one user and one item"));
        }
        if !(self.p_in > self.p_out) {
            return Err(Error::validation(format!(
                "p_in ({}) must exceed p_out ({}) for a planted signal",
                self.p_in, self.p_out
            )));
        }
        let probs = [self.p_in, self.p_out, self.persistence, self.log_rate, self.log_intra];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("probabilities must lie in [0, 1]"));
        }
        if !(self.w_in > 0.0 && self.w_out > 0.0) {
            return Err(Error::validation("edge weights must be > 0"));
        }
        if self.user_block_dims.is_empty() || self.user_block_dims.contains(&0) || self.item_dim == 0 {
            return Err(Error::validation("feature dimensions must be >= 1"));
        }
        if !(self.feature_noise >= 0.0) || self.log_hours < 0 {
            return Err(Error::validation("feature_noise and log_hours must be >= 0"));
        }
        Ok(())
    }

    pub fn user_community(&self, u: usize) -> usize {
        u % self.communities
    }

    pub fn item_community(&self, i: usize) -> usize {
        i % self.communities
    }
}

pub type EdgeRecord = (String, String, String, f64);

/// Everything the generator writes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub schema: GraphSchema,
    pub nodes: IdDictionary,
    pub edges: Vec<EdgeRecord>,
    pub next_edges: Vec<EdgeRecord>,
    /// `[type][block]`, rows in dictionary order
    pub features: Vec<Vec<Tensor>>,
    pub log: InteractionLog,
    /// `[type][local id]`
    pub communities: Vec<Vec<usize>>,
}

fn user_id(u: usize) -> String {
    format!("u{u}")
}

fn item_id(i: usize) -> String {
    format!("i{i}")
}

fn sbm_edges(cfg: &SyntheticConfig, scale: f64, rng: &mut Rng) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            let p = if cfg.user_community(u) == cfg.item_community(i) { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p * scale {
                out.insert((u, i));
            }
        }
    }
    out
}

fn community_features(n: usize, dim: usize, community: impl Fn(usize) -> usize, c: usize, noise: f64, rng: &mut Rng) -> Result<Tensor> {
    let centroids: Vec<Vec<f64>> = (0..c).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        for &m in &centroids[community(i)] {
            let e: f64 = rng.sample(StandardNormal);
            data.push(m + noise * e);
        }
    }
    Tensor::from_vec(n, dim, data)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut schema = GraphSchema {
        node_types: Vec::new(),
        relations: Vec::new(),
    };
    let user_blocks = cfg
        .user_block_dims
        .iter()
        .enumerate()
        .map(|(j, &dim)| FeatureBlock {
            name: format!("u{j}"),
            dim,
        })
        .collect();
    let user = schema.add_node_type("user", user_blocks)?;
    let item = schema.add_node_type(
        "item",
        vec![FeatureBlock {
            name: "content".into(),
            dim: cfg.item_dim,
        }],
    )?;
    schema.add_relation("click", user, item, RelationKind::Engagement)?;
    schema.finalize()?;

    let mut nodes = IdDictionary::new(2);
    for u in 0..cfg.users {
        nodes.get_or_insert(0, &user_id(u));
    }
    for i in 0..cfg.items {
        nodes.get_or_insert(1, &item_id(i));
    }

    let weight = |u: usize, i: usize| {
        if cfg.user_community(u) == cfg.item_community(i) { cfg.w_in } else { cfg.w_out }
    };
    let record = |&(u, i): &(usize, usize)| ("click".to_string(), user_id(u), item_id(i), weight(u, i));

    let mut rng = stream(cfg.seed, "synthetic-edges");
    let current = sbm_edges(cfg, 1.0, &mut rng);
    let mut next: BTreeSet<(usize, usize)> =
        current.iter().copied().filter(|_| rng.random::<f64>() < cfg.persistence).collect();
    next.extend(sbm_edges(cfg, 1.0 - cfg.persistence, &mut rng));

    let mut rng = stream(cfg.seed, "synthetic-features");
    let c = cfg.communities;
    let mut user_blocks = Vec::new();
    for &dim in &cfg.user_block_dims {
        user_blocks.push(community_features(cfg.users, dim, |u| cfg.user_community(u), c, cfg.feature_noise, &mut rng)?);
    }
    let item_block = community_features(cfg.items, cfg.item_dim, |i| cfg.item_community(i), c, cfg.feature_noise, &mut rng)?;

    let mut rng = stream(cfg.seed, "synthetic-log");
    let by_community: Vec<Vec<usize>> = (0..c).map(|m| (0..cfg.items).filter(|&i| cfg.item_community(i) == m).collect()).collect();
    let kinds = [("click", 0.6), ("like", 0.3), ("share", 0.1)];
    let mut records = Vec::new();
    for hour in 0..cfg.log_hours {
        for u in 0..cfg.users {
            if rng.random::<f64>() >= cfg.log_rate {
                continue;
            }
            let home = cfg.user_community(u);
            let item = if rng.random::<f64>() < cfg.log_intra {
                let pool = &by_community[home];
                pool[rng.random_range(0..pool.len())]
            } else {
                loop {
                    let i = rng.random_range(0..cfg.items);
                    if cfg.item_community(i) != home {
                        break i;
                    }
                }
            };
            let mut r = rng.random::<f64>();
            let mut kind = kinds[kinds.len() - 1].0;
            for (k, p) in kinds {
                if r < p {
                    kind = k;
                    break;
                }
                r -= p;
            }
            records.push(Interaction {
                hour,
                user: user_id(u),
                item: item_id(item),
                kind: kind.to_string(),
                weight: 1.0,
            });
        }
    }

    Ok(SyntheticData {
        schema,
        nodes,
        edges: current.iter().map(record).collect(),
        next_edges: next.iter().map(record).collect(),
        features: vec![user_blocks, vec![item_block]],
        log: InteractionLog::new(records)?,
        communities: vec![
            (0..cfg.users).map(|u| cfg.user_community(u)).collect(),
            (0..cfg.items).map(|i| cfg.item_community(i)).collect(),
        ],
    })
}

fn write_edges(path: &Path, edges: &[EdgeRecord]) -> Result<()> {
    let mut w = BufWriter::new(create_file(path)?);
    for (r, s, d, wt) in edges {
        writeln!(w, "{r}\t{s}\t{d}\t{wt}")?;
    }
    w.flush()?;
    Ok(())
}

impl SyntheticData {
    /// Files written by [`SyntheticData::write_dir`].
    pub const FILES: [&'static str; 7] = [
        "schema.json",
        "nodes.tsv",
        "edges.tsv",
        "next_edges.tsv",
        "features.tsv",
        "log.tsv",
        "communities.tsv",
    ];

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(create_file(&dir.join("schema.json"))?);
        writeln!(w, "{}", self.schema.to_json())?;
        w.flush()?;
        self.nodes.save(&self.schema, &dir.join("nodes.tsv"))?;
        write_edges(&dir.join("edges.tsv"), &self.edges)?;
        write_edges(&dir.join("next_edges.tsv"), &self.next_edges)?;
        let mut w = BufWriter::new(create_file(&dir.join("features.tsv"))?);
        write_feature_rows(&self.schema, |t, i| self.nodes.external(t, i as u32).to_string(), &self.features, &mut w)?;
        w.flush()?;
        self.log.save(&dir.join("log.tsv"))?;
        let mut w = BufWriter::new(create_file(&dir.join("communities.tsv"))?);
        for (t, per) in self.communities.iter().enumerate() {
            let name = &self.schema.node_types[t].name;
            for (i, c) in per.iter().enumerate() {
                writeln!(w, "{name}\t{}\t{c}", self.nodes.external(t, i as u32))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Share of current-period edges whose endpoints share a community.
    pub fn intra_fraction(&self, cfg: &SyntheticConfig) -> f64 {
        let intra = self
            .edges
            .iter()
            .filter(|(_, u, i, _)| {
                let u: usize = u[1..].parse().expect("generated id");
                let i: usize = i[1..].parse().expect("generated id");
                cfg.user_community(u) == cfg.item_community(i)
            })
            .count();
        intra as f64 / self.edges.len().max(1) as f64
    }
}

/// Expected intra-community share of edges under the planted partition.
pub fn expected_intra_fraction(cfg: &SyntheticConfig) -> f64 {
    let (mut intra, mut inter) = (0.0, 0.0);
    for u in 0..cfg.users {
        for i in 0..cfg.items {
            if cfg.user_community(u) == cfg.item_community(i) {
                intra += cfg.p_in;
            } else {
                inter += cfg.p_out;
            }
        }
    }
    intra / (intra + inter)
}
