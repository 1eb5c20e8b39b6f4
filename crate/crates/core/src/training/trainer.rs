use std::io::Write;

use super::adam::{adam_update, AdamState};
use super::config::TrainConfig;
use super::loss::{contrastive_loss, ContrastiveBatch, LossParts};
use super::negatives::{sample_in_batch_negatives, semantic_negative_heads, NegativePool};
use crate::error::{Error, Result};
use crate::graph::{EdgeBatch, EdgeSampler, HeteroGraph, RelationId, RelationKind, TypeId};
use crate::model::{forward_tape, init_params, Bound, FeatureStore, GraphPlan, ModelParams};
use crate::numeric::{Tape, Tensor, Var};
use crate::rng::{stream, Rng};

/// Losses and bookkeeping for one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub triplet: f64,
    pub infonce: f64,
    pub anchors: usize,
    /// anchors that got fewer in-batch negatives than requested
    pub short_anchors: usize,
}

impl StepMetrics {
    pub fn tsv_header() -> &'static str {
        "step\tloss\ttriplet\tinfonce"
    }

    pub fn tsv_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.loss, self.triplet, self.infonce)
    }
}

/// Row index of `(head, type, id)` in the stacked embedding table.
#[derive(Clone, Debug)]
pub struct TableIndex {
    offsets: Vec<usize>,
    total: usize,
}

impl TableIndex {
    pub fn new(g: &HeteroGraph) -> Self {
        let mut offsets = Vec::with_capacity(g.n_types());
        let mut total = 0;
        for t in 0..g.n_types() {
            offsets.push(total);
            total += g.node_count(t);
        }
        Self { offsets, total }
    }

    pub fn row(&self, head: usize, t: TypeId, id: u32) -> usize {
        head * self.total + self.offsets[t] + id as usize
    }
}

/// Stacks `[head][type]` embedding matrices into one table, head-major.
pub fn stack_embeddings(tape: &mut Tape, embeddings: &[Vec<Var>]) -> Result<Var> {
    let all: Vec<Var> = embeddings.iter().flatten().copied().collect();
    if all.len() == 1 {
        return Ok(all[0]);
    }
    tape.concat_rows(&all)
}

/// Forward pass plus contrastive loss for a fixed batch.
pub fn loss_on_tape(
    tape: &mut Tape,
    plan: &GraphPlan,
    features: &FeatureStore,
    params: &ModelParams,
    bound: &Bound,
    batch: &ContrastiveBatch,
    cfg: &TrainConfig,
) -> Result<(LossParts, Var)> {
    let out = forward_tape(tape, plan, features, params, bound)?;
    let table = stack_embeddings(tape, &out.embeddings)?;
    Ok((contrastive_loss(tape, table, batch, &cfg.loss)?, table))
}

/// Relations supplying positive pairs.
pub fn training_relations(g: &HeteroGraph, cfg: &TrainConfig) -> Result<Vec<RelationId>> {
    if cfg.relations.is_empty() {
        return Ok((0..g.relations().len())
            .filter(|&r| g.relation(r).kind != RelationKind::SelfLoop && g.edge_count(r) > 0)
            .collect());
    }
    cfg.relations.iter().map(|n| g.schema().require_relation(n)).collect()
}

pub struct Trainer<'a> {
    g: &'a HeteroGraph,
    features: &'a FeatureStore,
    config: TrainConfig,
    plan: GraphPlan,
    index: TableIndex,
    samplers: Vec<EdgeSampler>,
    params: ModelParams,
    adam: AdamState,
    /// `[type][head]`
    pools: Vec<Vec<NegativePool>>,
    batch_rng: Rng,
    neg_rng: Rng,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(g: &'a HeteroGraph, features: &'a FeatureStore, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(g.schema(), &config.model, &mut stream(seed, "init"))?;
        Self::with_params(g, features, config, params, seed)
    }

    pub fn with_params(
        g: &'a HeteroGraph,
        features: &'a FeatureStore,
        config: TrainConfig,
        params: ModelParams,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        params.check_schema(g.schema())?;
        if params.config() != &config.model {
            return Err(Error::validation("model config differs from the parameters' config"));
        }
        let plan = GraphPlan::new(g, &params.layout)?;
        let relations = training_relations(g, &config)?;
        if relations.is_empty() && config.steps > 0 {
            return Err(Error::validation("no relation with edges to train on"));
        }
        let samplers = relations
            .iter()
            .map(|&r| EdgeSampler::new(g, r))
            .collect::<Result<Vec<_>>>()?;
        let d_out = config.model.out_dim;
        let pools = (0..g.n_types())
            .map(|_| {
                (0..config.model.heads)
                    .map(|_| NegativePool::new(config.loss.pool_capacity, d_out))
                    .collect()
            })
            .collect();
        Ok(Self {
            g,
            features,
            plan,
            index: TableIndex::new(g),
            samplers,
            adam: AdamState::new(params.store.tensors()),
            params,
            pools,
            batch_rng: stream(seed, "batches"),
            neg_rng: stream(seed, "negatives"),
            step: 0,
            config,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn plan(&self) -> &GraphPlan {
        &self.plan
    }

    pub fn pools(&self) -> &[Vec<NegativePool>] {
        &self.pools
    }

    pub fn pools_mut(&mut self) -> &mut [Vec<NegativePool>] {
        &mut self.pools
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn sample_batches(&mut self) -> Vec<EdgeBatch> {
        let bs = self.config.batch_size;
        self.samplers.iter().map(|s| s.sample(bs, &mut self.batch_rng)).collect()
    }

    /// Turns sampled positives into anchor slots with all enabled negative sources.
    pub fn build_batch(&mut self, batches: &[EdgeBatch]) -> Result<(ContrastiveBatch, usize)> {
        let cfg = &self.config.loss;
        let heads = self.config.model.heads;
        let mut out = ContrastiveBatch::default();
        let mut short = 0;
        let directions: &[bool] = if self.config.symmetric { &[false, true] } else { &[false] };
        for batch in batches {
            let r = batch.relation;
            let rel = self.g.relation(r);
            let (src_t, dst_t) = (rel.src_type, rel.dst_type);
            let mut partners_fwd: Vec<u32> = batch.pairs.iter().map(|p| p.1).collect();
            let mut partners_rev: Vec<u32> = batch.pairs.iter().map(|p| p.0).collect();
            partners_fwd.sort_unstable();
            partners_fwd.dedup();
            partners_rev.sort_unstable();
            partners_rev.dedup();
            for &rev in directions {
                let (at, pt) = if rev { (dst_t, src_t) } else { (src_t, dst_t) };
                let adj = if rev { self.g.in_csr(r) } else { self.g.out_csr(r) };
                let distinct = if rev { partners_rev.len() } else { partners_fwd.len() };
                for k in 0..batch.pairs.len() {
                    let (a, p) = if rev {
                        (batch.pairs[k].1, batch.pairs[k].0)
                    } else {
                        batch.pairs[k]
                    };
                    let in_batch = if cfg.in_batch_negatives && distinct >= 2 {
                        let s = sample_in_batch_negatives(&batch.pairs, k, rev, adj, cfg.n_neg, &mut self.neg_rng)?;
                        short += usize::from(s.short);
                        s.nodes
                    } else {
                        Vec::new()
                    };
                    for h in 0..heads {
                        let slot = out.push_anchor(self.index.row(h, at, a), self.index.row(h, pt, p));
                        for &n in &in_batch {
                            out.live.push((slot, self.index.row(h, pt, n)));
                        }
                        if cfg.semantic_negatives {
                            for h2 in semantic_negative_heads(h, heads) {
                                let row = self.index.row(h2, pt, p);
                                if cfg.detach_semantic {
                                    out.detached.push((slot, row));
                                } else {
                                    out.live.push((slot, row));
                                }
                            }
                        }
                        let pool = &self.pools[pt][h];
                        if cfg.pool_negatives && !pool.is_empty() {
                            for (_, v) in pool.sample(cfg.n_neg, &mut self.neg_rng)? {
                                out.fixed.push((slot, v.to_vec()));
                            }
                        }
                        out.drop_slot_if_empty(slot);
                    }
                }
            }
        }
        Ok((out, short))
    }

    fn update_pools(&mut self, tape: &Tape, table: Var, batches: &[EdgeBatch]) -> Result<()> {
        let values = tape.value(table);
        let mut seen: Vec<Vec<u32>> = vec![Vec::new(); self.g.n_types()];
        for b in batches {
            let rel = self.g.relation(b.relation);
            let (st, dt) = (rel.src_type, rel.dst_type);
            for &(s, d) in &b.pairs {
                seen[st].push(s);
                seen[dt].push(d);
            }
        }
        for (t, nodes) in seen.iter_mut().enumerate() {
            nodes.sort_unstable();
            nodes.dedup();
            for h in 0..self.config.model.heads {
                for &n in nodes.iter() {
                    self.pools[t][h].push(n, values.row(self.index.row(h, t, n)))?;
                }
            }
        }
        Ok(())
    }

    /// One optimizer step on a freshly sampled batch.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged {
                step,
                loss: f64::NAN,
                triplet: f64::NAN,
                infonce: f64::NAN,
            },
            other => other,
        };
        let batches = self.sample_batches();
        let (batch, short) = self.build_batch(&batches)?;
        if batch.is_empty() {
            return Err(Error::validation(format!("step {step}: no anchor received a negative")));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let (parts, table) = loss_on_tape(
            &mut tape,
            &self.plan,
            self.features,
            &self.params,
            &bound,
            &batch,
            &self.config,
        )
        .map_err(diverged)?;
        let metrics = StepMetrics {
            step,
            loss: tape.value(parts.loss).to_scalar()?,
            triplet: tape.value(parts.triplet).to_scalar()?,
            infonce: tape.value(parts.infonce).to_scalar()?,
            anchors: batch.len(),
            short_anchors: short,
        };
        if !(metrics.loss.is_finite() && metrics.triplet.is_finite() && metrics.infonce.is_finite()) {
            return Err(Error::Diverged {
                step,
                loss: metrics.loss,
                triplet: metrics.triplet,
                infonce: metrics.infonce,
            });
        }
        let grads = tape.backward(parts.loss).map_err(diverged)?;
        let g: Vec<Tensor> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
        if g.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                step,
                loss: metrics.loss,
                triplet: metrics.triplet,
                infonce: metrics.infonce,
            });
        }
        adam_update(self.params.store.tensors_mut(), &g, &mut self.adam, &self.config.optimizer).map_err(|e| {
            match e {
                Error::NonFinite { .. } => Error::Diverged {
                    step,
                    loss: metrics.loss,
                    triplet: metrics.triplet,
                    infonce: metrics.infonce,
                },
                other => other,
            }
        })?;
        self.update_pools(&tape, table, &batches)?;
        self.step += 1;
        Ok(metrics)
    }
}

/// Trained parameters and per-step history.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: Vec<StepMetrics>,
}

/// Runs `config.steps` steps from a seeded Xavier initialization.
pub fn train(g: &HeteroGraph, features: &FeatureStore, config: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    train_with(g, features, config, seed, |_| Ok(()))
}

/// Like [`train`], calling `on_step` after every step.
pub fn train_with(
    g: &HeteroGraph,
    features: &FeatureStore,
    config: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(g, features, config.clone(), seed)?;
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let m = trainer.step()?;
        if m.step % 50 == 0 {
            log::info!("step {} loss {:.5} triplet {:.5} infonce {:.5}", m.step, m.loss, m.triplet, m.infonce);
        }
        on_step(&m)?;
        history.push(m);
    }
    Ok(TrainOutput {
        params: trainer.into_params(),
        history,
    })
}

/// Writes `step\tloss\ttriplet\tinfonce` lines.
pub fn write_history<W: Write>(history: &[StepMetrics], w: &mut W) -> Result<()> {
    writeln!(w, "{}", StepMetrics::tsv_header())?;
    for m in history {
        writeln!(w, "{}", m.tsv_line())?;
    }
    Ok(())
}
