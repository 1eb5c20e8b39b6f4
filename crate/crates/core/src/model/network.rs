//! Forward computation: feature encoder, relational layers and output heads.

use std::sync::Arc;

use super::features::FeatureStore;
use super::params::{Bound, Linear, ModelLayout, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, TypeId};
use crate::numeric::{Tape, Tensor, Var};

/// `concat(blocks) ++ concat(bᵢ ⊙ bⱼ for i < j)`.
pub fn mix_input(tape: &mut Tape, blocks: &[Var]) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::validation("mix_features needs at least one block"));
    }
    let d = tape.shape(blocks[0]);
    if let Some(&bad) = blocks.iter().find(|&&b| tape.shape(b) != d) {
        return Err(Error::Shape {
            op: "mix_features",
            left: d,
            right: tape.shape(bad),
        });
    }
    let mut parts = blocks.to_vec();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            parts.push(tape.hadamard(blocks[i], blocks[j])?);
        }
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat_cols(&parts)
}

/// Mixer: `relu(affine(mix_input(blocks)))`.
pub fn mix_features(tape: &mut Tape, blocks: &[Var], mixer: Linear) -> Result<Var> {
    let z = mix_input(tape, blocks)?;
    let y = tape.affine(z, mixer.w, mixer.b)?;
    tape.relu(y)
}

/// Per-channel aggregation coefficients, precomputed once per graph.
#[derive(Clone, Debug)]
struct ChannelPlan {
    src_idx: Arc<[usize]>,
    dst_idx: Arc<[usize]>,
    coef: Arc<[f64]>,
    /// destination nodes with non-empty, positive-weight neighborhoods
    nonempty: Arc<[usize]>,
    n_dst: usize,
}

/// Graph-side inputs to the relational layers.
#[derive(Clone, Debug)]
pub struct GraphPlan {
    channels: Vec<ChannelPlan>,
    node_counts: Vec<usize>,
}

impl GraphPlan {
    pub fn new(g: &HeteroGraph, layout: &ModelLayout) -> Result<Self> {
        if layout.n_types() != g.n_types() {
            return Err(Error::validation("layout and graph disagree on node types"));
        }
        let mut channels = Vec::with_capacity(layout.channels.len());
        for ch in &layout.channels {
            if ch.relation >= g.relations().len() {
                return Err(Error::validation(format!("channel {:?} has no relation in graph", ch.name)));
            }
            // rows of `csr` are destination nodes of the channel
            let csr = if ch.reversed {
                g.out_csr(ch.relation)
            } else {
                g.in_csr(ch.relation)
            };
            let n_dst = g.node_count(ch.dst);
            if csr.n_rows() != n_dst {
                return Err(Error::validation(format!("channel {:?} row count mismatch", ch.name)));
            }
            let (mut src_idx, mut dst_idx, mut coef, mut nonempty) = (vec![], vec![], vec![], vec![]);
            for i in 0..n_dst {
                let (nbrs, ws) = csr.row(i);
                let total: f64 = ws.iter().sum();
                if total <= 0.0 {
                    continue;
                }
                nonempty.push(i);
                for (&j, &w) in nbrs.iter().zip(ws) {
                    src_idx.push(j as usize);
                    dst_idx.push(i);
                    coef.push(w / total);
                }
            }
            channels.push(ChannelPlan {
                src_idx: src_idx.into(),
                dst_idx: dst_idx.into(),
                coef: coef.into(),
                nonempty: nonempty.into(),
                n_dst,
            });
        }
        Ok(Self {
            channels,
            node_counts: (0..g.n_types()).map(|t| g.node_count(t)).collect(),
        })
    }

    pub fn node_count(&self, t: TypeId) -> usize {
        self.node_counts[t]
    }
}

fn mlp2(tape: &mut Tape, x: Var, l1: Linear, l2: Linear) -> Result<Var> {
    let h = tape.affine(x, l1.w, l1.b)?;
    let h = tape.relu(h)?;
    tape.affine(h, l2.w, l2.b)
}

/// `h_t = M_t(mix of f_{t,j}(x_{t,j}))` for every node of type `t`.
pub fn encode_type(
    tape: &mut Tape,
    features: &FeatureStore,
    params: &ModelParams,
    bound: &Bound,
    t: TypeId,
) -> Result<Var> {
    let layout = &params.layout;
    let n_blocks = layout.block_dims[t].len();
    if features.n_blocks(t) < n_blocks {
        return Err(Error::validation(format!(
            "missing feature block ({}, {})",
            layout.type_names[t],
            layout.block_names[t][features.n_blocks(t)]
        )));
    }
    let mut outs = Vec::with_capacity(n_blocks);
    for j in 0..n_blocks {
        let x = tape.leaf(features.block(t, j).clone());
        let prefix = layout.enc_block(t, j);
        let l1 = params.linear(bound, &format!("{prefix}/l1"))?;
        let l2 = params.linear(bound, &format!("{prefix}/l2"))?;
        outs.push(mlp2(tape, x, l1, l2)?);
    }
    let mixer = params.linear(bound, &layout.enc_mix(t))?;
    mix_features(tape, &outs, mixer)
}

/// One relational message-passing layer over every node type.
///
/// For node `i` of type `t` and each incoming channel `r`:
/// `a_r = f_r(c_{i,r} Σ_j w_ij W_r h_j)` with `c_{i,r} = 1 / Σ_j w_ij`, and
/// `a_r = 0` for an empty neighborhood. The new state is the layer mixer
/// applied to the `a_r` blocks.
pub fn rgcn_layer(
    tape: &mut Tape,
    plan: &GraphPlan,
    params: &ModelParams,
    bound: &Bound,
    layer: usize,
    state: &[Var],
) -> Result<Vec<Var>> {
    let layout = &params.layout;
    if state.len() != layout.n_types() {
        return Err(Error::validation(format!(
            "layer state covers {} types, graph has {}",
            state.len(),
            layout.n_types()
        )));
    }
    let mut messages = Vec::with_capacity(layout.channels.len());
    for (c, ch) in layout.channels.iter().enumerate() {
        let cp = &plan.channels[c];
        let w = params.var(bound, &layout.rel_weight(layer, c))?;
        let f = params.linear(bound, &layout.rel_post(layer, c))?;
        let projected = tape.matmul(state[ch.src], w)?;
        let gathered = tape.gather_rows(projected, cp.src_idx.clone())?;
        let agg = tape.scatter_add_rows(gathered, cp.dst_idx.clone(), cp.coef.clone(), cp.n_dst)?;
        let post = tape.affine(agg, f.w, f.b)?;
        let mut post = tape.relu(post)?;
        if cp.nonempty.len() < cp.n_dst {
            let kept = tape.gather_rows(post, cp.nonempty.clone())?;
            let ones: Arc<[f64]> = vec![1.0; cp.nonempty.len()].into();
            post = tape.scatter_add_rows(kept, cp.nonempty.clone(), ones, cp.n_dst)?;
        }
        messages.push(post);
    }
    let mut next = Vec::with_capacity(layout.n_types());
    for t in 0..layout.n_types() {
        let blocks: Vec<Var> = layout.incoming[t].iter().map(|&c| messages[c]).collect();
        if blocks.is_empty() {
            return Err(Error::validation(format!("type {:?} has no incoming channel", layout.type_names[t])));
        }
        let mixer = params.linear(bound, &layout.layer_mix(layer, t))?;
        next.push(mix_features(tape, &blocks, mixer)?);
    }
    Ok(next)
}

/// Handles to the per-head, per-type embedding matrices (`N_t × d_out`, unit rows).
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[head][type]`
    pub embeddings: Vec<Vec<Var>>,
}

/// encode → `L` relational layers → per-head affine → row L2 normalization.
pub fn forward_tape(
    tape: &mut Tape,
    plan: &GraphPlan,
    features: &FeatureStore,
    params: &ModelParams,
    bound: &Bound,
) -> Result<ForwardOutput> {
    let layout = &params.layout;
    let mut state = (0..layout.n_types())
        .map(|t| encode_type(tape, features, params, bound, t))
        .collect::<Result<Vec<_>>>()?;
    for l in 0..layout.config.layers {
        state = rgcn_layer(tape, plan, params, bound, l, &state)?;
    }
    let mut embeddings = Vec::with_capacity(layout.config.heads);
    for h in 0..layout.config.heads {
        let head = params.linear(bound, &layout.head(h))?;
        let per_type = state
            .iter()
            .map(|&s| {
                let y = tape.affine(s, head.w, head.b)?;
                tape.row_l2_normalize(y)
            })
            .collect::<Result<Vec<_>>>()?;
        embeddings.push(per_type);
    }
    Ok(ForwardOutput { embeddings })
}

/// Inference over the whole graph: `[head][type]` embedding matrices.
pub fn embed_all(g: &HeteroGraph, features: &FeatureStore, params: &ModelParams) -> Result<Vec<Vec<Tensor>>> {
    params.check_schema(g.schema())?;
    let plan = GraphPlan::new(g, &params.layout)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward_tape(&mut tape, &plan, features, params, &bound)?;
    Ok(out
        .embeddings
        .iter()
        .map(|per_type| per_type.iter().map(|&v| tape.value(v).clone()).collect())
        .collect())
}

/// Embeddings for the requested local ids of each type, `[head][type]`.
pub fn forward(
    g: &HeteroGraph,
    features: &FeatureStore,
    params: &ModelParams,
    nodes: &[Vec<u32>],
) -> Result<Vec<Vec<Tensor>>> {
    if nodes.len() != g.n_types() {
        return Err(Error::validation("forward needs a node list per type"));
    }
    for (t, ids) in nodes.iter().enumerate() {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= g.node_count(t)) {
            return Err(Error::NotFound(format!("node {bad} of type {t}")));
        }
    }
    let all = embed_all(g, features, params)?;
    Ok(all
        .into_iter()
        .map(|per_type| {
            per_type
                .into_iter()
                .zip(nodes)
                .map(|(m, ids)| m.select_rows(&ids.iter().map(|&i| i as usize).collect::<Vec<_>>()))
                .collect()
        })
        .collect())
}
