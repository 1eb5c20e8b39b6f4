use std::collections::HashMap;

use rand::Rng as _;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{GraphSchema, RelationId, RelationKind, TypeId};
use crate::numeric::{Tape, Tensor, Var};
use crate::rng::Rng;

/// One directed message stream into `dst`. Engagement relations feed both
/// endpoints, so each yields a forward and a reversed channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub relation: RelationId,
    pub reversed: bool,
    pub src: TypeId,
    pub dst: TypeId,
    pub name: String,
}

/// Parameter naming and channel structure derived from a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub config: ModelConfig,
    pub type_names: Vec<String>,
    pub block_names: Vec<Vec<String>>,
    pub block_dims: Vec<Vec<usize>>,
    pub channels: Vec<Channel>,
    /// per destination type, indices into `channels` in canonical order
    pub incoming: Vec<Vec<usize>>,
}

/// Width of the mixer input for `k` blocks of width `d`: blocks plus pairwise products.
pub fn mix_width(k: usize, d: usize) -> usize {
    (k + k * (k - 1) / 2) * d
}

impl ModelLayout {
    pub fn new(schema: &GraphSchema, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut channels = Vec::new();
        for r in &schema.relations {
            channels.push(Channel {
                relation: r.relation_id,
                reversed: false,
                src: r.src_type,
                dst: r.dst_type,
                name: r.name.clone(),
            });
            if r.kind == RelationKind::Engagement {
                channels.push(Channel {
                    relation: r.relation_id,
                    reversed: true,
                    src: r.dst_type,
                    dst: r.src_type,
                    name: format!("{}~rev", r.name),
                });
            }
        }
        let n_types = schema.node_types.len();
        let incoming = (0..n_types)
            .map(|t| (0..channels.len()).filter(|&c| channels[c].dst == t).collect())
            .collect();
        Ok(Self {
            config: config.clone(),
            type_names: schema.node_types.iter().map(|t| t.name.clone()).collect(),
            block_names: schema
                .node_types
                .iter()
                .map(|t| t.blocks.iter().map(|b| b.name.clone()).collect())
                .collect(),
            block_dims: schema.node_types.iter().map(|t| t.block_dims()).collect(),
            channels,
            incoming,
        })
    }

    pub fn n_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn enc_block(&self, t: TypeId, j: usize) -> String {
        format!("enc/{}/{}", self.type_names[t], self.block_names[t][j])
    }

    pub fn enc_mix(&self, t: TypeId) -> String {
        format!("enc/{}/mix", self.type_names[t])
    }

    pub fn rel_weight(&self, layer: usize, c: usize) -> String {
        format!("layer{layer}/{}/W", self.channels[c].name)
    }

    pub fn rel_post(&self, layer: usize, c: usize) -> String {
        format!("layer{layer}/{}/f", self.channels[c].name)
    }

    pub fn layer_mix(&self, layer: usize, t: TypeId) -> String {
        format!("layer{layer}/mix/{}", self.type_names[t])
    }

    pub fn head(&self, h: usize) -> String {
        format!("head{h}")
    }

    /// Every tensor `(name, rows, cols, is_bias)`, in canonical order.
    pub fn tensor_specs(&self) -> Vec<(String, usize, usize, bool)> {
        let c = &self.config;
        let d = c.hidden_dim;
        let mut out = Vec::new();
        let mut linear = |name: String, i: usize, o: usize| {
            out.push((format!("{name}.w"), i, o, false));
            out.push((format!("{name}.b"), 1, o, true));
        };
        for t in 0..self.n_types() {
            for (j, &dim) in self.block_dims[t].iter().enumerate() {
                linear(format!("{}/l1", self.enc_block(t, j)), dim, c.encoder_hidden);
                linear(format!("{}/l2", self.enc_block(t, j)), c.encoder_hidden, d);
            }
            linear(self.enc_mix(t), mix_width(self.block_dims[t].len(), d), d);
        }
        let mut specs = out;
        for l in 0..c.layers {
            for ch in 0..self.channels.len() {
                specs.push((self.rel_weight(l, ch), d, d, false));
                specs.push((format!("{}.w", self.rel_post(l, ch)), d, d, false));
                specs.push((format!("{}.b", self.rel_post(l, ch)), 1, d, true));
            }
            for t in 0..self.n_types() {
                let w = mix_width(self.incoming[t].len(), d);
                specs.push((format!("{}.w", self.layer_mix(l, t)), w, d, false));
                specs.push((format!("{}.b", self.layer_mix(l, t)), 1, d, true));
            }
        }
        for h in 0..c.heads {
            specs.push((format!("{}.w", self.head(h)), d, c.out_dim, false));
            specs.push((format!("{}.b", self.head(h)), 1, c.out_dim, true));
        }
        specs
    }
}

/// Named parameter tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::validation("parameter names and tensors differ in count"));
        }
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if index.len() != names.len() {
            return Err(Error::validation("duplicate parameter name"));
        }
        Ok(Self { names, tensors, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.position(name)?])
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self.position(name)?;
        if self.tensors[i].shape() != value.shape() {
            return Err(Error::Shape {
                op: "ParamStore::set",
                left: self.tensors[i].shape(),
                right: value.shape(),
            });
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }
}

/// All learnable weights plus the layout and schema they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub fingerprint: [u8; 32],
    pub store: ParamStore,
}

/// Affine map handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

/// Parameter leaves recorded on one tape, indexed like the store.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Weights ~ U(−s, s) with s = sqrt(6 / (fan_in + fan_out)); biases zero.
pub fn init_params(schema: &GraphSchema, config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    let layout = ModelLayout::new(schema, config)?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, rows, cols, is_bias) in layout.tensor_specs() {
        let t = if is_bias {
            Tensor::zeros(rows, cols)
        } else {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
            Tensor::from_vec(rows, cols, data)?
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(ModelParams {
        layout,
        fingerprint: schema.fingerprint(),
        store: ParamStore::from_parts(names, tensors)?,
    })
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.store.tensors().iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn var(&self, bound: &Bound, name: &str) -> Result<Var> {
        Ok(bound.vars[self.store.position(name)?])
    }

    pub fn linear(&self, bound: &Bound, prefix: &str) -> Result<Linear> {
        Ok(Linear {
            w: self.var(bound, &format!("{prefix}.w"))?,
            b: self.var(bound, &format!("{prefix}.b"))?,
        })
    }

    pub fn check_schema(&self, schema: &GraphSchema) -> Result<()> {
        if self.fingerprint != schema.fingerprint() {
            return Err(Error::validation("schema fingerprint mismatch between checkpoint and graph"));
        }
        Ok(())
    }
}
