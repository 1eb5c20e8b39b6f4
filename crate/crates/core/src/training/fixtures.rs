//! Small deterministic problem used to check analytic gradients end to end.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::config::TrainConfig;
use super::loss::ContrastiveBatch;
use super::trainer::{loss_on_tape, Trainer};
use crate::error::Result;
use crate::graph::{derive_semantic_edges, GraphBuilder, GraphSchema, HeteroGraph};
use crate::model::{Bound, FeatureStore, GraphPlan, ModelConfig, ModelParams};
use crate::numeric::{grad_check, GradCheckReport, Tensor};
use crate::rng::stream;

pub struct GradCheckFixture {
    pub graph: HeteroGraph,
    pub features: FeatureStore,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub plan: GraphPlan,
    pub batch: ContrastiveBatch,
}

fn random_tensor(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Result<Tensor> {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

/// 10 nodes over 2 types, one engagement and one derived semantic relation,
/// two heads, and a batch using in-batch, pool and cross-head negatives.
pub fn grad_check_fixture(seed: u64) -> Result<GradCheckFixture> {
    let mut schema = GraphSchema::from_json(
        r#"{"node_types": [
            {"name": "user", "feature_blocks": [{"name": "a", "dim": 3}, {"name": "b", "dim": 2}]},
            {"name": "item", "feature_blocks": [{"name": "a", "dim": 3}]}],
          "relations": [{"name": "click", "src": "user", "dst": "item", "kind": "engagement"}]}"#,
    )?;
    schema.finalize()?;
    let click = schema.require_relation("click")?;
    let mut b = GraphBuilder::new(schema);
    let edges = [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 1.0), (1, 2, 1.5), (2, 3, 1.0), (2, 4, 0.5), (3, 4, 1.0), (3, 5, 2.0), (0, 3, 1.0), (3, 0, 0.5)];
    for (u, i, w) in edges {
        b.add_edge(click, &format!("u{u}"), &format!("i{i}"), w)?;
    }
    let base = b.finalize();
    let graph = derive_semantic_edges(&base, click, "co_click", 2, 0.0)?;

    let mut rng = stream(seed, "fixture");
    let mut blocks = Vec::new();
    for t in 0..graph.n_types() {
        let n = graph.node_count(t);
        let dims = graph.schema().node_types[t].block_dims();
        blocks.push(dims.iter().map(|&d| random_tensor(n, d, &mut rng)).collect::<Result<Vec<_>>>()?);
    }
    let features = FeatureStore::new(&graph, blocks)?;

    let mut config = TrainConfig {
        model: ModelConfig {
            hidden_dim: 4,
            encoder_hidden: 3,
            out_dim: 3,
            layers: 2,
            heads: 2,
        },
        batch_size: 4,
        ..TrainConfig::default()
    };
    config.loss.n_neg = 2;
    config.loss.pool_capacity = 16;

    let mut trainer = Trainer::new(&graph, &features, config.clone(), seed)?;
    for per_head in trainer.pools_mut() {
        for pool in per_head {
            for n in 0..4 {
                let v: Vec<f64> = (0..pool.dim()).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let unit: Vec<f64> = v.iter().map(|x| x / norm).collect();
                pool.push(n, &unit)?;
            }
        }
    }
    let batches = trainer.sample_batches();
    let (batch, _) = trainer.build_batch(&batches)?;
    let mut params = trainer.into_params();
    // generic biases keep every relu away from its kink
    for t in params.store.tensors_mut() {
        if t.rows() == 1 {
            *t = random_tensor(1, t.cols(), &mut rng)?;
            for v in t.data_mut() {
                *v *= 0.1;
            }
        }
    }
    let plan = GraphPlan::new(&graph, &params.layout)?;
    Ok(GradCheckFixture {
        graph,
        features,
        config,
        params,
        plan,
        batch,
    })
}

impl GradCheckFixture {
    /// Finite differences on the full training loss w.r.t. every parameter.
    pub fn check(&self, epsilon: f64) -> Result<GradCheckReport> {
        grad_check(
            |tape, vars| {
                let bound = Bound { vars: vars.to_vec() };
                let (parts, _) =
                    loss_on_tape(tape, &self.plan, &self.features, &self.params, &bound, &self.batch, &self.config)?;
                Ok(parts.loss)
            },
            self.params.store.tensors(),
            epsilon,
        )
    }
}
