use rand::Rng as _;
use rand_distr::StandardNormal;
use rankgraph::graph::{GraphBuilder, GraphSchema, HeteroGraph};
use rankgraph::model::{
    embed_all, encode_type, forward, forward_tape, init_params, mix_features, mix_input, mix_width, rgcn_layer,
    FeatureStore, GraphPlan, Linear, ModelConfig, ModelParams,
};
use rankgraph::numeric::grad_check;
use rankgraph::rng::{stream, Rng};
use rankgraph::{Tape, Tensor};

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn randn(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

fn affine(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    matmul(x, &to_mat(w))
        .into_iter()
        .map(|r| r.iter().zip(b.row(0)).map(|(v, bb)| v + bb).collect())
        .collect()
}

fn relu(x: Mat) -> Mat {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

/// Straight-line mixer: blocks, then products of every pair, through relu∘affine.
fn oracle_mix(blocks: &[Mat], w: &Tensor, b: &Tensor) -> Mat {
    let n = blocks[0].len();
    let z: Mat = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = blocks.iter().flat_map(|m| m[i].clone()).collect();
            for p in 0..blocks.len() {
                for q in p + 1..blocks.len() {
                    row.extend(blocks[p][i].iter().zip(&blocks[q][i]).map(|(x, y)| x * y));
                }
            }
            row
        })
        .collect();
    relu(affine(&z, w, b))
}

fn assert_close(a: &Mat, b: &Tensor, tol: f64) {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), b.shape());
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let got = b.get(i, j);
            assert!((v - got).abs() <= tol, "({i},{j}): oracle {v} vs {got}");
        }
    }
}

fn schema(json: &str) -> GraphSchema {
    let mut s = GraphSchema::from_json(json).unwrap();
    s.finalize().unwrap();
    s
}

fn set(params: &mut ModelParams, name: &str, t: Tensor) {
    params.store.set(name, t).unwrap();
}

fn identity_linear(params: &mut ModelParams, prefix: &str, d: usize) {
    set(params, &format!("{prefix}.w"), Tensor::identity(d));
    set(params, &format!("{prefix}.b"), Tensor::zeros(1, d));
}

/// Randomizes every bias so no test depends on zero-bias coincidences.
fn randomize_biases(params: &mut ModelParams, rng: &mut Rng) {
    let names: Vec<String> = params.store.names().iter().filter(|n| n.ends_with(".b")).cloned().collect();
    for n in names {
        let cols = params.store.get(&n).unwrap().cols();
        let mut b = randn(rng, 1, cols);
        for c in 0..cols {
            b.set(0, c, 0.2 * b.get(0, c)).unwrap();
        }
        set(params, &n, b);
    }
}

fn leaf_linear(tape: &mut Tape, w: Tensor, b: Tensor) -> Linear {
    Linear {
        w: tape.leaf(w),
        b: tape.leaf(b),
    }
}

#[test]
fn mixer_input_examples() {
    let mut tape = Tape::new();
    let b1 = tape.leaf(Tensor::row_vector(&[1.0, 2.0]).unwrap());
    let b2 = tape.leaf(Tensor::row_vector(&[3.0, 4.0]).unwrap());
    let z = mix_input(&mut tape, &[b1, b2]).unwrap();
    assert_eq!(tape.value(z).data(), &[1.0, 2.0, 3.0, 4.0, 3.0, 8.0]);
    let m = leaf_linear(&mut tape, Tensor::identity(6), Tensor::zeros(1, 6));
    let y = mix_features(&mut tape, &[b1, b2], m).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 3.0, 8.0]);

    let b = tape.leaf(Tensor::row_vector(&[5.0, 6.0]).unwrap());
    let m = leaf_linear(&mut tape, Tensor::identity(2), Tensor::zeros(1, 2));
    let y = mix_features(&mut tape, &[b], m).unwrap();
    assert_eq!(tape.value(y).data(), &[5.0, 6.0]);

    let d = 4;
    let blocks: Vec<_> = (0..3).map(|_| tape.leaf(Tensor::zeros(1, d))).collect();
    let z = mix_input(&mut tape, &blocks).unwrap();
    assert_eq!(tape.shape(z).1, 3 * d + 3 * d);
    assert_eq!(mix_width(3, d), 6 * d);

    let bad = tape.leaf(Tensor::zeros(1, 3));
    assert!(mix_input(&mut tape, &[b1, bad]).is_err());
}

fn one_type_graph(n: usize, dims: &[usize]) -> HeteroGraph {
    let blocks: Vec<String> = dims
        .iter()
        .enumerate()
        .map(|(j, d)| format!(r#"{{"name": "b{j}", "dim": {d}}}"#))
        .collect();
    let s = schema(&format!(
        r#"{{"node_types": [{{"name": "n", "feature_blocks": [{}]}}], "relations": []}}"#,
        blocks.join(",")
    ));
    let mut b = GraphBuilder::new(s);
    for i in 0..n {
        b.add_node(0, &format!("n{i}"));
    }
    b.finalize()
}

fn cfg(d: usize, hidden: usize, out: usize, layers: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: d,
        encoder_hidden: hidden,
        out_dim: out,
        layers,
        heads,
    }
}

#[test]
fn encoder_identity_passes_features_through() {
    let g = one_type_graph(2, &[3]);
    let x = Tensor::from_rows(&[vec![0.5, 1.0, 2.0], vec![3.0, 0.0, 0.25]]).unwrap();
    let features = FeatureStore::new(&g, vec![vec![x.clone()]]).unwrap();
    let mut params = init_params(g.schema(), &cfg(3, 3, 3, 1, 1), &mut stream(0, "p")).unwrap();
    identity_linear(&mut params, "enc/n/b0/l1", 3);
    identity_linear(&mut params, "enc/n/b0/l2", 3);
    identity_linear(&mut params, "enc/n/mix", 3);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = encode_type(&mut tape, &features, &params, &bound, 0).unwrap();
    assert_eq!(tape.value(h), &x);
}

#[test]
fn encoder_zero_features_zero_biases_give_zero() {
    let g = one_type_graph(3, &[2, 4]);
    let features = FeatureStore::new(&g, vec![vec![Tensor::zeros(3, 2), Tensor::zeros(3, 4)]]).unwrap();
    let params = init_params(g.schema(), &cfg(5, 6, 3, 1, 1), &mut stream(1, "p")).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = encode_type(&mut tape, &features, &params, &bound, 0).unwrap();
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_matches_hand_computation() {
    let mut rng = stream(2, "enc");
    let g = one_type_graph(4, &[3, 2, 5]);
    let xs: Vec<Tensor> = [3, 2, 5].iter().map(|&d| randn(&mut rng, 4, d)).collect();
    let features = FeatureStore::new(&g, vec![xs.clone()]).unwrap();
    let mut params = init_params(g.schema(), &cfg(4, 6, 3, 1, 1), &mut stream(3, "p")).unwrap();
    randomize_biases(&mut params, &mut rng);

    let get = |n: &str| params.store.get(n).unwrap().clone();
    let outs: Vec<Mat> = (0..3)
        .map(|j| {
            let p = format!("enc/n/b{j}");
            let h = relu(affine(&to_mat(&xs[j]), &get(&format!("{p}/l1.w")), &get(&format!("{p}/l1.b"))));
            affine(&h, &get(&format!("{p}/l2.w")), &get(&format!("{p}/l2.b")))
        })
        .collect();
    let oracle = oracle_mix(&outs, &get("enc/n/mix.w"), &get("enc/n/mix.b"));

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = encode_type(&mut tape, &features, &params, &bound, 0).unwrap();
    assert_close(&oracle, tape.value(h), 1e-12);
}

#[test]
fn encoder_missing_block_is_named() {
    let g = one_type_graph(2, &[2, 3]);
    let err = FeatureStore::new(&g, vec![vec![Tensor::zeros(2, 2)]]).unwrap_err();
    assert!(err.to_string().contains("(n, b1)"), "{err}");
}

/// One type `n`, a semantic relation `r` with edges 1→0 and 2→0.
fn two_neighbor_graph() -> HeteroGraph {
    let s = schema(
        r#"{"node_types": [{"name": "n", "feature_blocks": [{"name": "a", "dim": 2}]}],
            "relations": [{"name": "r", "src": "n", "dst": "n", "kind": "semantic"}]}"#,
    );
    let r = s.require_relation("r").unwrap();
    let mut b = GraphBuilder::new(s);
    b.add_edge(r, "x", "v", 1.0).unwrap();
    b.add_edge(r, "y", "v", 1.0).unwrap();
    b.finalize()
}

#[test]
fn layer_averages_neighbors() {
    let g = two_neighbor_graph();
    let v = g.ids().get(0, "v").unwrap();
    let mut params = init_params(g.schema(), &cfg(2, 2, 2, 1, 1), &mut stream(0, "p")).unwrap();
    let layout = params.layout.clone();
    let r = layout.channels.iter().position(|c| c.name == "r").unwrap();
    set(&mut params, &layout.rel_weight(0, r), Tensor::identity(2));
    identity_linear(&mut params, &layout.rel_post(0, r), 2);
    // mixer picks the `r` block out of [a_r, a_self, a_r ⊙ a_self]
    let k = layout.incoming[0].iter().position(|&c| c == r).unwrap();
    let mut sel = Tensor::zeros(mix_width(2, 2), 2);
    sel.set(2 * k, 0, 1.0).unwrap();
    sel.set(2 * k + 1, 1, 1.0).unwrap();
    set(&mut params, "layer0/mix/n.w", sel);

    let mut h = Tensor::zeros(3, 2);
    let (x, y) = (g.ids().get(0, "x").unwrap(), g.ids().get(0, "y").unwrap());
    h.set(x as usize, 0, 1.0).unwrap();
    h.set(y as usize, 1, 1.0).unwrap();
    let plan = GraphPlan::new(&g, &layout).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let state = tape.leaf(h);
    let out = rgcn_layer(&mut tape, &plan, &params, &bound, 0, &[state]).unwrap();
    assert_eq!(tape.value(out[0]).row(v as usize), &[0.5, 0.5]);
    // x and y have no incoming `r` edges, so the selected block is zero
    assert_eq!(tape.value(out[0]).row(x as usize), &[0.0, 0.0]);
}

#[test]
fn self_loop_only_node_is_unchanged() {
    let g = one_type_graph(2, &[3]);
    let mut params = init_params(g.schema(), &cfg(3, 3, 3, 1, 1), &mut stream(0, "p")).unwrap();
    set(&mut params, "layer0/self:n/W", Tensor::identity(3));
    identity_linear(&mut params, "layer0/self:n/f", 3);
    identity_linear(&mut params, "layer0/mix/n", 3);
    let h = Tensor::from_rows(&[vec![0.1, 2.0, 0.0], vec![4.0, 0.5, 1.5]]).unwrap();
    let plan = GraphPlan::new(&g, &params.layout).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let state = tape.leaf(h.clone());
    let out = rgcn_layer(&mut tape, &plan, &params, &bound, 0, &[state]).unwrap();
    assert_eq!(tape.value(out[0]), &h);
}

fn toy_schema() -> GraphSchema {
    schema(
        r#"{"node_types": [{"name": "user", "feature_blocks": [{"name": "a", "dim": 3}]},
                           {"name": "item", "feature_blocks": [{"name": "a", "dim": 2}, {"name": "b", "dim": 2}]}],
            "relations": [{"name": "click", "src": "user", "dst": "item", "kind": "engagement"},
                          {"name": "co", "src": "user", "dst": "user", "kind": "semantic"}]}"#,
    )
}

const TOY_CLICKS: [(&str, &str, f64); 6] = [
    ("u0", "i0", 1.0),
    ("u0", "i1", 2.0),
    ("u1", "i1", 0.5),
    ("u1", "i2", 3.0),
    ("u2", "i0", 1.5),
    ("u0", "i2", 0.25),
];
const TOY_CO: [(&str, &str, f64); 3] = [("u0", "u1", 2.0), ("u1", "u0", 2.0), ("u2", "u0", 1.0)];

/// 3 users, 3 items; `click_scale` multiplies every click weight.
fn toy_graph(click_scale: f64, reverse_insertion: bool) -> HeteroGraph {
    let s = toy_schema();
    let (click, co) = (s.require_relation("click").unwrap(), s.require_relation("co").unwrap());
    let mut b = GraphBuilder::new(s);
    for i in 0..3 {
        b.add_node(0, &format!("u{i}"));
        b.add_node(1, &format!("i{i}"));
    }
    let mut clicks = TOY_CLICKS.to_vec();
    let mut co_edges = TOY_CO.to_vec();
    if reverse_insertion {
        clicks.reverse();
        co_edges.reverse();
    }
    for (u, i, w) in clicks {
        b.add_edge(click, u, i, w * click_scale).unwrap();
    }
    for (u, v, w) in co_edges {
        b.add_edge(co, u, v, w).unwrap();
    }
    b.finalize()
}

fn toy_params(seed: u64, d: usize) -> ModelParams {
    let mut params = init_params(&toy_schema(), &cfg(d, 4, 3, 2, 2), &mut stream(seed, "p")).unwrap();
    randomize_biases(&mut params, &mut stream(seed, "b"));
    params
}

fn run_layer(g: &HeteroGraph, params: &ModelParams, states: &[Tensor]) -> Vec<Tensor> {
    let plan = GraphPlan::new(g, &params.layout).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let leaves: Vec<_> = states.iter().map(|s| tape.leaf(s.clone())).collect();
    let out = rgcn_layer(&mut tape, &plan, params, &bound, 0, &leaves).unwrap();
    out.iter().map(|&v| tape.value(v).clone()).collect()
}

#[test]
fn layer_matches_dense_oracle() {
    let d = 3;
    let g = toy_graph(1.0, false);
    let params = toy_params(4, d);
    let mut rng = stream(5, "h");
    let states: Vec<Tensor> = (0..2).map(|t| randn(&mut rng, g.node_count(t), d)).collect();
    let got = run_layer(&g, &params, &states);

    let layout = &params.layout;
    let get = |n: &str| params.store.get(n).unwrap().clone();
    for t in 0..2 {
        let mut blocks = Vec::new();
        for &c in &layout.incoming[t] {
            let ch = &layout.channels[c];
            let (n_dst, n_src) = (g.node_count(ch.dst), g.node_count(ch.src));
            let mut a = vec![vec![0.0; n_src]; n_dst];
            for (s, dd, w) in g.edges(ch.relation) {
                let (i, j) = if ch.reversed { (s, dd) } else { (dd, s) };
                a[i as usize][j as usize] += w;
            }
            let hw = matmul(&to_mat(&states[ch.src]), &to_mat(&get(&layout.rel_weight(0, c))));
            let mut m = matmul(&a, &hw);
            for (i, row) in m.iter_mut().enumerate() {
                let total: f64 = a[i].iter().sum();
                for v in row.iter_mut() {
                    *v = if total > 0.0 { *v / total } else { 0.0 };
                }
            }
            let f = layout.rel_post(0, c);
            let mut post = relu(affine(&m, &get(&format!("{f}.w")), &get(&format!("{f}.b"))));
            for (i, row) in post.iter_mut().enumerate() {
                if a[i].iter().sum::<f64>() <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            blocks.push(post);
        }
        let mix = layout.layer_mix(0, t);
        let oracle = oracle_mix(&blocks, &get(&format!("{mix}.w")), &get(&format!("{mix}.b")));
        assert_close(&oracle, &got[t], 1e-10);
    }
}

#[test]
fn layer_invariant_to_weight_scale_and_insertion_order() {
    let d = 3;
    let params = toy_params(6, d);
    let mut rng = stream(7, "h");
    let base = toy_graph(1.0, false);
    let states: Vec<Tensor> = (0..2).map(|t| randn(&mut rng, base.node_count(t), d)).collect();
    let reference = run_layer(&base, &params, &states);

    let scaled = run_layer(&toy_graph(7.3, false), &params, &states);
    for (a, b) in reference.iter().zip(&scaled) {
        assert_close(&to_mat(a), b, 1e-12);
    }
    let permuted = run_layer(&toy_graph(1.0, true), &params, &states);
    assert_eq!(reference, permuted);
}

fn toy_features(g: &HeteroGraph, seed: u64) -> FeatureStore {
    let mut rng = stream(seed, "x");
    let blocks = (0..g.n_types())
        .map(|t| {
            g.schema().node_types[t]
                .block_dims()
                .iter()
                .map(|&dim| randn(&mut rng, g.node_count(t), dim))
                .collect()
        })
        .collect();
    FeatureStore::new(g, blocks).unwrap()
}

#[test]
fn forward_identity_isolated_node_normalizes_features() {
    let g = one_type_graph(1, &[3]);
    let x = Tensor::row_vector(&[3.0, 0.0, 4.0]).unwrap();
    let features = FeatureStore::new(&g, vec![vec![x]]).unwrap();
    let mut params = init_params(g.schema(), &cfg(3, 3, 3, 1, 1), &mut stream(0, "p")).unwrap();
    for p in ["enc/n/b0/l1", "enc/n/b0/l2", "enc/n/mix", "layer0/self:n/f", "layer0/mix/n", "head0"] {
        identity_linear(&mut params, p, 3);
    }
    set(&mut params, "layer0/self:n/W", Tensor::identity(3));
    let out = forward(&g, &features, &params, &[vec![0]]).unwrap();
    let e = out[0][0].data();
    for (got, want) in e.iter().zip([0.6, 0.0, 0.8]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn forward_is_deterministic_with_unit_rows() {
    let g = toy_graph(1.0, false);
    let features = toy_features(&g, 8);
    let params = toy_params(9, 4);
    let a = embed_all(&g, &features, &params).unwrap();
    let b = embed_all(&g, &features, &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    for per_type in &a {
        for m in per_type {
            for i in 0..m.rows() {
                let n: f64 = m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-12, "norm {n}");
            }
        }
    }
    let some = forward(&g, &features, &params, &[vec![2, 0], vec![1]]).unwrap();
    assert_eq!(some[1][0].row(0), a[1][0].row(2));
    assert_eq!(some[0][1].row(0), a[0][1].row(1));
}

#[test]
fn forward_gradients_match_finite_differences() {
    let g = toy_graph(1.0, false);
    let features = toy_features(&g, 10);
    let params = toy_params(11, 3);
    let plan = GraphPlan::new(&g, &params.layout).unwrap();
    let mut rng = stream(12, "probe");
    let probes: Vec<Vec<Tensor>> = (0..2)
        .map(|_| (0..2).map(|t| randn(&mut rng, g.node_count(t), 3)).collect())
        .collect();
    let report = grad_check(
        |tape, vars| {
            let bound = rankgraph::model::Bound { vars: vars.to_vec() };
            let out = forward_tape(tape, &plan, &features, &params, &bound)?;
            let mut terms = Vec::new();
            for (h, per_type) in out.embeddings.iter().enumerate() {
                for (t, &e) in per_type.iter().enumerate() {
                    let p = tape.leaf(probes[h][t].clone());
                    let prod = tape.hadamard(e, p)?;
                    terms.push(tape.sum_all(prod)?);
                }
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = tape.add(total, t)?;
            }
            Ok(total)
        },
        params.store.tensors(),
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}
