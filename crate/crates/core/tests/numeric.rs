use proptest::prelude::*;
use rankgraph::numeric::{grad_check, NORM_GUARD};
use rankgraph::{Result, Tape, Tensor, Var};

fn tensor(rows: usize, cols: usize, vals: &[f64]) -> Tensor {
    Tensor::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap()
}

/// `sum(op(inputs) ⊙ probe)`, so every output entry contributes to the gradient.
fn probe_sum(tape: &mut Tape, out: Var, probe: &[f64]) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let p = tape.leaf(tensor(r, c, probe));
    let prod = tape.hadamard(out, p)?;
    tape.sum_all(prod)
}

fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn check(
    inputs: Vec<Tensor>,
    probe: &[f64],
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> std::result::Result<(), TestCaseError> {
    let report = grad_check(
        |tape, vars| {
            let out = op(tape, vars)?;
            probe_sum(tape, out, probe)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    prop_assert!(report.max_rel_error <= 1e-6, "{:?}", report);
    Ok(())
}

const R: usize = 3;
const C: usize = 4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_and_affine(x in vals(R * C), w in vals(C * 2), b in vals(2), p in vals(R * 2)) {
        let (x, w, b) = (tensor(R, C, &x), tensor(C, 2, &w), tensor(1, 2, &b));
        check(vec![x.clone(), w.clone()], &p, |t, v| t.matmul(v[0], v[1]))?;
        check(vec![x, w, b], &p, |t, v| t.affine(v[0], v[1], v[2]))?;
    }

    #[test]
    fn relu_away_from_kink(x in vals(R * C).prop_filter("kink", |v| v.iter().all(|a| a.abs() >= 1e-3)), p in vals(R * C)) {
        check(vec![tensor(R, C, &x)], &p, |t, v| t.relu(v[0]))?;
    }

    #[test]
    fn elementwise(x in vals(R * C), y in vals(R * C), p in vals(R * C), c in -2.0f64..2.0) {
        let (x, y) = (tensor(R, C, &x), tensor(R, C, &y));
        check(vec![x.clone(), y.clone()], &p, |t, v| t.hadamard(v[0], v[1]))?;
        check(vec![x.clone(), y.clone()], &p, |t, v| t.add(v[0], v[1]))?;
        check(vec![x.clone(), y], &p, |t, v| t.sub(v[0], v[1]))?;
        check(vec![x.clone()], &p, |t, v| t.scale(v[0], c))?;
        check(vec![x], &p, |t, v| t.add_scalar(v[0], c))?;
    }

    #[test]
    fn concatenation(x in vals(R * C), y in vals(R * 2), z in vals(2 * C), p in vals(R * 6 + 5 * C)) {
        let (x, y, z) = (tensor(R, C, &x), tensor(R, 2, &y), tensor(2, C, &z));
        check(vec![x.clone(), y], &p, |t, v| t.concat_cols(&[v[0], v[1]]))?;
        check(vec![x, z], &p, |t, v| t.concat_rows(&[v[0], v[1]]))?;
    }

    #[test]
    fn reductions(x in vals(R * C).prop_filter("norm", |v| v.chunks(C).all(|r| r.iter().map(|a| a * a).sum::<f64>() > 1e-2)),
                  p in vals(R * C)) {
        let x = tensor(R, C, &x);
        check(vec![x.clone()], &p, |t, v| t.row_l2_normalize(v[0]))?;
        check(vec![x.clone()], &p, |t, v| t.row_sum(v[0]))?;
        check(vec![x.clone()], &p, |t, v| t.logsumexp_row(v[0]))?;
        check(vec![x.clone()], &p, |t, v| t.sum_all(v[0]))?;
        check(vec![x], &p, |t, v| t.mean_all(v[0]))?;
    }

    #[test]
    fn indexing(x in vals(R * C), p in vals(5 * C), w in vals(R)) {
        let x = tensor(R, C, &x);
        check(vec![x.clone()], &p, |t, v| t.gather_rows(v[0], vec![2, 0, 2, 1, 0]))?;
        let w = w.clone();
        check(vec![x.clone()], &p, move |t, v| t.scatter_add_rows(v[0], vec![4, 1, 4], w.clone(), 5))?;
        let col = Tensor::from_vec(R * C, 1, x.data().to_vec()).unwrap();
        let seg: Vec<usize> = (0..R * C).map(|k| k % 3).collect();
        check(vec![col], &p, move |t, v| t.segment_logsumexp(v[0], seg.clone(), 3))?;
    }

    #[test]
    fn normalized_rows_are_unit(x in prop::collection::vec(-1e3f64..1e3, R * C)) {
        let mut tape = Tape::new();
        let v = tape.leaf(tensor(R, C, &x));
        let y = tape.row_l2_normalize(v).unwrap();
        let out = tape.value(y);
        for i in 0..R {
            let n_in = x[i * C..(i + 1) * C].iter().map(|a| a * a).sum::<f64>().sqrt();
            let n = out.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
            if n_in >= NORM_GUARD {
                prop_assert!((n - 1.0).abs() <= 1e-12);
            } else {
                prop_assert_eq!(out.row(i), &x[i * C..(i + 1) * C]);
            }
        }
    }
}

fn composite(tape: &mut Tape, v: &[Var]) -> Result<Var> {
    let mut h = v[0];
    for l in 0..3 {
        let a = tape.affine(h, v[1 + 2 * l], v[2 + 2 * l])?;
        h = if l < 2 { tape.relu(a)? } else { tape.row_l2_normalize(a)? };
    }
    let s = tape.logsumexp_row(h)?;
    tape.mean_all(s)
}

fn composite_inputs(seed: u64) -> Vec<Tensor> {
    use rand::Rng as _;
    let mut rng = rankgraph::rng::stream(seed, "composite");
    let mut t = |r: usize, c: usize| {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    };
    vec![t(4, 3), t(3, 5), t(1, 5), t(5, 5), t(1, 5), t(5, 2), t(1, 2)]
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let report = grad_check(composite, &composite_inputs(1), 1e-5).unwrap();
    assert!(report.max_rel_error <= 1e-6, "{report:?}");
}

#[test]
fn backward_is_bitwise_deterministic() {
    let inputs = composite_inputs(2);
    let run = || {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = composite(&mut tape, &vars).unwrap();
        let g = tape.backward(loss).unwrap();
        vars.iter()
            .flat_map(|&v| g.wrt(v).into_data())
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn grad_check_rejects_non_finite_intermediates() {
    let x = Tensor::scalar(800.0).unwrap();
    let r = grad_check(
        |tape, v| {
            // x^(2^8) overflows f64
            let mut y = v[0];
            for _ in 0..8 {
                y = tape.hadamard(y, y)?;
            }
            tape.sum_all(y)
        },
        &[x],
        1e-3,
    );
    assert!(r.is_err());
}
