use std::rc::Rc;

use patclass_tensor::gradcheck::check_params;
use patclass_tensor::{Graph, ParamStore, Reduction, SparseMatrix, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m(rows: &[&[f32]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

#[test]
fn matmul_examples() {
    let g = Graph::<f32>::new();
    let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let i = g.constant(Tensor::identity(2));
    let c = g.matmul(a, i).unwrap();
    assert_eq!(*g.value(c), m(&[&[1.0, 2.0], &[3.0, 4.0]]));

    let b = g.constant(m(&[&[5.0], &[6.0]]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(*g.value(c), m(&[&[17.0], &[39.0]]));

    let z = g.constant(Tensor::zeros(&[3, 2]));
    let c = g.matmul(z, a).unwrap();
    assert_eq!(*g.value(c), Tensor::zeros(&[3, 2]));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(matches!(err, TensorError::Shape { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let g = Graph::<f32>::new();
    let x = g.constant(m(&[&[0.0, 0.0], &[2f32.ln(), 0.0]]));
    let y = g.softmax_rows(x).unwrap();
    let y = g.value(y).clone();
    assert_eq!(y.row_slice(0), &[0.5, 0.5]);
    assert!((y.get(1, 0) - 2.0 / 3.0).abs() < 1e-6);
    assert!((y.get(1, 1) - 1.0 / 3.0).abs() < 1e-6);
    for c in [-50.0f32, 0.0, 7.5, 300.0] {
        let x = g.constant(Tensor::full(&[1, 4], c));
        let y = g.softmax_rows(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let g = Graph::<f32>::new();
    let x = g.constant(m(&[&[1.0, 100.0, 2.0]]));
    let y = g.masked_softmax_rows(x, &[true, false, true]).unwrap();
    let y = g.value(y);
    assert_eq!(y.get(0, 1), 0.0);
    assert!((y.get(0, 0) + y.get(0, 2) - 1.0).abs() < 1e-6);
    let all_masked = g.masked_softmax_rows(x, &[false, false, false]);
    assert!(matches!(all_masked, Err(TensorError::Contract(_))));
}

#[test]
fn backward_square() {
    let g = Graph::<f64>::new();
    let x = g.variable(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).item(), 6.0);
    // Central difference, h = 1e-3.
    let f = |v: f64| v * v;
    let fd = (f(3.0 + 1e-3) - f(3.0 - 1e-3)) / 2e-3;
    assert!((fd - 6.0).abs() < 1e-9);
}

#[test]
fn backward_disconnected_is_zero() {
    let g = Graph::<f32>::new();
    let x = g.variable(Tensor::scalar(2.0));
    let p = g.variable(Tensor::row(vec![1.0, 2.0]));
    let loss = g.mul(x, x).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(p), Tensor::zeros(&[1, 2]));
}

#[test]
fn backward_sigmoid_at_zero() {
    let g = Graph::<f32>::new();
    let x = g.variable(Tensor::zeros(&[2, 3]));
    let s = g.sigmoid(x);
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(x).data().iter().all(|&v| v == 0.25));
}

#[test]
fn backward_on_matrix_is_contract_error() {
    let g = Graph::<f32>::new();
    let x = g.variable(Tensor::zeros(&[2, 2]));
    assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
}

#[test]
fn dropout_eval_is_identity() {
    let g = Graph::<f32>::new();
    let x = g.constant(m(&[&[1.5, -2.0, 3.25]]));
    let y = g.dropout(x, 0.5);
    assert_eq!(x, y);

    let t = Graph::<f32>::training(7);
    let x = t.constant(Tensor::full(&[1, 1000], 1.0));
    let y = t.dropout(x, 0.5);
    let v = t.value(y);
    assert!(v.data().iter().all(|&a| a == 0.0 || a == 2.0));
    let kept = v.data().iter().filter(|&&a| a > 0.0).count();
    assert!((400..600).contains(&kept), "{kept}");
}

#[test]
fn bce_identities() {
    let g = Graph::<f32>::new();
    let z = g.constant(Tensor::zeros(&[1, 1]));
    let p = g.sigmoid(z);
    assert_eq!(g.value(p).item(), 0.5);
    let loss = g.bce(p, &Tensor::scalar(1.0), Reduction::Sum).unwrap();
    assert!((g.value(loss).item() as f64 - 2f64.ln()).abs() < 1e-6);

    let y = m(&[&[1.0, 0.0, 1.0]]);
    let p = g.constant(y.clone());
    let loss = g.bce(p, &y, Reduction::Sum).unwrap();
    assert!(g.value(loss).item() <= 3.0 * 1e-6);
}

#[test]
fn bce_reductions() {
    let g = Graph::<f64>::new();
    let p = g.constant(Tensor::from_rows(&[vec![0.2, 0.7], vec![0.9, 0.4]]));
    let y = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]);
    let s = g.value(g.bce(p, &y, Reduction::Sum).unwrap()).item();
    let mean = g.value(g.bce(p, &y, Reduction::Mean).unwrap()).item();
    assert!((s / 2.0 - mean).abs() < 1e-12);
    // Sum over concatenated batches is the sum of per-batch sums.
    let p1 = g.constant(Tensor::row(vec![0.2, 0.7]));
    let p2 = g.constant(Tensor::row(vec![0.9, 0.4]));
    let s1 = g.value(g.bce(p1, &Tensor::row(vec![0.0, 1.0]), Reduction::Sum).unwrap()).item();
    let s2 = g.value(g.bce(p2, &Tensor::row(vec![1.0, 1.0]), Reduction::Sum).unwrap()).item();
    assert!((s1 + s2 - s).abs() < 1e-12);
}

#[test]
fn bce_gradient_wrt_logit_is_residual() {
    for (z, y) in [(0.3, 1.0), (-1.2, 0.0), (2.0, 0.0), (-0.4, 1.0)] {
        let g = Graph::<f64>::new();
        let x = g.variable(Tensor::scalar(z));
        let p = g.sigmoid(x);
        let loss = g.bce(p, &Tensor::scalar(y), Reduction::Sum).unwrap();
        let grad = g.backward(loss).unwrap().wrt(x).item();
        let expected = patclass_tensor::sigmoid(z) - y;
        let f = |v: f64| {
            let s = patclass_tensor::sigmoid(v);
            -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
        };
        let fd = (f(z + 1e-3) - f(z - 1e-3)) / 2e-3;
        assert!((grad - expected).abs() < 1e-12);
        assert!((grad - fd).abs() / grad.abs() < 1e-4, "{grad} vs {fd}");
    }
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Gradient fidelity for every op, one composite per op family.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = ParamStore::<f64>::new();
    let a = s.insert("a", random(&mut rng, 3, 4)).unwrap();
    let b = s.insert("b", random(&mut rng, 4, 2)).unwrap();
    let c = s.insert("c", random(&mut rng, 3, 4)).unwrap();
    let r = s.insert("r", random(&mut rng, 1, 4)).unwrap();
    let sp = Rc::new(SparseMatrix::from_triplets(
        2,
        3,
        &[(0, 0, 1.0), (1, 0, 0.5), (1, 2, 1.0)],
    ));
    let target = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);

    type Case = Box<dyn Fn(&Graph<f64>, &ParamStore<f64>) -> patclass_tensor::Result<patclass_tensor::Var>>;
    let cases: Vec<(&str, Case)> = vec![
        ("matmul", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let y = g.matmul(g.param(s, a), g.param(s, b))?;
            let y2 = g.mul(y, y)?;
            Ok(g.sum(y2))
        })),
        ("matmul_nt+softmax", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let l = g.matmul_nt(g.param(s, a), g.param(s, c))?;
            let w = g.softmax_rows(l)?;
            let w2 = g.mul(w, l)?;
            Ok(g.sum(w2))
        })),
        ("masked_softmax", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let l = g.matmul_nt(g.param(s, a), g.param(s, c))?;
            let keep: Vec<bool> = (0..9).map(|i| i % 3 != 1 || i == 4).collect();
            let w = g.masked_softmax_rows(l, &keep)?;
            let v = g.matmul(w, g.param(s, c))?;
            let v2 = g.mul(v, v)?;
            Ok(g.sum(v2))
        })),
        ("elementwise", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, a);
            let y = g.param(s, c);
            let t = g.tanh(g.add(x, y)?);
            let u = g.sigmoid(g.sub(x, y)?);
            let v = g.relu(g.add_row(x, g.param(s, r))?);
            let w = g.mul(g.mul(t, u)?, g.scale(v, 1.7))?;
            Ok(g.mean(w))
        })),
        ("ln", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let x = g.sigmoid(g.param(s, a));
            Ok(g.sum(g.ln(x)))
        })),
        ("structural", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, a);
            let y = g.param(s, c);
            let cc = g.concat_cols(&[x, y])?;
            let cr = g.concat_rows(&[x, y])?;
            let sc = g.slice_cols(cc, 2, 6)?;
            let sr = g.slice_rows(cr, 1, 4)?;
            let gr = g.gather_rows(sr, Rc::new(vec![2, 0, 2]))?;
            let mix = g.mul(sc, gr)?;
            let rs = g.reshape(mix, &[4, 3])?;
            let mr = g.mean_rows(rs);
            let mr2 = g.mul(mr, mr)?;
            Ok(g.sum(mr2))
        })),
        ("row_ops", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, a);
            let y = g.param(s, c);
            let w = g.where_rows(Rc::new(vec![true, false, true]), x, y)?;
            let sr = g.scale_rows(w, Rc::new(vec![0.5, -2.0, 1.5]))?;
            let mc = g.mul_const(sr, Rc::new((0..12).map(|i| i as f64 * 0.1).collect()))?;
            let sp_out = g.sparse_matmul(sp.clone(), mc)?;
            let sq = g.mul(sp_out, sp_out)?;
            Ok(g.sum(sq))
        })),
        ("bce", Box::new(move |g: &Graph<f64>, s: &ParamStore<f64>| {
            let z = g.matmul(g.param(s, a), g.param(s, b))?;
            let p = g.sigmoid(z);
            g.bce(p, &target, Reduction::Mean)
        })),
    ];
    for (name, f) in cases {
        let report = check_params(&s, 1e-3, 1e-6, |g, s| f(g, s)).unwrap();
        assert!(
            report.max_rel_error <= 1e-3,
            "{name}: {report:?}"
        );
    }
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::<f64>::new();
    let a = s.insert("a", random(&mut rng, 3, 3)).unwrap();
    let l1 = |g: &Graph<f64>, s: &ParamStore<f64>| {
        let x = g.param(s, a);
        g.sum(g.tanh(x))
    };
    let l2 = |g: &Graph<f64>, s: &ParamStore<f64>| {
        let x = g.param(s, a);
        g.sum(g.sigmoid(g.mul(x, x).unwrap()))
    };
    let grad_of = |f: &dyn Fn(&Graph<f64>, &ParamStore<f64>) -> patclass_tensor::Var| {
        let g = Graph::new();
        let v = f(&g, &s);
        let grads = g.backward(v).unwrap();
        let mut st = s.clone();
        grads.accumulate_into(&mut st);
        st.get(a).grad.clone().unwrap()
    };
    let combined = grad_of(&|g, s| {
        let x = l1(g, s);
        let y = l2(g, s);
        g.add(x, y).unwrap()
    });
    let g1 = grad_of(&l1);
    let g2 = grad_of(&l2);
    for ((c, x), y) in combined.data().iter().zip(g1.data()).zip(g2.data()) {
        assert!((c - (x + y)).abs() <= 1e-6);
    }
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut s = ParamStore::<f64>::new();
    let w = s.insert("w", Tensor::scalar(2.0)).unwrap();
    let g = Graph::new();
    let a = g.param(&s, w);
    let b = g.param(&s, w);
    let loss = g.mul(a, b).unwrap();
    g.backward(loss).unwrap().accumulate_into(&mut s);
    assert_eq!(s.get(w).grad.as_ref().unwrap().item(), 4.0);
}

proptest! {
    #[test]
    fn softmax_rows_normalise_and_shift(
        row in proptest::collection::vec(-20.0f32..20.0, 1..12),
        shift in -50.0f32..50.0,
    ) {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::row(row.clone()));
        let shifted = g.constant(Tensor::row(row.iter().map(|v| v + shift).collect()));
        let y = g.softmax_rows(x).unwrap();
        let z = g.softmax_rows(shifted).unwrap();
        let (y, z) = (g.value(y), g.value(z));
        let total: f32 = y.data().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-5);
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        for (a, b) in y.data().iter().zip(z.data()) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop(
        m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, m, k);
        let b = random(&mut rng, k, n);
        let c = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.get(i, p) * b.get(p, j);
                }
                prop_assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }
}
