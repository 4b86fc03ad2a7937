use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::identity(2));
    let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let c = g.matmul(i, a).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let r = g.constant(m(&[&[1.0, 2.0]]));
    let col = g.constant(m(&[&[3.0], &[4.0]]));
    let d = g.matmul(r, col).unwrap();
    assert_eq!(g.value(d).shape(), &[1, 1]);
    assert_eq!(g.value(d).item(), 11.0);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.matches("[2, 3]").count() == 2, "{err}");
}

#[test]
fn matmul_gradcheck() {
    let err = gradcheck(|g, v| g.matmul(v[0], v[1]), &[random(&[3, 4], 1), random(&[4, 2], 2)]);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn matmul_chain_gradcheck() {
    let err = gradcheck(
        |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            g.matmul(ab, v[2])
        },
        &[random(&[2, 3], 3), random(&[3, 4], 4), random(&[4, 2], 5)],
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn sigmoid_and_mul_values() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z).unwrap();
    assert_eq!(g.value(s).item(), 0.5);

    let a = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
    let b = g.constant(Tensor::from_vec(vec![0.0; 3]));
    let p = g.elementwise(Elementwise::Mul, a, Some(b)).unwrap();
    assert_eq!(g.value(p).data(), &[0.0; 3]);
}

#[test]
fn sigmoid_is_stable_at_extremes() {
    assert_eq!(sigmoid(-800.0), 0.0);
    assert_eq!(sigmoid(800.0), 1.0);
    assert!((sigmoid(-30.0) - (-30f64).exp() / (1.0 + (-30f64).exp())).abs() < 1e-25);
}

#[test]
fn elementwise_gradchecks() {
    let x = Tensor::from_vec(vec![-2.0, 0.0, 3.0]);
    for kind in [Elementwise::Sigmoid, Elementwise::Tanh, Elementwise::Exp] {
        let err = gradcheck(|g, v| g.elementwise(kind, v[0], None), std::slice::from_ref(&x));
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
    let pos = Tensor::from_vec(vec![0.5, 1.0, 3.0]);
    let err = gradcheck(|g, v| g.log(v[0]), &[pos]);
    assert!(err < 1e-6, "log: {err}");
    let away_from_kink = Tensor::from_vec(vec![-2.0, -0.5, 0.7, 3.0]);
    let err = gradcheck(|g, v| g.relu(v[0]), &[away_from_kink]);
    assert!(err < 1e-6, "relu: {err}");
    for kind in [Elementwise::Add, Elementwise::Sub, Elementwise::Mul] {
        let err = gradcheck(
            |g, v| g.elementwise(kind, v[0], Some(v[1])),
            &[random(&[2, 3], 6), random(&[2, 3], 7)],
        );
        assert!(err < 1e-6, "{kind:?}: {err}");
    }
}

#[test]
fn trailing_singleton_broadcast() {
    let mut g = Graph::new();
    let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = g.constant(m(&[&[10.0], &[100.0]]));
    let c = g.mul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[10.0, 20.0, 300.0, 400.0]);
    let bad = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(g.add(a, bad).is_err());

    let err = gradcheck(|g, v| g.mul(v[0], v[1]), &[random(&[3, 4], 8), random(&[3, 1], 9)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.sub(v[0], v[1]), &[random(&[3, 4], 8), random(&[3, 1], 9)]);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn log_rejects_non_positive() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_vec(vec![1.0, 0.0]));
    assert!(matches!(g.log(a), Err(Error::Domain { .. })));
}

#[test]
fn unary_arity_is_enforced() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1.0));
    assert!(g.elementwise(Elementwise::Add, a, None).is_err());
    assert!(g.elementwise(Elementwise::Exp, a, Some(a)).is_err());
}

#[test]
fn softmax_values() {
    let mut g = Graph::new();
    let u = g.constant(Tensor::from_vec(vec![0.0; 3]));
    let s = g.softmax(u).unwrap();
    for v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let t = g.constant(Tensor::from_vec(vec![2f64.ln(), 0.0]));
    let s = g.softmax(t).unwrap();
    let d = g.value(s).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_stable_for_large_logits() {
    let mut g = Graph::new();
    let t = g.constant(Tensor::from_vec(vec![1000.0, 1000.0]));
    let s = g.softmax(t).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_gradchecks() {
    let err = gradcheck(|g, v| g.softmax(v[0]), &[random(&[5], 10)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.softmax(v[0]), &[random(&[3, 4], 11)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(
        |g, v| {
            let s = g.sigmoid(v[0])?;
            g.softmax(s)
        },
        &[random(&[2, 5], 12)],
    );
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.log_softmax(v[0]), &[random(&[2, 5], 13)]);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn reduce_values() {
    let mut g = Graph::new();
    let a = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let mean0 = g.mean(a, 0).unwrap();
    assert_eq!(g.value(mean0).data(), &[2.0, 3.0]);
    let sum1 = g.sum(a, 1).unwrap();
    assert_eq!(g.value(sum1).data(), &[3.0, 7.0]);

    let z = g.constant(Tensor::zeros(&[2, 3]));
    let s = g.sum(z, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.0; 3]);

    let row = g.constant(m(&[&[5.0, -1.0, 2.5]]));
    let r = g.mean(row, 0).unwrap();
    assert_eq!(g.value(r).data(), &[5.0, -1.0, 2.5]);

    assert!(g.mean(a, 2).is_err());
}

#[test]
fn reduce_gradcheck() {
    for axis in 0..3 {
        let err = gradcheck(|g, v| g.mean(v[0], axis), &[random(&[2, 3, 4], 14)]);
        assert!(err < 1e-6, "mean axis {axis}: {err}");
        let err = gradcheck(|g, v| g.sum(v[0], axis), &[random(&[2, 3, 4], 15)]);
        assert!(err < 1e-6, "sum axis {axis}: {err}");
    }
}

#[test]
fn backward_simple_cases() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![0.3, -1.0, 2.0]).with_requires_grad(true));
    let s = g.sum_all(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![1.0, 2.0]).with_requires_grad(true));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![1.0, 2.0]).with_requires_grad(true));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

#[test]
fn backward_twice_doubles_gradients() {
    let mut g = Graph::new();
    let a = g.input(random(&[3, 4], 16).with_requires_grad(true));
    let b = g.input(random(&[4, 2], 17).with_requires_grad(true));
    let c = g.matmul(a, b).unwrap();
    let t = g.tanh(c).unwrap();
    let s = g.softmax(t).unwrap();
    let l = g.pick(s, 3).unwrap();
    g.backward(l).unwrap();
    let first: Vec<f64> = g.grad(a).unwrap().to_vec();
    g.backward(l).unwrap();
    let second = g.grad(a).unwrap();
    for (x, y) in first.iter().zip(second) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![1.0, 2.0]).with_requires_grad(true));
    let c = g.constant(Tensor::from_vec(vec![3.0, 4.0]));
    let p = g.mul(x, c).unwrap();
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn param_leaves_are_shared_and_accumulate_into_store() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::from_vec(vec![2.0, 3.0]));
    let mut g = Graph::new();
    let a = g.param(&store, w);
    let b = g.param(&store, w);
    assert_eq!(a, b);
    let sq = g.mul(a, b).unwrap();
    let s = g.sum_all(sq).unwrap();
    g.backward(s).unwrap();
    g.accumulate_into(&mut store);
    assert_eq!(store.get(w).grad().unwrap(), &[4.0, 6.0]);
}

#[test]
fn structural_ops_gradcheck() {
    let err = gradcheck(|g, v| g.transpose(v[0]), &[random(&[2, 3], 18)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.concat_cols(&[v[0], v[1]]), &[random(&[2, 3], 19), random(&[2, 1], 20)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.concat_rows(&[v[0], v[1]]), &[random(&[2, 3], 21), random(&[1, 3], 22)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.slice_cols(v[0], 1, 2), &[random(&[3, 4], 23)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.slice_rows(v[0], 1, 2), &[random(&[3, 4], 24)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.gather_rows(v[0], &[2, 0, 2]), &[random(&[4, 3], 25)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.add_row(v[0], v[1]), &[random(&[3, 4], 26), random(&[4], 27)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.affine(v[0], -1.5, 0.25), &[random(&[3], 28)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(|g, v| g.pick(v[0], 4), &[random(&[2, 3], 29)]);
    assert!(err < 1e-6, "{err}");
    let err = gradcheck(
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        &[random(&[3, 4], 30), random(&[4], 31), random(&[4], 32)],
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gradcheck_of_identity_is_exact() {
    let err = gradcheck(|g, v| g.reshape(v[0], &[3]), &[Tensor::zeros(&[3])]);
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_detects_a_wrong_gradient() {
    // relu at its kink: analytic 0 vs numeric 0.5.
    let err = gradcheck(|g, v| g.relu(v[0]), &[Tensor::from_vec(vec![0.0])]);
    assert!(err > 0.1, "{err}");
}

#[test]
fn finite_checks_flag_overflow() {
    let mut g = Graph::with_finite_checks(true);
    let a = g.constant(Tensor::scalar(1000.0));
    assert!(matches!(g.exp(a), Err(Error::NonFinite { .. })));
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1000.0));
    assert!(g.exp(a).is_ok());
}

#[test]
fn ops_are_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let a = g.input(random(&[4, 5], 33).with_requires_grad(true));
        let b = g.constant(random(&[5, 3], 34));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c).unwrap();
        let l = g.sum(s, 0).unwrap();
        let l = g.pick(l, 1).unwrap();
        g.backward(l).unwrap();
        (g.value(s).data().to_vec(), g.grad(a).unwrap().to_vec())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_slices_sum_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..12), rows in 1usize..4) {
            let n = xs.len();
            let data: Vec<f64> = (0..rows).flat_map(|r| xs.iter().map(move |x| x * (r + 1) as f64 / 2.0)).collect();
            let mut g = Graph::new();
            let a = g.constant(Tensor::matrix(rows, n, data).unwrap());
            let s = g.softmax(a).unwrap();
            for row in g.value(s).data().chunks(n) {
                let total: f64 = row.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
            }
        }
    }
}
