use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

#[test]
fn matmul_by_identity_is_noop() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::identity(2)).unwrap();
    let m = tape
        .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let out = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(out).values(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn activation_values() {
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::scalar(0.0)).unwrap();
    let s = tape.sigmoid(zero).unwrap();
    assert_eq!(tape.value(s).values()[0], 0.5);
    let x = tape.constant(Tensor::scalar(-2.0)).unwrap();
    let l = tape.leaky_relu(x).unwrap();
    assert!((tape.value(l).values()[0] - -0.02).abs() < 1e-15);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "matmul",
            left: vec![2, 3],
            right: vec![2, 3]
        }
    );
    let c = tape.constant(Tensor::zeros(&[3])).unwrap();
    assert!(matches!(
        tape.add(a, c),
        Err(AutodiffError::ShapeMismatch { op: "add", .. })
    ));
}

#[test]
fn non_finite_input_rejected() {
    let mut tape = Tape::new();
    let err = tape.constant(Tensor::scalar(f64::NAN)).unwrap_err();
    assert!(matches!(err, AutodiffError::NonFinite { .. }));
    let big = tape.constant(Tensor::scalar(1e200)).unwrap();
    assert!(tape.square(big).is_err());
}

#[test]
fn backward_simple_derivatives() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![3.0]).unwrap()).unwrap();
    let sq = tape.square(x).unwrap();
    let loss = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(loss).unwrap().get(x).unwrap(), &[6.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0]).unwrap()).unwrap();
    let t = tape.tanh(x).unwrap();
    let loss = tape.sum(t).unwrap();
    assert_eq!(tape.backward(loss).unwrap().get(x).unwrap(), &[1.0]);
}

#[test]
fn backward_needs_scalar_and_ignores_detached() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));

    let detached = tape.leaf(Tensor::vector(vec![5.0]).unwrap()).unwrap();
    let s = tape.sum(x).unwrap();
    let grads = tape.backward(s).unwrap();
    assert!(grads.get(detached).is_none());
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn repeated_backward_accumulates_into_store() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![2.0]).unwrap());
    let mut tape = Tape::new();
    let wv = tape.param(&store, w);
    let sq = tape.square(wv).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap().accumulate_into(&mut store);
    assert_eq!(store.grad(w), &[4.0]);
    tape.backward(loss).unwrap().accumulate_into(&mut store);
    assert_eq!(store.grad(w), &[8.0]);
    store.zero_grad();
    assert_eq!(store.grad(w), &[0.0]);
}

#[test]
fn grad_check_examples() {
    let square = |tape: &mut Tape, xs: &[Var]| {
        let s = tape.square(xs[0])?;
        tape.sum(s)
    };
    let err = grad_check(square, &[Tensor::scalar(3.0)], 1e-5).unwrap();
    assert!(err < 1e-8, "{err}");

    let constant = |tape: &mut Tape, _: &[Var]| tape.constant(Tensor::scalar(4.0));
    assert_eq!(grad_check(constant, &[Tensor::scalar(1.0)], 1e-5).unwrap(), 0.0);

    assert!(grad_check(square, &[Tensor::scalar(1.0)], 0.0).is_err());
}

/// Two-layer perceptron over explicit weights; inputs are [x, w1, b1, w2, b2].
fn mlp(tape: &mut Tape, v: &[Var]) -> Result<Var, AutodiffError> {
    let rows = tape.shape(v[0])[0];
    let h = tape.matmul(v[0], v[1])?;
    let b1 = tape.repeat_rows(v[2], rows)?;
    let h = tape.add(h, b1)?;
    let h = tape.tanh(h)?;
    let o = tape.matmul(h, v[3])?;
    let b2 = tape.repeat_rows(v[4], rows)?;
    let o = tape.add(o, b2)?;
    let o = tape.leaky_relu(o)?;
    tape.mean(o)
}

#[test]
fn mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let inputs = [
            random_tensor(&mut rng, &[3, 4]),
            random_tensor(&mut rng, &[4, 5]),
            random_tensor(&mut rng, &[1, 5]),
            random_tensor(&mut rng, &[5, 2]),
            random_tensor(&mut rng, &[1, 2]),
        ];
        let err = grad_check(mlp, &inputs, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}

#[test]
fn diamond_graph_sums_contributions() {
    // y = sum(tanh(x) * sigmoid(x) + tanh(x)), with tanh(x) shared.
    let f = |tape: &mut Tape, v: &[Var]| {
        let t = tape.tanh(v[0])?;
        let s = tape.sigmoid(v[0])?;
        let p = tape.hadamard(t, s)?;
        let q = tape.add(p, t)?;
        tape.sum(q)
    };
    let x = Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap();
    assert!(grad_check(f, core::slice::from_ref(&x), 1e-5).unwrap() < 1e-7);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone()).unwrap();
    let out = f(&mut tape, &[xv]).unwrap();
    let g = tape.backward(out).unwrap();
    for (i, &xi) in x.values().iter().enumerate() {
        let (t, s) = (xi.tanh(), 1.0 / (1.0 + (-xi).exp()));
        let expected = (1.0 - t * t) * s + t * s * (1.0 - s) + (1.0 - t * t);
        assert!((g.get(xv).unwrap()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn concat_slice_reshape_gradients() {
    let f = |tape: &mut Tape, v: &[Var]| {
        let c = tape.concat(&[v[0], v[1]], 1)?;
        let s = tape.slice(c, 1, 1, 3)?;
        let r = tape.reshape(s, &[6])?;
        let c0 = tape.concat(&[r, r], 0)?;
        let sq = tape.square(c0)?;
        let w = tape.scale(sq, 0.7)?;
        tape.sum(w)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&mut rng, &[2, 2]);
    let b = random_tensor(&mut rng, &[2, 3]);
    assert!(grad_check(f, &[a, b], 1e-5).unwrap() < 1e-8);
}

#[test]
fn scalar_broadcast_gradients() {
    let f = |tape: &mut Tape, v: &[Var]| {
        let a = tape.add(v[0], v[1])?;
        let b = tape.sub(v[1], a)?;
        let c = tape.hadamard(b, v[1])?;
        let d = tape.hadamard(v[1], c)?;
        tape.sum(d)
    };
    let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
    assert!(grad_check(f, &[x, Tensor::scalar(0.9)], 1e-5).unwrap() < 1e-8);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Tensor> = [[3, 4], [4, 5], [1, 5], [5, 2], [1, 2]]
        .iter()
        .map(|s| random_tensor(&mut rng, s))
        .collect();
    let run = || {
        let mut tape = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
        let out = mlp(&mut tape, &vs).unwrap();
        tape.value(out).values()[0].to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![1.0, -2.0]).unwrap());
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    for _ in 0..3 {
        adam.step(&mut store).unwrap();
    }
    assert_eq!(store.value(w).values(), &[1.0, -2.0]);
    assert_eq!(adam.first_moment(0), &[0.0, 0.0]);
    assert_eq!(adam.second_moment(0), &[0.0, 0.0]);
    assert_eq!(adam.step, 3);
}

#[test]
fn adam_first_steps_match_hand_values() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(0.0));
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    store.grad_mut(w)[0] = 1.0;
    adam.step(&mut store).unwrap();
    let first = store.value(w).values()[0];
    assert!((first - -9.99999990e-4).abs() < 1e-15, "{first}");
    adam.step(&mut store).unwrap();
    let second = store.value(w).values()[0] - first;
    assert!((second.abs() - 1e-3).abs() < 1e-9);
}

#[test]
fn adam_rejects_foreign_store() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::scalar(0.0));
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    store.add("extra", Tensor::scalar(0.0));
    assert!(adam.step(&mut store).is_err());
}

#[test]
fn records_round_trip() {
    let mut store = ParamStore::new();
    store.add("a", Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
    let records = store.to_records();
    let mut other = ParamStore::new();
    other.add("a", Tensor::zeros(&[1, 2]));
    other.load_records(&records).unwrap();
    assert_eq!(other.value(ParamId(0)), store.value(ParamId(0)));
    let mut wrong = ParamStore::new();
    wrong.add("a", Tensor::zeros(&[2, 1]));
    assert!(wrong.load_records(&records).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_finite_differences(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[rows, cols]);
        let b = random_tensor(&mut rng, &[rows, cols]);
        let w = random_tensor(&mut rng, &[cols, 2]);
        let f = |tape: &mut Tape, v: &[Var]| {
            let s = tape.add(v[0], v[1])?;
            let d = tape.sub(s, v[1])?;
            let h = tape.hadamard(d, v[1])?;
            let t = tape.tanh(h)?;
            let g = tape.sigmoid(v[0])?;
            let l = tape.leaky_relu(v[1])?;
            let c = tape.concat(&[t, g, l], 1)?;
            let sl = tape.slice(c, 1, 0, cols)?;
            let m = tape.matmul(sl, v[2])?;
            let sq = tape.square(m)?;
            let sc = tape.scale(sq, 0.5)?;
            let a = tape.mean(sc)?;
            let b = tape.sum(t)?;
            tape.add(a, b)
        };
        let err = grad_check(f, &[a, b, w], 1e-5).unwrap();
        prop_assert!(err < 1e-5, "max rel err {}", err);
    }
}
