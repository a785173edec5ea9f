use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor, Var};
use crate::odeint::{ControlPath, IntegrationConfig};

fn config(d_y: usize, m: usize, d_a: usize) -> ObsNodeConfig {
    ObsNodeConfig {
        d_y,
        m,
        d_a,
        phi_hidden_dim: 5,
        phi_layers: 1,
        phi_activation: Activation::Tanh,
        encoder_hidden_dim: 6,
        rollout_mode: RolloutMode::LongHorizon,
        recursive_chunk: 0.5,
        integration: IntegrationConfig::rk4(0.01),
        time_scale: 1.0,
        treatment_scale: Vec::new(),
        encoder_residual: false,
    }
}

fn random_model(cfg: ObsNodeConfig, seed: u64) -> ObsNode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ObsNode::init(cfg, &mut rng).unwrap();
    // Perturb biases too so no parameter sits at an untested zero.
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for v in model.store.value_mut(id).values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    model
}

fn rhs_values(model: &ObsNode, z: &[f64], a: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, 1, false).unwrap();
    let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec()).unwrap()).unwrap();
    let av = tape.constant(Tensor::matrix(1, a.len(), a.to_vec()).unwrap()).unwrap();
    let out = model.triangular_rhs(&mut tape, &bound, zv, av).unwrap();
    tape.value(out).values().to_vec()
}

/// Plain-loop evaluation of φ-block `i` straight from the stored weights.
fn phi_oracle(model: &ObsNode, i: usize, z: &[f64], a: &[f64]) -> Vec<f64> {
    let c = model.config();
    let mut x: Vec<f64> = z[..i * c.d_y].iter().chain(a).copied().collect();
    let n_layers = c.phi_layers + 1;
    for k in 0..n_layers {
        let w = model
            .store
            .value(model.store.find(&alloc::format!("phi.{i}.layer{k}.weight")).unwrap());
        let b = model
            .store
            .value(model.store.find(&alloc::format!("phi.{i}.layer{k}.bias")).unwrap());
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(rows, x.len());
        let mut out = b.values().to_vec();
        for (r, xr) in x.iter().enumerate() {
            for (col, o) in out.iter_mut().enumerate().take(cols) {
                *o += xr * w.get(r, col);
            }
        }
        if k + 1 < n_layers {
            for o in &mut out {
                *o = o.tanh();
            }
        }
        x = out;
    }
    x
}

#[test]
fn chain_of_integrators_rhs() {
    let model = ObsNode::zeros(config(1, 2, 1)).unwrap();
    assert_eq!(rhs_values(&model, &[1.0, 2.0], &[0.0]), vec![2.0, 0.0]);
}

#[test]
fn single_block_follows_phi() {
    let mut cfg = config(1, 1, 1);
    cfg.phi_layers = 0;
    let mut model = ObsNode::zeros(cfg).unwrap();
    let w = model.store.find("phi.1.layer0.weight").unwrap();
    model.store.value_mut(w).values_mut()[1] = 1.0;
    assert_eq!(rhs_values(&model, &[0.4], &[3.0]), vec![3.0]);
}

#[test]
fn first_block_matches_standalone_phi() {
    let model = random_model(config(2, 3, 2), 4);
    let z = [0.3, -0.2, 0.5, 0.1, -0.7, 0.9];
    let a = [1.0, -0.5];
    let rhs = rhs_values(&model, &z, &a);
    let phi1 = phi_oracle(&model, 1, &z, &a);
    for j in 0..2 {
        assert!((rhs[j] - z[2 + j] - phi1[j]).abs() < 1e-14);
    }
    let phi3 = phi_oracle(&model, 3, &z, &a);
    for j in 0..2 {
        assert!((rhs[4 + j] - phi3[j]).abs() < 1e-14);
    }
}

#[test]
fn rhs_rejects_wrong_widths() {
    let model = ObsNode::zeros(config(1, 2, 1)).unwrap();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, 1, false).unwrap();
    let z = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap()).unwrap();
    let a = tape.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
    assert!(matches!(
        model.triangular_rhs(&mut tape, &bound, z, a),
        Err(ModelError::Dimension { .. })
    ));
}

#[test]
fn emit_takes_first_block() {
    let cases: [(usize, usize, Vec<f64>, Vec<f64>); 3] = [
        (1, 2, vec![3.0, 5.0], vec![3.0]),
        (2, 1, vec![3.0, 5.0], vec![3.0, 5.0]),
        (2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![1.0, 2.0]),
    ];
    for (d_y, m, z, expected) in cases {
        let model = ObsNode::zeros(config(d_y, m, 1)).unwrap();
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::matrix(1, z.len(), z).unwrap()).unwrap();
        let y = model.emit(&mut tape, zv).unwrap();
        assert_eq!(tape.value(y).values(), expected.as_slice());
    }
}

#[test]
fn impute_formula() {
    assert_eq!(impute(&[1.0, 99.0], &[true, false], &[0.5, 0.7]), vec![1.0, 0.7]);
    assert_eq!(impute(&[1.0, 2.0], &[true, true], &[0.5, 0.7]), vec![1.0, 2.0]);
    assert_eq!(impute(&[1.0, 2.0], &[false, false], &[0.5, 0.7]), vec![0.5, 0.7]);
}

fn history(times: &[f64], ys: &[f64], a: f64) -> History {
    History {
        times: times.to_vec(),
        y: ys.iter().map(|&y| vec![y]).collect(),
        mask: ys.iter().map(|_| vec![true]).collect(),
        a: ys.iter().map(|_| vec![a]).collect(),
    }
}

fn encode_values(model: &ObsNode, hs: &[History], t_c: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, hs.len(), false).unwrap();
    let enc = GruEncoder { model, bound: &bound };
    let z = enc.encode(&mut tape, hs, t_c, &[]).unwrap();
    tape.value(z).values().to_vec()
}

#[test]
fn zero_model_encodes_to_zero() {
    let model = ObsNode::zeros(config(1, 2, 1)).unwrap();
    let h = history(&[0.0, 0.5, 1.0], &[3.0, -1.0, 2.0], 1.0);
    assert_eq!(encode_values(&model, &[h], 1.0), vec![0.0, 0.0]);
}

#[test]
fn residual_encoder_starts_from_latest_observation() {
    let mut cfg = config(1, 3, 1);
    cfg.encoder_residual = true;
    let model = ObsNode::zeros(cfg).unwrap();
    let h = history(&[0.0, 0.5, 1.0], &[3.0, -1.0, 2.0], 1.0);
    assert_eq!(
        encode_values(&model, core::slice::from_ref(&h), 1.0),
        vec![2.0, 0.0, 0.0]
    );
    assert_eq!(
        encode_values(&model, core::slice::from_ref(&h), 0.7),
        vec![-1.0, 0.0, 0.0]
    );
    // A missing latest value is replaced by its imputation constant.
    let mut gap = h;
    gap.mask[2][0] = false;
    assert_eq!(encode_values(&model, &[gap], 1.0), vec![0.0, 0.0, 0.0]);
}

#[test]
fn residual_batches_match_single_rows_bitwise() {
    let mut cfg = config(1, 2, 1);
    cfg.encoder_residual = true;
    let model = random_model(cfg, 4);
    let a = history(&[0.0, 0.5, 1.0], &[0.3, -1.0, 2.0], 0.5);
    let b = history(&[0.0, 0.25, 0.9], &[1.1, 0.4, -0.7], -0.5);
    let both = encode_values(&model, &[a.clone(), b.clone()], 0.95);
    let single: Vec<f64> = [a, b]
        .iter()
        .flat_map(|h| encode_values(&model, core::slice::from_ref(h), 0.95))
        .collect();
    assert_eq!(both, single);
}

#[test]
fn encode_is_deterministic_and_order_sensitive() {
    let model = random_model(config(1, 2, 1), 9);
    let h = history(&[0.0, 0.5, 1.0, 1.5], &[0.3, -1.0, 2.0, 0.1], 0.5);
    assert_eq!(
        encode_values(&model, core::slice::from_ref(&h), 1.5),
        encode_values(&model, core::slice::from_ref(&h), 1.5)
    );
    let mut swapped = h.clone();
    swapped.y.swap(1, 2);
    assert_ne!(encode_values(&model, &[h], 1.5), encode_values(&model, &[swapped], 1.5));
}

#[test]
fn encode_uses_only_steps_up_to_decision_time() {
    let model = random_model(config(1, 2, 1), 2);
    let h = history(&[0.0, 0.5, 1.0, 1.5], &[0.3, -1.0, 2.0, 0.1], 0.5);
    let mut cut = h.clone();
    cut.times.truncate(2);
    cut.y.truncate(2);
    cut.mask.truncate(2);
    cut.a.truncate(2);
    assert_eq!(
        encode_values(&model, core::slice::from_ref(&h), 0.5),
        encode_values(&model, &[cut], 0.5)
    );
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, 1, false).unwrap();
    let enc = GruEncoder {
        model: &model,
        bound: &bound,
    };
    assert!(matches!(
        enc.encode(&mut tape, &[h], -1.0, &[]),
        Err(ModelError::EmptyHistory)
    ));
}

#[test]
fn batched_encoding_matches_single_rows_bitwise() {
    let model = random_model(config(1, 2, 1), 13);
    let a = history(&[0.0, 0.5, 1.0], &[0.3, -1.0, 2.0], 0.5);
    // Different grid and a missing value: exercises the per-row gating.
    let mut b = history(&[0.0, 0.25, 1.0], &[1.3, 0.2, -0.4], 1.0);
    b.mask[1][0] = false;
    let both = encode_values(&model, &[a.clone(), b.clone()], 1.0);
    let single_a = encode_values(&model, &[a], 1.0);
    let single_b = encode_values(&model, &[b], 1.0);
    assert_eq!(&both[..2], single_a.as_slice());
    assert_eq!(&both[2..], single_b.as_slice());
}

/// Returns a fixed state regardless of the history.
struct FixedEncoder(Vec<f64>);

impl StateEncoder for FixedEncoder {
    fn encode(&self, tape: &mut Tape, hs: &[History], _t_c: f64, _extra: &[PseudoObs]) -> Result<Var, ModelError> {
        let rows = hs.len();
        let mut v = Vec::new();
        for _ in 0..rows {
            v.extend_from_slice(&self.0);
        }
        Ok(tape.constant(Tensor::matrix(rows, self.0.len(), v)?)?)
    }
}

/// Exact state of a noiseless two-block chain of integrators: position from
/// the latest sample, velocity from the last two.
struct ChainEncoder;

impl StateEncoder for ChainEncoder {
    fn encode(&self, tape: &mut Tape, hs: &[History], t_c: f64, extra: &[PseudoObs]) -> Result<Var, ModelError> {
        let h = &hs[0];
        let n = h.steps_until(t_c);
        let mut pts: Vec<(f64, f64)> = (0..n).map(|k| (h.times[k], h.y[k][0])).collect();
        for e in extra {
            pts.push((e.time, tape.value(e.y).values()[0]));
        }
        let (t1, y1) = pts[pts.len() - 1];
        let (t0, y0) = pts[pts.len() - 2];
        Ok(tape.constant(Tensor::matrix(1, 2, vec![y1, (y1 - y0) / (t1 - t0)])?)?)
    }
}

fn forecast_values<E: StateEncoder>(
    model: &ObsNode,
    enc: &E,
    hs: &[History],
    t_c: f64,
    control: &ControlPath,
    qs: &[f64],
) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, hs.len(), false).unwrap();
    let out = model
        .forecast(&mut tape, &bound, enc, hs, t_c, control, qs, false)
        .unwrap();
    out.iter().map(|v| tape.value(*v).values().to_vec()).collect()
}

fn control_1x1(v: f64) -> ControlPath {
    ControlPath::constant(Tensor::matrix(1, 1, vec![v]).unwrap()).unwrap()
}

#[test]
fn chain_forecast_is_linear_in_time() {
    let model = ObsNode::zeros(config(1, 2, 1)).unwrap();
    let h = history(&[0.0], &[0.0], 0.0);
    let qs = [0.25, 0.5, 1.0, 2.0];
    let out = forecast_values(&model, &FixedEncoder(vec![0.0, 1.0]), &[h], 0.0, &control_1x1(0.0), &qs);
    for (q, y) in qs.iter().zip(out) {
        assert!((y[0] - q).abs() < 1e-12);
    }
}

#[test]
fn zero_field_forecast_is_constant() {
    let model = ObsNode::zeros(config(1, 1, 1)).unwrap();
    let h = history(&[0.0], &[0.0], 0.0);
    let out = forecast_values(
        &model,
        &FixedEncoder(vec![0.7]),
        &[h],
        0.0,
        &control_1x1(2.0),
        &[0.5, 3.0],
    );
    assert_eq!(out, vec![vec![0.7], vec![0.7]]);
}

#[test]
fn recursive_matches_long_horizon_with_exact_encoder() {
    let mut cfg = config(1, 2, 1);
    let long = ObsNode::zeros(cfg.clone()).unwrap();
    cfg.rollout_mode = RolloutMode::Recursive;
    cfg.recursive_chunk = 0.3;
    let rec = ObsNode::zeros(cfg).unwrap();
    let h = history(&[0.0, 0.1, 0.2], &[1.0, 1.05, 1.1], 0.0);
    let qs: Vec<f64> = (1..=20).map(|k| 0.2 + 0.1 * k as f64).collect();
    let a = forecast_values(
        &long,
        &ChainEncoder,
        core::slice::from_ref(&h),
        0.2,
        &control_1x1(0.0),
        &qs,
    );
    let b = forecast_values(&rec, &ChainEncoder, &[h], 0.2, &control_1x1(0.0), &qs);
    for ((x, y), q) in a.iter().zip(&b).zip(&qs) {
        assert!((x[0] - y[0]).abs() < 1e-6);
        assert!((x[0] - (1.1 + 0.5 * (q - 0.2))).abs() < 1e-9, "{q} {x:?}");
    }
}

#[test]
fn forecast_is_lipschitz_in_initial_state() {
    let model = random_model(config(1, 2, 1), 21);
    let h = history(&[0.0], &[0.0], 0.0);
    let qs = [0.5, 1.0];
    let base = forecast_values(
        &model,
        &FixedEncoder(vec![0.2, -0.1]),
        core::slice::from_ref(&h),
        0.0,
        &control_1x1(0.5),
        &qs,
    );
    for delta in [1e-3, 1e-4] {
        let moved = forecast_values(
            &model,
            &FixedEncoder(vec![0.2 + delta, -0.1]),
            core::slice::from_ref(&h),
            0.0,
            &control_1x1(0.5),
            &qs,
        );
        let change = base
            .iter()
            .zip(&moved)
            .map(|(a, b)| (a[0] - b[0]).abs())
            .fold(0.0, f64::max);
        let ratio = change / delta;
        assert!(ratio > 0.0 && ratio < 10.0, "{ratio}");
    }
}

#[test]
fn probe_on_chain_of_integrators() {
    let model = ObsNode::zeros(config(1, 2, 1)).unwrap();
    let gap = model
        .observability_probe(&control_1x1(0.0), &[(vec![0.0, 1.0], vec![0.0, 2.0])], 1.0, 11)
        .unwrap();
    assert!((gap - 1.0).abs() < 1e-9);
    let same = model
        .observability_probe(&control_1x1(0.0), &[(vec![0.0, 1.0], vec![0.0, 1.0])], 1.0, 11)
        .unwrap();
    assert_eq!(same, 0.0);
}

#[test]
fn probe_positive_for_random_models() {
    let model = random_model(config(2, 2, 1), 31);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs = Vec::new();
    while pairs.len() < 50 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if dist >= 0.1 {
            pairs.push((a, b));
        }
    }
    let gap = model.observability_probe(&control_1x1(0.3), &pairs, 1.0, 21).unwrap();
    assert!(gap > 0.0);
}

/// Jacobian of the rhs at one input, row-major `[d_z, d_z]`, via backward.
fn rhs_jacobian(model: &ObsNode, z: &[f64], a: &[f64]) -> Vec<Vec<f64>> {
    let d_z = z.len();
    let mut rows = Vec::new();
    for out in 0..d_z {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, 1, false).unwrap();
        let zv = tape.leaf(Tensor::matrix(1, d_z, z.to_vec()).unwrap()).unwrap();
        let av = tape.constant(Tensor::matrix(1, a.len(), a.to_vec()).unwrap()).unwrap();
        let rhs = model.triangular_rhs(&mut tape, &bound, zv, av).unwrap();
        let pick = tape.slice(rhs, 1, out, 1).unwrap();
        let loss = tape.sum(pick).unwrap();
        let g = tape.backward(loss).unwrap();
        rows.push(g.get(zv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d_z]));
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rhs_jacobian_is_triangular(
        seed in any::<u64>(),
        d_y in 1usize..3,
        m in 1usize..4,
        d_a in 1usize..3,
        act in 0usize..3,
    ) {
        let mut cfg = config(d_y, m, d_a);
        cfg.phi_activation = [Activation::Tanh, Activation::LeakyRelu, Activation::Sigmoid][act];
        let model = random_model(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let z: Vec<f64> = (0..d_y * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a: Vec<f64> = (0..d_a).map(|_| rng.random_range(-2.0..2.0)).collect();
        let jac = rhs_jacobian(&model, &z, &a);
        for (row, grads) in jac.iter().enumerate() {
            let block_i = row / d_y + 1;
            for (col, g) in grads.iter().enumerate() {
                let block_j = col / d_y + 1;
                if block_j > block_i + 1 {
                    prop_assert_eq!(*g, 0.0);
                }
            }
        }
    }

    #[test]
    fn emission_ignores_lower_blocks(seed in any::<u64>(), d_y in 1usize..3, m in 2usize..4) {
        let model = ObsNode::zeros(config(d_y, m, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..d_y * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::matrix(1, z.len(), z).unwrap()).unwrap();
        let y = model.emit(&mut tape, zv).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        let g = g.get(zv).unwrap();
        prop_assert!(g[d_y..].iter().all(|&v| v == 0.0));
        prop_assert!(g[..d_y].iter().all(|&v| v == 1.0));
    }
}

/// Scalar loss of encode → forecast for the tiny instance, recorded with
/// gradients when `grad` is set.
fn tiny_loss(model: &ObsNode, tape: &mut Tape, grad: bool) -> Var {
    let h = History {
        times: vec![0.0, 0.3, 0.6],
        y: vec![vec![0.2], vec![0.0], vec![-0.4]],
        mask: vec![vec![true], vec![false], vec![true]],
        a: vec![vec![1.0], vec![0.0], vec![0.5]],
    };
    let bound = model.bind(tape, 1, grad).unwrap();
    let enc = GruEncoder { model, bound: &bound };
    let control = ControlPath::new(
        vec![0.6, 0.8],
        vec![
            Tensor::matrix(1, 1, vec![0.5]).unwrap(),
            Tensor::matrix(1, 1, vec![-1.0]).unwrap(),
        ],
    )
    .unwrap();
    let preds = model
        .forecast(tape, &bound, &enc, &[h], 0.3, &control, &[0.6, 1.0], grad)
        .unwrap();
    let target = tape.constant(Tensor::matrix(1, 1, vec![0.3]).unwrap()).unwrap();
    let mut total = None;
    for p in preds {
        let d = tape.sub(p, target).unwrap();
        let s = tape.square(d).unwrap();
        let s = tape.sum(s).unwrap();
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s).unwrap(),
        });
    }
    total.unwrap()
}

fn encode_forecast_gradient_error(residual: bool) -> f64 {
    let mut cfg = config(1, 2, 1);
    cfg.integration = IntegrationConfig::rk4(0.05);
    cfg.encoder_residual = residual;
    let mut model = random_model(cfg, 17);
    let mut tape = Tape::new();
    let loss = tiny_loss(&model, &mut tape, true);
    tape.backward(loss).unwrap().accumulate_into(&mut model.store);

    let h = 1e-6;
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        for k in 0..model.store.value(id).numel() {
            let analytic = model.store.grad(id)[k];
            let orig = model.store.value(id).values()[k];
            let mut eval = |x: f64| {
                model.store.value_mut(id).values_mut()[k] = x;
                let mut t = Tape::new();
                let l = tiny_loss(&model, &mut t, false);
                t.value(l).values()[0]
            };
            let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            model.store.value_mut(id).values_mut()[k] = orig;
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn encode_forecast_gradient_matches_finite_differences() {
    for residual in [false, true] {
        let worst = encode_forecast_gradient_error(residual);
        assert!(worst < 1e-4, "residual {residual}: {worst}");
    }
}

#[test]
fn checkpoint_layout_is_reproducible() {
    let cfg = config(2, 3, 2);
    let a = random_model(cfg.clone(), 5);
    let mut b = ObsNode::zeros(cfg).unwrap();
    b.store.load_records(&a.store.to_records()).unwrap();
    let z = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    assert_eq!(rhs_values(&a, &z, &[0.1, 0.0]), rhs_values(&b, &z, &[0.1, 0.0]));
}

#[test]
fn config_validation() {
    let mut cfg = config(1, 2, 1);
    assert!(cfg.validate().is_ok());
    cfg.m = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = config(1, 2, 1);
    cfg.rollout_mode = RolloutMode::Recursive;
    cfg.recursive_chunk = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = config(1, 2, 2);
    cfg.treatment_scale = vec![1.0];
    assert!(cfg.validate().is_err());
}
