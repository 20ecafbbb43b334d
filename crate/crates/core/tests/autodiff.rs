//! Reverse-mode gradients against central differences, plus forward-pass
//! oracles for the layer primitives.

// Oracles index explicitly on purpose.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use tfn_core::autodiff::{finite_difference_gradient, outer3, relative_error, sigmoid, Activation, DenseLayer, LstmCell, LstmState, NodeId, Tape};
use tfn_core::rng::Rng;
use tfn_core::{Result, Tensor, TfnError};

const SEEDS: u64 = 100;
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId>;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// `sum(R ⊙ build(inputs))` for a fixed random `R`.
fn scalar(build: &Build, inputs: &[Tensor], weights: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let w = tape.constant(weights.clone().reshape(tape.value(out).shape().to_vec())?);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let g = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| grads.take(id).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, g))
}

fn output_len(build: &Build, inputs: &[Tensor]) -> usize {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = build(&mut tape, &ids).unwrap();
    tape.value(out).len()
}

/// Worst relative error over all input coordinates and seeds.
fn check(name: &str, shapes: &[&[usize]], build: &Build) {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s)).collect();
        let n_out = output_len(build, &inputs);
        let weights = random(&mut rng, &[n_out]);
        let (_, analytic) = scalar(build, &inputs, &weights).unwrap();
        for (which, input) in inputs.iter().enumerate() {
            let numeric = finite_difference_gradient(
                |x| {
                    let mut probe = inputs.clone();
                    probe[which] = Tensor::new(input.shape().to_vec(), x.to_vec())?;
                    Ok(scalar(build, &probe, &weights)?.0)
                },
                input.data(),
                EPS,
            )
            .unwrap();
            for (a, n) in analytic[which].data().iter().zip(&numeric) {
                worst = worst.max(relative_error(*a, *n));
            }
        }
    }
    assert!(worst < TOL, "{name}: relative error {worst:e}");
}

#[test]
fn matmul_t_gradient() {
    check("matmul_t", &[&[3, 4], &[5, 4]], &|t, x| t.matmul_t(x[0], x[1]));
}

#[test]
fn add_bias_gradient() {
    check("add_bias", &[&[3, 4], &[4]], &|t, x| t.add_bias(x[0], x[1]));
}

#[test]
fn elementwise_gradients() {
    check("add", &[&[2, 3], &[2, 3]], &|t, x| t.add(x[0], x[1]));
    check("mul", &[&[2, 3], &[2, 3]], &|t, x| t.mul(x[0], x[1]));
    check("affine", &[&[2, 3]], &|t, x| t.affine(x[0], -1.7, 0.3));
    check("sigmoid", &[&[2, 5]], &|t, x| t.sigmoid(x[0]));
    check("tanh", &[&[2, 5]], &|t, x| t.tanh(x[0]));
}

#[test]
fn relu_gradient_away_from_kink() {
    // Standard normal inputs land within EPS of zero with negligible probability.
    check("relu", &[&[3, 6]], &|t, x| t.relu(x[0]));
}

#[test]
fn shape_op_gradients() {
    check("concat_cols", &[&[2, 3], &[2, 1], &[2, 4]], &|t, x| t.concat_cols(x));
    check("slice_cols", &[&[2, 6]], &|t, x| t.slice_cols(x[0], 1, 3));
    check("augment_one", &[&[2, 3]], &|t, x| t.augment_one(x[0]));
    check("gather", &[&[2, 5]], &|t, x| t.gather(x[0], Arc::from(vec![4, 0, 0, 2])));
}

#[test]
fn outer3_gradient() {
    check("outer3", &[&[2, 3], &[2, 2], &[2, 4]], &|t, x| t.outer3(x[0], x[1], x[2]));
}

#[test]
fn reduction_gradients() {
    check("sum", &[&[3, 3]], &|t, x| t.sum(x[0]));
    check("sum_squares", &[&[3, 3]], &|t, x| t.sum_squares(x[0]));
    check("softmax", &[&[3, 5]], &|t, x| t.softmax(x[0]));
}

#[test]
fn loss_gradients() {
    check("bce_mean", &[&[4, 1]], &|t, x| {
        let p = t.sigmoid(x[0])?;
        t.bce_mean(p, vec![1.0, 0.0, 0.0, 1.0])
    });
    check("cross_entropy_mean", &[&[3, 5]], &|t, x| {
        let p = t.softmax(x[0])?;
        t.cross_entropy_mean(p, vec![0, 4, 2])
    });
    check("mse_mean", &[&[4, 1]], &|t, x| t.mse_mean(x[0], vec![0.5, -1.0, 2.0, 0.0]));
}

#[test]
fn outer3_matches_triple_loop_bitwise() {
    let mut rng = Rng::new(9);
    let u: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
    let v: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
    let w: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let t = outer3(&u, &v, &w);
    assert_eq!(t.shape(), &[7, 5, 6]);
    for (i, a) in u.iter().enumerate() {
        for (j, b) in v.iter().enumerate() {
            for (k, c) in w.iter().enumerate() {
                assert_eq!(t.at3(i, j, k).to_bits(), (a * b * c).to_bits());
            }
        }
    }
}

#[test]
fn dense_matches_naive_loop() {
    let mut rng = Rng::new(3);
    for act in [Activation::Relu, Activation::Sigmoid, Activation::Identity] {
        let layer = DenseLayer::xavier(6, 4, act, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let y = layer.forward(&x).unwrap();
        for r in 0..4 {
            let mut z = layer.bias.data()[r];
            for c in 0..6 {
                z += layer.weight.data()[r * 6 + c] * x[c];
            }
            let want = match act {
                Activation::Relu => z.max(0.0),
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                Activation::Identity => z,
            };
            assert!((y.data()[r] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn lstm_matches_scalar_oracle() {
    let mut rng = Rng::new(21);
    let (word, proj, hid) = (5, 3, 4);
    let cell = LstmCell::xavier(word, proj, hid, &mut rng);
    let mut gb = cell.gate_bias.clone();
    gb.data_mut().iter_mut().for_each(|b| *b = 0.3 * rng.normal());
    let cell = LstmCell::new(cell.input_projection, cell.gate_weights, gb).unwrap();
    let mut state = LstmState::zeros(hid);
    let (mut h, mut c) = (vec![0.0; hid], vec![0.0; hid]);
    for _ in 0..6 {
        let x: Vec<f64> = (0..word).map(|_| 2.0 * rng.normal()).collect();
        state = cell.step(&x, &state).unwrap();
        let e: Vec<f64> = (0..proj)
            .map(|r| (0..word).map(|k| cell.input_projection.data()[r * word + k] * x[k]).sum())
            .collect();
        let joined: Vec<f64> = e.iter().chain(&h).copied().collect();
        let pre: Vec<f64> = (0..4 * hid)
            .map(|r| {
                cell.gate_bias.data()[r]
                    + (0..proj + hid)
                        .map(|k| cell.gate_weights.data()[r * (proj + hid) + k] * joined[k])
                        .sum::<f64>()
            })
            .collect();
        for j in 0..hid {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hid + j]);
            let o = sigmoid(pre[2 * hid + j]);
            let m = pre[3 * hid + j].tanh();
            c[j] = f * c[j] + i * m;
            h[j] = o * c[j].tanh();
        }
        for j in 0..hid {
            assert!((state.h.data()[j] - h[j]).abs() < 1e-12);
            assert!((state.c.data()[j] - c[j]).abs() < 1e-12);
            assert!(state.h.data()[j].abs() < 1.0);
        }
    }
}

#[test]
fn backward_is_deterministic_and_single_use() {
    let mut rng = Rng::new(1);
    let a = random(&mut rng, &[3, 4]);
    let w = random(&mut rng, &[2, 4]);
    let run = || {
        let mut tape = Tape::new();
        let x = tape.variable(a.clone());
        let wn = tape.variable(w.clone());
        let y = tape.matmul_t(x, wn).unwrap();
        let y = tape.tanh(y).unwrap();
        let l = tape.sum_squares(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(TfnError::BackwardTwice)));
        (g.get(x).unwrap().clone(), g.get(wn).unwrap().clone())
    };
    let (g1, g2) = (run(), run());
    assert_eq!(g1.0.data(), g2.0.data());
    assert_eq!(g1.1.data(), g2.1.data());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(TfnError::NonScalarLoss(_))));
}

#[test]
fn non_finite_forward_is_reported() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::row_vector(vec![1e308]));
    assert!(matches!(tape.affine(x, 10.0, 0.0), Err(TfnError::NonFinite(_))));
}
