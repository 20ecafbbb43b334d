//! Gradient verification suite: every differentiable component is checked
//! against central finite differences over a set of seeds.

use std::fmt::Write as _;

use serde::Serialize;

use crate::autodiff::{relative_error, Activation, DenseLayer, LstmCell, NodeId, Tape};
use crate::data::{synth_generate, SynthSpec};
use crate::embeddings::{LanguageSubnetwork, ModalitySubnetwork};
use crate::error::{Result, TfnError};
use crate::fusion::{fuse_on_tape, FusionVariant};
use crate::inference::{InferenceNetwork, Task};
use crate::model::{ArchConfig, ModelConfig, PreparedUtterance, TfnModel};
use crate::regularize::{l2_on_tape, Dropout};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: usize = 20;
/// Coordinates sampled per tensor; smaller tensors are checked exhaustively.
pub const DEFAULT_MAX_COORDS: usize = 12;

/// Components in report order.
pub const COMPONENTS: [&str; 16] = [
    "dense_relu",
    "dense_sigmoid",
    "dense_identity",
    "lstm_step",
    "sigmoid",
    "tanh",
    "softmax",
    "tensor_fusion",
    "l2_penalty",
    "dropout",
    "language_subnetwork",
    "modality_subnetwork",
    "head_binary_bce",
    "head_five_class_ce",
    "head_regression_mse",
    "tfn_end_to_end",
];

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub seeds: usize,
    pub eps: f64,
    pub max_coords: usize,
    /// Component whose analytic gradient is deliberately scaled by 1.01
    /// (fault injection for testing the checker itself).
    pub fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            seeds: DEFAULT_SEEDS,
            eps: crate::autodiff::DEFAULT_EPS,
            max_coords: DEFAULT_MAX_COORDS,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentResult {
    pub component: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// Coordinates skipped because the two probes straddle a ReLU kink.
    pub kinks_skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub seeds: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub components: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<22} {:>14} {:>8} {:>6}  status",
            "component", "max_rel_err", "coords", "kinks"
        );
        for c in &self.components {
            let _ = writeln!(
                s,
                "{:<22} {:>14.3e} {:>8} {:>6}  {}",
                c.component,
                c.max_relative_error,
                c.coordinates,
                c.kinks_skipped,
                if c.passed { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(
            s,
            "{} seeds, eps {:e}, tolerance {:e}: {}",
            self.seeds,
            self.eps,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stat {
    max: f64,
    coords: usize,
    kinks: usize,
}

impl Stat {
    fn merge(&mut self, o: Stat) {
        self.max = self.max.max(o.max);
        self.coords += o.coords;
        self.kinks += o.kinks;
    }
}

struct Checker {
    rng: Rng,
    eps: f64,
    max_coords: usize,
    corrupt: bool,
}

/// Output of a build closure: the node to differentiate and the nodes of the
/// checked tensors, in the order of the accessor.
type Built = (NodeId, Vec<NodeId>);

impl Checker {
    /// Compares `d(Σ R ⊙ out)/dθ` for every tensor θ returned by `tensors`.
    fn check<M, T, B>(&mut self, module: &mut M, tensors: T, build: B) -> Result<Stat>
    where
        T: Fn(&mut M) -> Vec<&mut Tensor>,
        B: for<'p> Fn(&'p M, &mut Tape<'p>) -> Result<Built>,
    {
        let mut weights: Option<Tensor> = None;
        let eval = |m: &M, weights: &mut Option<Tensor>, rng: &mut Rng| -> Result<(f64, Vec<bool>)> {
            let mut tape = Tape::new();
            let (out, _) = build(m, &mut tape)?;
            let loss = scalarize(&mut tape, out, weights, rng)?;
            Ok((tape.value(loss).data()[0], tape.relu_pattern()))
        };

        let analytic: Vec<Option<Tensor>> = {
            let mut tape = Tape::new();
            let (out, ids) = build(module, &mut tape)?;
            let loss = scalarize(&mut tape, out, &mut weights, &mut self.rng)?;
            let mut grads = tape.backward(loss)?;
            ids.iter().map(|&id| grads.take(id)).collect()
        };

        let mut stat = Stat::default();
        let count = tensors(module).len();
        for (t, grad) in analytic.iter().enumerate().take(count) {
            let len = tensors(module)[t].len();
            let coords = self.sample(len);
            for c in coords {
                let orig = tensors(module)[t].data()[c];
                tensors(module)[t].data_mut()[c] = orig + self.eps;
                let (plus, p_pat) = eval(module, &mut weights, &mut self.rng)?;
                tensors(module)[t].data_mut()[c] = orig - self.eps;
                let (minus, m_pat) = eval(module, &mut weights, &mut self.rng)?;
                tensors(module)[t].data_mut()[c] = orig;
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(TfnError::NonFinite("finite-difference probe".into()));
                }
                if p_pat != m_pat {
                    stat.kinks += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * self.eps);
                let mut a = grad.as_ref().map_or(0.0, |g| g.data()[c]);
                if self.corrupt {
                    a *= 1.01;
                    if a == 0.0 {
                        a = 1e-3;
                    }
                }
                stat.max = stat.max.max(relative_error(a, numeric));
                stat.coords += 1;
            }
        }
        Ok(stat)
    }

    fn sample(&mut self, len: usize) -> Vec<usize> {
        if len <= self.max_coords {
            return (0..len).collect();
        }
        let mut all: Vec<usize> = (0..len).collect();
        self.rng.shuffle(&mut all);
        all.truncate(self.max_coords);
        all.sort_unstable();
        all
    }
}

/// Turns `out` into a scalar by a fixed random weighting when it is not one.
fn scalarize(tape: &mut Tape<'_>, out: NodeId, weights: &mut Option<Tensor>, rng: &mut Rng) -> Result<NodeId> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = tape.value(out).shape().to_vec();
    let w = weights.get_or_insert_with(|| random(&shape, 1.0, rng)).clone();
    let r = tape.constant(w);
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn random(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).expect("shape matches")
}

fn randomize(t: &mut Tensor, scale: f64, rng: &mut Rng) {
    for v in t.data_mut() {
        *v = scale * rng.normal();
    }
}

fn random_dense(input: usize, output: usize, act: Activation, rng: &mut Rng) -> DenseLayer {
    let mut l = DenseLayer::xavier(input, output, act, rng);
    randomize(&mut l.bias, 0.5, rng);
    l
}

fn labels(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect()
}

/// Runs the whole suite.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.seeds == 0 || opts.max_coords == 0 {
        return Err(TfnError::Config("gradcheck needs at least one seed and one coordinate".into()));
    }
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(TfnError::Config(format!("eps must be positive, got {}", opts.eps)));
    }
    if let Some(f) = &opts.fault {
        if !COMPONENTS.contains(&f.as_str()) {
            return Err(TfnError::Config(format!("unknown gradcheck component `{f}`")));
        }
    }
    let mut stats = vec![Stat::default(); COMPONENTS.len()];
    for i in 0..opts.seeds {
        let seed = derive_seed(opts.seed, &format!("gradcheck/{i}"));
        for (k, name) in COMPONENTS.iter().enumerate() {
            let mut checker = Checker {
                rng: Rng::derived(seed, name),
                eps: opts.eps,
                max_coords: opts.max_coords,
                corrupt: opts.fault.as_deref() == Some(*name),
            };
            let s = run_component(name, i, &mut checker)?;
            stats[k].merge(s);
        }
    }
    let components = COMPONENTS
        .iter()
        .zip(stats)
        .map(|(name, s)| ComponentResult {
            component: name.to_string(),
            max_relative_error: s.max,
            coordinates: s.coords,
            kinks_skipped: s.kinks,
            passed: s.coords > 0 && s.max < GRADCHECK_TOLERANCE,
        })
        .collect();
    Ok(GradcheckReport {
        seed: opts.seed,
        seeds: opts.seeds,
        eps: opts.eps,
        tolerance: GRADCHECK_TOLERANCE,
        components,
    })
}

fn run_component(name: &str, index: usize, ck: &mut Checker) -> Result<Stat> {
    let mut rng = ck.rng.clone();
    rng = Rng::new(rng.next_u64());
    match name {
        "dense_relu" | "dense_sigmoid" | "dense_identity" => {
            let act = match name {
                "dense_relu" => Activation::Relu,
                "dense_sigmoid" => Activation::Sigmoid,
                _ => Activation::Identity,
            };
            let mut m = (random_dense(4, 3, act, &mut rng), random(&[3, 4], 1.0, &mut rng));
            ck.check(
                &mut m,
                |m| vec![&mut m.0.weight, &mut m.0.bias, &mut m.1],
                |m, tape| {
                    let b = m.0.bind(tape);
                    let x = tape.param(&m.1);
                    Ok((b.forward(tape, x)?, vec![b.weight, b.bias, x]))
                },
            )
        }
        "lstm_step" => {
            let mut cell = LstmCell::xavier(5, 4, 3, &mut rng);
            randomize(&mut cell.gate_bias, 0.5, &mut rng);
            let mut m = (
                cell,
                random(&[2, 5], 1.0, &mut rng),
                random(&[2, 3], 0.5, &mut rng),
                random(&[2, 3], 1.0, &mut rng),
            );
            ck.check(
                &mut m,
                |m| vec![&mut m.0.input_projection, &mut m.0.gate_weights, &mut m.0.gate_bias, &mut m.1, &mut m.2, &mut m.3],
                |m, tape| {
                    let b = m.0.bind(tape);
                    let (x, h, c) = (tape.param(&m.1), tape.param(&m.2), tape.param(&m.3));
                    let (h1, c1) = b.step(tape, x, h, c)?;
                    let out = tape.concat_cols(&[h1, c1])?;
                    Ok((out, vec![b.input_projection, b.gate_weights, b.gate_bias, x, h, c]))
                },
            )
        }
        "sigmoid" | "tanh" | "softmax" => {
            let mut x = random(&[3, 4], 2.0, &mut rng);
            let op = name.to_string();
            ck.check(
                &mut x,
                |x| vec![x],
                move |x, tape| {
                    let id = tape.param(x);
                    let out = match op.as_str() {
                        "sigmoid" => tape.sigmoid(id)?,
                        "tanh" => tape.tanh(id)?,
                        _ => tape.softmax(id)?,
                    };
                    Ok((out, vec![id]))
                },
            )
        }
        "tensor_fusion" => {
            let mut total = Stat::default();
            for variant in FusionVariant::ALL {
                let mut m = (
                    random(&[2, 3], 1.0, &mut rng),
                    random(&[2, 2], 1.0, &mut rng),
                    random(&[2, 2], 1.0, &mut rng),
                );
                let s = ck.check(
                    &mut m,
                    |m| vec![&mut m.0, &mut m.1, &mut m.2],
                    move |m, tape| {
                        let (l, v, a) = (tape.param(&m.0), tape.param(&m.1), tape.param(&m.2));
                        let out = fuse_on_tape(tape, variant, Some(l), Some(v), Some(a))?;
                        Ok((out, vec![l, v, a]))
                    },
                )?;
                total.merge(s);
            }
            Ok(total)
        }
        "l2_penalty" => {
            let mut m = (random(&[3, 4], 1.0, &mut rng), random(&[2, 2], 1.0, &mut rng));
            ck.check(
                &mut m,
                |m| vec![&mut m.0, &mut m.1],
                |m, tape| {
                    let (a, b) = (tape.param(&m.0), tape.param(&m.1));
                    let zero = tape.constant(Tensor::scalar(0.0));
                    Ok((l2_on_tape(tape, zero, &[a, b], 0.01)?, vec![a, b]))
                },
            )
        }
        "dropout" => {
            let mask_seed = rng.next_u64();
            let mut x = random(&[4, 6], 1.0, &mut rng);
            ck.check(
                &mut x,
                |x| vec![x],
                move |x, tape| {
                    let id = tape.param(x);
                    let mut d = Dropout::new(0.15, Rng::new(mask_seed))?;
                    Ok((d.apply(tape, id)?, vec![id]))
                },
            )
        }
        "language_subnetwork" => {
            let mut net = LanguageSubnetwork::xavier(6, 4, 3, 5, 4, &mut rng);
            randomize(&mut net.lstm.gate_bias, 0.5, &mut rng);
            randomize(&mut net.fc.bias, 0.5, &mut rng);
            // Lengths straddle t_max so padding and truncation are both exercised.
            let seqs: Vec<Vec<Vec<f64>>> = [1usize, 4, 6]
                .iter()
                .map(|&n| (0..n).map(|_| random(&[6], 1.0, &mut rng).into_data()).collect())
                .collect();
            ck.check(
                &mut net,
                |n| {
                    vec![
                        &mut n.lstm.input_projection,
                        &mut n.lstm.gate_weights,
                        &mut n.lstm.gate_bias,
                        &mut n.fc.weight,
                        &mut n.fc.bias,
                    ]
                },
                move |n, tape| {
                    let refs: Vec<&[Vec<f64>]> = seqs.iter().map(Vec::as_slice).collect();
                    let words = n.word_batch(&refs)?;
                    let b = n.bind(tape);
                    let out = b.forward(tape, &words)?;
                    let ids = vec![b.lstm.input_projection, b.lstm.gate_weights, b.lstm.gate_bias, b.fc.weight, b.fc.bias];
                    Ok((out, ids))
                },
            )
        }
        "modality_subnetwork" => {
            let mut net = ModalitySubnetwork::xavier(5, 4, &mut rng);
            for l in &mut net.layers {
                randomize(&mut l.bias, 0.5, &mut rng);
            }
            let mut m = (net, random(&[3, 5], 1.0, &mut rng));
            ck.check(
                &mut m,
                |m| {
                    let (net, x) = (&mut m.0, &mut m.1);
                    let mut v: Vec<&mut Tensor> = Vec::new();
                    for l in &mut net.layers {
                        v.push(&mut l.weight);
                        v.push(&mut l.bias);
                    }
                    v.push(x);
                    v
                },
                |m, tape| {
                    let b = m.0.bind(tape);
                    let x = tape.param(&m.1);
                    let out = b.forward(tape, x, None)?;
                    let mut ids: Vec<NodeId> = b.layers.iter().flat_map(|l| [l.weight, l.bias]).collect();
                    ids.push(x);
                    Ok((out, ids))
                },
            )
        }
        "head_binary_bce" | "head_five_class_ce" | "head_regression_mse" => {
            let task = match name {
                "head_binary_bce" => Task::Binary,
                "head_five_class_ce" => Task::FiveClass,
                _ => Task::Regression,
            };
            let mut net = InferenceNetwork::xavier(6, 5, task, &mut rng);
            for l in net.trunk.iter_mut().chain(std::iter::once(&mut net.head.layer)) {
                randomize(&mut l.bias, 0.5, &mut rng);
            }
            let y = labels(4, &mut rng);
            let mut m = (net, random(&[4, 6], 1.0, &mut rng));
            ck.check(
                &mut m,
                |m| {
                    let (net, x) = (&mut m.0, &mut m.1);
                    let mut v: Vec<&mut Tensor> = Vec::new();
                    for l in net.trunk.iter_mut().chain(std::iter::once(&mut net.head.layer)) {
                        v.push(&mut l.weight);
                        v.push(&mut l.bias);
                    }
                    v.push(x);
                    v
                },
                move |m, tape| {
                    let b = m.0.bind(tape);
                    let x = tape.param(&m.1);
                    let out = b.forward(tape, x, None)?;
                    let loss = b.loss(tape, out, &y)?;
                    let mut ids: Vec<NodeId> = b
                        .trunk
                        .iter()
                        .chain(std::iter::once(&b.head))
                        .flat_map(|l| [l.weight, l.bias])
                        .collect();
                    ids.push(x);
                    Ok((loss, ids))
                },
            )
        }
        "tfn_end_to_end" => end_to_end(index, ck, &mut rng),
        other => Err(TfnError::Config(format!("unknown gradcheck component `{other}`"))),
    }
}

/// The training objective (task loss with dropout plus L2) of a small model;
/// variant and task rotate with the seed index so every pairing is covered.
fn end_to_end(index: usize, ck: &mut Checker, rng: &mut Rng) -> Result<Stat> {
    let variant = FusionVariant::ALL[index % FusionVariant::ALL.len()];
    let task = Task::ALL[index % Task::ALL.len()];
    let spec = SynthSpec {
        n_utterances: 5,
        n_speakers: 5,
        videos_per_speaker: 1,
        visual_dim: 4,
        acoustic_dim: 3,
        word_dim: 7,
        words_len: [2, 7],
        visual_len: [2, 5],
        acoustic_len: [2, 5],
        signal_levels: 5,
        filler_tokens: 3,
        seed: rng.next_u64(),
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec)?;
    let config = ModelConfig {
        arch: ArchConfig {
            projection_dim: 4,
            lstm_hidden: 3,
            language_dim: 3,
            t_max: 5,
            subnet_width: 3,
            trunk_width: 6,
        },
        word_dim: 7,
        visual_dim: 4,
        acoustic_dim: 3,
        variant,
        task,
    };
    let mut model = TfnModel::new(config, rng.next_u64())?;
    for t in model.params_mut() {
        if t.shape().len() == 1 {
            randomize(t, 0.3, rng);
        }
    }
    let items: Vec<PreparedUtterance> = model.prepare_all(&data.utterances[..3])?;
    let mask_seed = rng.next_u64();
    ck.check(
        &mut model,
        |m| m.params_mut(),
        move |m, tape| {
            let bound = m.bind(tape);
            let refs: Vec<&PreparedUtterance> = items.iter().collect();
            let mut dropout = Dropout::new(0.15, Rng::new(mask_seed))?;
            let out = m.forward_batch(tape, &bound, &refs, Some(&mut dropout))?;
            let y: Vec<f64> = items.iter().map(|p| p.label).collect();
            let loss = bound.inference.loss(tape, out, &y)?;
            let total = l2_on_tape(tape, loss, &bound.regularized, 0.01)?;
            Ok((total, bound.params.clone()))
        },
    )
}
