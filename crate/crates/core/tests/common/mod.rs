//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use millwatch::coordinator::{Coordinator, CoordinatorConfig, FsmDefinition, FsmFile, Outcome};
use millwatch::evalsim::ConfusionMatrix;
use millwatch::nn::{backprop_network, BatchNorm1d, Conv1d, Layer, Linear, Network};
use millwatch::stream::{Partitioner, WindowingConfig};
use millwatch::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// gradient checking

/// A small network using every layer kind, a batch, and labels.
pub fn mini_network(seed: u64) -> (Network, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_in = rng.random_range(1..=2);
    let c1 = rng.random_range(2..=3);
    let c2 = rng.random_range(1..=3);
    let len = 2 * rng.random_range(2..=4);
    let q = rng.random_range(2..=4);
    let batch = 3;
    let mut layers = vec![Layer::Conv1d(Conv1d::new(c_in, c1, &mut rng))];
    if rng.random_bool(0.5) {
        layers.push(Layer::MaxPool1d);
        layers.push(Layer::Relu);
    } else {
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool1d);
    }
    let mut bn = BatchNorm1d::new(c1);
    for g in bn.gamma.iter_mut() {
        *g = rng.random_range(0.5..1.5);
    }
    for b in bn.beta.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    layers.push(Layer::BatchNorm1d(bn));
    layers.push(Layer::Conv1d(Conv1d::new(c1, c2, &mut rng)));
    let mut lin = Linear::new(c2 * len / 2, q, &mut rng);
    for b in lin.bias.iter_mut() {
        *b = rng.random_range(-0.1..0.1);
    }
    layers.push(Layer::Linear(lin));
    let x: Vec<f64> = (0..batch * c_in * len)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..q)).collect();
    (
        Network::new(layers),
        Tensor::new(&[batch, c_in, len], x).unwrap(),
        labels,
    )
}

fn loss_at(net: &Network, x: &Tensor, labels: &[usize]) -> f64 {
    backprop_network(&mut net.clone(), x, labels).unwrap().0
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps gradients that are
/// zero up to rounding from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error between backprop and central differences over every
/// parameter and every input value.
pub fn gradient_check(seed: u64, h: f64) -> f64 {
    let (net, x, labels) = mini_network(seed);
    let mut work = net.clone();
    let (logits, tape) = work.forward(&x, millwatch::nn::Mode::Train).unwrap();
    let (_, g_logits) = millwatch::nn::softmax_cross_entropy(&logits, &labels).unwrap();
    let (g_x, grads) = work.backward(&tape, &g_logits).unwrap();
    let analytic: Vec<Vec<f64>> = grads.flat().into_iter().map(<[f64]>::to_vec).collect();

    let mut worst: f64 = 0.0;
    let sizes = net.param_sizes();
    for (p, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let mut plus = net.clone();
            plus.params_mut()[p][i] += h;
            let mut minus = net.clone();
            minus.params_mut()[p][i] -= h;
            let numeric = (loss_at(&plus, &x, &labels) - loss_at(&minus, &x, &labels)) / (2.0 * h);
            worst = worst.max(relative_error(analytic[p][i], numeric));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (loss_at(&net, &xp, &labels) - loss_at(&net, &xm, &labels)) / (2.0 * h);
        worst = worst.max(relative_error(g_x.data()[i], numeric));
    }
    worst
}

// ---------------------------------------------------------------------------
// naive kernels

/// Same-padded width-3 convolution, accumulated in input-channel then tap
/// order.
pub fn naive_conv1d(
    x: &[f64],
    b: usize,
    c_in: usize,
    l: usize,
    kernel: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; b * c_out * l];
    for bi in 0..b {
        for o in 0..c_out {
            for t in 0..l {
                let mut acc = 0.0;
                for j in 0..c_in {
                    for k in 0..3 {
                        let s = t as isize + k as isize - 1;
                        if s >= 0 && (s as usize) < l {
                            acc += kernel[(o * c_in + j) * 3 + k]
                                * x[(bi * c_in + j) * l + s as usize];
                        }
                    }
                }
                y[(bi * c_out + o) * l + t] = acc;
            }
        }
    }
    y
}

/// `y = x·W + b` with `W` stored `d_in × d_out`, summed over `i` ascending
/// and the bias added last.
pub fn naive_linear(
    x: &[f64],
    b: usize,
    w: &[f64],
    bias: &[f64],
    d_in: usize,
    d_out: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; b * d_out];
    for r in 0..b {
        for o in 0..d_out {
            let mut acc = 0.0;
            for i in 0..d_in {
                acc += x[r * d_in + i] * w[i * d_out + o];
            }
            y[r * d_out + o] = acc + bias[o];
        }
    }
    y
}

// ---------------------------------------------------------------------------
// metrics recount

/// Per-class `(precision, recall, f1)` recomputed by scanning the sample
/// pairs, with 0 for undefined ratios.
pub fn recount_prf(q: usize, truth: &[usize], pred: &[usize]) -> Vec<(f64, f64, f64)> {
    (0..q)
        .map(|c| {
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fn_ = 0u64;
            for (&t, &p) in truth.iter().zip(pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let p = if tp + fp == 0 {
                0.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let r = if tp + fn_ == 0 {
                0.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            (p, r, f)
        })
        .collect()
}

pub fn class_names(q: usize) -> Vec<String> {
    (0..q).map(|i| format!("c{i}")).collect()
}

pub fn confusion(q: usize, truth: &[usize], pred: &[usize]) -> ConfusionMatrix {
    ConfusionMatrix::from_pairs(class_names(q), truth, pred).unwrap()
}

// ---------------------------------------------------------------------------
// FSM safety

/// Checks a committed transition against the raw definition file by name.
pub fn reference_allows(file: &FsmFile, from: &str, event: &str, to: &str) -> bool {
    let defined = file
        .transitions
        .iter()
        .any(|t| t.from == from && t.event == event && t.to == to);
    let active = match &file.active_events {
        Some(map) => map
            .get(from)
            .is_some_and(|evs| evs.iter().any(|e| e == event)),
        None => file
            .transitions
            .iter()
            .any(|t| t.from == from && t.event == event),
    };
    defined && active
}

/// Feeds `streams` random decision streams to fresh coordinators and counts
/// committed transitions the reference checker disallows, plus state
/// changes on hold or rejected outcomes.
pub fn fuzz_fsm(fsm: &FsmDefinition, streams: usize, seed: u64) -> (usize, usize) {
    let file = fsm.to_file().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut commits = 0;
    for _ in 0..streams {
        let mut coord = Coordinator::new(fsm.clone(), CoordinatorConfig::default());
        let len = rng.random_range(1..40);
        for step in 0..len {
            let before = coord.state();
            let decision = rng.random_range(0..fsm.classes());
            let outcome = coord.step(decision, step as f64 * 0.1, None).unwrap();
            match outcome {
                Outcome::Transition(t) => {
                    commits += 1;
                    let ok = t.from == before
                        && coord.state() == t.to
                        && reference_allows(
                            &file,
                            &fsm.states()[t.from],
                            &fsm.events()[t.event],
                            &fsm.states()[t.to],
                        );
                    if !ok {
                        violations += 1;
                    }
                }
                Outcome::Hold | Outcome::Rejected(_) => {
                    if coord.state() != before {
                        violations += 1;
                    }
                }
            }
        }
    }
    (violations, commits)
}

// ---------------------------------------------------------------------------
// streaming

/// Emissions `(end_index, data)` of a partitioner fed `signal` in chunks cut
/// at `cuts` (sorted; out-of-range cuts are clamped).
pub fn chunked(signal: &[f64], cfg: &WindowingConfig, cuts: &[usize]) -> Vec<(u64, Vec<f64>)> {
    let mut p = Partitioner::new(cfg.clone()).unwrap();
    let mut out = Vec::new();
    let mut start = 0;
    for &c in cuts.iter().chain(std::iter::once(&signal.len())) {
        let c = c.clamp(start, signal.len());
        out.extend(
            p.push_samples(&signal[start..c])
                .into_iter()
                .map(|s| (s.end_index, s.data.into_data())),
        );
        start = c;
    }
    out
}

// ---------------------------------------------------------------------------
// architecture table

/// `(description, parameters)` rows of the reference architecture table.
pub const UPSTREAM_ROWS: [(&str, usize); 15] = [
    ("Conv 3x3,5", 15),
    ("MaxPool,2", 0),
    ("ReLU", 0),
    ("BatchNorm,5", 15),
    ("Conv 3x3,25", 375),
    ("MaxPool,2", 0),
    ("ReLU", 0),
    ("BatchNorm,25", 75),
    ("Conv 3x3,50", 3750),
    ("MaxPool,2", 0),
    ("ReLU", 0),
    ("BatchNorm,50", 150),
    ("Linear 2500x200", 500_200),
    ("Linear 200x10", 2010),
    ("Linear 10x4", 44),
];

pub const DOWNSTREAM_ROWS: [(&str, usize); 6] = [
    ("Conv 3x3,8", 96),
    ("BatchNorm,8", 24),
    ("Conv 3x3,16", 384),
    ("BatchNorm,16", 48),
    ("Linear 128x64", 8256),
    ("Linear 64x7", 455),
];
