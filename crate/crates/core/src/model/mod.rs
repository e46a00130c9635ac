//! Two-stage encoder-classifier.
//!
//! The upstream stack maps one `1 × 400` window to four interactive-state
//! scores. It runs with shared weights over each of the eight windows of a
//! sequence; the resulting `8 × 4` score trajectory is fed to the downstream
//! stack with the score axis as channels and the sequence axis as length.
//! The downstream stack emits seven class scores: four states and three
//! transition events.

mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::io::{self, NetworkFile, FLAG_STAGE_SOFTMAX};
use crate::nn::{BatchNorm1d, Conv1d, Gradients, Layer, Linear, Mode, Network, Tape};
use crate::tensor::{softmax_row, Tensor};

pub use train::{
    evaluate_sequences, evaluate_windows, pretrain_upstream, train_end_to_end, EpochRecord, Split,
    TrainingConfig, TrainingReport,
};

/// Samples per window.
pub const WINDOW: usize = 400;
/// Windows per sequence.
pub const SEQ_LEN: usize = 8;
/// Interactive states scored by the upstream stack.
pub const STATES: usize = 4;
/// States plus transition events scored by the downstream stack.
pub const CLASSES: usize = 7;

/// Three conv-pool-relu-batchnorm blocks (5, 25, 50 channels) followed by
/// linear layers 2500→200→10→4.
pub fn build_upstream<R: Rng + ?Sized>(rng: &mut R) -> Network {
    let mut layers = Vec::with_capacity(15);
    let mut c_in = 1;
    for c_out in [5, 25, 50] {
        layers.push(Layer::Conv1d(Conv1d::new(c_in, c_out, rng)));
        layers.push(Layer::MaxPool1d);
        layers.push(Layer::Relu);
        layers.push(Layer::BatchNorm1d(BatchNorm1d::new(c_out)));
        c_in = c_out;
    }
    let flat = 50 * (WINDOW / 8);
    for (d_in, d_out) in [(flat, 200), (200, 10), (10, STATES)] {
        layers.push(Layer::Linear(Linear::new(d_in, d_out, rng)));
    }
    Network::new(layers)
}

/// Two length-preserving conv/batchnorm pairs (8, 16 channels) and linear
/// layers 128→64→7; no pooling and no activations.
pub fn build_downstream<R: Rng + ?Sized>(rng: &mut R) -> Network {
    Network::new(vec![
        Layer::Conv1d(Conv1d::new(STATES, 8, rng)),
        Layer::BatchNorm1d(BatchNorm1d::new(8)),
        Layer::Conv1d(Conv1d::new(8, 16, rng)),
        Layer::BatchNorm1d(BatchNorm1d::new(16)),
        Layer::Linear(Linear::new(16 * SEQ_LEN, 64, rng)),
        Layer::Linear(Linear::new(64, CLASSES, rng)),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderClassifier {
    pub upstream: Network,
    pub downstream: Network,
    /// Softmax the upstream logits before they enter the downstream stack.
    pub normalize_scores: bool,
}

/// Tape for one training forward pass through both stages.
pub struct ForwardTape {
    upstream: Option<Tape>,
    downstream: Tape,
    /// Upstream outputs after optional normalization, `(B·n) × p`.
    scores: Vec<f64>,
    batch: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
struct ModelMeta {
    kind: ModelKind,
    normalize_scores: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum ModelKind {
    EncoderClassifier,
}

impl EncoderClassifier {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let upstream = build_upstream(rng);
        let downstream = build_downstream(rng);
        Self {
            upstream,
            downstream,
            normalize_scores: true,
        }
    }

    pub fn with_upstream<R: Rng + ?Sized>(upstream: Network, rng: &mut R) -> Self {
        Self {
            upstream,
            downstream: build_downstream(rng),
            normalize_scores: true,
        }
    }

    /// Converts upstream outputs `(B·n) × p` into the downstream input
    /// `B × p × n`, normalizing rows first when enabled.
    fn trajectory(&self, up: &Tensor, batch: usize) -> Result<(Tensor, Vec<f64>)> {
        let expect = batch * SEQ_LEN * STATES;
        if up.len() != expect {
            return Err(Error::shape(
                "encoder output",
                "score count",
                expect,
                up.len(),
            ));
        }
        let mut scores = up.data().to_vec();
        if self.normalize_scores {
            for (row, out) in up
                .data()
                .chunks_exact(STATES)
                .zip(scores.chunks_exact_mut(STATES))
            {
                softmax_row(row, out);
            }
        }
        let mut traj = vec![0.0; expect];
        for b in 0..batch {
            for i in 0..SEQ_LEN {
                for c in 0..STATES {
                    traj[(b * STATES + c) * SEQ_LEN + i] = scores[(b * SEQ_LEN + i) * STATES + c];
                }
            }
        }
        Ok((Tensor::new(&[batch, STATES, SEQ_LEN], traj)?, scores))
    }

    fn check_batch(input: &Tensor) -> Result<usize> {
        match *input.shape() {
            [bn, 1, WINDOW] if bn % SEQ_LEN == 0 && bn > 0 => Ok(bn / SEQ_LEN),
            [bn, 1, WINDOW] => Err(Error::shape(
                "encoder-classifier",
                "window count",
                SEQ_LEN,
                bn % SEQ_LEN,
            )),
            [_, k, WINDOW] => Err(Error::shape("encoder-classifier", "channel", 1, k)),
            [_, _, w] => Err(Error::shape(
                "encoder-classifier",
                "window length",
                WINDOW,
                w,
            )),
            _ => Err(Error::shape("encoder-classifier", "rank", 3, input.rank())),
        }
    }

    /// Read-only inference on a batch of sequences laid out as
    /// `(B·n) × 1 × w`. Returns `B × q` class scores.
    pub fn infer_batch(&self, input: &Tensor) -> Result<Tensor> {
        let batch = Self::check_batch(input)?;
        let up = self.upstream.infer(input)?;
        let (traj, _) = self.trajectory(&up, batch)?;
        self.downstream.infer(&traj)
    }

    /// Class scores for one `n × k × w` sequence (infer mode).
    pub fn classify_sequence(&self, sequence: &Tensor) -> Result<Tensor> {
        let out = self.infer_batch(sequence)?;
        Ok(Tensor::from_vec(out.into_data()))
    }

    /// Score trajectory (`n × p`, after optional normalization) for one
    /// sequence. Exposed for inspection.
    pub fn score_trajectory(&self, sequence: &Tensor) -> Result<Vec<[f64; STATES]>> {
        Self::check_batch(sequence)?;
        let up = self.upstream.infer(sequence)?;
        let (_, scores) = self.trajectory(&up, 1)?;
        Ok(scores
            .chunks_exact(STATES)
            .map(|c| c.try_into().expect("STATES wide"))
            .collect())
    }

    /// Training-capable forward pass. With `train_upstream == false` the
    /// upstream runs in infer mode and no gradient is propagated into it.
    pub fn forward(
        &mut self,
        input: &Tensor,
        mode: Mode,
        train_upstream: bool,
    ) -> Result<(Tensor, ForwardTape)> {
        let batch = Self::check_batch(input)?;
        let (up, up_tape) = if train_upstream {
            let (y, t) = self.upstream.forward(input, mode)?;
            (y, Some(t))
        } else {
            (self.upstream.infer(input)?, None)
        };
        let (traj, scores) = self.trajectory(&up, batch)?;
        let (out, down_tape) = self.downstream.forward(&traj, mode)?;
        Ok((
            out,
            ForwardTape {
                upstream: up_tape,
                downstream: down_tape,
                scores,
                batch,
            },
        ))
    }

    /// Gradients for both stages; the upstream entry is `None` when the
    /// forward pass ran with a frozen upstream.
    pub fn backward(
        &self,
        tape: &ForwardTape,
        grad_out: &Tensor,
    ) -> Result<(Option<Gradients>, Gradients)> {
        let (g_traj, g_down) = self.downstream.backward(&tape.downstream, grad_out)?;
        let Some(up_tape) = &tape.upstream else {
            return Ok((None, g_down));
        };
        let batch = tape.batch;
        let gt = g_traj.data();
        let mut g_scores = vec![0.0; batch * SEQ_LEN * STATES];
        for b in 0..batch {
            for i in 0..SEQ_LEN {
                for c in 0..STATES {
                    g_scores[(b * SEQ_LEN + i) * STATES + c] = gt[(b * STATES + c) * SEQ_LEN + i];
                }
            }
        }
        if self.normalize_scores {
            for (g, p) in g_scores
                .chunks_exact_mut(STATES)
                .zip(tape.scores.chunks_exact(STATES))
            {
                let dotp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                for (gi, pi) in g.iter_mut().zip(p) {
                    *gi = pi * (*gi - dotp);
                }
            }
        }
        let g_up_out = Tensor::new(&[batch * SEQ_LEN, STATES], g_scores)?;
        let (_, g_up) = self.upstream.backward(up_tape, &g_up_out)?;
        Ok((Some(g_up), g_down))
    }

    pub fn to_bytes(&self, metadata: &str) -> Result<Vec<u8>> {
        let meta = serde_json::json!({
            "model": ModelMeta { kind: ModelKind::EncoderClassifier, normalize_scores: self.normalize_scores },
            "run": serde_json::from_str::<serde_json::Value>(if metadata.is_empty() { "null" } else { metadata })?,
        });
        io::encode(&NetworkFile {
            stages: vec![self.upstream.clone(), self.downstream.clone()],
            flags: if self.normalize_scores {
                FLAG_STAGE_SOFTMAX
            } else {
                0
            },
            metadata: meta.to_string(),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        let file = io::decode(bytes)?;
        let [upstream, downstream]: [Network; 2] = file
            .stages
            .try_into()
            .map_err(|_| Error::Format("encoder-classifier file must hold two stages".into()))?;
        let meta: serde_json::Value = serde_json::from_str(&file.metadata)?;
        Ok((
            Self {
                upstream,
                downstream,
                normalize_scores: file.flags & FLAG_STAGE_SOFTMAX != 0,
            },
            meta.get("run").cloned().unwrap_or(serde_json::Value::Null),
        ))
    }

    pub fn save(&self, path: &Path, metadata: &str) -> Result<()> {
        std::fs::write(path, self.to_bytes(metadata)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?.0)
    }

    /// Hex SHA-256 of the serialized parameters (no metadata).
    pub fn parameter_hash(&self) -> String {
        let bytes = self.to_bytes("").expect("two stages always encode");
        hash_bytes(&bytes)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a single network's serialized parameters.
pub fn network_hash(net: &Network) -> String {
    let bytes = io::encode(&NetworkFile {
        stages: vec![net.clone()],
        flags: 0,
        metadata: String::new(),
    })
    .expect("single stage always encodes");
    hash_bytes(&bytes)
}

/// Packs sequences of `n·w` samples into the `(B·n) × 1 × w` batch layout.
pub fn pack_sequences<'a>(sequences: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    for s in sequences {
        if s.len() != SEQ_LEN * WINDOW {
            return Err(Error::shape(
                "pack_sequences",
                "sequence length",
                SEQ_LEN * WINDOW,
                s.len(),
            ));
        }
        data.extend_from_slice(s);
        count += 1;
    }
    Tensor::new(&[count * SEQ_LEN, 1, WINDOW], data)
}

/// Packs single windows into the `B × 1 × w` layout.
pub fn pack_windows<'a>(windows: impl IntoIterator<Item = &'a [f64]>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    for s in windows {
        if s.len() != WINDOW {
            return Err(Error::shape(
                "pack_windows",
                "window length",
                WINDOW,
                s.len(),
            ));
        }
        data.extend_from_slice(s);
        count += 1;
    }
    Tensor::new(&[count, 1, WINDOW], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamConvention;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> EncoderClassifier {
        EncoderClassifier::new(&mut ChaCha8Rng::seed_from_u64(5))
    }

    fn random_sequence(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..SEQ_LEN * WINDOW)
            .map(|_| rng.random_range(0.0..1.2))
            .collect()
    }

    #[test]
    fn table_parameter_counts() {
        let m = model();
        assert_eq!(m.upstream.count_parameters(ParamConvention::Paper), 506_634);
        assert_eq!(m.downstream.count_parameters(ParamConvention::Paper), 9_263);
        assert_eq!(m.upstream.len(), 15);
        assert_eq!(m.downstream.len(), 6);
    }

    #[test]
    fn upstream_shapes_along_the_chain() {
        let m = model();
        let mut x = Tensor::zeros(&[1, 1, WINDOW]);
        let mut pooled = Vec::new();
        for layer in &m.upstream.layers {
            x = layer.infer(&x).unwrap();
            if matches!(layer, Layer::MaxPool1d) {
                pooled.push(x.shape()[2]);
            }
        }
        assert_eq!(pooled, vec![200, 100, 50]);
        assert_eq!(x.shape(), &[1, STATES]);
    }

    #[test]
    fn downstream_maps_trajectory_to_seven() {
        let m = model();
        let y = m
            .downstream
            .infer(&Tensor::zeros(&[1, STATES, SEQ_LEN]))
            .unwrap();
        assert_eq!(y.shape(), &[1, CLASSES]);
        let Layer::Linear(first) = &m.downstream.layers[4] else {
            panic!()
        };
        assert_eq!(first.d_in, 128);
    }

    #[test]
    fn classify_sequence_shape_and_softmax() {
        let m = model();
        let x = Tensor::new(&[SEQ_LEN, 1, WINDOW], random_sequence(1)).unwrap();
        let y = m.classify_sequence(&x).unwrap();
        assert_eq!(y.len(), CLASSES);
        let mut p = [0.0; CLASSES];
        softmax_row(y.data(), &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(m
            .classify_sequence(&Tensor::zeros(&[7, 1, WINDOW]))
            .is_err());
        assert!(m
            .classify_sequence(&Tensor::zeros(&[SEQ_LEN, 1, 399]))
            .is_err());
    }

    #[test]
    fn repeated_window_gives_constant_trajectory() {
        let m = model();
        let w: Vec<f64> = random_sequence(2)[..WINDOW].to_vec();
        let seq: Vec<f64> = (0..SEQ_LEN).flat_map(|_| w.clone()).collect();
        let traj = m
            .score_trajectory(&Tensor::new(&[SEQ_LEN, 1, WINDOW], seq).unwrap())
            .unwrap();
        assert!(traj.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn weight_sharing_matches_standalone_upstream() {
        let mut m = model();
        m.normalize_scores = false;
        let seq = random_sequence(3);
        let traj = m
            .score_trajectory(&Tensor::new(&[SEQ_LEN, 1, WINDOW], seq.clone()).unwrap())
            .unwrap();
        for (i, row) in traj.iter().enumerate() {
            let w =
                Tensor::new(&[1, 1, WINDOW], seq[i * WINDOW..(i + 1) * WINDOW].to_vec()).unwrap();
            assert_eq!(m.upstream.infer(&w).unwrap().data(), row);
        }
    }

    #[test]
    fn window_order_matters() {
        // Counterexample search: reversing window order changes the output
        // for at least one random input.
        let m = model();
        let found = (10..20).any(|seed| {
            let seq = random_sequence(seed);
            let rev: Vec<f64> = seq.chunks(WINDOW).rev().flatten().copied().collect();
            let a = m
                .classify_sequence(&Tensor::new(&[SEQ_LEN, 1, WINDOW], seq).unwrap())
                .unwrap();
            let b = m
                .classify_sequence(&Tensor::new(&[SEQ_LEN, 1, WINDOW], rev).unwrap())
                .unwrap();
            a != b
        });
        assert!(found);
    }

    #[test]
    fn save_load_is_bit_identical() {
        let m = model();
        let bytes = m.to_bytes("{\"seed\":5}").unwrap();
        let (back, meta) = EncoderClassifier::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta["seed"], 5);
        let x = Tensor::new(&[SEQ_LEN, 1, WINDOW], random_sequence(4)).unwrap();
        let a = m.classify_sequence(&x).unwrap();
        let b = back.classify_sequence(&x).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
