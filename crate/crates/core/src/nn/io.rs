//! Flat binary container for layer stacks (`SWNN` format, version 1).
//!
//! All integers are little-endian `u32` unless noted; values are
//! little-endian IEEE-754 `f64`.
//!
//! ```text
//! "SWNN"            4 bytes magic
//! version           u32 = 1
//! layer_count       u32, total layers across both stages
//! first_stage       u32, number of leading layers in stage one
//! flags             u32, bit 0 = softmax between stages
//! meta_len          u32, followed by meta_len bytes of UTF-8 JSON metadata
//! per layer:
//!   kind            u8  (1 Conv1D, 2 MaxPool1D, 3 ReLU, 4 BatchNorm1D, 5 Linear)
//!   extent_count    u8, followed by that many u32 extents
//!   value arrays    f64 values, learnables first then running statistics
//! ```
//!
//! Extents and value arrays per kind:
//!
//! | kind        | extents                 | values                                   |
//! |-------------|-------------------------|------------------------------------------|
//! | Conv1D      | in, out, kernel width   | kernel (out·in·width)                    |
//! | MaxPool1D   | width                   | none                                     |
//! | ReLU        | none                    | none                                     |
//! | BatchNorm1D | channels                | gamma, beta, running mean, running var   |
//! | Linear      | d_in, d_out             | weight (d_in·d_out, row-major), bias     |

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm1d, Conv1d, Layer, Linear, KERNEL_WIDTH, POOL_WIDTH};
use crate::nn::network::Network;

pub const MAGIC: &[u8; 4] = b"SWNN";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_STAGE_SOFTMAX: u32 = 1;

/// Upper bound on any single extent; rejects corrupt headers before they
/// turn into huge allocations.
const MAX_EXTENT: u32 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFile {
    pub stages: Vec<Network>,
    pub flags: u32,
    pub metadata: String,
}

const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_BN: u8 = 4;
const TAG_LINEAR: u8 = 5;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_layer(out: &mut Vec<u8>, layer: &Layer) {
    let (tag, extents): (u8, Vec<usize>) = match layer {
        Layer::Conv1d(c) => (TAG_CONV, vec![c.in_channels, c.out_channels, KERNEL_WIDTH]),
        Layer::MaxPool1d => (TAG_POOL, vec![POOL_WIDTH]),
        Layer::Relu => (TAG_RELU, vec![]),
        Layer::BatchNorm1d(bn) => (TAG_BN, vec![bn.channels]),
        Layer::Linear(l) => (TAG_LINEAR, vec![l.d_in, l.d_out]),
    };
    out.push(tag);
    out.push(extents.len() as u8);
    for e in extents {
        put_u32(out, e as u32);
    }
    match layer {
        Layer::Conv1d(c) => put_f64s(out, &c.kernel),
        Layer::MaxPool1d | Layer::Relu => {}
        Layer::BatchNorm1d(bn) => {
            put_f64s(out, &bn.gamma);
            put_f64s(out, &bn.beta);
            put_f64s(out, &bn.running_mean);
            put_f64s(out, &bn.running_var);
        }
        Layer::Linear(l) => {
            put_f64s(out, &l.weight);
            put_f64s(out, &l.bias);
        }
    }
}

pub fn encode(file: &NetworkFile) -> Result<Vec<u8>> {
    if file.stages.is_empty() || file.stages.len() > 2 {
        return Err(Error::Format(format!(
            "expected 1 or 2 stages, got {}",
            file.stages.len()
        )));
    }
    let total: usize = file.stages.iter().map(Network::len).sum();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, total as u32);
    put_u32(&mut out, file.stages[0].len() as u32);
    put_u32(&mut out, file.flags);
    put_u32(&mut out, file.metadata.len() as u32);
    out.extend_from_slice(file.metadata.as_bytes());
    for layer in file.stages.iter().flat_map(|s| &s.layers) {
        put_layer(&mut out, layer);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn extents(&mut self, expect: usize, kind: &str) -> Result<Vec<usize>> {
        let n = self.u8()? as usize;
        if n != expect {
            return Err(Error::Format(format!(
                "{kind}: expected {expect} extents, found {n}"
            )));
        }
        (0..n)
            .map(|_| {
                let e = self.u32()?;
                if e == 0 || e > MAX_EXTENT {
                    return Err(Error::Format(format!("{kind}: extent {e} out of range")));
                }
                Ok(e as usize)
            })
            .collect()
    }

    fn layer(&mut self) -> Result<Layer> {
        let at = self.pos;
        match self.u8()? {
            TAG_CONV => {
                let e = self.extents(3, "Conv1D")?;
                if e[2] != KERNEL_WIDTH {
                    return Err(Error::Format(format!(
                        "Conv1D: kernel width {} unsupported",
                        e[2]
                    )));
                }
                Ok(Layer::Conv1d(Conv1d {
                    in_channels: e[0],
                    out_channels: e[1],
                    kernel: self.f64s(e[0] * e[1] * e[2])?,
                }))
            }
            TAG_POOL => {
                let e = self.extents(1, "MaxPool1D")?;
                if e[0] != POOL_WIDTH {
                    return Err(Error::Format(format!(
                        "MaxPool1D: width {} unsupported",
                        e[0]
                    )));
                }
                Ok(Layer::MaxPool1d)
            }
            TAG_RELU => {
                self.extents(0, "ReLU")?;
                Ok(Layer::Relu)
            }
            TAG_BN => {
                let c = self.extents(1, "BatchNorm1D")?[0];
                Ok(Layer::BatchNorm1d(BatchNorm1d {
                    channels: c,
                    gamma: self.f64s(c)?,
                    beta: self.f64s(c)?,
                    running_mean: self.f64s(c)?,
                    running_var: self.f64s(c)?,
                }))
            }
            TAG_LINEAR => {
                let e = self.extents(2, "Linear")?;
                Ok(Layer::Linear(Linear {
                    d_in: e[0],
                    d_out: e[1],
                    weight: self.f64s(e[0] * e[1])?,
                    bias: self.f64s(e[1])?,
                }))
            }
            tag => Err(Error::Format(format!(
                "unknown layer tag {tag} at byte {at}"
            ))),
        }
    }
}

pub fn decode(buf: &[u8]) -> Result<NetworkFile> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not an SWNN file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let total = r.u32()? as usize;
    let first = r.u32()? as usize;
    if first == 0 || first > total {
        return Err(Error::Format(format!(
            "stage split {first} invalid for {total} layers"
        )));
    }
    let flags = r.u32()?;
    let meta_len = r.u32()? as usize;
    let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let mut layers = (0..total).map(|_| r.layer()).collect::<Result<Vec<_>>>()?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let second = layers.split_off(first);
    let mut stages = vec![Network::new(layers)];
    if !second.is_empty() {
        stages.push(Network::new(second));
    }
    Ok(NetworkFile {
        stages,
        flags,
        metadata,
    })
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let bytes = encode(&NetworkFile {
        stages: vec![net.clone()],
        flags: 0,
        metadata: String::new(),
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut file = decode(&bytes)?;
    if file.stages.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected a single-stage file",
            path.display()
        )));
    }
    Ok(file.stages.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> NetworkFile {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bn = BatchNorm1d::new(2);
        bn.running_mean = vec![0.25, -1.0 / 3.0];
        NetworkFile {
            stages: vec![
                Network::new(vec![
                    Layer::Conv1d(Conv1d::new(1, 2, &mut rng)),
                    Layer::MaxPool1d,
                    Layer::Relu,
                    Layer::BatchNorm1d(bn),
                ]),
                Network::new(vec![Layer::Linear(Linear::new(4, 3, &mut rng))]),
            ],
            flags: FLAG_STAGE_SOFTMAX,
            metadata: "{\"seed\":11}".into(),
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        let file = sample();
        let bytes = encode(&file).unwrap();
        assert_eq!(&bytes[..4], b"SWNN");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
