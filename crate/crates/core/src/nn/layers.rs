//! Forward and backward passes for the fixed layer set.
//!
//! All layers take batch-first input: `B × C × L` for the sequence layers,
//! `B × D` (or any rank-3 input, flattened row-major) for [`Linear`].
//! Summation inside convolution and linear layers always runs over the
//! input-channel axis ascending, then the kernel tap ascending, so a naive
//! loop written in the same order reproduces the outputs bit for bit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel width of every convolution in the architecture.
pub const KERNEL_WIDTH: usize = 3;
/// Pool width and stride.
pub const POOL_WIDTH: usize = 2;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// How [`Layer::param_count`] tallies batch-norm channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamConvention {
    /// Three values per batch-norm channel, as printed in the reference
    /// architecture table.
    Paper,
    /// Only values touched by the optimizer (gamma and beta).
    Learnable,
}

/// Length-preserving 1-D convolution without bias.
/// Kernel stored as `out × in × KERNEL_WIDTH`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// `y = x·W + b` with `W` stored `d_in × d_out` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub d_in: usize,
    pub d_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d,
    Relu,
    BatchNorm1d(BatchNorm1d),
    Linear(Linear),
}

/// Whatever a layer needs from its forward pass to run backward.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    Relu {
        output: Tensor,
    },
    BatchNorm {
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        shape: Vec<usize>,
        batch_stats: bool,
    },
    None,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: vec![0.0; in_channels * out_channels * KERNEL_WIDTH],
        }
    }

    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_channels * KERNEL_WIDTH) as f64).sqrt();
        let mut conv = Self::zeros(in_channels, out_channels);
        conv.kernel
            .iter_mut()
            .for_each(|k| *k = rng.random_range(-bound..bound));
        conv
    }

    pub fn tap(&self, out_ch: usize, in_ch: usize) -> &[f64] {
        let at = (out_ch * self.in_channels + in_ch) * KERNEL_WIDTH;
        &self.kernel[at..at + KERNEL_WIDTH]
    }
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weight: vec![0.0; d_in * d_out],
            bias: vec![0.0; d_out],
        }
    }

    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut lin = Self::zeros(d_in, d_out);
        lin.weight
            .iter_mut()
            .chain(lin.bias.iter_mut())
            .for_each(|w| *w = rng.random_range(-bound..bound));
        lin
    }
}

// ---------------------------------------------------------------------------
// shape helpers

fn seq_dims(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, l] => Ok((b, c, l)),
        _ => Err(Error::shape(op, "rank", 3, x.rank())),
    }
}

fn rows(x: &Tensor) -> (usize, usize) {
    let b = x.dim0();
    (b, x.len() / b.max(1))
}

/// Dot product with four interleaved accumulators, combined in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// ---------------------------------------------------------------------------
// convolution

pub fn conv1d_forward(x: &Tensor, conv: &Conv1d) -> Result<Tensor> {
    let (b, c_in, l) = seq_dims(x, "conv1d")?;
    if c_in != conv.in_channels {
        return Err(Error::shape("conv1d", "channel", conv.in_channels, c_in));
    }
    if l == 0 {
        return Err(Error::shape("conv1d", "length", 1, 0));
    }
    let c_out = conv.out_channels;
    let mut y = vec![0.0; b * c_out * l];
    let xd = x.data();
    for bi in 0..b {
        let xb = &xd[bi * c_in * l..(bi + 1) * c_in * l];
        for c in 0..c_out {
            let out = &mut y[(bi * c_out + c) * l..(bi * c_out + c + 1) * l];
            for j in 0..c_in {
                let xr = &xb[j * l..(j + 1) * l];
                let k = conv.tap(c, j);
                conv_row_accumulate(xr, k, out);
            }
        }
    }
    Tensor::new(&[b, c_out, l], y)
}

/// `out[t] += k0·x[t-1] + k1·x[t] + k2·x[t+1]`, added one tap at a time in
/// ascending order with out-of-range taps skipped.
#[inline]
fn conv_row_accumulate(x: &[f64], k: &[f64], out: &mut [f64]) {
    let l = x.len();
    let (k0, k1, k2) = (k[0], k[1], k[2]);
    if l == 1 {
        out[0] += k1 * x[0];
        return;
    }
    let mut v = out[0];
    v += k1 * x[0];
    v += k2 * x[1];
    out[0] = v;
    for t in 1..l - 1 {
        let mut v = out[t];
        v += k0 * x[t - 1];
        v += k1 * x[t];
        v += k2 * x[t + 1];
        out[t] = v;
    }
    let mut v = out[l - 1];
    v += k0 * x[l - 2];
    v += k1 * x[l - 1];
    out[l - 1] = v;
}

fn conv1d_backward(
    x: &Tensor,
    conv: &Conv1d,
    grad_out: &Tensor,
    grad_kernel: &mut [f64],
) -> Result<Tensor> {
    let (b, c_in, l) = seq_dims(x, "conv1d backward")?;
    let c_out = conv.out_channels;
    if grad_out.shape() != [b, c_out, l] {
        return Err(Error::shape(
            "conv1d backward",
            "grad extent",
            b * c_out * l,
            grad_out.len(),
        ));
    }
    let mut gx = vec![0.0; x.len()];
    let xd = x.data();
    let gd = grad_out.data();
    for bi in 0..b {
        for c in 0..c_out {
            let go = &gd[(bi * c_out + c) * l..(bi * c_out + c + 1) * l];
            for j in 0..c_in {
                let xr = &xd[(bi * c_in + j) * l..(bi * c_in + j + 1) * l];
                let at = (c * c_in + j) * KERNEL_WIDTH;
                if l > 1 {
                    grad_kernel[at] += dot(&go[1..], &xr[..l - 1]);
                    grad_kernel[at + 2] += dot(&go[..l - 1], &xr[1..]);
                }
                grad_kernel[at + 1] += dot(go, xr);

                let (k0, k1, k2) = (conv.kernel[at], conv.kernel[at + 1], conv.kernel[at + 2]);
                let gxr = &mut gx[(bi * c_in + j) * l..(bi * c_in + j + 1) * l];
                if l > 1 {
                    axpy(k0, &go[1..], &mut gxr[..l - 1]);
                    axpy(k2, &go[..l - 1], &mut gxr[1..]);
                }
                axpy(k1, go, gxr);
            }
        }
    }
    Tensor::new(x.shape(), gx)
}

// ---------------------------------------------------------------------------
// pooling

fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (b, c, l) = seq_dims(x, "maxpool")?;
    if l % POOL_WIDTH != 0 {
        return Err(Error::InvalidArgument(format!(
            "maxpool: odd input length {l} on the length axis"
        )));
    }
    let half = l / POOL_WIDTH;
    let mut y = Vec::with_capacity(b * c * half);
    let mut idx = Vec::with_capacity(b * c * half);
    for row in x.data().chunks_exact(l) {
        for t in 0..half {
            let (a, z) = (row[2 * t], row[2 * t + 1]);
            if z > a {
                y.push(z);
                idx.push((2 * t + 1) as u32);
            } else {
                y.push(a);
                idx.push((2 * t) as u32);
            }
        }
    }
    Ok((Tensor::new(&[b, c, half], y)?, idx))
}

fn maxpool_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let l = input_shape[2];
    let half = l / POOL_WIDTH;
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool backward",
            "grad extent",
            argmax.len(),
            grad_out.len(),
        ));
    }
    let mut gx = vec![0.0; input_shape.iter().product()];
    for (r, (gr, ir)) in grad_out
        .data()
        .chunks_exact(half)
        .zip(argmax.chunks_exact(half))
        .enumerate()
    {
        let base = r * l;
        for (g, &i) in gr.iter().zip(ir) {
            gx[base + i as usize] += g;
        }
    }
    Tensor::new(input_shape, gx)
}

// ---------------------------------------------------------------------------
// relu

fn relu_forward(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.len() != grad_out.len() {
        return Err(Error::shape(
            "relu backward",
            "grad extent",
            output.len(),
            grad_out.len(),
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(output.shape(), data)
}

// ---------------------------------------------------------------------------
// batch norm

/// `(batch, channels, length)`; rank-2 input is treated as length 1.
fn bn_dims(x: &Tensor, bn: &BatchNorm1d) -> Result<(usize, usize, usize)> {
    let (b, c, l) = match *x.shape() {
        [b, c, l] => (b, c, l),
        [b, c] => (b, c, 1),
        _ => return Err(Error::shape("batchnorm", "rank", 3, x.rank())),
    };
    if c != bn.channels {
        return Err(Error::shape("batchnorm", "channel", bn.channels, c));
    }
    Ok((b, c, l))
}

fn batchnorm_infer(x: &Tensor, bn: &BatchNorm1d) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, c, l) = bn_dims(x, bn)?;
    let inv_std: Vec<f64> = bn
        .running_var
        .iter()
        .map(|v| 1.0 / (v + BN_EPS).sqrt())
        .collect();
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let xd = x.data();
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            for t in at..at + l {
                let h = (xd[t] - bn.running_mean[ch]) * inv_std[ch];
                xhat[t] = h;
                y[t] = bn.gamma[ch] * h + bn.beta[ch];
            }
        }
    }
    Ok((Tensor::new(x.shape(), y)?, xhat, inv_std))
}

fn batchnorm_train(x: &Tensor, bn: &mut BatchNorm1d) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, c, l) = bn_dims(x, bn)?;
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "batchnorm in train mode needs batch size >= 2, got {b}"
        )));
    }
    let n = (b * l) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            mean[ch] += xd[at..at + l].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            var[ch] += xd[at..at + l]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            for t in at..at + l {
                let h = (xd[t] - mean[ch]) * inv_std[ch];
                xhat[t] = h;
                y[t] = bn.gamma[ch] * h + bn.beta[ch];
            }
        }
    }
    let unbias = n / (n - 1.0);
    for ch in 0..c {
        bn.running_mean[ch] = (1.0 - BN_MOMENTUM) * bn.running_mean[ch] + BN_MOMENTUM * mean[ch];
        bn.running_var[ch] =
            (1.0 - BN_MOMENTUM) * bn.running_var[ch] + BN_MOMENTUM * var[ch] * unbias;
    }
    Ok((Tensor::new(x.shape(), y)?, xhat, inv_std))
}

fn batchnorm_backward(
    bn: &BatchNorm1d,
    xhat: &[f64],
    inv_std: &[f64],
    shape: &[usize],
    batch_stats: bool,
    grad_out: &Tensor,
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Result<Tensor> {
    let c = bn.channels;
    let b = shape[0];
    let l = if shape.len() == 3 { shape[2] } else { 1 };
    if grad_out.len() != xhat.len() {
        return Err(Error::shape(
            "batchnorm backward",
            "grad extent",
            xhat.len(),
            grad_out.len(),
        ));
    }
    let g = grad_out.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            for t in at..at + l {
                dgamma[ch] += g[t] * xhat[t];
                dbeta[ch] += g[t];
            }
        }
    }
    let n = (b * l) as f64;
    let mut gx = vec![0.0; g.len()];
    for bi in 0..b {
        for ch in 0..c {
            let at = (bi * c + ch) * l;
            let scale = bn.gamma[ch] * inv_std[ch];
            for t in at..at + l {
                gx[t] = if batch_stats {
                    scale / n * (n * g[t] - dbeta[ch] - xhat[t] * dgamma[ch])
                } else {
                    scale * g[t]
                };
            }
        }
    }
    for ch in 0..c {
        grad_gamma[ch] += dgamma[ch];
        grad_beta[ch] += dbeta[ch];
    }
    Tensor::new(shape, gx)
}

// ---------------------------------------------------------------------------
// linear

/// Rows processed per sweep over the weight matrix; keeps the weight row hot
/// while staying inside L1 for the output block.
const LINEAR_ROW_BLOCK: usize = 16;

pub fn linear_forward(x: &Tensor, lin: &Linear) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::shape("linear", "rank", 2, x.rank()));
    }
    let (b, d_in) = rows(x);
    if d_in != lin.d_in {
        return Err(Error::shape("linear", "feature", lin.d_in, d_in));
    }
    let d_out = lin.d_out;
    let xd = x.data();
    let mut y = vec![0.0; b * d_out];
    for start in (0..b).step_by(LINEAR_ROW_BLOCK) {
        let end = (start + LINEAR_ROW_BLOCK).min(b);
        for i in 0..d_in {
            let w_row = &lin.weight[i * d_out..(i + 1) * d_out];
            for r in start..end {
                let xi = xd[r * d_in + i];
                axpy(xi, w_row, &mut y[r * d_out..(r + 1) * d_out]);
            }
        }
    }
    for row in y.chunks_exact_mut(d_out) {
        for (v, bias) in row.iter_mut().zip(&lin.bias) {
            *v += bias;
        }
    }
    Tensor::new(&[b, d_out], y)
}

fn linear_backward(
    x: &Tensor,
    lin: &Linear,
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<Tensor> {
    let (b, d_in) = rows(x);
    let d_out = lin.d_out;
    if grad_out.shape() != [b, d_out] {
        return Err(Error::shape(
            "linear backward",
            "grad extent",
            b * d_out,
            grad_out.len(),
        ));
    }
    let xd = x.data();
    let g = grad_out.data();
    for r in 0..b {
        let gr = &g[r * d_out..(r + 1) * d_out];
        for (gb, v) in grad_bias.iter_mut().zip(gr) {
            *gb += v;
        }
    }
    let mut gx = vec![0.0; b * d_in];
    for start in (0..b).step_by(LINEAR_ROW_BLOCK) {
        let end = (start + LINEAR_ROW_BLOCK).min(b);
        for i in 0..d_in {
            let w_row = &lin.weight[i * d_out..(i + 1) * d_out];
            let gw_row = &mut grad_weight[i * d_out..(i + 1) * d_out];
            for r in start..end {
                let gr = &g[r * d_out..(r + 1) * d_out];
                let xi = xd[r * d_in + i];
                if xi != 0.0 {
                    axpy(xi, gr, gw_row);
                }
                gx[r * d_in + i] = dot(gr, w_row);
            }
        }
    }
    Tensor::new(x.shape(), gx)
}

// ---------------------------------------------------------------------------

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "Conv1D",
            Layer::MaxPool1d => "MaxPool1D",
            Layer::Relu => "ReLU",
            Layer::BatchNorm1d(_) => "BatchNorm1D",
            Layer::Linear(_) => "Linear",
        }
    }

    /// Row label in the style of the reference architecture table.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv1d(c) => format!("Conv {k}x{k},{}", c.out_channels, k = KERNEL_WIDTH),
            Layer::MaxPool1d => format!("MaxPool,{POOL_WIDTH}"),
            Layer::Relu => "ReLU".into(),
            Layer::BatchNorm1d(bn) => format!("BatchNorm,{}", bn.channels),
            Layer::Linear(l) => format!("Linear {}x{}", l.d_in, l.d_out),
        }
    }

    pub fn param_count(&self, convention: ParamConvention) -> usize {
        match self {
            Layer::Conv1d(c) => c.kernel.len(),
            Layer::MaxPool1d | Layer::Relu => 0,
            Layer::BatchNorm1d(bn) => match convention {
                ParamConvention::Paper => 3 * bn.channels,
                ParamConvention::Learnable => 2 * bn.channels,
            },
            Layer::Linear(l) => l.weight.len() + l.bias.len(),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv1d(c) => vec![&c.kernel],
            Layer::BatchNorm1d(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::MaxPool1d | Layer::Relu => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.kernel],
            Layer::BatchNorm1d(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::MaxPool1d | Layer::Relu => vec![],
        }
    }

    /// Zeroed gradient buffers shaped like [`Layer::params`].
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Read-only forward pass; batch norm uses its running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv1d(c) => conv1d_forward(x, c),
            Layer::MaxPool1d => maxpool_forward(x).map(|(y, _)| y),
            Layer::Relu => Ok(relu_forward(x)),
            Layer::BatchNorm1d(bn) => batchnorm_infer(x, bn).map(|(y, _, _)| y),
            Layer::Linear(l) => linear_forward(x, l),
        }
    }

    /// Forward pass that records a backward cache. In train mode batch norm
    /// normalizes with batch statistics and updates its running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Conv1d(c) => Ok((conv1d_forward(x, c)?, Cache::Input(x.clone()))),
            Layer::MaxPool1d => {
                let (y, argmax) = maxpool_forward(x)?;
                Ok((
                    y,
                    Cache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                ))
            }
            Layer::Relu => {
                let y = relu_forward(x);
                Ok((y.clone(), Cache::Relu { output: y }))
            }
            Layer::BatchNorm1d(bn) => {
                let (y, normalized, inv_std) = match mode {
                    Mode::Train => batchnorm_train(x, bn)?,
                    Mode::Infer => batchnorm_infer(x, bn)?,
                };
                Ok((
                    y,
                    Cache::BatchNorm {
                        normalized,
                        inv_std,
                        shape: x.shape().to_vec(),
                        batch_stats: mode == Mode::Train,
                    },
                ))
            }
            Layer::Linear(l) => Ok((linear_forward(x, l)?, Cache::Input(x.clone()))),
        }
    }

    /// Backward pass: accumulates parameter gradients into `grads` (shaped as
    /// [`Layer::zero_grads`]) and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &Tensor,
        grads: &mut [Vec<f64>],
    ) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Input(x)) => conv1d_backward(x, c, grad_out, &mut grads[0]),
            (
                Layer::MaxPool1d,
                Cache::Pool {
                    input_shape,
                    argmax,
                },
            ) => maxpool_backward(input_shape, argmax, grad_out),
            (Layer::Relu, Cache::Relu { output }) => relu_backward(output, grad_out),
            (
                Layer::BatchNorm1d(bn),
                Cache::BatchNorm {
                    normalized,
                    inv_std,
                    shape,
                    batch_stats,
                },
            ) => {
                let (gg, gb) = grads.split_at_mut(1);
                batchnorm_backward(
                    bn,
                    normalized,
                    inv_std,
                    shape,
                    *batch_stats,
                    grad_out,
                    &mut gg[0],
                    &mut gb[0],
                )
            }
            (Layer::Linear(l), Cache::Input(x)) => {
                let (gw, gb) = grads.split_at_mut(1);
                linear_backward(x, l, grad_out, &mut gw[0], &mut gb[0])
            }
            (layer, _) => Err(Error::InvalidArgument(format!(
                "backward cache does not belong to a {} layer",
                layer.kind_name()
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// single-example conveniences

fn batched(input: &Tensor) -> Result<Tensor> {
    match *input.shape() {
        [c, l] => input.clone().reshape(&[1, c, l]),
        [_, _, _] => Ok(input.clone()),
        _ => Err(Error::shape("sequence layer", "rank", 2, input.rank())),
    }
}

fn unbatched(out: Tensor, like: &Tensor) -> Result<Tensor> {
    if like.rank() == 2 {
        let s = out.shape().to_vec();
        out.reshape(&s[1..])
    } else {
        Ok(out)
    }
}

/// Convolution of a `C_in × L` (or batched `B × C_in × L`) input.
pub fn conv1d_apply(input: &Tensor, conv: &Conv1d) -> Result<Tensor> {
    unbatched(conv1d_forward(&batched(input)?, conv)?, input)
}

/// Width-2 max pooling of a `C × L` (or batched) input.
pub fn maxpool_apply(input: &Tensor) -> Result<Tensor> {
    unbatched(maxpool_forward(&batched(input)?)?.0, input)
}

pub fn relu_apply(input: &Tensor) -> Tensor {
    relu_forward(input)
}

pub fn batchnorm_apply(input: &Tensor, bn: &mut BatchNorm1d, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => batchnorm_train(input, bn).map(|(y, _, _)| y),
        Mode::Infer => batchnorm_infer(input, bn).map(|(y, _, _)| y),
    }
}

pub fn linear_apply(input: &Tensor, lin: &Linear) -> Result<Tensor> {
    linear_forward(input, lin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn conv_1x1(k: [f64; 3]) -> Conv1d {
        Conv1d {
            in_channels: 1,
            out_channels: 1,
            kernel: k.to_vec(),
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 5], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = conv1d_apply(&x, &conv_1x1([0.0, 1.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(y.shape(), &[1, 5]);
    }

    #[test]
    fn conv_hand_computed_difference() {
        // y[t] = x[t-1] - x[t+1], zero padded: [0-2, 1-3, 2-0]
        let y = conv1d_apply(&t(&[1, 3], &[1.0, 2.0, 3.0]), &conv_1x1([1.0, 0.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv_length_one() {
        let y = conv1d_apply(&t(&[1, 1], &[4.0]), &conv_1x1([1.0, 2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[8.0]);
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let conv = Conv1d::zeros(2, 3);
        let err = conv1d_apply(&t(&[1, 4], &[0.0; 4]), &conv).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
    }

    #[test]
    fn maxpool_examples() {
        let y = maxpool_apply(&t(&[1, 4], &[5.0; 4])).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0]);
        let y = maxpool_apply(&t(&[1, 4], &[1.0, 3.0, 2.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert!(maxpool_apply(&t(&[1, 3], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn maxpool_gradient_routes_to_argmax() {
        let mut layer = Layer::MaxPool1d;
        let x = t(&[1, 1, 4], &[1.0, 3.0, 2.0, 0.0]);
        let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
        let g = layer
            .backward(
                &cache,
                &Tensor::new(y.shape(), vec![1.0; 2]).unwrap(),
                &mut [],
            )
            .unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_tie_goes_low() {
        let (_, idx) = maxpool_forward(&t(&[1, 1, 2], &[2.0, 2.0])).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(
            relu_apply(&t(&[3], &[-1.0, 0.0, 2.0])).data(),
            &[0.0, 0.0, 2.0]
        );
        let pos = t(&[3], &[0.5, 1.0, 2.0]);
        assert_eq!(relu_apply(&pos), pos);
        let mut layer = Layer::Relu;
        let x = t(&[1, 3], &[-1.0, 0.0, 2.0]);
        let (_, cache) = layer.forward(&x, Mode::Train).unwrap();
        let g = layer
            .backward(&cache, &t(&[1, 3], &[1.0; 3]), &mut [])
            .unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn batchnorm_normalizes() {
        let mut bn = BatchNorm1d::new(2);
        let x = t(
            &[3, 2, 2],
            &[
                1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0, 5.0, 9.0, 0.0, -7.0,
            ],
        );
        let y = batchnorm_apply(&x, &mut bn, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| y.data()[(b * 2 + ch) * 2..(b * 2 + ch) * 2 + 2].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn batchnorm_affine_on_normalized_input() {
        let mut bn = BatchNorm1d::new(1);
        bn.gamma[0] = 2.0;
        bn.beta[0] = 3.0;
        let x = t(&[4, 1], &[-1.0, 1.0, -1.0, 1.0]);
        let y = batchnorm_apply(&x, &mut bn, Mode::Train).unwrap();
        for (yv, xv) in y.data().iter().zip(x.data()) {
            assert!((yv - (2.0 * xv + 3.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_infer_matches_train_with_batch_stats() {
        let x = t(&[3, 1, 2], &[0.3, -1.2, 2.5, 0.7, 1.1, -0.4]);
        let mut bn = BatchNorm1d::new(1);
        bn.gamma[0] = 1.7;
        bn.beta[0] = -0.2;
        let train = batchnorm_apply(&x, &mut bn.clone(), Mode::Train).unwrap();
        let mean = x.data().iter().sum::<f64>() / 6.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        bn.running_mean[0] = mean;
        bn.running_var[0] = var;
        let infer = batchnorm_apply(&x, &mut bn, Mode::Infer).unwrap();
        for (a, b) in train.data().iter().zip(infer.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_rejects_single_example() {
        let mut bn = BatchNorm1d::new(1);
        assert!(
            batchnorm_apply(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]), &mut bn, Mode::Train).is_err()
        );
        assert!(
            batchnorm_apply(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]), &mut bn, Mode::Infer).is_ok()
        );
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut lin = Linear::zeros(3, 3);
        for i in 0..3 {
            lin.weight[i * 3 + i] = 1.0;
        }
        let x = t(&[2, 3], &[1.0, -2.0, 3.5, 0.0, 4.0, -1.0]);
        assert_eq!(linear_apply(&x, &lin).unwrap().data(), x.data());

        let mut lin = Linear::zeros(3, 2);
        lin.bias = vec![0.5, -7.0];
        let y = linear_apply(&x, &lin).unwrap();
        assert_eq!(y.data(), &[0.5, -7.0, 0.5, -7.0]);
    }

    #[test]
    fn linear_flattens_rank3() {
        let lin = Linear::zeros(6, 2);
        let y = linear_apply(&Tensor::zeros(&[4, 2, 3]), &lin).unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!(linear_apply(&Tensor::zeros(&[4, 5]), &lin).is_err());
    }

    #[test]
    fn param_counts_per_kind() {
        let mut rng = rand::rng();
        assert_eq!(
            Layer::Conv1d(Conv1d::new(1, 5, &mut rng)).param_count(ParamConvention::Paper),
            15
        );
        let bn = Layer::BatchNorm1d(BatchNorm1d::new(5));
        assert_eq!(bn.param_count(ParamConvention::Paper), 15);
        assert_eq!(bn.param_count(ParamConvention::Learnable), 10);
        assert_eq!(
            Layer::Linear(Linear::zeros(2500, 200)).param_count(ParamConvention::Paper),
            500_200
        );
    }
}
