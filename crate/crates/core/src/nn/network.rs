use crate::error::Result;
use crate::nn::layers::{Cache, Layer, Mode, ParamConvention};
use crate::nn::loss::softmax_cross_entropy;
use crate::tensor::Tensor;

/// An ordered stack of layers applied front to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Backward caches recorded by [`Network::forward`].
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// Per-layer, per-parameter-tensor gradients, aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<&[f64]> {
        self.layers.iter().flatten().map(|g| g.as_slice()).collect()
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().flatten().map(Vec::len).sum()
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn count_parameters(&self, convention: ParamConvention) -> usize {
        count_parameters(&self.layers, convention)
    }

    /// Flat list of every learnable tensor, layer order then parameter order.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(Layer::zero_grads).collect(),
        }
    }

    /// Read-only inference; safe to share across threads.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        input.check_finite("network input")?;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.infer(&x)?;
            x.check_finite(&format!("output of layer {i} ({})", layer.kind_name()))?;
        }
        Ok(x)
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        input.check_finite("network input")?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache) = layer.forward(&x, mode)?;
            y.check_finite(&format!("output of layer {i} ({})", layer.kind_name()))?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Reverse pass over a recorded tape. Returns the gradient w.r.t. the
    /// network input and the parameter gradients.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> Result<(Tensor, Gradients)> {
        let mut grads = self.zero_grads();
        let mut g = grad_out.clone();
        for ((layer, cache), lg) in self
            .layers
            .iter()
            .zip(&tape.caches)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = layer.backward(cache, &g, lg)?;
        }
        Ok((g, grads))
    }
}

pub fn count_parameters(layers: &[Layer], convention: ParamConvention) -> usize {
    layers.iter().map(|l| l.param_count(convention)).sum()
}

/// Forward in train mode, softmax cross-entropy against `labels`, and a full
/// reverse pass. Returns the loss and gradients for every learnable value.
pub fn backprop_network(
    net: &mut Network,
    input: &Tensor,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    let (logits, tape) = net.forward(input, Mode::Train)?;
    let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
    let (_, grads) = net.backward(&tape, &grad)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::tensor::softmax_row;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_gradient_is_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = Linear::new(3, 4, &mut rng);
        let mut net = Network::new(vec![Layer::Linear(lin.clone())]);
        let x = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let labels = [1, 3];
        let (_, grads) = backprop_network(&mut net, &x, &labels).unwrap();

        let logits = crate::nn::layers::linear_apply(&x, &lin).unwrap();
        let mut delta = [0.0; 8];
        for b in 0..2 {
            softmax_row(
                &logits.data()[b * 4..b * 4 + 4],
                &mut delta[b * 4..b * 4 + 4],
            );
            delta[b * 4 + labels[b]] -= 1.0;
        }
        for i in 0..3 {
            for o in 0..4 {
                let expect: f64 = (0..2)
                    .map(|b| delta[b * 4 + o] * x.data()[b * 3 + i])
                    .sum::<f64>()
                    / 2.0;
                assert!((grads.layers[0][0][i * 4 + o] - expect).abs() < 1e-14);
            }
        }
        for o in 0..4 {
            let expect = (delta[o] + delta[4 + o]) / 2.0;
            assert!((grads.layers[0][1][o] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_logits_give_vanishing_gradients() {
        let mut lin = Linear::zeros(2, 3);
        lin.bias = vec![0.0, 60.0, 0.0];
        let mut net = Network::new(vec![Layer::Linear(lin)]);
        let x = Tensor::new(&[2, 2], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let (loss, grads) = backprop_network(&mut net, &x, &[1, 1]).unwrap();
        assert!(loss < 1e-20);
        assert!(grads
            .flat()
            .iter()
            .all(|g| g.iter().all(|v| v.abs() < 1e-20)));
    }

    #[test]
    fn rejects_non_finite_input() {
        let net = Network::new(vec![Layer::Relu]);
        let x = Tensor::new(&[1, 2], vec![f64::INFINITY, 0.0]).unwrap();
        assert!(net.infer(&x).is_err());
    }
}
