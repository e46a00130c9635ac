use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Fresh state for parameter tensors of the given lengths.
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update applied in place.
    ///
    /// Panics if the parameter/gradient lists do not line up with the sizes
    /// this state was created for.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "adam: parameter tensor count"
        );
        assert_eq!(grads.len(), self.first.len(), "adam: gradient tensor count");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.len(), g.len(), "adam: parameter/gradient length");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Functional form of one update: returns the new parameters and state.
pub fn adam_step(
    params: &[Vec<f64>],
    grads: &[Vec<f64>],
    state: &AdamState,
) -> (Vec<Vec<f64>>, AdamState) {
    let mut next = params.to_vec();
    let mut state = state.clone();
    {
        let mut views: Vec<&mut [f64]> = next.iter_mut().map(|p| p.as_mut_slice()).collect();
        let grads: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        state.step(&mut views, &grads);
    }
    (next, state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let state = AdamState::new(AdamConfig::default(), [3]);
        let p = vec![vec![1.0, -2.0, 0.5]];
        let (next, state) = adam_step(&p, &[vec![0.0; 3]], &state);
        assert_eq!(next, p);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let state = AdamState::new(cfg, [2]);
        let (next, _) = adam_step(&[vec![0.0, 0.0]], &[vec![3.0, -0.5]], &state);
        let expect0 = -0.01 * 3.0 / (3.0 + 1e-8);
        let expect1 = 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((next[0][0] - expect0).abs() < 1e-15);
        assert!((next[0][1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, [1]);
        let mut x = vec![1.0];
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            state.step(&mut [&mut x], &[&g]);
        }
        assert!(x[0].abs() < 0.1, "x = {}", x[0]);
    }

    #[test]
    fn repeated_invocation_is_bit_identical() {
        let mut state = AdamState::new(AdamConfig::default(), [2]);
        let mut p = vec![0.3, -0.1];
        state.step(&mut [&mut p], &[&[0.2, 0.4]]);
        let params = vec![p];
        let grads = vec![vec![-1.5, 0.25]];
        let a = adam_step(&params, &grads, &state);
        let b = adam_step(&params, &grads, &state);
        assert_eq!(a.0[0][0].to_bits(), b.0[0][0].to_bits());
        assert_eq!(a.0[0][1].to_bits(), b.0[0][1].to_bits());
        assert_eq!(a.1, b.1);
    }
}
