//! Signal front end: denoising, sliding-window partitioning, and packaging
//! of window sequences for the classifier.

mod filter;
mod recording;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use filter::{denoise, FilterKind, FilterSpec};
pub use recording::Recording;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowingConfig {
    /// Signal channels per window.
    pub k: usize,
    /// Window length in samples.
    pub w: usize,
    /// Overlap between successive windows in samples.
    pub overlap: usize,
    /// Windows per sequence.
    pub n: usize,
    /// Samples between successive decisions. `None` means `w - overlap`.
    pub stride: Option<usize>,
    /// Sample rate in Hz.
    pub fs: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            k: 1,
            w: 400,
            overlap: 25,
            n: 8,
            stride: None,
            fs: 250.0,
        }
    }
}

impl WindowingConfig {
    /// Deployment-simulation defaults: a 25-sample (0.1 s) decision stride.
    pub fn deployment() -> Self {
        Self {
            stride: Some(25),
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.w.saturating_sub(self.overlap))
    }

    /// Samples held by a full buffer, `n·w`.
    pub fn span(&self) -> usize {
        self.n * self.w
    }

    pub fn validate(&self) -> Result<()> {
        if self.k != 1 {
            return Err(Error::Config(format!(
                "only single-channel signals are supported (k = {})",
                self.k
            )));
        }
        if self.w == 0 || self.overlap >= self.w {
            return Err(Error::Config(format!(
                "need 0 <= overlap < w, got overlap {} and w {}",
                self.overlap, self.w
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.stride() == 0 {
            return Err(Error::Config("decision stride must be at least 1".into()));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.fs
            )));
        }
        Ok(())
    }
}

/// The classifier input for one decision: `n` contiguous windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSequence {
    /// `n × k × w`.
    pub data: Tensor,
    /// Absolute stream index of the final sample.
    pub end_index: u64,
    /// `end_index / fs`, seconds.
    pub end_time: f64,
}

/// Rolling buffer over the most recent `n·w` samples that emits a
/// [`WindowSequence`] on the first full buffer and every `stride` samples
/// after it.
#[derive(Debug, Clone)]
pub struct Partitioner {
    cfg: WindowingConfig,
    buffer: VecDeque<f64>,
    consumed: u64,
}

impl Partitioner {
    pub fn new(cfg: WindowingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            buffer: VecDeque::with_capacity(cfg.span()),
            cfg,
            consumed: 0,
        })
    }

    pub fn config(&self) -> &WindowingConfig {
        &self.cfg
    }

    /// Samples consumed so far.
    pub fn position(&self) -> u64 {
        self.consumed
    }

    /// Consumes one sample; returns the sequence ending on it, if any.
    pub fn push(&mut self, sample: f64) -> Option<WindowSequence> {
        let span = self.cfg.span();
        if self.buffer.len() == span {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample);
        let index = self.consumed;
        self.consumed += 1;
        let first = span as u64 - 1;
        if index < first || (index - first) % self.cfg.stride() as u64 != 0 {
            return None;
        }
        let data: Vec<f64> = self.buffer.iter().copied().collect();
        Some(WindowSequence {
            data: Tensor::new(&[self.cfg.n, self.cfg.k, self.cfg.w], data)
                .expect("buffer holds n·k·w samples"),
            end_index: index,
            end_time: index as f64 / self.cfg.fs,
        })
    }

    /// Consumes a chunk of samples, returning emissions in stream order.
    pub fn push_samples(&mut self, samples: &[f64]) -> Vec<WindowSequence> {
        samples.iter().filter_map(|&s| self.push(s)).collect()
    }
}

/// Number of sequences a [`Partitioner`] emits over a stream of `len` samples.
pub fn window_count(len: u64, cfg: &WindowingConfig) -> u64 {
    let span = cfg.span() as u64;
    if len < span {
        0
    } else {
        1 + (len - span) / cfg.stride() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_cfg() -> WindowingConfig {
        WindowingConfig::default()
    }

    fn ramp(len: usize) -> Vec<f64> {
        (0..len).map(|i| i as f64).collect()
    }

    #[test]
    fn default_stride_is_w_minus_overlap() {
        assert_eq!(default_cfg().stride(), 375);
        assert_eq!(WindowingConfig::deployment().stride(), 25);
    }

    #[test]
    fn no_emission_before_full_buffer() {
        let mut p = Partitioner::new(default_cfg()).unwrap();
        assert!(p.push_samples(&ramp(3199)).is_empty());
    }

    #[test]
    fn first_full_buffer_emits_once() {
        let mut p = Partitioner::new(default_cfg()).unwrap();
        let out = p.push_samples(&ramp(3200));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].end_index, 3199);
        assert_eq!(out[0].data.shape(), &[8, 1, 400]);
        assert_eq!(out[0].data.data()[0], 0.0);
        assert!((out[0].end_time - 3199.0 / 250.0).abs() < 1e-12);
    }

    #[test]
    fn emission_count_matches_counter_enumeration() {
        // Brute-force oracle: walk a counter over every index.
        let cfg = default_cfg();
        let brute = (0..9000u64)
            .filter(|&i| i >= 3199 && (i - 3199) % 375 == 0)
            .count() as u64;
        assert_eq!(brute, 16);
        let mut p = Partitioner::new(cfg.clone()).unwrap();
        assert_eq!(p.push_samples(&ramp(9000)).len() as u64, brute);
        assert_eq!(window_count(9000, &cfg), brute);
    }

    #[test]
    fn window_count_edges() {
        let cfg = default_cfg();
        assert_eq!(window_count(0, &cfg), 0);
        assert_eq!(window_count(cfg.span() as u64, &cfg), 1);
    }

    #[test]
    fn emitted_on_the_sample_that_completes_it() {
        let cfg = WindowingConfig {
            w: 4,
            overlap: 1,
            n: 2,
            stride: Some(3),
            ..default_cfg()
        };
        let mut p = Partitioner::new(cfg).unwrap();
        for i in 0..40u64 {
            if let Some(seq) = p.push(i as f64) {
                assert_eq!(seq.end_index, i);
                assert_eq!(*seq.data.data().last().unwrap(), i as f64);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            WindowingConfig {
                overlap: 400,
                ..default_cfg()
            },
            WindowingConfig {
                n: 0,
                ..default_cfg()
            },
            WindowingConfig {
                stride: Some(0),
                ..default_cfg()
            },
            WindowingConfig {
                fs: 0.0,
                ..default_cfg()
            },
        ];
        for cfg in bad {
            assert!(Partitioner::new(cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_simulation(len in 0usize..600, w in 1usize..12, n in 1usize..5, stride in 1usize..20) {
            let cfg = WindowingConfig { w, overlap: 0, n, stride: Some(stride), ..default_cfg() };
            let mut p = Partitioner::new(cfg.clone()).unwrap();
            let emitted = p.push_samples(&ramp(len)).len() as u64;
            prop_assert_eq!(emitted, window_count(len as u64, &cfg));
        }

        #[test]
        fn windows_are_slices_of_the_signal(len in 0usize..300, stride in 1usize..9) {
            let cfg = WindowingConfig { w: 10, overlap: 0, n: 3, stride: Some(stride), ..default_cfg() };
            let signal: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let mut p = Partitioner::new(cfg).unwrap();
            for seq in p.push_samples(&signal) {
                let end = seq.end_index as usize;
                prop_assert_eq!(seq.data.data(), &signal[end + 1 - 30..=end]);
            }
        }
    }
}
