use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    #[default]
    None,
    MovingAverage,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Odd window width in samples.
    pub width: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            kind: FilterKind::None,
            width: 1,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 == 0 {
            return Err(Error::Config(format!(
                "filter width must be odd and >= 1, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

/// Centered moving-average or median filter with edge replication. The
/// output has the input's length; `FilterKind::None` returns the input.
pub fn denoise(signal: &[f64], spec: FilterSpec) -> Result<Vec<f64>> {
    if spec.kind == FilterKind::None {
        return Ok(signal.to_vec());
    }
    spec.validate()?;
    if spec.width > signal.len() {
        return Err(Error::InvalidArgument(format!(
            "filter width {} exceeds signal length {}",
            spec.width,
            signal.len()
        )));
    }
    let half = (spec.width / 2) as isize;
    let last = signal.len() as isize - 1;
    let at = |i: isize| signal[i.clamp(0, last) as usize];
    let mut scratch = vec![0.0; spec.width];
    let out = (0..signal.len() as isize)
        .map(|t| {
            for (s, o) in scratch.iter_mut().zip(-half..=half) {
                *s = at(t + o);
            }
            match spec.kind {
                FilterKind::MovingAverage => scratch.iter().sum::<f64>() / spec.width as f64,
                FilterKind::Median => {
                    scratch.sort_by(f64::total_cmp);
                    scratch[spec.width / 2]
                }
                FilterKind::None => unreachable!(),
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moving_average_with_edge_replication() {
        let spec = FilterSpec {
            kind: FilterKind::MovingAverage,
            width: 3,
        };
        assert_eq!(
            denoise(&[0.0, 3.0, 0.0], spec).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn median_removes_impulse() {
        let spec = FilterSpec {
            kind: FilterKind::Median,
            width: 3,
        };
        let out = denoise(&[0.0, 9.0, 0.0, 0.0], spec).unwrap();
        assert!(out.iter().all(|&v| v < 9.0));
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn width_checks() {
        let wide = FilterSpec {
            kind: FilterKind::Median,
            width: 5,
        };
        assert!(denoise(&[1.0, 2.0, 3.0], wide).is_err());
        let even = FilterSpec {
            kind: FilterKind::MovingAverage,
            width: 2,
        };
        assert!(denoise(&[1.0, 2.0, 3.0], even).is_err());
    }

    proptest! {
        #[test]
        fn none_is_identity(signal in proptest::collection::vec(-1e6f64..1e6, 0..200)) {
            prop_assert_eq!(denoise(&signal, FilterSpec::default()).unwrap(), signal);
        }
    }
}
