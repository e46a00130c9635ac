//! Labeled window and sequence datasets, and their CSV archive format.
//!
//! ```text
//! # millwatch-dataset v1 kind=sequences classes=7 n=8 w=400
//! label,reviewed,source,end_index,v0,v1,...
//! ```
//!
//! One sample per line after the two header lines. `reviewed` is `1` for
//! ground-truth labels and `0` for placeholder labels awaiting review (for
//! example, exported incidents carrying the classifier's proposal).
//! Values are written in shortest round-trip form, so save/load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Single windows of `w` samples.
    Windows,
    /// `n` contiguous windows of `w` samples each.
    Sequences,
}

impl DatasetKind {
    fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Windows => "windows",
            DatasetKind::Sequences => "sequences",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub reviewed: bool,
    pub source: String,
    /// Absolute index, in the source recording, of the last sample.
    pub end_index: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub classes: usize,
    pub n: usize,
    pub w: usize,
    pub samples: Vec<Sample>,
}

const COLUMNS: &str = "label,reviewed,source,end_index,values...";

impl Dataset {
    pub fn new(kind: DatasetKind, classes: usize, n: usize, w: usize) -> Self {
        Self {
            kind,
            classes,
            n,
            w,
            samples: Vec::new(),
        }
    }

    pub fn sample_len(&self) -> usize {
        self.n * self.w
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.values.len() != self.sample_len() {
            return Err(Error::shape(
                "Dataset::push",
                "sample length",
                self.sample_len(),
                sample.values.len(),
            ));
        }
        if sample.label >= self.classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                sample.label, self.classes
            )));
        }
        if sample.source.contains([',', '\n']) {
            return Err(Error::Data(format!(
                "source id {:?} contains a separator",
                sample.source
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Subset by sample index, preserving order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.header_only()
        }
    }

    pub fn header_only(&self) -> Dataset {
        Dataset::new(self.kind, self.classes, self.n, self.w)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# millwatch-dataset v1 kind={} classes={} n={} w={}\n{COLUMNS}\n",
            self.kind.as_str(),
            self.classes,
            self.n,
            self.w
        );
        for s in &self.samples {
            let _ = write!(
                out,
                "{},{},{},{}",
                s.label,
                u8::from(s.reviewed),
                s.source,
                s.end_index
            );
            for v in &s.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let fields = header
            .strip_prefix("# millwatch-dataset v1")
            .ok_or_else(|| err(1, "missing '# millwatch-dataset v1' header".into()))?;
        let (mut kind, mut classes, mut n, mut w) = (None, None, None, None);
        for kv in fields.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(1, format!("bad header field {kv:?}")))?;
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| err(1, format!("bad value for {k}: {v:?}")))
            };
            match k {
                "kind" => {
                    kind = Some(match v {
                        "windows" => DatasetKind::Windows,
                        "sequences" => DatasetKind::Sequences,
                        _ => return Err(err(1, format!("unknown kind {v:?}"))),
                    })
                }
                "classes" => classes = Some(num()?),
                "n" => n = Some(num()?),
                "w" => w = Some(num()?),
                _ => return Err(err(1, format!("unknown header field {k:?}"))),
            }
        }
        let missing = |f: &str| err(1, format!("header lacks {f}"));
        let mut ds = Dataset::new(
            kind.ok_or_else(|| missing("kind"))?,
            classes.ok_or_else(|| missing("classes"))?,
            n.ok_or_else(|| missing("n"))?,
            w.ok_or_else(|| missing("w"))?,
        );
        match lines.next() {
            Some((_, cols)) if cols == COLUMNS => {}
            _ => return Err(err(2, format!("expected column line {COLUMNS:?}"))),
        }
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| err(lineno, format!("missing {what}")))
            };
            let label = next("label")?
                .parse::<usize>()
                .map_err(|_| err(lineno, "label is not an integer".into()))?;
            let reviewed = match next("reviewed")? {
                "1" => true,
                "0" => false,
                other => {
                    return Err(err(
                        lineno,
                        format!("reviewed must be 0 or 1, got {other:?}"),
                    ))
                }
            };
            let source = next("source")?.to_string();
            let end_index = next("end_index")?
                .parse::<u64>()
                .map_err(|_| err(lineno, "end_index is not an integer".into()))?;
            let values = parts
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(lineno, format!("bad sample value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            ds.push(Sample {
                label,
                reviewed,
                source,
                end_index,
                values,
            })
            .map_err(|e| err(lineno, e.to_string()))?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds() -> Dataset {
        let mut d = Dataset::new(DatasetKind::Sequences, 7, 2, 3);
        d.push(Sample {
            label: 4,
            reviewed: false,
            source: "trial_0003".into(),
            end_index: 4123,
            values: vec![0.1, 0.2 + 1e-17, -3.0, 1.0 / 3.0, 5e-300, 2.0],
        })
        .unwrap();
        d
    }

    #[test]
    fn csv_round_trip() {
        let d = ds();
        let back = Dataset::from_csv(&d.to_csv(), "mem").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_archive_has_header() {
        let d = Dataset::new(DatasetKind::Windows, 4, 1, 400);
        let text = d.to_csv();
        assert_eq!(text.lines().count(), 2);
        assert!(Dataset::from_csv(&text, "mem").unwrap().is_empty());
    }

    #[test]
    fn rejects_wrong_length_with_line_number() {
        let mut text = ds().to_csv();
        text.push_str("1,1,x,9,0.5\n");
        let e = Dataset::from_csv(&text, "mem").unwrap_err().to_string();
        assert!(e.contains("mem:4"), "{e}");
    }
}
