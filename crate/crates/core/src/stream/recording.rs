//! Signal ingestion CSV.
//!
//! ```text
//! # fs=250
//! 0.2013
//! 0.1987,0
//! ```
//!
//! A `# fs=<Hz>` header line, then one sample per line. An optional second
//! column carries the integer ground-truth state label; either every line has
//! it or none does. Any malformed line aborts parsing with its line number.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub fs: f64,
    pub samples: Vec<f64>,
    pub labels: Option<Vec<usize>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices where the label differs from the previous sample's label.
    pub fn label_changes(&self) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(l) => (1..l.len()).filter(|&i| l[i] != l[i - 1]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# fs={}\n", self.fs);
        match &self.labels {
            Some(labels) => {
                for (v, l) in self.samples.iter().zip(labels) {
                    let _ = writeln!(out, "{v},{l}");
                }
            }
            None => {
                for v in &self.samples {
                    let _ = writeln!(out, "{v}");
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let fs = header
            .trim()
            .strip_prefix("# fs=")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|fs| *fs > 0.0 && fs.is_finite())
            .ok_or_else(|| err(1, format!("expected '# fs=<Hz>' header, got {header:?}")))?;

        let mut samples = Vec::new();
        let mut labels: Option<Vec<usize>> = None;
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let mut cols = line.split(',');
            let value = cols
                .next()
                .map(str::trim)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(lineno, format!("bad sample value in {line:?}")))?;
            let label = match cols.next() {
                None => None,
                Some(l) => Some(
                    l.trim()
                        .parse::<usize>()
                        .map_err(|_| err(lineno, format!("bad label {l:?}")))?,
                ),
            };
            if cols.next().is_some() {
                return Err(err(lineno, "more than two columns".into()));
            }
            match (samples.is_empty(), label, labels.as_mut()) {
                (true, Some(l), _) => labels = Some(vec![l]),
                (true, None, _) => {}
                (false, Some(l), Some(ls)) => ls.push(l),
                (false, None, None) => {}
                _ => {
                    return Err(err(
                        lineno,
                        "label column present on some lines but not others".into(),
                    ))
                }
            }
            samples.push(value);
        }
        Ok(Self {
            fs,
            samples,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}
