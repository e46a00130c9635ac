//! Run configuration: defaults, then an optional JSON file, then dotted
//! `key=value` overrides, each layer replacing the one before it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evalsim::EvalConfig;
use crate::model::TrainingConfig;
use crate::stream::WindowingConfig;
use crate::synthgen::{GenParams, SequenceSampling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Total trials to generate.
    pub trials: usize,
    /// Trials held out for classification metrics.
    pub test_trials: usize,
    /// Trials held out for deployment simulation.
    pub simulation_trials: usize,
    pub params: GenParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            trials: 35,
            test_trials: 6,
            simulation_trials: 5,
            params: GenParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Samples kept between steady windows and transition points.
    pub margin: usize,
    /// Start-to-start spacing of candidate steady windows.
    pub stride: usize,
    /// Sequences drawn per class per trial.
    pub per_class: usize,
    /// Extra state sequences per class per trial ending shortly before the
    /// next transition point.
    pub lead_per_class: usize,
    /// How shortly before, in samples.
    pub lead: usize,
    /// Minimum samples between a transition point and the end of a span
    /// drawn for its event class.
    pub event_guard: usize,
}

impl ExtractionConfig {
    pub fn sampling(&self, windowing: &WindowingConfig) -> SequenceSampling {
        SequenceSampling {
            span: windowing.span(),
            w: windowing.w,
            per_class: self.per_class,
            lead_per_class: self.lead_per_class,
            lead: self.lead,
            guard: self.event_guard,
        }
    }
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            margin: 100,
            stride: 10,
            per_class: 16,
            lead_per_class: 8,
            lead: 1600,
            event_guard: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Trial manifest; defaults to `<out>/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Pretrained upstream; defaults to `<out>/upstream.swnn`.
    pub upstream: Option<PathBuf>,
    /// Trained encoder-classifier; defaults to `<out>/model.swnn`.
    pub model: Option<PathBuf>,
    /// Reviewed sequence datasets appended to the end-to-end training set.
    pub extra_sequences: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Generation, extraction, and training seeds derive from it.
    pub seed: u64,
    pub out: PathBuf,
    /// FSM definition file; the shipped milling FSM when absent.
    pub fsm: Option<PathBuf>,
    pub gen: GenConfig,
    pub extraction: ExtractionConfig,
    /// Windowing of training sequences.
    pub windowing: WindowingConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    /// Minimum held-out macro F1 for `eval` to exit successfully.
    pub min_macro_f1: Option<f64>,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            fsm: None,
            gen: GenConfig::default(),
            extraction: ExtractionConfig::default(),
            windowing: WindowingConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            min_macro_f1: None,
            paths: PathsConfig::default(),
        }
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value` to a JSON tree. The value is parsed as JSON when
/// possible and kept as a string otherwise. Every key on the path must
/// already exist.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override {assignment:?} is not of the form key=value"
        ))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{} is not a section", parts[..i].join("."))))?;
        let slot = obj.get_mut(*part).ok_or_else(|| {
            Error::Config(format!(
                "unknown configuration key {:?}",
                parts[..=i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    /// Resolves defaults, the optional file, and overrides, then validates.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let layer: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !layer.is_object() {
                return Err(Error::Config(format!(
                    "{}: top level must be an object",
                    path.display()
                )));
            }
            merge(&mut tree, layer);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.params.validate()?;
        self.windowing.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        if self.extraction.stride == 0 || self.extraction.per_class == 0 {
            return Err(Error::Config(
                "extraction stride and per_class must be positive".into(),
            ));
        }
        if let Some(f) = &self.fsm {
            if !f.exists() {
                return Err(Error::Config(format!(
                    "FSM file {} does not exist",
                    f.display()
                )));
            }
        }
        for p in &self.paths.extra_sequences {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "dataset {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Compact JSON snapshot embedded in every artifact.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.out.join("manifest.json"))
    }

    pub fn upstream_path(&self) -> PathBuf {
        self.paths
            .upstream
            .clone()
            .unwrap_or_else(|| self.out.join("upstream.swnn"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.out.join("model.swnn"))
    }

    /// Training settings with the seed taken from the master seed.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }
}
