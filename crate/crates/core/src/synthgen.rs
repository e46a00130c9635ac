//! Synthetic milling trials: a spindle-current analog that passes through
//! no interaction, entry, constant milling, and exit, with ground-truth
//! labels, plus the two dataset extractors used for training.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, DatasetKind, Sample};
use crate::error::{Error, Result};
use crate::stream::Recording;

pub const NO_INT: usize = 0;
pub const ENTRY: usize = 1;
pub const CONST: usize = 2;
pub const EXIT: usize = 3;

pub const STATE_NAMES: [&str; 4] = ["NoInt", "Entry", "Const", "Exit"];
pub const EVENT_NAMES: [&str; 3] = ["e_NoInt_Entry", "e_Entry_Const", "e_Const_Exit"];
/// Classifier class order: the four states, then the three events.
pub const CLASS_NAMES: [&str; 7] = [
    "NoInt",
    "Entry",
    "Const",
    "Exit",
    "e_NoInt_Entry",
    "e_Entry_Const",
    "e_Const_Exit",
];

/// Class index of the event that moves the machine out of `state`.
pub fn event_class_leaving(state: usize) -> usize {
    STATE_NAMES.len() + state
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub fs: f64,
    /// Idle current level.
    pub baseline: f64,
    /// Current level during constant milling.
    pub plateau: f64,
    /// Nominal NoInt, Entry, Const, and Exit durations in samples. The
    /// trial length is their jittered sum. The entry ramp spans the whole
    /// Entry state.
    pub durations: [usize; 4],
    /// Samples over which the current falls back to the idle level at the
    /// start of Exit; the rest of Exit stays idle.
    pub exit_ramp: usize,
    /// Each nominal duration is scaled by a uniform factor in `1 ± jitter`.
    pub jitter: f64,
    pub noise_sigma: f64,
    pub ripple_amplitude: f64,
    pub ripple_hz: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            fs: 250.0,
            baseline: 0.2,
            plateau: 1.0,
            durations: [4500, 1200, 4000, 1800],
            exit_ramp: 500,
            jitter: 0.2,
            noise_sigma: 0.05,
            ripple_amplitude: 0.08,
            ripple_hz: 35.0,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.plateau > self.baseline) {
            return bad(format!(
                "plateau {} must exceed baseline {}",
                self.plateau, self.baseline
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.ripple_amplitude >= 0.0) {
            return bad("noise and ripple amplitudes must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 1), got {}", self.jitter));
        }
        if !(self.fs > 0.0) || !(self.ripple_hz >= 0.0) {
            return bad("sample rate must be positive".into());
        }
        if self.durations.contains(&0) || self.exit_ramp == 0 {
            return bad("state durations and the exit ramp must be positive".into());
        }
        let shortest_exit = (self.durations[3] as f64 * (1.0 - self.jitter)).round() as usize;
        if self.exit_ramp > shortest_exit {
            return bad(format!(
                "exit ramp {} is longer than the shortest Exit state ({shortest_exit} samples)",
                self.exit_ramp
            ));
        }
        Ok(())
    }

    /// Longest trial these parameters can produce.
    pub fn max_length(&self) -> usize {
        self.durations
            .iter()
            .map(|&d| (d as f64 * (1.0 + self.jitter)).round() as usize)
            .sum()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Seed for trial `index` of a run seeded with `base`.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub fs: f64,
    pub samples: Vec<f64>,
    /// State index per sample.
    pub labels: Vec<usize>,
    /// First sample of Entry, Const, and Exit.
    pub transitions: [usize; 3],
    pub params: Option<GenParams>,
}

impl TrialRecording {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Seconds from stream start to transition `k`.
    pub fn transition_time(&self, k: usize) -> f64 {
        self.transitions[k] as f64 / self.fs
    }

    pub fn to_recording(&self) -> Recording {
        Recording {
            fs: self.fs,
            samples: self.samples.clone(),
            labels: Some(self.labels.clone()),
        }
    }

    /// Validates a labeled recording against the strict
    /// NoInt → Entry → Const → Exit progression.
    pub fn from_recording(rec: &Recording) -> Result<Self> {
        let labels = rec
            .labels
            .clone()
            .ok_or_else(|| Error::Data("recording has no label column".into()))?;
        if labels.first() != Some(&NO_INT) {
            return Err(Error::Data(
                "recording must start in state 0 (NoInt)".into(),
            ));
        }
        let changes = rec.label_changes();
        if changes.len() != 3 {
            return Err(Error::Data(format!(
                "expected 3 state transitions, found {}",
                changes.len()
            )));
        }
        for (k, &t) in changes.iter().enumerate() {
            if labels[t - 1] != k || labels[t] != k + 1 {
                return Err(Error::Data(format!(
                    "transition at sample {t} goes {} -> {}, expected {k} -> {}",
                    labels[t - 1],
                    labels[t],
                    k + 1
                )));
            }
        }
        Ok(Self {
            fs: rec.fs,
            samples: rec.samples.clone(),
            labels,
            transitions: [changes[0], changes[1], changes[2]],
            params: None,
        })
    }
}

/// Piecewise trial: flat idle level, linear ramp up with growing ripple,
/// plateau with full ripple, then a linear ramp down with decaying ripple
/// that settles at the idle level, all with additive Gaussian noise.
pub fn generate_trial(params: &GenParams) -> Result<TrialRecording> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut jittered = [0usize; 4];
    for (out, &d) in jittered.iter_mut().zip(&params.durations) {
        let factor = if params.jitter > 0.0 {
            rng.random_range(1.0 - params.jitter..=1.0 + params.jitter)
        } else {
            1.0
        };
        *out = ((d as f64 * factor).round() as usize).max(1);
    }
    let [idle, entry, constant, exit] = jittered;
    let ramp = params.exit_ramp.min(exit);
    let length = idle + entry + constant + exit;
    let t1 = idle;
    let t2 = t1 + entry;
    let t3 = t2 + constant;

    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let lift = params.plateau - params.baseline;
    let omega = std::f64::consts::TAU * params.ripple_hz / params.fs;

    let mut samples = Vec::with_capacity(length);
    let mut labels = Vec::with_capacity(length);
    for t in 0..length {
        let (state, level, ripple) = if t < t1 {
            (NO_INT, params.baseline, 0.0)
        } else if t < t2 {
            let f = (t - t1) as f64 / entry as f64;
            (ENTRY, params.baseline + lift * f, f)
        } else if t < t3 {
            (CONST, params.plateau, 1.0)
        } else {
            let f = ((t - t3) as f64 / ramp as f64).min(1.0);
            (EXIT, params.baseline + lift * (1.0 - f), 1.0 - f)
        };
        let mut v = level;
        if params.ripple_amplitude > 0.0 {
            v += params.ripple_amplitude * ripple * (omega * t as f64 + phase).sin();
        }
        if params.noise_sigma > 0.0 {
            v += noise.sample(&mut rng);
        }
        samples.push(v);
        labels.push(state);
    }
    Ok(TrialRecording {
        fs: params.fs,
        samples,
        labels,
        transitions: [t1, t2, t3],
        params: Some(params.clone()),
    })
}

/// `[start, end)` sample range of each of the four states.
fn segments(trial: &TrialRecording) -> [(usize, usize); 4] {
    let [t1, t2, t3] = trial.transitions;
    [(0, t1), (t1, t2), (t2, t3), (t3, trial.len())]
}

/// Single-window samples lying wholly inside one state and at least
/// `margin` samples away from every transition point. Candidate windows
/// start every `stride` samples; the result is class-balanced by randomly
/// down-sampling the larger classes.
pub fn extract_steady_samples(
    trials: &[(String, TrialRecording)],
    w: usize,
    margin: usize,
    stride: usize,
    seed: u64,
) -> Result<Dataset> {
    if w == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window length and stride must be positive".into(),
        ));
    }
    let mut per_class: Vec<Vec<Sample>> = vec![Vec::new(); STATE_NAMES.len()];
    for (name, trial) in trials {
        for (state, (a, b)) in segments(trial).into_iter().enumerate() {
            if b <= a {
                continue;
            }
            let lo = if a > 0 { a + margin } else { a };
            let hi = if b < trial.len() {
                b.saturating_sub(margin)
            } else {
                b
            };
            if hi < lo + w {
                log::warn!(
                    "{name}: {} segment of {} samples is too short for a {w}-sample window with margin {margin}",
                    STATE_NAMES[state],
                    b - a
                );
                continue;
            }
            for start in (lo..=hi - w).step_by(stride) {
                per_class[state].push(Sample {
                    label: state,
                    reviewed: true,
                    source: name.clone(),
                    end_index: (start + w - 1) as u64,
                    values: trial.samples[start..start + w].to_vec(),
                });
            }
        }
    }
    let present: Vec<usize> = per_class.iter().map(Vec::len).filter(|&n| n > 0).collect();
    let keep = present.iter().copied().min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(DatasetKind::Windows, STATE_NAMES.len(), 1, w);
    for class in per_class {
        let mut idx: Vec<usize> = (0..class.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(keep);
        idx.sort_unstable();
        for i in idx {
            ds.push(class[i].clone())?;
        }
    }
    Ok(ds)
}

/// Label of the span ending at `end`: the event class when a transition
/// point falls in the final `w` samples, otherwise the state at `end`.
pub fn sequence_label(trial: &TrialRecording, end: usize, w: usize) -> usize {
    let first = (end + 1).saturating_sub(w);
    match trial
        .transitions
        .iter()
        .enumerate()
        .rev()
        .find(|(_, &t)| t >= first && t <= end)
    {
        Some((k, _)) => event_class_leaving(k),
        None => trial.labels[end],
    }
}

/// How labeled spans are drawn from each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceSampling {
    /// Samples per span, a multiple of `w`.
    pub span: usize,
    /// Window length; a transition point in the final window makes an event span.
    pub w: usize,
    /// Spans per class per trial, drawn uniformly over the class's candidates.
    pub per_class: usize,
    /// Additional state spans per trial ending within `lead` samples before
    /// the next transition point. Without them, spans just before a
    /// transition are rare and the network learns to anticipate events from
    /// how long ago the previous one scrolled out of view.
    pub lead_per_class: usize,
    pub lead: usize,
    /// Event spans are only drawn when at least `guard` samples follow the
    /// transition point; spans ending sooner look like the preceding state.
    pub guard: usize,
}

impl Default for SequenceSampling {
    fn default() -> Self {
        Self {
            span: 3200,
            w: 400,
            per_class: 16,
            lead_per_class: 8,
            lead: 1600,
            guard: 50,
        }
    }
}

/// Spans labeled by [`sequence_label`], drawn per trial and class as set out
/// by `sampling`.
pub fn extract_sequence_samples(
    trials: &[(String, TrialRecording)],
    sampling: &SequenceSampling,
    seed: u64,
) -> Result<Dataset> {
    let SequenceSampling {
        span,
        w,
        per_class,
        lead_per_class,
        lead,
        guard,
    } = *sampling;
    if guard >= w {
        return Err(Error::InvalidArgument(format!(
            "event guard {guard} must be shorter than the window {w}"
        )));
    }
    if w == 0 || span % w != 0 {
        return Err(Error::InvalidArgument(format!(
            "span {span} is not a multiple of window {w}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new(DatasetKind::Sequences, CLASS_NAMES.len(), span / w, w);
    for (name, trial) in trials {
        if trial.len() < span {
            return Err(Error::Data(format!(
                "{name}: {} samples is shorter than the {span}-sample span",
                trial.len()
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASS_NAMES.len()];
        for end in span - 1..trial.len() {
            let label = sequence_label(trial, end, w);
            if label >= STATE_NAMES.len()
                && trial
                    .transitions
                    .iter()
                    .any(|&t| t <= end && end < t + guard)
            {
                continue;
            }
            by_class[label].push(end);
        }
        for (label, ends) in by_class.iter().enumerate() {
            let mut chosen: Vec<usize> = Vec::new();
            if let Some(&next) = trial
                .transitions
                .get(label)
                .filter(|_| label < STATE_NAMES.len())
            {
                let near: Vec<usize> = ends.iter().copied().filter(|&e| e + lead >= next).collect();
                chosen.extend(near.choose_multiple(&mut rng, lead_per_class));
            }
            let rest: Vec<usize> = ends
                .iter()
                .copied()
                .filter(|e| !chosen.contains(e))
                .collect();
            chosen.extend(rest.choose_multiple(&mut rng, per_class));
            chosen.sort_unstable();
            for end in chosen {
                ds.push(Sample {
                    label,
                    reviewed: true,
                    source: name.clone(),
                    end_index: end as u64,
                    values: trial.samples[end + 1 - span..=end].to_vec(),
                })?;
            }
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialSplit {
    Train,
    Test,
    Simulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Path relative to the manifest's directory.
    pub file: String,
    pub seed: u64,
    pub split: TrialSplit,
    pub transitions: [usize; 3],
    /// SHA-256 of the trial file.
    pub sha256: String,
}

/// Index of generated trial files with their seeds and split assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub trials: Vec<ManifestEntry>,
    /// Resolved run configuration that produced the trials.
    pub config: serde_json::Value,
}

/// Split of trial `index` out of `total`: the last `simulation` trials are
/// held out for deployment replay and the `test` trials before them for
/// classification metrics.
pub fn split_for(index: usize, total: usize, test: usize, simulation: usize) -> TrialSplit {
    let sim_start = total.saturating_sub(simulation);
    let test_start = sim_start.saturating_sub(test);
    if index >= sim_start {
        TrialSplit::Simulation
    } else if index >= test_start {
        TrialSplit::Test
    } else {
        TrialSplit::Train
    }
}

impl Manifest {
    /// Generates `total` trials in parallel and writes them as
    /// `trials/trial_NNNN.csv` under `dir`, plus `manifest.json`.
    pub fn generate(
        dir: &Path,
        params: &GenParams,
        seed: u64,
        total: usize,
        test: usize,
        simulation: usize,
        config: serde_json::Value,
    ) -> Result<Self> {
        let trial_dir = dir.join("trials");
        std::fs::create_dir_all(&trial_dir).map_err(|e| Error::io(&trial_dir, e))?;
        let trials = (0..total)
            .into_par_iter()
            .map(|i| {
                let trial_seed = trial_seed(seed, i as u64);
                let trial = generate_trial(&params.with_seed(trial_seed))?;
                let name = format!("trial_{i:04}");
                let file = format!("trials/{name}.csv");
                let text = trial.to_recording().to_csv();
                let path = dir.join(&file);
                std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
                Ok(ManifestEntry {
                    sha256: hex::encode(Sha256::digest(text.as_bytes())),
                    name,
                    file,
                    seed: trial_seed,
                    split: split_for(i, total, test, simulation),
                    transitions: trial.transitions,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            seed,
            trials,
            config,
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Loads the trials of one split, checking each file's hash and labels.
    pub fn load_split(
        &self,
        manifest_path: &Path,
        split: TrialSplit,
    ) -> Result<Vec<(String, TrialRecording)>> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.trials
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let path = base.join(&e.file);
                let text = std::fs::read_to_string(&path).map_err(|err| Error::io(&path, err))?;
                let digest = hex::encode(Sha256::digest(text.as_bytes()));
                if digest != e.sha256 {
                    return Err(Error::Data(format!(
                        "{}: content hash does not match the manifest",
                        path.display()
                    )));
                }
                let rec = Recording::from_csv(&text, &path.display().to_string())?;
                let trial = TrialRecording::from_recording(&rec)
                    .map_err(|err| Error::Data(format!("{}: {err}", path.display())))?;
                Ok((e.name.clone(), trial))
            })
            .collect()
    }
}
