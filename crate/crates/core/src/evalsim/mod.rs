//! Classification metrics, deployment replay, detection delays, and the
//! single-window baseline.

mod metrics;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{Coordinator, CoordinatorConfig, FsmDefinition, Incident, Outcome};
use crate::error::{Error, Result};
use crate::model::{network_hash, pack_windows, EncoderClassifier, CLASSES, STATES};
use crate::nn::Network;
use crate::stream::{denoise, FilterSpec, Partitioner, WindowSequence, WindowingConfig};
use crate::synthgen::TrialRecording;
use crate::tensor::Tensor;

pub use metrics::{
    f1_score, metrics_table, precision_recall_f1, ClassMetrics, ConfusionMatrix, Metrics,
};

const INFER_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Maximum permitted detection delay, seconds.
    pub epsilon: f64,
    /// Detections farther than this from a true transition are unmatched, seconds.
    pub horizon: f64,
    pub windowing: WindowingConfig,
    pub filter: FilterSpec,
    /// Consecutive windows a new baseline state must persist before it is
    /// reported.
    pub baseline_persistence: usize,
    pub coordinator: CoordinatorConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            horizon: 2.0,
            windowing: WindowingConfig::deployment(),
            filter: FilterSpec::default(),
            baseline_persistence: 1,
            coordinator: CoordinatorConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "matching horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.baseline_persistence == 0 {
            return Err(Error::Config(
                "baseline persistence must be at least 1".into(),
            ));
        }
        self.filter.validate()?;
        self.windowing.validate()
    }
}

/// A state change with its time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub from: usize,
    pub to: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub end_index: u64,
    pub end_time: f64,
    pub class: usize,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub from: usize,
    pub to: usize,
    pub true_time: f64,
    pub detected_time: Option<f64>,
    /// `detected_time - true_time`; negative when detection leads.
    pub delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfigEcho {
    pub system: String,
    pub stride: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trial: String,
    pub states: Vec<String>,
    pub decisions: Vec<DecisionRecord>,
    pub transitions: Vec<StateChange>,
    pub delays: Vec<DelayRecord>,
    /// Committed changes not matched to any true transition.
    pub false_detections: Vec<StateChange>,
    pub incidents: Vec<Incident>,
    pub dropped_incidents: u64,
    pub config: SimulationConfigEcho,
}

impl SimulationReport {
    /// Sequence of committed states starting from the initial one.
    pub fn state_path(&self) -> Vec<usize> {
        let mut path: Vec<usize> = self
            .transitions
            .first()
            .map(|t| vec![t.from])
            .unwrap_or_default();
        path.extend(self.transitions.iter().map(|t| t.to));
        path
    }

    pub fn state_path_names(&self) -> Vec<&str> {
        self.state_path()
            .into_iter()
            .map(|s| self.states[s].as_str())
            .collect()
    }

    pub fn matched_delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.delays.iter().filter_map(|d| d.delay)
    }

    pub fn mean_abs_delay(&self) -> Option<f64> {
        mean_abs(self.matched_delays())
    }
}

fn mean_abs(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), d| (s + d.abs(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Ground-truth transitions of a milling trial as state changes.
pub fn true_changes(trial: &TrialRecording) -> Vec<StateChange> {
    trial
        .transitions
        .iter()
        .enumerate()
        .map(|(k, &t)| StateChange {
            from: k,
            to: k + 1,
            time: t as f64 / trial.fs,
        })
        .collect()
}

/// Pairs each true change with the nearest unused detection of the same
/// kind within `horizon` seconds.
pub fn match_transitions(
    truth: &[StateChange],
    detected: &[StateChange],
    horizon: f64,
) -> (Vec<DelayRecord>, Vec<StateChange>) {
    let mut used = vec![false; detected.len()];
    let mut delays = Vec::with_capacity(truth.len());
    for t in truth {
        let best = detected
            .iter()
            .enumerate()
            .filter(|(i, d)| {
                !used[*i] && d.from == t.from && d.to == t.to && (d.time - t.time).abs() <= horizon
            })
            .min_by(|a, b| {
                (a.1.time - t.time)
                    .abs()
                    .total_cmp(&(b.1.time - t.time).abs())
            });
        let (detected_time, delay) = match best {
            Some((i, d)) => {
                used[i] = true;
                (Some(d.time), Some(d.time - t.time))
            }
            None => (None, None),
        };
        delays.push(DelayRecord {
            from: t.from,
            to: t.to,
            true_time: t.time,
            detected_time,
            delay,
        });
    }
    let false_detections = detected
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(d, _)| d.clone())
        .collect();
    (delays, false_detections)
}

/// Feeds a decision stream through a fresh coordinator.
pub fn replay_decisions(
    fsm: &FsmDefinition,
    cfg: &CoordinatorConfig,
    decisions: &[(usize, f64)],
) -> Result<(Coordinator, Vec<Outcome>)> {
    let mut coord = Coordinator::new(fsm.clone(), cfg.clone());
    let outcomes = decisions
        .iter()
        .map(|&(c, t)| coord.step(c, t, None))
        .collect::<Result<Vec<_>>>()?;
    Ok((coord, outcomes))
}

/// Baseline trace cleaning: a change to a new state is reported at the
/// first of `persistence` consecutive windows showing it.
pub fn baseline_transitions(
    states: &[(usize, f64)],
    initial: usize,
    persistence: usize,
) -> Vec<StateChange> {
    let mut current = initial;
    let mut out = Vec::new();
    let mut run: Option<(usize, f64, usize)> = None;
    for &(s, t) in states {
        if s == current {
            run = None;
            continue;
        }
        let next = match run {
            Some((rs, rt, n)) if rs == s => (rs, rt, n + 1),
            _ => (s, t, 1),
        };
        if next.2 >= persistence {
            out.push(StateChange {
                from: current,
                to: s,
                time: next.1,
            });
            current = s;
            run = None;
        } else {
            run = Some(next);
        }
    }
    out
}

/// Checks that every change follows a defined transition from the state the
/// previous change reached, starting at the initial state.
pub fn validate_path(fsm: &FsmDefinition, changes: &[StateChange]) -> Result<()> {
    let mut x = fsm.initial();
    for (i, c) in changes.iter().enumerate() {
        let ok = c.from == x
            && fsm
                .transitions()
                .any(|(from, e, to)| from == c.from && to == c.to && fsm.is_active(from, e));
        if !ok {
            return Err(Error::Fsm(format!(
                "change {i} ({} -> {}) is not a permitted transition",
                c.from, c.to
            )));
        }
        x = c.to;
    }
    Ok(())
}

fn emissions(
    trial: &TrialRecording,
    cfg: &EvalConfig,
    windowing: WindowingConfig,
) -> Result<Vec<WindowSequence>> {
    let signal = denoise(&trial.samples, cfg.filter)?;
    let mut part = Partitioner::new(WindowingConfig {
        fs: trial.fs,
        ..windowing
    })?;
    Ok(part.push_samples(&signal))
}

fn parallel_argmax<F>(seqs: &[WindowSequence], run: F) -> Result<Vec<usize>>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    let parts = seqs
        .par_chunks(INFER_CHUNK)
        .map(|chunk| {
            let data: Vec<f64> = chunk
                .iter()
                .flat_map(|s| s.data.data().iter().copied())
                .collect();
            let [n, k, w] = [
                chunk[0].data.shape()[0],
                chunk[0].data.shape()[1],
                chunk[0].data.shape()[2],
            ];
            let x = Tensor::new(&[chunk.len() * n, k, w], data)?;
            Ok(run(&x)?.argmax_rows())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Replays `trial` through partitioner, encoder-classifier, and coordinator.
pub fn simulate_deployment(
    model: &EncoderClassifier,
    fsm: &FsmDefinition,
    name: &str,
    trial: &TrialRecording,
    cfg: &EvalConfig,
) -> Result<SimulationReport> {
    cfg.validate()?;
    if fsm.classes() != CLASSES {
        return Err(Error::Fsm(format!(
            "FSM maps {} classes but the model emits {CLASSES}",
            fsm.classes()
        )));
    }
    let seqs = emissions(trial, cfg, cfg.windowing.clone())?;
    let classes = parallel_argmax(&seqs, |x| model.infer_batch(x))?;
    let mut coord = Coordinator::new(fsm.clone(), cfg.coordinator.clone());
    let mut decisions = Vec::with_capacity(seqs.len());
    for (seq, &class) in seqs.iter().zip(&classes) {
        let outcome = coord.step(class, seq.end_time, Some(seq))?;
        decisions.push(DecisionRecord {
            end_index: seq.end_index,
            end_time: seq.end_time,
            class,
            outcome: outcome.label().to_string(),
        });
    }
    let transitions: Vec<StateChange> = coord
        .history()
        .iter()
        .map(|t| StateChange {
            from: t.from,
            to: t.to,
            time: t.time,
        })
        .collect();
    let (delays, false_detections) =
        match_transitions(&true_changes(trial), &transitions, cfg.horizon);
    Ok(SimulationReport {
        trial: name.to_string(),
        states: fsm.states().to_vec(),
        decisions,
        transitions,
        delays,
        false_detections,
        incidents: coord.incidents().cloned().collect(),
        dropped_incidents: coord.dropped_incidents(),
        config: SimulationConfigEcho {
            system: "proposed".into(),
            stride: cfg.windowing.stride(),
            epsilon: cfg.epsilon,
            horizon: cfg.horizon,
            model_hash: model.parameter_hash(),
        },
    })
}

/// Classifies the most recent single window at every decision stride with
/// the four-state upstream network and reports argmax state changes, with
/// no FSM guard.
pub fn run_baseline(
    upstream: &Network,
    fsm: &FsmDefinition,
    name: &str,
    trial: &TrialRecording,
    cfg: &EvalConfig,
) -> Result<SimulationReport> {
    cfg.validate()?;
    if fsm.states().len() != STATES {
        return Err(Error::Fsm(format!(
            "baseline predicts {STATES} states but the FSM declares {}",
            fsm.states().len()
        )));
    }
    let windowing = WindowingConfig {
        n: 1,
        ..cfg.windowing.clone()
    };
    let seqs = emissions(trial, cfg, windowing)?;
    let classes = parallel_argmax(&seqs, |x| {
        upstream.infer(&pack_windows(x.data().chunks(x.shape()[2]))?)
    })?;
    let trace: Vec<(usize, f64)> = seqs
        .iter()
        .zip(&classes)
        .map(|(s, &c)| (c, s.end_time))
        .collect();
    let transitions = baseline_transitions(&trace, fsm.initial(), cfg.baseline_persistence);
    let decisions = seqs
        .iter()
        .zip(&classes)
        .map(|(s, &c)| DecisionRecord {
            end_index: s.end_index,
            end_time: s.end_time,
            class: c,
            outcome: "raw".into(),
        })
        .collect();
    let (delays, false_detections) =
        match_transitions(&true_changes(trial), &transitions, cfg.horizon);
    Ok(SimulationReport {
        trial: name.to_string(),
        states: fsm.states().to_vec(),
        decisions,
        transitions,
        delays,
        false_detections,
        incidents: Vec::new(),
        dropped_incidents: 0,
        config: SimulationConfigEcho {
            system: "baseline".into(),
            stride: cfg.windowing.stride(),
            epsilon: cfg.epsilon,
            horizon: cfg.horizon,
            model_hash: network_hash(upstream),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCheck {
    pub from: usize,
    pub to: usize,
    pub delay: Option<f64>,
    pub pass: bool,
}

/// A transition passes when it was detected with a delay of at most
/// `epsilon` seconds.
pub fn check_delay_budget(report: &SimulationReport, epsilon: f64) -> Vec<BudgetCheck> {
    report
        .delays
        .iter()
        .map(|d| BudgetCheck {
            from: d.from,
            to: d.to,
            delay: d.delay,
            pass: d.delay.is_some_and(|v| v <= epsilon),
        })
        .collect()
}

/// Aligned delay table: one row per true transition, one column per trial,
/// and the mean absolute delay over all matched transitions.
pub fn delay_table(reports: &[SimulationReport]) -> String {
    let mut reports: Vec<&SimulationReport> = reports.iter().collect();
    reports.sort_by(|a, b| a.trial.cmp(&b.trial));
    let Some(first) = reports.first() else {
        return "no trials\n".into();
    };
    let label = |d: &DelayRecord| format!("{} -> {}", first.states[d.from], first.states[d.to]);
    let width = first
        .delays
        .iter()
        .map(|d| label(d).len())
        .max()
        .unwrap_or(10)
        .max(10);
    let cols: Vec<usize> = reports.iter().map(|r| r.trial.len().max(8)).collect();
    let mut out = format!("{:<width$}", "transition");
    for (r, c) in reports.iter().zip(&cols) {
        let _ = write!(out, "  {:>c$}", r.trial);
    }
    out.push('\n');
    for (row, d) in first.delays.iter().enumerate() {
        let _ = write!(out, "{:<width$}", label(d));
        for (r, c) in reports.iter().zip(&cols) {
            let cell = match r.delays.get(row).and_then(|d| d.delay) {
                Some(v) => format!("{v:+.3}"),
                None => "missed".into(),
            };
            let _ = write!(out, "  {cell:>c$}");
        }
        out.push('\n');
    }
    let spurious: usize = reports.iter().map(|r| r.false_detections.len()).sum();
    match mean_abs(reports.iter().flat_map(|r| r.matched_delays())) {
        Some(m) => {
            let _ = writeln!(out, "mean |delay| {m:.3} s");
        }
        None => out.push_str("mean |delay| n/a\n"),
    }
    let _ = writeln!(out, "unmatched detections {spurious}");
    out
}

/// Mean absolute matched delay over a set of reports.
pub fn suite_mean_abs_delay(reports: &[SimulationReport]) -> Option<f64> {
    mean_abs(reports.iter().flat_map(|r| r.matched_delays()))
}
