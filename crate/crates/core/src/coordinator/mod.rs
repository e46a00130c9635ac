//! Decision coordinator: an FSM that accepts, holds, or rejects classifier
//! decisions so the committed state trajectory only follows defined
//! transitions.

mod fsm;

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetKind, Sample};
use crate::error::{Error, Result};
use crate::stream::{WindowSequence, WindowingConfig};

pub use fsm::{ClassTarget, FsmDefinition, FsmFile, TransitionSpec, MILLING_FSM_JSON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    /// The decision names a different state without a committed event.
    StateJump,
    /// The event is not active in the current state.
    InactiveEvent,
    /// The event is active but no transition is defined for it.
    UndefinedTransition,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::StateJump => "state-jump",
            RejectReason::InactiveEvent => "inactive-event",
            RejectReason::UndefinedTransition => "undefined-transition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// The event that was just committed, seen again while its windows are
    /// still in the buffer.
    Repeat,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub decision_index: u64,
    pub end_time: f64,
    pub end_index: u64,
    pub state: usize,
    pub proposed_class: usize,
    pub reason: RejectReason,
    pub severity: Severity,
    /// Flattened `n·k·w` samples of the offending sequence, when supplied.
    #[serde(skip)]
    pub window: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: usize,
    pub event: usize,
    pub to: usize,
    pub time: f64,
    pub decision_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Hold,
    Transition(Transition),
    Rejected(Incident),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Hold => "hold",
            Outcome::Transition(_) => "transition",
            Outcome::Rejected(i) => i.reason.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    /// Incidents kept in memory; older ones are dropped first.
    pub incident_capacity: usize,
    /// Also store repeat-severity incidents. They are always counted.
    pub record_repeats: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            incident_capacity: 256,
            record_repeats: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    fsm: FsmDefinition,
    cfg: CoordinatorConfig,
    state: usize,
    last_event: Option<(usize, f64)>,
    last_time: f64,
    decisions: u64,
    history: Vec<Transition>,
    incidents: VecDeque<Incident>,
    dropped: u64,
    repeats: u64,
}

impl Coordinator {
    pub fn new(fsm: FsmDefinition, cfg: CoordinatorConfig) -> Self {
        Self {
            state: fsm.initial(),
            fsm,
            cfg,
            last_event: None,
            last_time: f64::NEG_INFINITY,
            decisions: 0,
            history: Vec::new(),
            incidents: VecDeque::new(),
            dropped: 0,
            repeats: 0,
        }
    }

    pub fn fsm(&self) -> &FsmDefinition {
        &self.fsm
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn state_name(&self) -> &str {
        &self.fsm.states()[self.state]
    }

    /// Last committed event and its time.
    pub fn last_event(&self) -> Option<(usize, f64)> {
        self.last_event
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn history(&self) -> &[Transition] {
        &self.history
    }

    pub fn incidents(&self) -> impl ExactSizeIterator<Item = &Incident> {
        self.incidents.iter()
    }

    /// Incidents evicted because the store was full.
    pub fn dropped_incidents(&self) -> u64 {
        self.dropped
    }

    pub fn repeat_count(&self) -> u64 {
        self.repeats
    }

    /// Applies one classifier decision made at `end_time` seconds.
    pub fn step(
        &mut self,
        decision: usize,
        end_time: f64,
        window: Option<&WindowSequence>,
    ) -> Result<Outcome> {
        let target = self.fsm.class_target(decision).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "decision class {decision} is not in the FSM class map (0..{})",
                self.fsm.classes()
            ))
        })?;
        if end_time.is_nan() || end_time < self.last_time {
            return Err(Error::InvalidArgument(format!(
                "decision time {end_time} precedes previous decision at {}",
                self.last_time
            )));
        }
        let index = self.decisions;
        self.decisions += 1;
        self.last_time = end_time;

        let x = self.state;
        let rejected = match target {
            ClassTarget::State(s) if s == x => return Ok(Outcome::Hold),
            ClassTarget::State(_) => RejectReason::StateJump,
            ClassTarget::Event(e) if !self.fsm.is_active(x, e) => RejectReason::InactiveEvent,
            ClassTarget::Event(e) => match self.fsm.next_state(x, e) {
                None => RejectReason::UndefinedTransition,
                Some(to) => {
                    let t = Transition {
                        from: x,
                        event: e,
                        to,
                        time: end_time,
                        decision_index: index,
                    };
                    self.state = to;
                    self.last_event = Some((e, end_time));
                    self.history.push(t);
                    log::info!(
                        "t={end_time:.3}s {} -[{}]-> {}",
                        self.fsm.states()[x],
                        self.fsm.events()[e],
                        self.fsm.states()[to]
                    );
                    return Ok(Outcome::Transition(t));
                }
            },
        };

        let severity = match (target, self.last_event) {
            (ClassTarget::Event(e), Some((last, _)))
                if rejected == RejectReason::InactiveEvent && e == last =>
            {
                Severity::Repeat
            }
            _ => Severity::Violation,
        };
        let incident = Incident {
            decision_index: index,
            end_time,
            end_index: window.map_or(0, |w| w.end_index),
            state: x,
            proposed_class: decision,
            reason: rejected,
            severity,
            window: window.map(|w| w.data.data().to_vec()),
        };
        match severity {
            Severity::Repeat => {
                self.repeats += 1;
                log::debug!(
                    "t={end_time:.3}s repeated event {} ignored",
                    self.fsm.target_name(target)
                );
            }
            Severity::Violation => log::debug!(
                "t={end_time:.3}s rejected {} in state {}: {}",
                self.fsm.target_name(target),
                self.fsm.states()[x],
                rejected.as_str()
            ),
        }
        if severity == Severity::Violation || self.cfg.record_repeats {
            self.record(incident.clone());
        }
        Ok(Outcome::Rejected(incident))
    }

    fn record(&mut self, incident: Incident) {
        if self.cfg.incident_capacity == 0 {
            self.dropped += 1;
            return;
        }
        if self.incidents.len() == self.cfg.incident_capacity {
            self.incidents.pop_front();
            self.dropped += 1;
        }
        self.incidents.push_back(incident);
    }

    /// Stored incidents as an unreviewed sequence dataset; see
    /// [`incident_dataset`].
    pub fn incident_dataset(&self, windowing: &WindowingConfig) -> Result<Dataset> {
        incident_dataset(self.incidents.iter(), self.fsm.classes(), windowing)
    }

    pub fn export_incidents(&self, windowing: &WindowingConfig, path: &Path) -> Result<usize> {
        let ds = self.incident_dataset(windowing)?;
        ds.save(path)?;
        Ok(ds.len())
    }
}

/// Incidents as an unreviewed sequence dataset. Each record's label is the
/// rejected proposal, for an SME to correct before retraining. Incidents
/// recorded without window data are skipped.
pub fn incident_dataset<'a>(
    incidents: impl IntoIterator<Item = &'a Incident>,
    classes: usize,
    windowing: &WindowingConfig,
) -> Result<Dataset> {
    let mut ds = Dataset::new(DatasetKind::Sequences, classes, windowing.n, windowing.w);
    for inc in incidents {
        let Some(values) = &inc.window else {
            log::warn!(
                "incident {} has no window data; not exported",
                inc.decision_index
            );
            continue;
        };
        ds.push(Sample {
            label: inc.proposed_class,
            reviewed: false,
            source: format!("incident-{}-{}", inc.decision_index, inc.reason.as_str()),
            end_index: inc.end_index,
            values: values.clone(),
        })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const NOINT: usize = 0;
    const ENTRY: usize = 1;
    const CONST: usize = 2;
    const E_NE: usize = 4;
    const E_EC: usize = 5;
    const E_CX: usize = 6;

    fn coord() -> Coordinator {
        Coordinator::new(FsmDefinition::milling(), CoordinatorConfig::default())
    }

    fn reason(o: Outcome) -> RejectReason {
        match o {
            Outcome::Rejected(i) => i.reason,
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn hold_on_current_state() {
        let mut c = coord();
        assert_eq!(c.step(NOINT, 0.0, None).unwrap(), Outcome::Hold);
        assert_eq!(c.state(), NOINT);
    }

    #[test]
    fn event_commits_immediately() {
        let mut c = coord();
        match c.step(E_NE, 12.8, None).unwrap() {
            Outcome::Transition(t) => {
                assert_eq!((t.from, t.to, t.time), (NOINT, ENTRY, 12.8));
            }
            o => panic!("{o:?}"),
        }
        assert_eq!(c.state_name(), "Entry");
        assert_eq!(c.last_event(), Some((0, 12.8)));
    }

    #[test]
    fn state_jump_rejected() {
        let mut c = coord();
        assert_eq!(
            reason(c.step(CONST, 0.0, None).unwrap()),
            RejectReason::StateJump
        );
        assert_eq!(c.state(), NOINT);
        assert_eq!(c.incidents().len(), 1);
    }

    #[test]
    fn inactive_event_rejected() {
        let mut c = coord();
        c.step(E_NE, 1.0, None).unwrap();
        assert_eq!(
            reason(c.step(E_CX, 2.0, None).unwrap()),
            RejectReason::InactiveEvent
        );
        assert_eq!(c.state(), ENTRY);
    }

    #[test]
    fn repeated_event_has_repeat_severity() {
        let mut c = coord();
        c.step(E_NE, 1.0, None).unwrap();
        match c.step(E_NE, 1.1, None).unwrap() {
            Outcome::Rejected(i) => {
                assert_eq!(i.reason, RejectReason::InactiveEvent);
                assert_eq!(i.severity, Severity::Repeat);
            }
            o => panic!("{o:?}"),
        }
        assert_eq!(c.repeat_count(), 1);
        assert_eq!(c.incidents().len(), 0);
        c.step(E_EC, 1.2, None).unwrap();
        match c.step(E_NE, 1.3, None).unwrap() {
            Outcome::Rejected(i) => assert_eq!(i.severity, Severity::Violation),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn undefined_transition_with_explicit_active_set() {
        let mut file: FsmFile = serde_json::from_str(MILLING_FSM_JSON).unwrap();
        let mut active = std::collections::BTreeMap::new();
        active.insert(
            "NoInt".to_string(),
            vec!["e_NoInt_Entry".to_string(), "e_Const_Exit".to_string()],
        );
        active.insert("Entry".to_string(), vec!["e_Entry_Const".to_string()]);
        active.insert("Const".to_string(), vec!["e_Const_Exit".to_string()]);
        file.active_events = Some(active);
        let mut c = Coordinator::new(
            FsmDefinition::from_file(file).unwrap(),
            CoordinatorConfig::default(),
        );
        assert_eq!(
            reason(c.step(E_CX, 0.0, None).unwrap()),
            RejectReason::UndefinedTransition
        );
    }

    #[test]
    fn unmapped_class_and_time_reversal_are_errors() {
        let mut c = coord();
        assert!(c.step(7, 0.0, None).is_err());
        c.step(NOINT, 5.0, None).unwrap();
        assert!(c.step(NOINT, 4.0, None).is_err());
    }

    #[test]
    fn bounded_store_drops_oldest() {
        let mut c = Coordinator::new(
            FsmDefinition::milling(),
            CoordinatorConfig {
                incident_capacity: 3,
                record_repeats: false,
            },
        );
        for i in 0..5 {
            c.step(CONST, i as f64, None).unwrap();
        }
        assert_eq!(c.incidents().len(), 3);
        assert_eq!(c.dropped_incidents(), 2);
        assert_eq!(c.incidents().next().unwrap().decision_index, 2);
    }

    fn seq(end: u64, offset: f64) -> WindowSequence {
        let data: Vec<f64> = (0..2 * 4).map(|i| offset + i as f64).collect();
        WindowSequence {
            data: Tensor::new(&[2, 1, 4], data).unwrap(),
            end_index: end,
            end_time: end as f64 / 250.0,
        }
    }

    #[test]
    fn export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let windowing = WindowingConfig {
            w: 4,
            overlap: 0,
            n: 2,
            ..WindowingConfig::default()
        };
        let mut c = coord();
        let path = dir.path().join("none.csv");
        assert_eq!(c.export_incidents(&windowing, &path).unwrap(), 0);
        let empty = Dataset::load(&path).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.classes, 7);

        let windows = [seq(10, 0.5), seq(20, 1.5), seq(30, 2.5)];
        for (i, w) in windows.iter().enumerate() {
            c.step(CONST, i as f64, Some(w)).unwrap();
        }
        let path = dir.path().join("three.csv");
        assert_eq!(c.export_incidents(&windowing, &path).unwrap(), 3);
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (s, w) in back.samples.iter().zip(&windows) {
            assert_eq!(s.values.as_slice(), w.data.data());
            assert_eq!(s.end_index, w.end_index);
            assert_eq!(s.label, CONST);
            assert!(!s.reviewed);
        }
    }
}
