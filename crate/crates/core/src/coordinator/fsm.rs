//! FSM definition files.
//!
//! ```json
//! {
//!   "states": ["NoInt", "Entry"],
//!   "events": ["e_NoInt_Entry"],
//!   "initial": "NoInt",
//!   "transitions": [{ "from": "NoInt", "event": "e_NoInt_Entry", "to": "Entry" }],
//!   "class_map": { "0": "NoInt", "1": "Entry", "2": "e_NoInt_Entry" },
//!   "active_events": { "NoInt": ["e_NoInt_Entry"] }
//! }
//! ```
//!
//! `active_events` is optional. Without it an event is active in a state
//! exactly when a transition is defined for the pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The milling definition shipped with the crate.
pub const MILLING_FSM_JSON: &str = include_str!("../../assets/milling.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub from: String,
    pub event: String,
    pub to: String,
}

/// On-disk form of an FSM definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsmFile {
    pub states: Vec<String>,
    pub events: Vec<String>,
    pub initial: String,
    pub transitions: Vec<TransitionSpec>,
    pub class_map: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_events: Option<BTreeMap<String, Vec<String>>>,
}

/// What a classifier class stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "index")]
pub enum ClassTarget {
    State(usize),
    Event(usize),
}

/// A validated FSM. States and events are referred to by index.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmDefinition {
    states: Vec<String>,
    events: Vec<String>,
    initial: usize,
    transitions: BTreeMap<(usize, usize), usize>,
    active: Vec<BTreeSet<usize>>,
    class_map: Vec<ClassTarget>,
    source: FsmFile,
}

fn index_names(kind: &str, names: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::Fsm(format!("{kind} {i} has an empty name")));
        }
        if map.insert(n.clone(), i).is_some() {
            return Err(Error::Fsm(format!("duplicate {kind} {n:?}")));
        }
    }
    Ok(map)
}

impl FsmDefinition {
    pub fn from_file(file: FsmFile) -> Result<Self> {
        if file.states.is_empty() {
            return Err(Error::Fsm("state set is empty".into()));
        }
        let states = index_names("state", &file.states)?;
        let events = index_names("event", &file.events)?;
        if let Some(n) = file.events.iter().find(|e| states.contains_key(*e)) {
            return Err(Error::Fsm(format!(
                "{n:?} is declared as both a state and an event"
            )));
        }
        let state = |n: &str, ctx: &str| {
            states
                .get(n)
                .copied()
                .ok_or_else(|| Error::Fsm(format!("{ctx} refers to undeclared state {n:?}")))
        };
        let event = |n: &str, ctx: &str| {
            events
                .get(n)
                .copied()
                .ok_or_else(|| Error::Fsm(format!("{ctx} refers to undeclared event {n:?}")))
        };
        let initial = state(&file.initial, "initial")?;

        let mut transitions = BTreeMap::new();
        for (i, t) in file.transitions.iter().enumerate() {
            let ctx = format!("transition {i}");
            let key = (state(&t.from, &ctx)?, event(&t.event, &ctx)?);
            let to = state(&t.to, &ctx)?;
            if let Some(prev) = transitions.insert(key, to) {
                return Err(Error::Fsm(format!(
                    "{ctx}: f({}, {}) is defined twice (-> {} and -> {})",
                    t.from, t.event, file.states[prev], t.to
                )));
            }
        }

        let mut active = vec![BTreeSet::new(); file.states.len()];
        match &file.active_events {
            None => {
                for &(x, e) in transitions.keys() {
                    active[x].insert(e);
                }
            }
            Some(map) => {
                for (s, evs) in map {
                    let x = state(s, "active_events")?;
                    for e in evs {
                        active[x].insert(event(e, &format!("active_events[{s:?}]"))?);
                    }
                }
                for &(x, e) in transitions.keys() {
                    if !active[x].contains(&e) {
                        return Err(Error::Fsm(format!(
                            "f({}, {}) is defined but {} is not in the active events of {}",
                            file.states[x], file.events[e], file.events[e], file.states[x]
                        )));
                    }
                }
            }
        }

        let q = file.class_map.len();
        let mut class_map = vec![None; q];
        for (key, name) in &file.class_map {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::Fsm(format!("class_map key {key:?} is not a class index")))?;
            if idx >= q {
                return Err(Error::Fsm(format!(
                    "class_map has {q} entries, so keys must be 0..{}; found {idx}",
                    q.saturating_sub(1)
                )));
            }
            let target = match (states.get(name), events.get(name)) {
                (Some(&x), _) => ClassTarget::State(x),
                (_, Some(&e)) => ClassTarget::Event(e),
                _ => {
                    return Err(Error::Fsm(format!(
                        "class_map[{key}] names unknown state or event {name:?}"
                    )))
                }
            };
            if class_map[idx].is_some() {
                return Err(Error::Fsm(format!("class_map index {idx} appears twice")));
            }
            class_map[idx] = Some(target);
        }
        let class_map: Vec<ClassTarget> = class_map
            .into_iter()
            .map(|c| c.expect("all keys in 0..q"))
            .collect();
        let mut seen = BTreeSet::new();
        for (i, t) in class_map.iter().enumerate() {
            if !seen.insert(*t) {
                return Err(Error::Fsm(format!(
                    "class_map[{i}] maps to a name already used by another class"
                )));
            }
        }
        for x in 0..file.states.len() {
            if !seen.contains(&ClassTarget::State(x)) {
                return Err(Error::Fsm(format!(
                    "state {:?} has no classifier class",
                    file.states[x]
                )));
            }
        }
        for e in 0..file.events.len() {
            if !seen.contains(&ClassTarget::Event(e)) {
                return Err(Error::Fsm(format!(
                    "event {:?} has no classifier class",
                    file.events[e]
                )));
            }
        }

        Ok(Self {
            states: file.states.clone(),
            events: file.events.clone(),
            initial,
            transitions,
            active,
            class_map,
            source: file,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FsmFile = serde_json::from_str(text).map_err(|e| Error::Fsm(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Fsm(m) => Error::Fsm(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn milling() -> Self {
        Self::from_json(MILLING_FSM_JSON).expect("shipped milling FSM is valid")
    }

    pub fn to_file(&self) -> &FsmFile {
        &self.source
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    /// Number of classifier classes, `|X| + |E|`.
    pub fn classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn class_target(&self, class: usize) -> Option<ClassTarget> {
        self.class_map.get(class).copied()
    }

    pub fn class_name(&self, class: usize) -> Option<&str> {
        self.class_target(class).map(|t| self.target_name(t))
    }

    pub fn target_name(&self, t: ClassTarget) -> &str {
        match t {
            ClassTarget::State(x) => &self.states[x],
            ClassTarget::Event(e) => &self.events[e],
        }
    }

    /// Class names in classifier order.
    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes())
            .map(|c| self.class_name(c).unwrap().to_string())
            .collect()
    }

    /// Classifier class standing for state `x`.
    pub fn state_class(&self, x: usize) -> Option<usize> {
        self.class_map
            .iter()
            .position(|&t| t == ClassTarget::State(x))
    }

    pub fn next_state(&self, x: usize, e: usize) -> Option<usize> {
        self.transitions.get(&(x, e)).copied()
    }

    pub fn is_active(&self, x: usize, e: usize) -> bool {
        self.active.get(x).is_some_and(|s| s.contains(&e))
    }

    pub fn active_events(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.active[x].iter().copied()
    }

    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.transitions.iter().map(|(&(x, e), &y)| (x, e, y))
    }
}
