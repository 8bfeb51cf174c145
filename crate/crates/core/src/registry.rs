//! Per-execution component registry and trace collection.
//!
//! One registry belongs to exactly one `(task, repeat)` execution. Every
//! component registers here during Setup and emits its events here; Collect
//! groups the events by component. Sequence numbers come from a
//! per-registry counter, never from wall-clock time.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::HarnessError;
use crate::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Agent,
    Model,
    Tool,
    User,
    Environment,
    Simulator,
    Evaluator,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 7] = [
        ComponentKind::Agent,
        ComponentKind::Model,
        ComponentKind::Tool,
        ComponentKind::User,
        ComponentKind::Environment,
        ComponentKind::Simulator,
        ComponentKind::Evaluator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Agent => "agent",
            ComponentKind::Model => "model",
            ComponentKind::Tool => "tool",
            ComponentKind::User => "user",
            ComponentKind::Environment => "environment",
            ComponentKind::Simulator => "simulator",
            ComponentKind::Evaluator => "evaluator",
        }
    }
}

impl FromStr for ComponentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| HarnessError::config(format!("unknown component kind {s:?}")))
    }
}

/// Identity of a registered component, rendered `kind:name#ordinal`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentId {
    pub kind: ComponentKind,
    pub name: String,
    pub ordinal: u32,
}

impl ComponentId {
    pub fn new(kind: ComponentKind, name: impl Into<String>, ordinal: u32) -> Self {
        Self {
            kind,
            name: name.into(),
            ordinal,
        }
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}#{}", self.kind.as_str(), self.name, self.ordinal)
    }
}

impl FromStr for ComponentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::config(format!("malformed component id {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let (name, ordinal) = rest.rsplit_once('#').ok_or_else(bad)?;
        Ok(Self {
            kind: kind.parse()?,
            name: name.to_string(),
            ordinal: ordinal.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for ComponentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A trace event as emitted inside an execution context.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub seq: u64,
    pub component: ComponentId,
    pub event_kind: String,
    pub payload: Document,
    pub task_id: String,
    pub repeat_idx: u32,
}

/// Serialized form of an event inside `Report.traces`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub seq: u64,
    pub event_kind: String,
    pub payload: Document,
}

/// Events grouped by component, each list ordered by `seq`.
pub type Traces = BTreeMap<ComponentId, Vec<TraceRecord>>;

/// Declared configuration per component (only components that declare any).
pub type ConfigSnapshot = BTreeMap<ComponentId, Document>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Collected {
    pub traces: Traces,
    pub config: ConfigSnapshot,
}

#[derive(Debug, Default)]
struct RegistryState {
    components: Vec<(ComponentId, Document)>,
    ordinals: HashMap<(ComponentKind, String), u32>,
    events: Vec<TraceEvent>,
    next_seq: u64,
}

#[derive(Debug)]
pub struct ComponentRegistry {
    task_id: String,
    repeat_idx: u32,
    state: Mutex<RegistryState>,
}

impl ComponentRegistry {
    pub fn new(task_id: impl Into<String>, repeat_idx: u32) -> Self {
        Self {
            task_id: task_id.into(),
            repeat_idx,
            state: Mutex::new(RegistryState::default()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, RegistryState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn repeat_idx(&self) -> u32 {
        self.repeat_idx
    }

    /// Registers a component under the smallest unused ordinal for
    /// `(kind, name)` and records its configuration.
    pub fn register(&self, kind: ComponentKind, name: &str, config: Document) -> ComponentId {
        let mut state = self.lock();
        let slot = state.ordinals.entry((kind, name.to_string())).or_insert(0);
        let id = ComponentId::new(kind, name, *slot);
        *slot += 1;
        state.components.push((id.clone(), config));
        id
    }

    pub fn is_registered(&self, component: &ComponentId) -> bool {
        self.lock().components.iter().any(|(c, _)| c == component)
    }

    pub fn emit(
        &self,
        component: &ComponentId,
        event_kind: &str,
        payload: Document,
    ) -> Result<TraceEvent, HarnessError> {
        let mut state = self.lock();
        if !state.components.iter().any(|(c, _)| c == component) {
            return Err(HarnessError::config(format!(
                "component {component} is not registered in this execution context"
            ))
            .with_component(component));
        }
        let event = TraceEvent {
            seq: state.next_seq,
            component: component.clone(),
            event_kind: event_kind.to_string(),
            payload,
            task_id: self.task_id.clone(),
            repeat_idx: self.repeat_idx,
        };
        state.next_seq += 1;
        state.events.push(event.clone());
        Ok(event)
    }

    pub fn component_ids(&self) -> Vec<ComponentId> {
        self.lock().components.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.lock().events.clone()
    }

    pub fn collect(&self) -> Collected {
        let state = self.lock();
        let mut collected = Collected::default();
        for (id, config) in &state.components {
            collected.traces.entry(id.clone()).or_default();
            if !config.is_empty() {
                collected.config.insert(id.clone(), config.clone());
            }
        }
        // events are stored in emission order, which is seq order
        for event in &state.events {
            collected
                .traces
                .entry(event.component.clone())
                .or_default()
                .push(TraceRecord {
                    seq: event.seq,
                    event_kind: event.event_kind.clone(),
                    payload: event.payload.clone(),
                });
        }
        collected
    }

    pub fn clear(&self) {
        *self.lock() = RegistryState::default();
    }

    pub fn is_empty(&self) -> bool {
        let state = self.lock();
        state.components.is_empty() && state.events.is_empty()
    }
}
