//! Append-only per-item agent memory.
//!
//! Every response, critique, and decision the loop produces for one
//! benchmark item lands here in order. Nothing is ever removed or rewritten,
//! so a snapshot taken earlier is always a prefix of a later one.

use serde::{Deserialize, Serialize};

use crate::types::{Critique, DecisionRecord, ModelResponse, ModelRole};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum MemoryEntry {
    Response(ModelResponse),
    Critique(Critique),
    Decision(DecisionRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Response,
    Critique,
    Decision,
}

impl MemoryEntry {
    pub fn kind(&self) -> EntryKind {
        match self {
            MemoryEntry::Response(_) => EntryKind::Response,
            MemoryEntry::Critique(_) => EntryKind::Critique,
            MemoryEntry::Decision(_) => EntryKind::Decision,
        }
    }

    /// Role of the backend the entry came from; decisions have none.
    pub fn role(&self) -> Option<ModelRole> {
        match self {
            MemoryEntry::Response(r) => Some(r.role),
            MemoryEntry::Critique(c) => Some(c.source),
            MemoryEntry::Decision(_) => None,
        }
    }

    pub fn iteration(&self) -> u32 {
        match self {
            MemoryEntry::Response(r) => r.iteration,
            MemoryEntry::Critique(c) => c.iteration,
            MemoryEntry::Decision(d) => d.iteration,
        }
    }
}

impl From<ModelResponse> for MemoryEntry {
    fn from(v: ModelResponse) -> Self {
        MemoryEntry::Response(v)
    }
}

impl From<Critique> for MemoryEntry {
    fn from(v: Critique) -> Self {
        MemoryEntry::Critique(v)
    }
}

impl From<DecisionRecord> for MemoryEntry {
    fn from(v: DecisionRecord) -> Self {
        MemoryEntry::Decision(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recorded {
    pub ordinal: u64,
    pub entry: MemoryEntry,
}

/// Selector for [`AgentMemory::filter`]. Unset fields match everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct EntryFilter {
    pub kind: Option<EntryKind>,
    pub role: Option<ModelRole>,
    pub iteration: Option<u32>,
}

impl EntryFilter {
    pub fn kind(kind: EntryKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn role(role: ModelRole) -> Self {
        Self {
            role: Some(role),
            ..Self::default()
        }
    }

    pub fn iteration(iteration: u32) -> Self {
        Self {
            iteration: Some(iteration),
            ..Self::default()
        }
    }

    fn matches(&self, entry: &MemoryEntry) -> bool {
        self.kind.is_none_or(|k| entry.kind() == k)
            && self.role.is_none_or(|r| entry.role() == Some(r))
            && self.iteration.is_none_or(|i| entry.iteration() == i)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentMemory {
    entries: Vec<Recorded>,
}

impl AgentMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its ordinal.
    pub fn append(&mut self, entry: impl Into<MemoryEntry>) -> u64 {
        let ordinal = self.entries.len() as u64;
        self.entries.push(Recorded {
            ordinal,
            entry: entry.into(),
        });
        ordinal
    }

    pub fn get(&self, ordinal: u64) -> Option<&MemoryEntry> {
        self.entries.get(ordinal as usize).map(|r| &r.entry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Recorded] {
        &self.entries
    }

    /// Entries matching `filter`, in append order.
    pub fn filter(&self, filter: EntryFilter) -> Vec<&MemoryEntry> {
        self.entries
            .iter()
            .map(|r| &r.entry)
            .filter(|e| filter.matches(e))
            .collect()
    }

    pub fn responses(&self) -> impl Iterator<Item = &ModelResponse> {
        self.entries.iter().filter_map(|r| match &r.entry {
            MemoryEntry::Response(resp) => Some(resp),
            _ => None,
        })
    }

    pub fn critiques(&self) -> impl Iterator<Item = &Critique> {
        self.entries.iter().filter_map(|r| match &r.entry {
            MemoryEntry::Critique(c) => Some(c),
            _ => None,
        })
    }

    pub fn decisions(&self) -> impl Iterator<Item = &DecisionRecord> {
        self.entries.iter().filter_map(|r| match &r.entry {
            MemoryEntry::Decision(d) => Some(d),
            _ => None,
        })
    }
}
