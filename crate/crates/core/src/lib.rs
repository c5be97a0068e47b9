//! Training-free action-critique loop that cross-checks a plug-in
//! vision-language model against a suite of auxiliary vision models, plus
//! the defenses, benchmark loaders, and metrics used to evaluate it.

pub mod agent_loop;
pub mod bench;
pub mod config;
pub mod defense;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod reasoner;
pub mod report;
pub mod suite;
pub mod types;

pub use config::{ConfigError, ConfigErrors, DefenseKind, RunConfig, TiePolicy};
pub use memory::{AgentMemory, EntryFilter, EntryKind, MemoryEntry};
pub use reasoner::{Reasoner, RuleReasoner};
pub use suite::{BackendDescriptor, QueryRequest, SuiteRegistry};
pub use types::*;
