//! Domain types shared across the suite, reasoner, loop, and harness.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::memory::AgentMemory;

/// The two task shapes the loop knows how to refine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "vqa")]
    Vqa,
    #[serde(rename = "caption")]
    Captioning,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Vqa => "vqa",
            TaskKind::Captioning => "caption",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vqa" => Ok(TaskKind::Vqa),
            "caption" | "captioning" => Ok(TaskKind::Captioning),
            other => Err(format!("unknown task kind '{other}'")),
        }
    }
}

/// Slot a backend fills in the vision-language suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// The model under test whose answers get refined.
    PluginLvlm,
    /// Closed-set detector returning an object list.
    ObjectDetector,
    AuxLvlmA,
    AuxLvlmB,
    /// Vision-language pretraining model answering presence questions.
    VlpVqa,
    Captioner,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::PluginLvlm,
        ModelRole::ObjectDetector,
        ModelRole::AuxLvlmA,
        ModelRole::AuxLvlmB,
        ModelRole::VlpVqa,
        ModelRole::Captioner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::PluginLvlm => "plugin_lvlm",
            ModelRole::ObjectDetector => "object_detector",
            ModelRole::AuxLvlmA => "aux_lvlm_a",
            ModelRole::AuxLvlmB => "aux_lvlm_b",
            ModelRole::VlpVqa => "vlp_vqa",
            ModelRole::Captioner => "captioner",
        }
    }

    /// Roles that must be registered before a run of `task` can start.
    ///
    /// VQA discovery uses whichever of [`ModelRole::discovery_for`] are
    /// registered; captioning needs its full verification panel.
    pub fn mandatory_for(task: TaskKind) -> &'static [ModelRole] {
        match task {
            TaskKind::Vqa => &[ModelRole::PluginLvlm, ModelRole::ObjectDetector],
            TaskKind::Captioning => &[
                ModelRole::PluginLvlm,
                ModelRole::AuxLvlmA,
                ModelRole::AuxLvlmB,
                ModelRole::Captioner,
                ModelRole::VlpVqa,
            ],
        }
    }

    /// Roles asked during cross-model discovery, in query order.
    pub fn discovery_for(task: TaskKind) -> &'static [ModelRole] {
        match task {
            TaskKind::Vqa => &[ModelRole::PluginLvlm, ModelRole::AuxLvlmA, ModelRole::AuxLvlmB],
            TaskKind::Captioning => &[ModelRole::PluginLvlm, ModelRole::AuxLvlmA, ModelRole::VlpVqa],
        }
    }

    /// Roles asked for captions in the initial captioning round.
    pub fn captioners() -> &'static [ModelRole] {
        &[
            ModelRole::PluginLvlm,
            ModelRole::AuxLvlmA,
            ModelRole::AuxLvlmB,
            ModelRole::Captioner,
        ]
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ModelRole::ALL
            .into_iter()
            .find(|r| r.as_str() == norm)
            .ok_or_else(|| format!("unknown model role '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOrigin {
    #[default]
    Clean,
    Defended,
    Adversarial,
}

/// Encoded image bytes plus an access counter.
///
/// Only suite backends are supposed to call [`ImagePayload::bytes`]; the
/// counter lets tests prove the reasoning path never looked at pixels.
#[derive(Debug, Clone, Default)]
pub struct ImagePayload {
    bytes: Arc<Vec<u8>>,
    reads: Arc<AtomicUsize>,
}

impl ImagePayload {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self {
            bytes: Arc::new(bytes),
            reads: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Number of times the payload bytes were handed out, across all clones.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    #[serde(skip)]
    pub payload: ImagePayload,
    #[serde(default)]
    pub origin: ImageOrigin,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>, origin: ImageOrigin) -> Self {
        Self {
            id: id.into(),
            payload: ImagePayload::new(bytes),
            origin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn flip(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }
}

impl fmt::Display for YesNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        })
    }
}

/// A critique's verdict. `Uncertain` is a non-vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yes,
    No,
    Uncertain,
}

impl Decision {
    pub fn as_yes_no(self) -> Option<YesNo> {
        match self {
            Decision::Yes => Some(YesNo::Yes),
            Decision::No => Some(YesNo::No),
            Decision::Uncertain => None,
        }
    }
}

impl From<YesNo> for Decision {
    fn from(v: YesNo) -> Self {
        match v {
            YesNo::Yes => Decision::Yes,
            YesNo::No => Decision::No,
        }
    }
}

/// Ground-truth annotations for one captioning item.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    /// Objects actually present.
    pub truth: BTreeSet<String>,
    /// Hallucination lexicon used by the cognition score.
    pub hallucination: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Presence(YesNo),
    Annotations(AnnotationSet),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub image: ImageRef,
    pub query: String,
    pub task: TaskKind,
    pub ground_truth: GroundTruth,
}

/// One backend's answer to one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub role: ModelRole,
    pub model_id: String,
    pub prompt: String,
    /// Verbatim backend text; empty when `failed` is set.
    pub text: String,
    pub iteration: u32,
    pub latency_ms: u64,
    /// Set when every attempt failed; the loop treats this as no evidence.
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueTarget {
    Object(String),
    Objects(BTreeSet<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub source: ModelRole,
    pub target: CritiqueTarget,
    pub decision: Decision,
    pub rationale: String,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Finalize,
    Continue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub kind: DecisionKind,
    pub iteration: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Presence(YesNo),
    Caption {
        summary: String,
        objects: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub item_id: String,
    pub task: TaskKind,
    pub answer: Answer,
    pub iterations_used: u32,
    /// Wire queries issued for this item.
    pub query_count: u32,
    /// No usable evidence was gathered; the answer came from the tie policy.
    pub degraded: bool,
    pub trace: AgentMemory,
}
