//! The action-critique loop.
//!
//! Each item runs through five subtasks: initial querying, critique,
//! decision, attribute inquiry, and cross-model discovery. The last four
//! repeat until the critiques settle or the iteration limit is reached.
//! Iteration 1 is the initial round; every discovery round adds one.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::config::{RunConfig, TiePolicy};
use crate::memory::AgentMemory;
use crate::reasoner::{presence_question, summary_text, Reasoner, ReasonerError};
use crate::suite::{QueryRequest, SuiteError, SuiteRegistry};
use crate::types::{
    Answer, BenchmarkItem, Critique, CritiqueTarget, Decision, DecisionKind, DecisionRecord,
    FinalAnswer, ModelResponse, ModelRole, TaskKind, YesNo,
};

pub const CAPTION_PROMPT: &str = "Describe the image in detail.";
pub const DETECTOR_PROMPT: &str = "List the objects detected in the image.";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("item {item_id} is a {actual} item, expected {expected}")]
    WrongTask {
        item_id: String,
        expected: TaskKind,
        actual: TaskKind,
    },
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    InitialQuery,
    Critique,
    Decide,
    Inquiry,
    Discovery,
    Done,
}

#[derive(Debug, Clone)]
pub struct LoopState {
    pub task: TaskKind,
    pub phase: Phase,
    pub iteration: u32,
    /// Questions (VQA) or flagged objects (captioning) awaiting discovery.
    pub pending: Vec<String>,
    pub votes: BTreeMap<String, Vec<(ModelRole, Decision)>>,
}

impl LoopState {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            phase: Phase::InitialQuery,
            iteration: 1,
            pending: Vec::new(),
            votes: BTreeMap::new(),
        }
    }

    fn advance(&mut self, next: Phase) {
        debug_assert!(self.phase != Phase::Done, "Done is terminal");
        if next == Phase::Discovery {
            self.iteration += 1;
        }
        self.phase = next;
    }

    fn record(&mut self, key: &str, critique: &Critique) {
        self.votes
            .entry(key.to_string())
            .or_default()
            .push((critique.source, critique.decision));
    }
}

/// Majority over Yes/No votes; `Uncertain` is discarded. Ties and empty
/// input fall to `tie_policy`.
pub fn aggregate_votes(votes: &[Decision], tie_policy: TiePolicy) -> YesNo {
    let yes = votes.iter().filter(|v| **v == Decision::Yes).count();
    let no = votes.iter().filter(|v| **v == Decision::No).count();
    match yes.cmp(&no) {
        std::cmp::Ordering::Greater => YesNo::Yes,
        std::cmp::Ordering::Less => YesNo::No,
        std::cmp::Ordering::Equal => match tie_policy {
            TiePolicy::ConservativeNo => YesNo::No,
            TiePolicy::OptimisticYes => YesNo::Yes,
        },
    }
}

/// Whether the loop can stop after the critiques of the current iteration.
///
/// VQA, first iteration: stop iff both critiques agree and neither is
/// `Uncertain`. VQA, discovery rounds: stop iff the round's usable votes
/// have a strict majority backed by at least `vote_threshold` votes.
/// Captioning: stop iff nothing is left flagged. Always stop at the limit.
pub fn decide_next(critiques: &[Critique], state: &LoopState, config: &RunConfig) -> DecisionRecord {
    let finalize = |reason: String| DecisionRecord {
        kind: DecisionKind::Finalize,
        iteration: state.iteration,
        reason,
    };
    let carry_on = |reason: String| DecisionRecord {
        kind: DecisionKind::Continue,
        iteration: state.iteration,
        reason,
    };

    let settled = match state.task {
        TaskKind::Captioning => {
            if state.pending.is_empty() {
                Some("no flagged objects remain".to_string())
            } else {
                None
            }
        }
        TaskKind::Vqa if state.iteration <= 1 => {
            let first = critiques.first().map(|c| c.decision);
            match first {
                Some(d) if d != Decision::Uncertain && critiques.iter().all(|c| c.decision == d) => {
                    Some(format!("initial critiques agree: {}", label(d)))
                }
                _ => None,
            }
        }
        TaskKind::Vqa => {
            let votes: Vec<Decision> = critiques.iter().map(|c| c.decision).collect();
            let yes = votes.iter().filter(|v| **v == Decision::Yes).count();
            let no = votes.iter().filter(|v| **v == Decision::No).count();
            let (winner, count) = if yes > no {
                (Some(Decision::Yes), yes)
            } else if no > yes {
                (Some(Decision::No), no)
            } else {
                (None, 0)
            };
            match winner {
                Some(w) if count >= config.vote_threshold as usize => Some(format!(
                    "discovery consensus: {} ({count} of {} usable votes)",
                    label(w),
                    yes + no
                )),
                _ => None,
            }
        }
    };

    if let Some(reason) = settled {
        return finalize(reason);
    }
    if state.iteration >= config.max_iterations {
        return finalize(format!(
            "iteration limit {} reached",
            config.max_iterations
        ));
    }
    let summary: Vec<&str> = critiques.iter().map(|c| label(c.decision)).collect();
    match state.task {
        TaskKind::Vqa => carry_on(format!("critiques unsettled ({})", summary.join(", "))),
        TaskKind::Captioning => carry_on(format!(
            "flagged for verification: {}",
            state.pending.join(", ")
        )),
    }
}

fn label(d: Decision) -> &'static str {
    match d {
        Decision::Yes => "yes",
        Decision::No => "no",
        Decision::Uncertain => "uncertain",
    }
}

/// Dispatches on the item's task.
pub fn run_item(
    item: &BenchmarkItem,
    registry: &SuiteRegistry,
    reasoner: &dyn Reasoner,
    config: &RunConfig,
) -> Result<FinalAnswer, LoopError> {
    match item.task {
        TaskKind::Vqa => run_vqa(item, registry, reasoner, config),
        TaskKind::Captioning => run_caption(item, registry, reasoner, config),
    }
}

fn check_task(item: &BenchmarkItem, expected: TaskKind) -> Result<(), LoopError> {
    if item.task != expected {
        return Err(LoopError::WrongTask {
            item_id: item.item_id.clone(),
            expected,
            actual: item.task,
        });
    }
    Ok(())
}

fn append_all(memory: &mut AgentMemory, responses: &[ModelResponse]) {
    for r in responses {
        memory.append(r.clone());
    }
}

pub fn run_vqa(
    item: &BenchmarkItem,
    registry: &SuiteRegistry,
    reasoner: &dyn Reasoner,
    config: &RunConfig,
) -> Result<FinalAnswer, LoopError> {
    check_task(item, TaskKind::Vqa)?;
    registry.require(TaskKind::Vqa)?;
    let target = reasoner.extract_target_object(&item.query)?;
    let discovery_roles = registry.discovery_roles(TaskKind::Vqa);

    let mut memory = AgentMemory::new();
    let mut state = LoopState::new(TaskKind::Vqa);
    let mut query_count = 0u32;
    let mut all_votes: Vec<Decision> = Vec::new();
    let mut asked: BTreeSet<String> = BTreeSet::new();

    // Initial perceptual querying
    let initial = [
        QueryRequest::new(ModelRole::PluginLvlm, TaskKind::Vqa, CAPTION_PROMPT, item.image.clone()),
        QueryRequest::new(ModelRole::ObjectDetector, TaskKind::Vqa, DETECTOR_PROMPT, item.image.clone()),
    ];
    let mut responses = registry.query_all(&initial, state.iteration)?;

    loop {
        query_count += responses.len() as u32;
        append_all(&mut memory, &responses);

        state.advance(Phase::Critique);
        let critiques: Vec<Critique> = responses
            .iter()
            .map(|r| reasoner.critique_existence(&target, r))
            .collect();
        for c in &critiques {
            state.record(&target, c);
            all_votes.push(c.decision);
            memory.append(c.clone());
        }

        state.advance(Phase::Decide);
        let decision = decide_next(&critiques, &state, config);
        let done = decision.kind == DecisionKind::Finalize;
        memory.append(decision);
        if done {
            state.advance(Phase::Done);
            break;
        }

        state.advance(Phase::Inquiry);
        let texts: Vec<&str> = memory
            .responses()
            .filter(|r| !r.failed && r.role != ModelRole::ObjectDetector)
            .map(|r| r.text.as_str())
            .collect();
        let hints = reasoner.extract_attributes(&texts, &target, config.attribute_cap, &asked);
        let mut questions = Vec::with_capacity(hints.len().max(1));
        for h in &hints {
            questions.push(reasoner.formulate_attribute_question(h)?);
            asked.insert(h.attribute.clone());
        }
        if questions.is_empty() {
            questions.push(item.query.clone());
        }
        state.pending = questions;

        state.advance(Phase::Discovery);
        let requests: Vec<QueryRequest> = state
            .pending
            .iter()
            .flat_map(|q| {
                discovery_roles.iter().map(move |role| {
                    QueryRequest::new(*role, TaskKind::Vqa, q.clone(), item.image.clone())
                })
            })
            .collect();
        responses = registry.query_all(&requests, state.iteration)?;
        state.pending.clear();
    }

    let usable = all_votes.iter().any(|v| *v != Decision::Uncertain);
    Ok(FinalAnswer {
        item_id: item.item_id.clone(),
        task: TaskKind::Vqa,
        answer: Answer::Presence(aggregate_votes(&all_votes, config.tie_policy)),
        iterations_used: state.iteration,
        query_count,
        degraded: !usable,
        trace: memory,
    })
}

pub fn run_caption(
    item: &BenchmarkItem,
    registry: &SuiteRegistry,
    reasoner: &dyn Reasoner,
    config: &RunConfig,
) -> Result<FinalAnswer, LoopError> {
    check_task(item, TaskKind::Captioning)?;
    registry.require(TaskKind::Captioning)?;
    let verifiers = ModelRole::discovery_for(TaskKind::Captioning);
    let threshold = config.vote_threshold as usize;

    let mut memory = AgentMemory::new();
    let mut state = LoopState::new(TaskKind::Captioning);

    let template = QueryRequest::new(
        ModelRole::PluginLvlm,
        TaskKind::Captioning,
        item.query.clone(),
        item.image.clone(),
    );
    let captions = registry.query_many(ModelRole::captioners(), &template, state.iteration)?;
    let mut query_count = captions.len() as u32;
    append_all(&mut memory, &captions);

    state.advance(Phase::Critique);
    let usable: Vec<&ModelResponse> = captions.iter().filter(|r| !r.failed).collect();
    let texts: Vec<&str> = usable.iter().map(|r| r.text.as_str()).collect();
    let degraded = usable.len() < 2;
    let mut summary_objects: BTreeSet<String> = BTreeSet::new();
    let mut critiques = Vec::with_capacity(captions.len());

    if degraded {
        for r in &captions {
            critiques.push(Critique {
                source: r.role,
                target: CritiqueTarget::Objects(if r.failed {
                    BTreeSet::new()
                } else {
                    reasoner.extract_objects(&r.text)
                }),
                decision: Decision::Uncertain,
                rationale: format!(
                    "only {} usable caption(s); nothing to cross-check",
                    usable.len()
                ),
                iteration: r.iteration,
            });
        }
    } else {
        let summary = reasoner.summarize_captions(&texts)?;
        let mut usable_idx = 0;
        for r in &captions {
            if r.failed {
                critiques.push(Critique {
                    source: r.role,
                    target: CritiqueTarget::Objects(BTreeSet::new()),
                    decision: Decision::Uncertain,
                    rationale: format!(
                        "{} gave no caption ({})",
                        r.role,
                        r.failure.as_deref().unwrap_or("failed")
                    ),
                    iteration: r.iteration,
                });
                continue;
            }
            let objects = summary.per_caption[usable_idx].clone();
            let sim = summary.similarity[usable_idx];
            let flagged = summary.compromised.contains(&usable_idx);
            usable_idx += 1;
            critiques.push(Critique {
                source: r.role,
                target: CritiqueTarget::Objects(objects),
                decision: if flagged { Decision::No } else { Decision::Yes },
                rationale: if flagged {
                    format!("potential compromised: Jaccard {sim:.2} against the other captions is below 0.2")
                } else {
                    format!("consistent with the other captions (Jaccard {sim:.2})")
                },
                iteration: r.iteration,
            });
        }

        let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
        for set in &summary.per_caption {
            for o in set {
                *counts.entry(o).or_default() += 1;
            }
        }
        state.pending = counts
            .into_iter()
            .filter(|(o, n)| *n >= 2 && !summary.objects.contains(*o))
            .map(|(o, _)| o.clone())
            .collect();
        summary_objects = summary.objects;
    }
    for c in &critiques {
        memory.append(c.clone());
    }

    loop {
        state.advance(Phase::Decide);
        let decision = decide_next(&critiques, &state, config);
        let done = decision.kind == DecisionKind::Finalize;
        memory.append(decision);
        if done {
            state.advance(Phase::Done);
            break;
        }

        // Flagged objects double as the verification questions.
        state.advance(Phase::Inquiry);
        state.advance(Phase::Discovery);
        let requests: Vec<QueryRequest> = state
            .pending
            .iter()
            .flat_map(|obj| {
                verifiers.iter().map(move |role| {
                    QueryRequest::new(
                        *role,
                        TaskKind::Captioning,
                        presence_question(obj),
                        item.image.clone(),
                    )
                })
            })
            .collect();
        let responses = registry.query_all(&requests, state.iteration)?;
        query_count += responses.len() as u32;
        append_all(&mut memory, &responses);

        state.advance(Phase::Critique);
        critiques.clear();
        let mut still_pending = Vec::new();
        let pending = std::mem::take(&mut state.pending);
        for (obj, answers) in pending.iter().zip(responses.chunks(verifiers.len())) {
            let mut yes = 0;
            let mut no = 0;
            for r in answers {
                let decision = if r.failed {
                    Decision::Uncertain
                } else {
                    reasoner.judge_object_in_answer(obj, &r.text)
                };
                match decision {
                    Decision::Yes => yes += 1,
                    Decision::No => no += 1,
                    Decision::Uncertain => {}
                }
                let critique = Critique {
                    source: r.role,
                    target: CritiqueTarget::Object(obj.clone()),
                    decision,
                    rationale: if r.failed {
                        format!("{} gave no answer", r.role)
                    } else {
                        format!("verification answer: {:?}", r.text)
                    },
                    iteration: r.iteration,
                };
                state.record(obj, &critique);
                memory.append(critique.clone());
                critiques.push(critique);
            }
            if yes >= threshold {
                summary_objects.insert(obj.clone());
            } else if no < threshold {
                still_pending.push(obj.clone());
            }
        }
        state.pending = still_pending;
    }

    Ok(FinalAnswer {
        item_id: item.item_id.clone(),
        task: TaskKind::Captioning,
        answer: Answer::Caption {
            summary: summary_text(&summary_objects),
            objects: summary_objects,
        },
        iterations_used: state.iteration,
        query_count,
        degraded,
        trace: memory,
    })
}
