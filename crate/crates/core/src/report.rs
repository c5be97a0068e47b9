//! Run report: configuration echo, per-item records, metric block, and
//! timing summary, serialized as versioned JSON.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::PopeSubset;
use crate::config::{DefenseKind, RunConfig};
use crate::memory::AgentMemory;
use crate::metrics::{
    amber_scores, mme_scores, pope_scores, AmberScore, MetricsError, MmeJudgment, MmeScore,
    PopeScore,
};
use crate::suite::BackendDescriptor;
use crate::types::{Answer, FinalAnswer, GroundTruth, TaskKind, YesNo};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Pope,
    Mme,
    Amber,
}

impl BenchKind {
    pub fn task(self) -> TaskKind {
        match self {
            BenchKind::Pope | BenchKind::Mme => TaskKind::Vqa,
            BenchKind::Amber => TaskKind::Captioning,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::Pope => "pope",
            BenchKind::Mme => "mme",
            BenchKind::Amber => "amber",
        }
    }
}

impl std::str::FromStr for BenchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pope" => Ok(BenchKind::Pope),
            "mme" => Ok(BenchKind::Mme),
            "amber" => Ok(BenchKind::Amber),
            other => Err(format!("unknown benchmark '{other}'")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no items")]
    NoItems,
    #[error("unsupported report schema version {0}")]
    SchemaVersion(u32),
    #[error("record {item_id}: {message}")]
    Record { item_id: String, message: String },
    #[error("metric mismatch on {metric}: embedded {embedded}, recomputed {recomputed}")]
    Mismatch {
        metric: String,
        embedded: String,
        recomputed: String,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot parse report {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Echo of everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub task: TaskKind,
    pub bench: BenchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<PopeSubset>,
    pub defense: DefenseKind,
    pub attacked: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<usize>,
    pub run: RunConfig,
    pub backends: Vec<BackendDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub image_id: String,
    pub answer: Answer,
    pub ground_truth: GroundTruth,
    pub iterations_used: u32,
    pub query_count: u32,
    pub degraded: bool,
    pub trace: AgentMemory,
}

impl ItemRecord {
    pub fn new(image_id: impl Into<String>, ground_truth: GroundTruth, answer: FinalAnswer) -> Self {
        Self {
            item_id: answer.item_id,
            image_id: image_id.into(),
            answer: answer.answer,
            ground_truth,
            iterations_used: answer.iterations_used,
            query_count: answer.query_count,
            degraded: answer.degraded,
            trace: answer.trace,
        }
    }

    /// Sum of backend latencies recorded in the trace.
    pub fn latency_ms(&self) -> u64 {
        self.trace.responses().map(|r| r.latency_ms).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bench", rename_all = "snake_case")]
pub enum MetricBlock {
    Pope(PopeScore),
    Mme(MmeScore),
    Amber(AmberScore),
}

impl MetricBlock {
    fn fields(&self) -> Vec<(&'static str, f64)> {
        match self {
            MetricBlock::Pope(s) => vec![
                ("pope.accuracy", s.accuracy),
                ("pope.f1", s.f1),
                ("pope.yes_ratio", s.yes_ratio),
            ],
            MetricBlock::Mme(s) => vec![
                ("mme.acc", s.acc),
                ("mme.acc_plus", s.acc_plus),
                ("mme.total", s.total),
            ],
            MetricBlock::Amber(s) => vec![
                ("amber.chair", s.chair),
                ("amber.cover", s.cover),
                ("amber.hal", s.hal),
                ("amber.cog", s.cog),
            ],
        }
    }

    fn bench_name(&self) -> &'static str {
        match self {
            MetricBlock::Pope(_) => "pope",
            MetricBlock::Mme(_) => "mme",
            MetricBlock::Amber(_) => "amber",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub items: usize,
    pub total_ms: u64,
    pub max_item_ms: u64,
    pub mean_item_ms: f64,
}

impl LatencySummary {
    pub fn from_records(records: &[ItemRecord]) -> Self {
        let per_item: Vec<u64> = records.iter().map(ItemRecord::latency_ms).collect();
        let total_ms: u64 = per_item.iter().sum();
        let mean_item_ms = if per_item.is_empty() {
            0.0
        } else {
            (total_ms as f64 / per_item.len() as f64 * 10.0).round() / 10.0
        };
        Self {
            items: per_item.len(),
            total_ms,
            max_item_ms: per_item.iter().copied().max().unwrap_or(0),
            mean_item_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Omitted when every backend is scripted, so replays are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
    pub latency: LatencySummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    /// Sorted by `item_id`.
    pub records: Vec<ItemRecord>,
    pub metrics: MetricBlock,
    pub timing: Timing,
}

fn presence(record: &ItemRecord) -> Result<(YesNo, YesNo), ReportError> {
    let err = |message: &str| ReportError::Record {
        item_id: record.item_id.clone(),
        message: message.to_string(),
    };
    let pred = match record.answer {
        Answer::Presence(p) => p,
        Answer::Caption { .. } => return Err(err("expected a yes/no answer")),
    };
    let label = match record.ground_truth {
        GroundTruth::Presence(l) => l,
        GroundTruth::Annotations(_) => return Err(err("expected a yes/no ground truth")),
    };
    Ok((pred, label))
}

/// Scores per-item records for the given benchmark.
pub fn score_records(bench: BenchKind, records: &[ItemRecord]) -> Result<MetricBlock, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoItems);
    }
    match bench {
        BenchKind::Pope => {
            let (preds, labels): (Vec<_>, Vec<_>) = records
                .iter()
                .map(presence)
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .unzip();
            Ok(MetricBlock::Pope(pope_scores(&preds, &labels)?))
        }
        BenchKind::Mme => {
            let judgments = records
                .iter()
                .map(|r| {
                    presence(r).map(|(prediction, label)| MmeJudgment {
                        image_id: r.image_id.clone(),
                        prediction,
                        label,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(MetricBlock::Mme(mme_scores(&judgments)?))
        }
        BenchKind::Amber => {
            let mut mentioned: Vec<BTreeSet<String>> = Vec::with_capacity(records.len());
            let mut annotations = Vec::with_capacity(records.len());
            for r in records {
                let err = |message: &str| ReportError::Record {
                    item_id: r.item_id.clone(),
                    message: message.to_string(),
                };
                match (&r.answer, &r.ground_truth) {
                    (Answer::Caption { objects, .. }, GroundTruth::Annotations(a)) => {
                        mentioned.push(objects.clone());
                        annotations.push(a.clone());
                    }
                    _ => return Err(err("expected a caption answer with annotations")),
                }
            }
            Ok(MetricBlock::Amber(amber_scores(&mentioned, &annotations)?))
        }
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes via a temporary file in the destination directory and a rename.
    pub fn write_atomic(&self, path: &Path) -> Result<(), ReportError> {
        let io = |source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(self.to_json().as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let report: RunReport = serde_json::from_str(&raw).map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(ReportError::SchemaVersion(report.schema_version));
        }
        Ok(report)
    }

    /// Recomputes metrics from the records and compares them with the
    /// embedded block field by field.
    pub fn rescore(&self) -> Result<MetricBlock, ReportError> {
        let recomputed = score_records(self.config.bench, &self.records)?;
        if recomputed.bench_name() != self.metrics.bench_name() {
            return Err(ReportError::Mismatch {
                metric: "bench".into(),
                embedded: self.metrics.bench_name().into(),
                recomputed: recomputed.bench_name().into(),
            });
        }
        for ((metric, embedded), (_, fresh)) in self.metrics.fields().into_iter().zip(recomputed.fields()) {
            if embedded != fresh {
                return Err(ReportError::Mismatch {
                    metric: metric.into(),
                    embedded: format!("{embedded:.1}"),
                    recomputed: format!("{fresh:.1}"),
                });
            }
        }
        Ok(recomputed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DecisionKind, DecisionRecord};

    fn record(id: &str, image: &str, pred: YesNo, label: YesNo) -> ItemRecord {
        let mut trace = AgentMemory::default();
        trace.append(DecisionRecord {
            kind: DecisionKind::Finalize,
            iteration: 1,
            reason: "test".into(),
        });
        ItemRecord {
            item_id: id.into(),
            image_id: image.into(),
            answer: Answer::Presence(pred),
            ground_truth: GroundTruth::Presence(label),
            iterations_used: 1,
            query_count: 2,
            degraded: false,
            trace,
        }
    }

    fn report(records: Vec<ItemRecord>) -> RunReport {
        let metrics = score_records(BenchKind::Pope, &records).unwrap();
        RunReport {
            schema_version: SCHEMA_VERSION,
            config: ConfigEcho {
                task: TaskKind::Vqa,
                bench: BenchKind::Pope,
                subset: Some(PopeSubset::Random),
                defense: DefenseKind::None,
                attacked: false,
                seed: 0,
                sample: None,
                run: RunConfig::default(),
                backends: Vec::new(),
            },
            timing: Timing {
                wall_clock_ms: None,
                latency: LatencySummary::from_records(&records),
            },
            records,
            metrics,
        }
    }

    #[test]
    fn untouched_report_rescoring_matches() {
        let r = report(vec![
            record("a", "i1", YesNo::Yes, YesNo::Yes),
            record("b", "i1", YesNo::No, YesNo::Yes),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        r.write_atomic(&path).unwrap();
        let loaded = RunReport::load(&path).unwrap();
        assert_eq!(loaded, r);
        assert_eq!(loaded.rescore().unwrap(), r.metrics);
    }

    #[test]
    fn flipped_prediction_is_detected() {
        let mut r = report(vec![
            record("a", "i1", YesNo::Yes, YesNo::Yes),
            record("b", "i1", YesNo::No, YesNo::No),
        ]);
        r.records[0].answer = Answer::Presence(YesNo::No);
        match r.rescore().unwrap_err() {
            ReportError::Mismatch { metric, .. } => assert_eq!(metric, "pope.accuracy"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn empty_records_error() {
        let mut r = report(vec![record("a", "i1", YesNo::Yes, YesNo::Yes)]);
        r.records.clear();
        assert_eq!(r.rescore().unwrap_err().to_string(), "no items");
    }

    #[test]
    fn mme_scoring_pairs_by_image() {
        let records = vec![
            record("m0", "x", YesNo::Yes, YesNo::Yes),
            record("m1", "x", YesNo::No, YesNo::No),
            record("m2", "y", YesNo::Yes, YesNo::No),
            record("m3", "y", YesNo::No, YesNo::No),
        ];
        let MetricBlock::Mme(s) = score_records(BenchKind::Mme, &records).unwrap() else {
            panic!("expected mme block")
        };
        assert_eq!((s.acc, s.acc_plus, s.total), (75.0, 50.0, 125.0));
    }
}
