//! Batch evaluation: load a benchmark, wire the suite, apply defenses, run
//! the loop over every item on a worker pool, and assemble a report. Also
//! the standalone `defend` pass that materializes defended images.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_rational::Ratio;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent_loop::{run_item, LoopError};
use crate::bench::{
    load_amber_generative, load_mme_existence, load_pope, parse_amber_generative, sample_pope, BenchError, ImageManifest,
    PopeSubset, DEFAULT_POPE_PER_IMAGE,
};
use crate::config::{ConfigErrors, DefenseKind};
use crate::defense::{apply, defend_image, verify_budget, BudgetOutcome, DefenseError, ImageBuffer};
use crate::reasoner::{DescriptorLexicon, ObjectVocabulary, ReasonerError, RuleReasoner};
use crate::report::{
    score_records, BenchKind, ConfigEcho, ItemRecord, LatencySummary, ReportError, RunReport,
    Timing, SCHEMA_VERSION,
};
use crate::suite::{SuiteConfig, SuiteError};
use crate::types::{BenchmarkItem, ImageOrigin, ImageRef, TaskKind};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("benchmark {bench} needs task {expected}, got {actual}")]
    TaskMismatch {
        bench: &'static str,
        expected: TaskKind,
        actual: TaskKind,
    },
    #[error("the POPE benchmark needs a subset")]
    MissingSubset,
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error("image '{image_id}': {source}")]
    Defense {
        image_id: String,
        #[source]
        source: DefenseError,
    },
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a `run` invocation needs.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub task: TaskKind,
    pub bench: BenchKind,
    pub subset: Option<PopeSubset>,
    /// Overrides the suite config's defense when set.
    pub defense: Option<DefenseKind>,
    pub suite: PathBuf,
    pub data: PathBuf,
    /// Overrides the suite config's seed when set.
    pub seed: Option<u64>,
    /// Worker threads; `None` uses available parallelism.
    pub workers: Option<usize>,
    /// POPE: images to sample (6 questions each). AMBER: entries to sample.
    /// `None` keeps every item.
    pub sample: Option<usize>,
    /// Marks ingested images as adversarial inputs.
    pub attacked: bool,
}

fn load_items(spec: &RunSpec, seed: u64, vocab: &ObjectVocabulary) -> Result<Vec<BenchmarkItem>, HarnessError> {
    let data = &spec.data;
    Ok(match spec.bench {
        BenchKind::Pope => {
            let subset = spec.subset.ok_or(HarnessError::MissingSubset)?;
            let items = load_pope(&data.join(format!("pope_{subset}.jsonl")), subset)?;
            match spec.sample {
                Some(images) => sample_pope(&items, images, DEFAULT_POPE_PER_IMAGE, seed)?,
                None => items,
            }
        }
        BenchKind::Mme => load_mme_existence(&data.join("mme_existence.tsv"))?
            .into_iter()
            .flat_map(|pair| pair.items)
            .collect(),
        BenchKind::Amber => {
            let path = data.join("amber_generative.json");
            match spec.sample {
                Some(n) => load_amber_generative(&path, n, seed, vocab)?,
                None => parse_amber_generative(&path, vocab)?,
            }
        }
    })
}

fn load_reasoner(data: &Path) -> Result<RuleReasoner, HarnessError> {
    let vocab_path = data.join("vocabulary.json");
    let vocab = if vocab_path.is_file() {
        ObjectVocabulary::load(&vocab_path)?
    } else {
        ObjectVocabulary::default()
    };
    let lexicon_path = data.join("lexicon.json");
    let lexicon = if lexicon_path.is_file() {
        DescriptorLexicon::load(&lexicon_path)?
    } else {
        DescriptorLexicon::default()
    };
    Ok(RuleReasoner::new(vocab, lexicon))
}

fn attach_images(
    items: &mut [BenchmarkItem],
    manifest: &ImageManifest,
    defense: DefenseKind,
    attacked: bool,
) -> Result<(), HarnessError> {
    let origin = if attacked { ImageOrigin::Adversarial } else { ImageOrigin::Clean };
    items.par_iter_mut().try_for_each(|item| {
        let bytes = manifest.load(&item.image.id)?;
        let raw = ImageRef::new(item.image.id.clone(), bytes, origin);
        item.image = defend_image(defense, &raw).map_err(|source| HarnessError::Defense {
            image_id: raw.id.clone(),
            source,
        })?;
        Ok(())
    })
}

/// Runs one benchmark end to end and returns the report (not yet written).
pub fn run(spec: &RunSpec) -> Result<RunReport, HarnessError> {
    let started = Instant::now();
    if spec.bench.task() != spec.task {
        return Err(HarnessError::TaskMismatch {
            bench: spec.bench.as_str(),
            expected: spec.bench.task(),
            actual: spec.task,
        });
    }
    let suite = SuiteConfig::load(&spec.suite)?;
    let base_dir = spec.suite.parent().unwrap_or(Path::new("."));
    let mut run_config = suite.run.clone();
    if let Some(d) = spec.defense {
        run_config.defense = d;
    }
    if let Some(s) = spec.seed {
        run_config.seed = s;
    }
    let registry = SuiteConfig {
        run: run_config.clone(),
        ..suite.clone()
    }
    .build_registry(base_dir)?;
    registry.require(spec.task)?;
    let run_config = run_config.validate(registry.discovery_roles(spec.task).len())?;

    let reasoner = load_reasoner(&spec.data)?;
    let mut items = load_items(spec, run_config.seed, reasoner.vocabulary())?;
    let manifest = ImageManifest::discover(&spec.data)?;

    let workers = spec
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;

    let mut records = pool.install(|| -> Result<Vec<ItemRecord>, HarnessError> {
        attach_images(&mut items, &manifest, run_config.defense, spec.attacked)?;
        items
            .par_iter()
            .map(|item| {
                let answer = run_item(item, &registry, &reasoner, &run_config)?;
                Ok(ItemRecord::new(&item.image.id, item.ground_truth.clone(), answer))
            })
            .collect()
    })?;
    records.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    let metrics = score_records(spec.bench, &records)?;
    let wall_clock_ms = (!registry.is_fully_scripted()).then(|| started.elapsed().as_millis() as u64);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: ConfigEcho {
            task: spec.task,
            bench: spec.bench,
            subset: if spec.bench == BenchKind::Pope { spec.subset } else { None },
            defense: run_config.defense,
            attacked: spec.attacked,
            seed: run_config.seed,
            sample: spec.sample,
            backends: suite.backends,
            run: run_config,
        },
        timing: Timing {
            wall_clock_ms,
            latency: LatencySummary::from_records(&records),
        },
        records,
        metrics,
    })
}

/// Parses an epsilon written as `p/q` (or an integer) into `[0, 1]`.
pub fn parse_epsilon(raw: &str) -> Result<Ratio<u32>, String> {
    let (p, q) = match raw.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (raw.trim(), "1"),
    };
    let p: u32 = p.parse().map_err(|_| format!("invalid epsilon numerator in '{raw}'"))?;
    let q: u32 = q.parse().map_err(|_| format!("invalid epsilon denominator in '{raw}'"))?;
    if q == 0 {
        return Err(format!("epsilon '{raw}' has a zero denominator"));
    }
    if p > q {
        return Err(format!("epsilon '{raw}' exceeds 1"));
    }
    Ok(Ratio::new(p, q))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetLine {
    pub file: String,
    pub outcome: BudgetOutcome,
}

#[derive(Debug, Default)]
pub struct DefendSummary {
    pub written: Vec<PathBuf>,
    /// Files that could not be processed, with the reason.
    pub failed: Vec<(String, String)>,
    pub budget: Vec<BudgetLine>,
}

impl DefendSummary {
    pub fn ok(&self) -> bool {
        self.failed.is_empty() && self.budget.iter().all(|b| b.outcome.passed())
    }
}

pub const BUDGET_LOG: &str = "budget_log.tsv";

/// Options for [`defend`].
#[derive(Debug, Clone)]
pub struct DefendSpec {
    pub defense: DefenseKind,
    pub input: PathBuf,
    pub output: PathBuf,
    pub verify_epsilon: Option<Ratio<u32>>,
    /// Clean originals (matched by file name) to check input budgets
    /// against. Without it, each defended output is checked against its input.
    pub originals: Option<PathBuf>,
}

/// Defends every regular file in `input` into `<output>/<stem>.png`.
/// Undecodable files are recorded and skipped. With an epsilon set, writes
/// `budget_log.tsv` into `output`.
pub fn defend(spec: &DefendSpec) -> Result<DefendSummary, HarnessError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(&spec.output).map_err(io(&spec.output))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&spec.input)
        .map_err(io(&spec.input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut summary = DefendSummary::default();
    for path in files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let result = (|| -> Result<(PathBuf, Option<BudgetOutcome>), String> {
            let input = ImageBuffer::open(&path).map_err(|e| e.to_string())?;
            let defended = apply(spec.defense, &input).map_err(|e| e.to_string())?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let out = spec.output.join(format!("{stem}.png"));
            let png = defended.to_png().map_err(|e| e.to_string())?;
            std::fs::write(&out, png).map_err(|e| e.to_string())?;
            let outcome = match spec.verify_epsilon {
                None => None,
                Some(eps) => Some(match &spec.originals {
                    Some(dir) => {
                        let clean = ImageBuffer::open(&dir.join(&name)).map_err(|e| format!("original: {e}"))?;
                        verify_budget(&clean, &input, eps)
                    }
                    None => verify_budget(&input, &defended, eps),
                }
                .map_err(|e| e.to_string())?),
            };
            Ok((out, outcome))
        })();
        match result {
            Ok((out, outcome)) => {
                summary.written.push(out);
                if let Some(outcome) = outcome {
                    summary.budget.push(BudgetLine { file: name, outcome });
                }
            }
            Err(message) => summary.failed.push((name, message)),
        }
    }

    if spec.verify_epsilon.is_some() {
        let mut log = String::from("file\tmax_delta\tpass\n");
        for line in &summary.budget {
            let d = line.outcome.max_delta();
            log.push_str(&format!("{}\t{}/{}\t{}\n", line.file, d.numer(), d.denom(), line.outcome.passed()));
        }
        let path = spec.output.join(BUDGET_LOG);
        std::fs::write(&path, log).map_err(io(&path))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_parsing() {
        assert_eq!(parse_epsilon("16/255").unwrap(), Ratio::new(16, 255));
        assert_eq!(parse_epsilon("0").unwrap(), Ratio::new(0, 1));
        assert!(parse_epsilon("3/2").is_err());
        assert!(parse_epsilon("1/0").is_err());
        assert!(parse_epsilon("a/b").is_err());
    }
}
