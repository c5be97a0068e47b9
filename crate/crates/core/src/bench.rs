//! Loaders and samplers for the POPE, MME-Existence, and AMBER-Generative
//! hallucination benchmarks.
//!
//! Loaders produce items whose `ImageRef` carries only the image id; the
//! harness attaches pixel payloads afterwards via [`ImageManifest`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::reasoner::{ObjectVocabulary, Reasoner, RuleReasoner};
use crate::types::{
    AnnotationSet, BenchmarkItem, GroundTruth, ImageOrigin, ImageRef, TaskKind, YesNo,
};

pub const AMBER_PROMPT: &str = "Describe the image.";
pub const DEFAULT_POPE_IMAGES: usize = 50;
pub const DEFAULT_POPE_PER_IMAGE: usize = 6;
pub const DEFAULT_AMBER_SAMPLE: usize = 50;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("questions without a presence target: {}", .0.join(", "))]
    NoTarget(Vec<String>),
    #[error("only {eligible} image(s) have {per_image} balanced questions; {wanted} needed")]
    InsufficientImages {
        eligible: usize,
        wanted: usize,
        per_image: usize,
    },
    #[error("per-image question count must be a positive even number, got {0}")]
    OddPerImage(usize),
    #[error("images {0:?} do not have exactly 2 questions")]
    Unpaired(Vec<String>),
    #[error("objects outside the vocabulary: {}", .0.join(", "))]
    UnknownObjects(Vec<String>),
    #[error("sample of {sample} exceeds pool of {pool}")]
    SampleTooLarge { sample: usize, pool: usize },
    #[error("image '{0}' not found")]
    MissingImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopeSubset {
    Random,
    Popular,
    /// Co-occurrence-based negatives; unrelated to adversarial attacks.
    Adversarial,
}

impl PopeSubset {
    pub fn as_str(self) -> &'static str {
        match self {
            PopeSubset::Random => "random",
            PopeSubset::Popular => "popular",
            PopeSubset::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for PopeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PopeSubset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(PopeSubset::Random),
            "popular" => Ok(PopeSubset::Popular),
            "adversarial" => Ok(PopeSubset::Adversarial),
            other => Err(format!("unknown POPE subset '{other}'")),
        }
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn id_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

#[derive(Debug, Deserialize)]
struct PopeLine {
    question_id: serde_json::Value,
    image: String,
    text: String,
    label: String,
}

fn image_ref(id: &str) -> ImageRef {
    ImageRef::new(id, Vec::new(), ImageOrigin::Clean)
}

/// Parses POPE JSON-lines. Blank lines are skipped.
pub fn load_pope(path: &Path, subset: PopeSubset) -> Result<Vec<BenchmarkItem>, BenchError> {
    let raw = read(path)?;
    let reasoner = RuleReasoner::default();
    let mut items = Vec::new();
    let mut no_target = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| BenchError::Line {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let rec: PopeLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let qid = id_string(&rec.question_id)
            .ok_or_else(|| err("question_id must be a string or number".into()))?;
        let label = match rec.label.trim() {
            "yes" => YesNo::Yes,
            "no" => YesNo::No,
            other => return Err(err(format!("label must be \"yes\" or \"no\", got {other:?}"))),
        };
        let item_id = format!("pope-{subset}-{qid}");
        if reasoner.extract_target_object(&rec.text).is_err() {
            no_target.push(item_id.clone());
        }
        items.push(BenchmarkItem {
            item_id,
            image: image_ref(&rec.image),
            query: rec.text,
            task: TaskKind::Vqa,
            ground_truth: GroundTruth::Presence(label),
        });
    }
    if !no_target.is_empty() {
        return Err(BenchError::NoTarget(no_target));
    }
    Ok(items)
}

fn presence_label(item: &BenchmarkItem) -> Option<YesNo> {
    match item.ground_truth {
        GroundTruth::Presence(y) => Some(y),
        GroundTruth::Annotations(_) => None,
    }
}

/// Draws `images` images with `per_image` questions each, half yes and half
/// no per image. Image order is a seeded shuffle; within an image the first
/// questions of each label in file order are taken.
pub fn sample_pope(
    items: &[BenchmarkItem],
    images: usize,
    per_image: usize,
    seed: u64,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    if per_image == 0 || !per_image.is_multiple_of(2) {
        return Err(BenchError::OddPerImage(per_image));
    }
    let half = per_image / 2;
    let mut order: Vec<&str> = Vec::new();
    let mut by_image: BTreeMap<&str, Vec<&BenchmarkItem>> = BTreeMap::new();
    for item in items {
        let id = item.image.id.as_str();
        by_image
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(item);
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out = Vec::with_capacity(images * per_image);
    let mut chosen = 0;
    for id in &order {
        if chosen == images {
            break;
        }
        let qs = &by_image[id];
        let yes: Vec<_> = qs.iter().filter(|q| presence_label(q) == Some(YesNo::Yes)).take(half).collect();
        let no: Vec<_> = qs.iter().filter(|q| presence_label(q) == Some(YesNo::No)).take(half).collect();
        if yes.len() < half || no.len() < half {
            continue;
        }
        let picked: BTreeSet<&str> = yes.iter().chain(&no).map(|q| q.item_id.as_str()).collect();
        out.extend(
            qs.iter()
                .filter(|q| picked.contains(q.item_id.as_str()))
                .map(|q| (*q).clone()),
        );
        chosen += 1;
    }
    if chosen < images {
        return Err(BenchError::InsufficientImages {
            eligible: chosen,
            wanted: images,
            per_image,
        });
    }
    Ok(out)
}

/// The two MME-Existence questions asked about one image.
#[derive(Debug, Clone)]
pub struct MmePair {
    pub image_id: String,
    pub items: [BenchmarkItem; 2],
}

/// Parses tab-separated `image_id, question, answer` lines. Answers must be
/// exactly `Yes` or `No`.
pub fn load_mme_existence(path: &Path) -> Result<Vec<MmePair>, BenchError> {
    let raw = read(path)?;
    let reasoner = RuleReasoner::default();
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<BenchmarkItem>> = BTreeMap::new();
    let mut no_target = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| BenchError::Line {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [image_id, question, answer] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let label = match answer.trim() {
            "Yes" => YesNo::Yes,
            "No" => YesNo::No,
            other => return Err(err(format!("answer must be Yes or No, got {other:?}"))),
        };
        let group = groups.entry(image_id.to_string()).or_insert_with(|| {
            order.push(image_id.to_string());
            Vec::new()
        });
        let item_id = format!("mme-{image_id}-{}", group.len());
        if reasoner.extract_target_object(question).is_err() {
            no_target.push(item_id.clone());
        }
        group.push(BenchmarkItem {
            item_id,
            image: image_ref(image_id),
            query: question.to_string(),
            task: TaskKind::Vqa,
            ground_truth: GroundTruth::Presence(label),
        });
    }
    let unpaired: Vec<String> = order
        .iter()
        .filter(|id| groups[*id].len() != 2)
        .cloned()
        .collect();
    if !unpaired.is_empty() {
        return Err(BenchError::Unpaired(unpaired));
    }
    if !no_target.is_empty() {
        return Err(BenchError::NoTarget(no_target));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut qs = groups.remove(&id).expect("grouped");
            let second = qs.pop().expect("paired");
            let first = qs.pop().expect("paired");
            MmePair {
                image_id: id,
                items: [first, second],
            }
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct AmberEntry {
    id: serde_json::Value,
    image: String,
    truth: Vec<String>,
    hallu: Vec<String>,
}

/// Parses AMBER generative annotations in file order. Object names are
/// canonicalized through `vocab`.
pub fn parse_amber_generative(
    path: &Path,
    vocab: &ObjectVocabulary,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    let raw = read(path)?;
    let entries: Vec<AmberEntry> = serde_json::from_str(&raw).map_err(|e| BenchError::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut unknown = BTreeSet::new();
    let mut canon = |names: &[String]| -> BTreeSet<String> {
        names
            .iter()
            .filter_map(|n| match vocab.canonical(n) {
                Some(c) => Some(c.to_string()),
                None => {
                    unknown.insert(n.clone());
                    None
                }
            })
            .collect()
    };
    let mut items = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = id_string(&e.id).ok_or_else(|| BenchError::File {
            path: path.to_path_buf(),
            message: "entry id must be a string or number".into(),
        })?;
        let annotations = AnnotationSet {
            truth: canon(&e.truth),
            hallucination: canon(&e.hallu),
        };
        items.push(BenchmarkItem {
            item_id: format!("amber-{id}"),
            image: image_ref(&e.image),
            query: AMBER_PROMPT.to_string(),
            task: TaskKind::Captioning,
            ground_truth: GroundTruth::Annotations(annotations),
        });
    }
    if !unknown.is_empty() {
        return Err(BenchError::UnknownObjects(unknown.into_iter().collect()));
    }
    Ok(items)
}

/// Draws a seeded sample of `sample` items, kept in their original order.
pub fn sample_items(
    items: &[BenchmarkItem],
    sample: usize,
    seed: u64,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    if sample > items.len() {
        return Err(BenchError::SampleTooLarge {
            sample,
            pool: items.len(),
        });
    }
    let mut picked =
        index::sample(&mut ChaCha8Rng::seed_from_u64(seed), items.len(), sample).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Parses AMBER generative annotations and draws a seeded sample.
pub fn load_amber_generative(
    path: &Path,
    sample: usize,
    seed: u64,
    vocab: &ObjectVocabulary,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    sample_items(&parse_amber_generative(path, vocab)?, sample, seed)
}

/// Maps image ids to files. Without a manifest file, ids resolve to
/// `<root>/images/<id>`.
#[derive(Debug, Clone)]
pub struct ImageManifest {
    root: PathBuf,
    entries: Option<BTreeMap<String, PathBuf>>,
}

impl ImageManifest {
    /// Reads `<dir>/manifest.json` if present (JSON object id → relative path).
    pub fn discover(dir: &Path) -> Result<Self, BenchError> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Ok(Self {
                root: dir.to_path_buf(),
                entries: None,
            });
        }
        let raw = read(&path)?;
        let entries: BTreeMap<String, PathBuf> =
            serde_json::from_str(&raw).map_err(|e| BenchError::Line {
                path: path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
        Ok(Self {
            root: dir.to_path_buf(),
            entries: Some(entries),
        })
    }

    pub fn resolve(&self, image_id: &str) -> Result<PathBuf, BenchError> {
        let path = match &self.entries {
            Some(map) => self
                .root
                .join(map.get(image_id).ok_or_else(|| BenchError::MissingImage(image_id.into()))?),
            None => self.root.join("images").join(image_id),
        };
        if path.is_file() {
            Ok(path)
        } else {
            Err(BenchError::MissingImage(image_id.into()))
        }
    }

    pub fn load(&self, image_id: &str) -> Result<Vec<u8>, BenchError> {
        let path = self.resolve(image_id)?;
        std::fs::read(&path).map_err(|source| BenchError::Io { path, source })
    }
}
