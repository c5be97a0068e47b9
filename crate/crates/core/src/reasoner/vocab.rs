use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::ReasonerError;

/// COCO detection classes plus a handful of common scene nouns.
const DEFAULT_OBJECTS: &[&str] = &[
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush", "tree", "grass", "flower", "building", "sky", "road",
    "fence", "water",
];

const DEFAULT_SYNONYMS: &[(&str, &str)] = &[
    ("bike", "bicycle"),
    ("motorbike", "motorcycle"),
    ("aeroplane", "airplane"),
    ("plane", "airplane"),
    ("jet", "airplane"),
    ("man", "person"),
    ("men", "person"),
    ("woman", "person"),
    ("women", "person"),
    ("people", "person"),
    ("child", "person"),
    ("children", "person"),
    ("boy", "person"),
    ("girl", "person"),
    ("kid", "person"),
    ("puppy", "dog"),
    ("kitten", "cat"),
    ("sofa", "couch"),
    ("television", "tv"),
    ("phone", "cell phone"),
    ("cellphone", "cell phone"),
    ("doughnut", "donut"),
    ("ball", "sports ball"),
    ("table", "dining table"),
    ("fridge", "refrigerator"),
    ("hydrant", "fire hydrant"),
    ("plant", "potted plant"),
    ("glass", "wine glass"),
    ("racket", "tennis racket"),
    ("teddy", "teddy bear"),
    ("hairdryer", "hair drier"),
    ("ship", "boat"),
    ("flowers", "flower"),
    ("trees", "tree"),
];

/// Canonical object names with synonyms and a plural-stripping rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectVocabulary {
    objects: BTreeSet<String>,
    synonyms: BTreeMap<String, String>,
    max_words: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    objects: Vec<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
}

impl Default for ObjectVocabulary {
    fn default() -> Self {
        Self::new(
            DEFAULT_OBJECTS.iter().map(|s| s.to_string()),
            DEFAULT_SYNONYMS
                .iter()
                .map(|(a, c)| (a.to_string(), c.to_string())),
        )
        .expect("built-in vocabulary is consistent")
    }
}

fn norm_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl ObjectVocabulary {
    pub fn new(
        objects: impl IntoIterator<Item = String>,
        synonyms: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ReasonerError> {
        let objects: BTreeSet<String> = objects
            .into_iter()
            .map(|o| norm_phrase(&o))
            .filter(|o| !o.is_empty())
            .collect();
        let mut map = BTreeMap::new();
        for (alias, canonical) in synonyms {
            let canonical = norm_phrase(&canonical);
            if !objects.contains(&canonical) {
                return Err(ReasonerError::Vocabulary(format!(
                    "synonym '{alias}' maps to '{canonical}', which is not a canonical object"
                )));
            }
            map.insert(norm_phrase(&alias), canonical);
        }
        let max_words = objects
            .iter()
            .chain(map.keys())
            .map(|o| o.split(' ').count())
            .max()
            .unwrap_or(1);
        Ok(Self {
            objects,
            synonyms: map,
            max_words,
        })
    }

    pub fn from_json(raw: &str) -> Result<Self, ReasonerError> {
        let file: VocabularyFile =
            serde_json::from_str(raw).map_err(|e| ReasonerError::Vocabulary(e.to_string()))?;
        Self::new(file.objects, file.synonyms)
    }

    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ReasonerError::Vocabulary(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn objects(&self) -> &BTreeSet<String> {
        &self.objects
    }

    /// Longest phrase, in words, the vocabulary can match.
    pub fn max_words(&self) -> usize {
        self.max_words
    }

    fn lookup_exact(&self, phrase: &str) -> Option<&str> {
        if let Some(o) = self.objects.get(phrase) {
            return Some(o.as_str());
        }
        self.synonyms.get(phrase).map(String::as_str)
    }

    /// Canonical name for `phrase`, trying singular forms of the last word.
    pub fn canonical(&self, phrase: &str) -> Option<&str> {
        let phrase = norm_phrase(phrase);
        if phrase.is_empty() {
            return None;
        }
        if let Some(hit) = self.lookup_exact(&phrase) {
            return Some(hit);
        }
        singular_forms(&phrase)
            .into_iter()
            .find_map(|candidate| self.lookup_exact(&candidate))
    }
}

/// Singular candidates for a phrase whose last word may be plural.
pub(crate) fn singular_forms(phrase: &str) -> Vec<String> {
    let (head, last) = match phrase.rsplit_once(' ') {
        Some((h, l)) => (format!("{h} "), l),
        None => (String::new(), phrase),
    };
    let mut out = Vec::new();
    if let Some(stem) = last.strip_suffix("ies") {
        if !stem.is_empty() {
            out.push(format!("{head}{stem}y"));
        }
    }
    if let Some(stem) = last.strip_suffix("es") {
        if !stem.is_empty() {
            out.push(format!("{head}{stem}"));
        }
    }
    if let Some(stem) = last.strip_suffix('s') {
        if !stem.is_empty() && !stem.ends_with('s') {
            out.push(format!("{head}{stem}"));
        }
    }
    out
}

/// Descriptor words used to build attribute questions.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorLexicon {
    pub colors: Vec<String>,
    pub sizes: Vec<String>,
    pub spatial: Vec<String>,
}

impl Default for DescriptorLexicon {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            colors: v(&[
                "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown", "black",
                "white", "gray", "grey", "silver", "gold",
            ]),
            sizes: v(&[
                "large", "big", "small", "little", "tiny", "huge", "tall", "short", "long",
            ]),
            spatial: v(&[
                "left", "right", "top", "bottom", "center", "middle", "front", "behind",
                "background", "foreground", "near",
            ]),
        }
    }
}

impl DescriptorLexicon {
    pub fn from_json(raw: &str) -> Result<Self, ReasonerError> {
        serde_json::from_str(raw).map_err(|e| ReasonerError::Vocabulary(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ReasonerError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ReasonerError::Vocabulary(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    /// Category rank (colors, sizes, spatial) for a lowercase token.
    pub(crate) fn rank(&self, token: &str) -> Option<usize> {
        [&self.colors, &self.sizes, &self.spatial]
            .iter()
            .position(|cat| cat.iter().any(|w| w.eq_ignore_ascii_case(token)))
    }
}
