#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use hydra_core::suite::{Backend, BackendFault, BackendReply};
use hydra_core::{
    BackendDescriptor, BenchmarkItem, GroundTruth, ImageOrigin, ImageRef, ModelRole, QueryRequest,
    SuiteRegistry, TaskKind, YesNo,
};

/// Backend driven by a closure. Never measures latency.
pub struct FnBackend<F> {
    f: F,
    pub calls: AtomicUsize,
}

impl<F> FnBackend<F> {
    pub fn new(f: F) -> Arc<Self> {
        Arc::new(Self {
            f,
            calls: AtomicUsize::new(0),
        })
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&QueryRequest) -> Result<BackendReply, BackendFault> + Send + Sync,
{
    fn generate(&self, request: &QueryRequest) -> Result<BackendReply, BackendFault> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(request)
    }

    fn measures_latency(&self) -> bool {
        false
    }
}

pub fn reply(text: &str) -> Result<BackendReply, BackendFault> {
    Ok(BackendReply::text(text))
}

pub fn fixed(text: &'static str) -> Arc<dyn Backend> {
    FnBackend::new(move |_: &QueryRequest| reply(text))
}

pub fn descriptor(role: ModelRole) -> BackendDescriptor {
    BackendDescriptor::new(role, "mock:inline", format!("{role}-mock"))
}

pub fn registry(backends: Vec<(ModelRole, Arc<dyn Backend>)>) -> SuiteRegistry {
    let mut r = SuiteRegistry::new();
    for (role, b) in backends {
        r.register_backend(descriptor(role), b).unwrap();
    }
    r
}

pub fn vqa_item(id: &str, image_id: &str, object: &str, truth: YesNo) -> BenchmarkItem {
    BenchmarkItem {
        item_id: id.into(),
        image: ImageRef::new(image_id, vec![7; 16], ImageOrigin::Clean),
        query: format!("Is there a {object} in the image?"),
        task: TaskKind::Vqa,
        ground_truth: GroundTruth::Presence(truth),
    }
}

pub fn caption_item(id: &str, image_id: &str) -> BenchmarkItem {
    BenchmarkItem {
        item_id: id.into(),
        image: ImageRef::new(image_id, vec![7; 16], ImageOrigin::Clean),
        query: "Describe the image.".into(),
        task: TaskKind::Captioning,
        ground_truth: GroundTruth::Annotations(Default::default()),
    }
}

/// Stable per-request hash, independent of thread scheduling.
pub fn request_hash(seed: u64, request: &QueryRequest) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    request.role.as_str().hash(&mut h);
    request.image.id.hash(&mut h);
    request.prompt.hash(&mut h);
    h.finish()
}

const NOISE: [&str; 12] = [
    "Yes.",
    "No.",
    "Possibly near the left edge.",
    "",
    "person, bicycle, dog",
    "A red car parked near a large tree.",
    "There is no dog here.",
    "I cannot tell.",
    "cat; kite and bench",
    "Yes, there is a small blue umbrella on the left.",
    "no no no yes",
    "The image shows a park.",
];

/// Answers every request with a hash-selected noise string, or a fault.
pub fn chaos(seed: u64) -> Arc<dyn Backend> {
    FnBackend::new(move |req: &QueryRequest| {
        let h = request_hash(seed, req);
        match h % 16 {
            0 => Err(BackendFault::Timeout),
            1 => Err(BackendFault::Status(503)),
            n => reply(NOISE[(n as usize + (h >> 8) as usize) % NOISE.len()]),
        }
    })
}

/// Writes a POPE-style dataset plus a mock-fixture suite into `dir`.
///
/// Image `i` contains `PRESENT[i % 4]`; each image gets three questions about
/// present objects and three about absent ones. When `detector_misses` is
/// set, the detector omits the first present object for every odd image, so
/// those items need a discovery round.
pub mod dataset {
    use std::path::{Path, PathBuf};

    use hydra_core::defense::ImageBuffer;
    use serde_json::json;

    pub const PRESENT: [[&str; 3]; 4] = [
        ["dog", "bicycle", "person"],
        ["cat", "couch", "remote"],
        ["car", "truck", "bus"],
        ["kite", "umbrella", "bench"],
    ];
    pub const ABSENT: [[&str; 3]; 4] = [
        ["giraffe", "toaster", "boat"],
        ["train", "zebra", "clock"],
        ["bird", "sheep", "pizza"],
        ["horse", "oven", "laptop"],
    ];

    pub fn write_images(dir: &Path, ids: &[String]) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let shade = (i * 37 % 256) as u8;
            let png = ImageBuffer::filled(8, 6, [shade, 255 - shade, 90]).unwrap().to_png().unwrap();
            std::fs::write(dir.join("images").join(id), png).unwrap();
        }
    }

    pub fn image_ids(images: usize) -> Vec<String> {
        (0..images).map(|i| format!("img{i}.png")).collect()
    }

    pub fn write_pope(dir: &Path, subset: &str, images: usize) {
        let mut lines = Vec::new();
        let mut qid = 0;
        for (i, id) in image_ids(images).iter().enumerate() {
            for (objs, label) in [(PRESENT[i % 4], "yes"), (ABSENT[i % 4], "no")] {
                for o in objs {
                    lines.push(json!({"question_id": qid, "image": id, "text": format!("Is there a {o} in the image?"), "label": label}).to_string());
                    qid += 1;
                }
            }
        }
        std::fs::write(dir.join(format!("pope_{subset}.jsonl")), lines.join("\n") + "\n").unwrap();
        write_images(dir, &image_ids(images));
    }

    /// A caption naming the present objects and explicitly denying the
    /// absent ones.
    pub fn caption(i: usize) -> String {
        let [a, b, c] = PRESENT[i % 4];
        let [x, y, z] = ABSENT[i % 4];
        format!("A photo with a {a}, a {b} and a {c}. There is no {x}, no {y} and no {z}.")
    }

    /// Fixture rules answering truthfully about `images` images.
    pub fn truthful_rules(images: usize, detector_misses: bool) -> Vec<serde_json::Value> {
        let mut rules = Vec::new();
        for (i, id) in image_ids(images).iter().enumerate() {
            let present = PRESENT[i % 4];
            let listed: Vec<&str> = if detector_misses && i % 2 == 1 {
                present[1..].to_vec()
            } else {
                present.to_vec()
            };
            rules.push(json!({"role": "object_detector", "image_id": id, "prompt_contains": "*", "reply": listed.join(", ")}));
            rules.push(json!({"role": "plugin_lvlm", "image_id": id, "prompt_contains": "Describe", "reply": caption(i)}));
            for o in present {
                rules.push(json!({"role": "*", "image_id": id, "prompt_contains": format!("a {o} in"), "reply": "Yes."}));
            }
            for o in ABSENT[i % 4] {
                rules.push(json!({"role": "*", "image_id": id, "prompt_contains": format!("a {o} in"), "reply": "No."}));
            }
        }
        rules
    }

    /// Writes `fixture.json` and `suite.json` (all six roles mocked).
    pub fn write_suite(dir: &Path, rules: Vec<serde_json::Value>, default: Option<&str>) -> PathBuf {
        let mut fixture = rules;
        if let Some(d) = default {
            fixture.push(json!({"default": d}));
        }
        std::fs::write(dir.join("fixture.json"), serde_json::to_string_pretty(&fixture).unwrap()).unwrap();
        let backends: Vec<_> = ["plugin_lvlm", "object_detector", "aux_lvlm_a", "aux_lvlm_b", "vlp_vqa", "captioner"]
            .iter()
            .map(|r| json!({"role": r, "endpoint": "mock:fixture.json", "model_id": format!("{r}-mock")}))
            .collect();
        let path = dir.join("suite.json");
        std::fs::write(&path, serde_json::to_string_pretty(&json!({"backends": backends, "run": {"seed": 7}})).unwrap()).unwrap();
        path
    }
}
