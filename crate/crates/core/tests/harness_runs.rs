mod common;

use std::path::Path;

use common::dataset::{self, truthful_rules, write_pope, write_suite};
use hydra_core::bench::PopeSubset;
use hydra_core::defense::{squeeze_value, ImageBuffer};
use hydra_core::harness::{defend, parse_epsilon, run, DefendSpec, HarnessError, RunSpec, BUDGET_LOG};
use hydra_core::report::{BenchKind, MetricBlock, RunReport};
use hydra_core::{Answer, DefenseKind, TaskKind};
use serde_json::json;

fn pope_spec(dir: &Path, suite: &Path) -> RunSpec {
    RunSpec {
        task: TaskKind::Vqa,
        bench: BenchKind::Pope,
        subset: Some(PopeSubset::Random),
        defense: None,
        suite: suite.to_path_buf(),
        data: dir.to_path_buf(),
        seed: Some(3),
        workers: Some(2),
        sample: None,
        attacked: false,
    }
}

#[test]
fn six_item_pope_smoke() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 1);
    let suite = write_suite(dir.path(), truthful_rules(1, false), None);
    let report = run(&pope_spec(dir.path(), &suite)).unwrap();
    assert_eq!(report.records.len(), 6);
    let MetricBlock::Pope(s) = report.metrics else { panic!("expected POPE metrics") };
    assert_eq!((s.accuracy, s.f1, s.yes_ratio), (100.0, 100.0, 50.0));
    assert!(report.timing.wall_clock_ms.is_none());
    let ids: Vec<_> = report.records.iter().map(|r| r.item_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(report.rescore().unwrap(), report.metrics);
}

#[test]
fn records_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 12);
    let suite = write_suite(dir.path(), truthful_rules(12, true), Some("Hard to say."));
    let mut spec = pope_spec(dir.path(), &suite);
    spec.workers = Some(1);
    let one = run(&spec).unwrap();
    spec.workers = Some(6);
    let many = run(&spec).unwrap();
    assert_eq!(one.records, many.records);
    assert_eq!(one.to_json(), many.to_json());
    assert!(one.records.iter().any(|r| r.iterations_used > 1));
}

#[test]
fn sampling_and_defense_flags() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "popular", 4);
    let suite = write_suite(dir.path(), truthful_rules(4, false), None);
    let mut spec = pope_spec(dir.path(), &suite);
    spec.subset = Some(PopeSubset::Popular);
    spec.sample = Some(2);
    spec.defense = Some(DefenseKind::FeatSq);
    let report = run(&spec).unwrap();
    assert_eq!(report.records.len(), 12);
    assert_eq!(report.config.defense, DefenseKind::FeatSq);
    assert_eq!(report.config.run.defense, DefenseKind::FeatSq);
    assert!(report.records.iter().all(|r| r.item_id.starts_with("pope-popular-")));
}

#[test]
fn missing_detector_names_the_role() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 1);
    std::fs::write(dir.path().join("fixture.json"), r#"[{"default": "x"}]"#).unwrap();
    let suite = dir.path().join("suite.json");
    std::fs::write(
        &suite,
        json!({"backends": [{"role": "plugin_lvlm", "endpoint": "mock:fixture.json", "model_id": "p"}]}).to_string(),
    )
    .unwrap();
    let err = run(&pope_spec(dir.path(), &suite)).unwrap_err();
    assert!(err.to_string().contains("object_detector"), "{err}");
}

#[test]
fn malformed_benchmark_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 1);
    let path = dir.path().join("pope_random.jsonl");
    let mut raw = std::fs::read_to_string(&path).unwrap();
    raw.push_str("{not json}\n");
    std::fs::write(&path, raw).unwrap();
    let suite = write_suite(dir.path(), truthful_rules(1, false), None);
    let err = run(&pope_spec(dir.path(), &suite)).unwrap_err();
    assert!(err.to_string().contains(":7:"), "{err}");
}

#[test]
fn missing_image_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 1);
    std::fs::remove_file(dir.path().join("images/img0.png")).unwrap();
    let suite = write_suite(dir.path(), truthful_rules(1, false), None);
    assert!(matches!(run(&pope_spec(dir.path(), &suite)), Err(HarnessError::Bench(_))));
}

#[test]
fn task_and_bench_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let suite = write_suite(dir.path(), vec![], Some("x"));
    let mut spec = pope_spec(dir.path(), &suite);
    spec.task = TaskKind::Captioning;
    assert!(matches!(run(&spec), Err(HarnessError::TaskMismatch { .. })));
}

#[test]
fn mme_run_scores_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ids = dataset::image_ids(3);
    let mut lines = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        lines.push(format!("{id}\tIs there a {} in this image? Please answer yes or no.\tYes", dataset::PRESENT[i][0]));
        lines.push(format!("{id}\tIs there a {} in this image? Please answer yes or no.\tNo", dataset::ABSENT[i][0]));
    }
    std::fs::write(dir.path().join("mme_existence.tsv"), lines.join("\n")).unwrap();
    dataset::write_images(dir.path(), &ids);
    let suite = write_suite(dir.path(), truthful_rules(3, false), None);
    let mut spec = pope_spec(dir.path(), &suite);
    spec.bench = BenchKind::Mme;
    spec.subset = None;
    let report = run(&spec).unwrap();
    assert_eq!(report.records.len(), 6);
    let MetricBlock::Mme(s) = report.metrics else { panic!("expected MME metrics") };
    assert_eq!((s.acc, s.acc_plus, s.total), (100.0, 100.0, 200.0));
}

#[test]
fn amber_run_scores_captions() {
    let dir = tempfile::tempdir().unwrap();
    let ids = dataset::image_ids(2);
    dataset::write_images(dir.path(), &ids);
    let entries = json!([
        {"id": 1, "image": ids[0], "truth": ["dog", "tree"], "hallu": ["bench"]},
        {"id": 2, "image": ids[1], "truth": ["cat"], "hallu": ["dog"]},
    ]);
    std::fs::write(dir.path().join("amber_generative.json"), entries.to_string()).unwrap();
    let rules = vec![
        json!({"role": "*", "image_id": ids[0], "prompt_contains": "Describe", "reply": "A dog under a tree with a bench."}),
        json!({"role": "*", "image_id": ids[1], "prompt_contains": "Describe", "reply": "A cat on a couch."}),
    ];
    let suite = write_suite(dir.path(), rules, None);
    let mut spec = pope_spec(dir.path(), &suite);
    spec.task = TaskKind::Captioning;
    spec.bench = BenchKind::Amber;
    spec.subset = None;
    let report = run(&spec).unwrap();
    let Answer::Caption { objects, .. } = &report.records[0].answer else { panic!("expected caption") };
    assert_eq!(objects.iter().map(String::as_str).collect::<Vec<_>>(), ["bench", "dog", "tree"]);
    let MetricBlock::Amber(s) = report.metrics else { panic!("expected AMBER metrics") };
    // Item 1: M={bench,dog,tree}, chair 1/3, cover 1, hal 1, cog 1/3.
    // Item 2: M={cat,couch}, chair 1/2, cover 1, hal 1, cog 0.
    assert_eq!((s.chair, s.cover, s.hal, s.cog), (41.7, 100.0, 100.0, 16.7));
}

#[test]
fn report_write_is_atomic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    write_pope(dir.path(), "random", 1);
    let suite = write_suite(dir.path(), truthful_rules(1, false), None);
    let report = run(&pope_spec(dir.path(), &suite)).unwrap();
    let out = dir.path().join("out/report.json");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    report.write_atomic(&out).unwrap();
    let leftovers: Vec<_> = std::fs::read_dir(out.parent().unwrap()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
    assert_eq!(RunReport::load(&out).unwrap(), report);
}

fn write_random_pngs(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let (w, h) = (3 + i as u32 * 5, 2 + i as u32 * 3);
        let pixels: Vec<u8> = (0..w * h * 3).map(|k| ((k * 97 + i as u32 * 31) % 256) as u8).collect();
        let png = ImageBuffer::new(w, h, pixels).unwrap().to_png().unwrap();
        std::fs::write(dir.join(format!("im{i}.png")), png).unwrap();
    }
}

#[test]
fn defend_featsq_outputs_sixteen_levels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_random_pngs(&input, 10);
    let summary = defend(&DefendSpec {
        defense: DefenseKind::FeatSq,
        input: input.clone(),
        output: dir.path().join("out"),
        verify_epsilon: None,
        originals: None,
    })
    .unwrap();
    assert!(summary.ok());
    assert_eq!(summary.written.len(), 10);
    let grid: std::collections::BTreeSet<u8> = (0..=255u8).map(|v| squeeze_value(v, 4)).collect();
    assert_eq!(grid.len(), 16);
    for path in &summary.written {
        let img = ImageBuffer::open(path).unwrap();
        assert!(img.pixels().iter().all(|v| grid.contains(v)));
    }
}

#[test]
fn defend_jpeg_preserves_dimensions_and_logs_budget() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    write_random_pngs(&input, 5);
    std::fs::write(input.join("broken.png"), b"not an image").unwrap();
    let copies = dir.path().join("copies");
    std::fs::create_dir_all(&copies).unwrap();
    for e in std::fs::read_dir(&input).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, copies.join(p.file_name().unwrap())).unwrap();
    }
    let out = dir.path().join("out");
    let summary = defend(&DefendSpec {
        defense: DefenseKind::Jpeg,
        input: input.clone(),
        output: out.clone(),
        verify_epsilon: Some(parse_epsilon("16/255").unwrap()),
        originals: Some(copies),
    })
    .unwrap();
    assert_eq!(summary.written.len(), 5);
    assert_eq!(summary.failed.len(), 1);
    assert_eq!(summary.failed[0].0, "broken.png");
    assert!(!summary.ok());
    assert!(summary.budget.iter().all(|b| b.outcome.passed()));
    for (i, path) in summary.written.iter().enumerate() {
        let src = ImageBuffer::open(&input.join(format!("im{i}.png"))).unwrap();
        let out = ImageBuffer::open(path).unwrap();
        assert_eq!((out.width(), out.height()), (src.width(), src.height()));
    }
    let log = std::fs::read_to_string(out.join(BUDGET_LOG)).unwrap();
    assert_eq!(log.lines().count(), 1 + 5);
    assert!(log.lines().skip(1).all(|l| l.ends_with("\t0/1\ttrue")));
}
