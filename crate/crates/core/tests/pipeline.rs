//! End-to-end runs of the pipeline commands on a generated toy workspace.

use std::path::{Path, PathBuf};

use sap_core::pipeline::{
    cmd_bootstrap, cmd_evaluate, cmd_gen_toy, cmd_qa, cmd_summarize, cmd_translate_fewshot,
    cmd_translate_zeroshot, BackendKind,
};
use sap_core::{BootstrapCheckpoint, Error, FinishReason, Manifest, RunConfig};

fn toy(dir: &Path, sentences: usize) -> RunConfig {
    cmd_gen_toy(dir, sentences, 3).unwrap();
    let mut cfg = RunConfig::load(dir.join("config.toml")).unwrap();
    cfg.workers = 4;
    cfg
}

fn small_bootstrap(cfg: &mut RunConfig) {
    cfg.bootstrap.rounds = 3;
    cfg.bootstrap.sample_size = 30;
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn path(p: &Option<PathBuf>) -> &Path {
    p.as_deref().unwrap()
}

#[test]
fn fewshot_translation_is_exact_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), 60);
    let summary = cmd_translate_fewshot(&cfg).unwrap();
    assert_eq!(summary.processed, summary.total_items);
    assert_eq!(summary.resumed, 0);
    let out = read(path(&cfg.paths.output));
    assert_eq!(out, read(&dir.path().join("test.en.ref.txt")));
    let manifest_text = read(path(&cfg.paths.manifest));

    // A second run finds everything done and changes nothing.
    let again = cmd_translate_fewshot(&cfg).unwrap();
    assert_eq!((again.processed, again.resumed), (0, summary.total_items));
    assert_eq!(read(path(&cfg.paths.manifest)), manifest_text);
    assert_eq!(read(path(&cfg.paths.output)), out);

    // Drop the last three records plus a torn line; the rerun redoes exactly those.
    let lines: Vec<&str> = manifest_text.lines().collect();
    let mut cut = lines[..lines.len() - 3].join("\n");
    cut.push_str("\n{\"kind\":\"item\",\"id\":");
    std::fs::write(path(&cfg.paths.manifest), cut).unwrap();
    let resumed = cmd_translate_fewshot(&cfg).unwrap();
    assert_eq!(resumed.processed, 3);
    assert_eq!(read(path(&cfg.paths.manifest)), manifest_text);
    let m = Manifest::load(path(&cfg.paths.manifest)).unwrap();
    assert_eq!(m.items.len(), summary.total_items);

    let mut timings = path(&cfg.paths.manifest).as_os_str().to_owned();
    timings.push(".timings.json");
    assert!(Path::new(&timings).exists());

    let reports = cmd_evaluate(&cfg).unwrap();
    assert!((reports[0].corpus_score - 100.0).abs() < 1e-9);
}

#[test]
fn manifest_from_another_configuration_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 20);
    cmd_translate_fewshot(&cfg).unwrap();
    cfg.sap.max_steps = 7;
    assert!(matches!(cmd_translate_fewshot(&cfg), Err(Error::Invalid { .. })));
}

#[test]
fn call_accounting_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 40);
    cfg.sap.max_steps = 6;
    cmd_translate_fewshot(&cfg).unwrap();
    let m = Manifest::load(path(&cfg.paths.manifest)).unwrap();
    let mut capped = 0;
    for item in &m.items {
        let chain = &item.chains[0];
        match chain.finish_reason {
            Some(FinishReason::StopToken) => assert_eq!(chain.calls, chain.steps + 1),
            Some(FinishReason::MaxSteps) => {
                assert_eq!(chain.calls, 6);
                capped += 1;
            }
            other => panic!("unexpected finish {other:?}"),
        }
        assert_eq!(item.calls, chain.calls);
    }
    assert!(capped > 0);
}

#[test]
fn single_infill_mode_makes_one_call() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 30);
    cfg.sap_enabled = false;
    cmd_translate_fewshot(&cfg).unwrap();
    let m = Manifest::load(path(&cfg.paths.manifest)).unwrap();
    for item in &m.items {
        assert_eq!(item.calls, 1);
        assert!(item.output.split(' ').count() <= 3, "{}", item.output);
    }
}

#[test]
fn missing_shots_file_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 10);
    cfg.paths.shots = Some(dir.path().join("absent.jsonl"));
    // A backend that cannot be reached would fail differently.
    cfg.backend.kind = BackendKind::Http;
    cfg.backend.url = Some("http://127.0.0.1:9".into());
    let err = cmd_translate_fewshot(&cfg).unwrap_err();
    assert!(!matches!(err, Error::Backend(_)), "{err:?}");
    assert!(!path(&cfg.paths.manifest).exists());
}

#[test]
fn bootstrap_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 120);
    small_bootstrap(&mut cfg);

    let full_path = dir.path().join("full.jsonl");
    let mut full_cfg = cfg.clone();
    full_cfg.paths.checkpoint = Some(full_path.clone());
    let full = cmd_bootstrap(&full_cfg, None).unwrap();
    assert_eq!(full.rounds_completed, 3);

    let partial = cmd_bootstrap(&cfg, Some(1)).unwrap();
    assert_eq!(partial.rounds_completed, 1);
    let resumed = cmd_bootstrap(&cfg, None).unwrap();
    assert_eq!(resumed, full);
    assert_eq!(read(path(&cfg.paths.checkpoint)), read(&full_path));

    // Same seed from scratch: byte-identical.
    let again = dir.path().join("again.jsonl");
    full_cfg.paths.checkpoint = Some(again.clone());
    cmd_bootstrap(&full_cfg, None).unwrap();
    assert_eq!(read(&again), read(&full_path));

    // A different configuration refuses the checkpoint.
    let mut other = cfg.clone();
    other.bootstrap.sample_size = 31;
    assert!(matches!(cmd_bootstrap(&other, None), Err(Error::Invalid { .. })));
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 80);
    small_bootstrap(&mut cfg);
    cmd_bootstrap(&cfg, Some(2)).unwrap();
    let p = path(&cfg.paths.checkpoint);
    let text = read(p);
    let lines: Vec<&str> = text.lines().collect();
    // Valid JSON with one changed word, and a truncated file.
    let swapped = format!("{}\n{}\n{}\n", lines[0], lines[1].replacen("the", "tha", 1), lines[2..].join("\n"));
    assert_ne!(swapped, text);
    let truncated = lines[..lines.len() - 1].join("\n") + "\n";
    for bad in [swapped, truncated] {
        std::fs::write(p, bad).unwrap();
        match cmd_bootstrap(&cfg, None) {
            Err(Error::Integrity { round, .. }) => assert_eq!(round, 2),
            other => panic!("expected integrity failure, got {other:?}"),
        }
    }
}

#[test]
fn zero_shot_translation_from_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 120);
    small_bootstrap(&mut cfg);
    let ckpt = cmd_bootstrap(&cfg, None).unwrap();
    assert!(ckpt.pool.len() >= cfg.ensemble_size);

    let summary = cmd_translate_zeroshot(&cfg).unwrap();
    assert_eq!(summary.processed, summary.total_items);
    let m = Manifest::load(path(&cfg.paths.manifest)).unwrap();
    for item in &m.items {
        assert_eq!(item.chains.len(), cfg.ensemble_size / cfg.bootstrap.shots_per_prompt);
        assert_eq!(item.calls, item.chains.iter().map(|c| c.calls).sum::<usize>());
        let w = item.winner.unwrap();
        let best = item.chains[w].selection_score.unwrap();
        assert!(item.chains.iter().all(|c| c.selection_score.unwrap_or(f64::MIN) <= best));
    }
    let reports = cmd_evaluate(&cfg).unwrap();
    assert!((reports[0].corpus_score - 100.0).abs() < 1e-9);
}

#[test]
fn zero_shot_needs_a_large_enough_pool() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 60);
    small_bootstrap(&mut cfg);
    cfg.bootstrap.pool_keep = 4;
    cmd_bootstrap(&cfg, None).unwrap();
    let err = cmd_translate_zeroshot(&cfg).unwrap_err();
    assert!(err.to_string().contains("bootstrap"), "{err}");
}

#[test]
fn without_self_amplification_every_round_is_zero_shot() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 80);
    small_bootstrap(&mut cfg);
    cfg.bootstrap.self_amplification = false;
    let ckpt: BootstrapCheckpoint = cmd_bootstrap(&cfg, None).unwrap();
    for leg in &ckpt.legs {
        assert!(leg.rounds.iter().all(|r| r.shots == 0));
    }
    cfg.bootstrap.self_amplification = true;
    cfg.paths.checkpoint = Some(dir.path().join("amp.jsonl"));
    let amp = cmd_bootstrap(&cfg, None).unwrap();
    let shots: Vec<usize> = amp.legs[0].rounds.iter().map(|r| r.shots).collect();
    assert_eq!(shots, vec![0, 2, 2]);
}

#[test]
fn qa_and_summarization_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 10);
    let qa = dir.path().join("qa.jsonl");
    std::fs::write(
        &qa,
        concat!(
            "{\"id\": \"a\", \"context\": \"el perro come\", \"question\": \"el perro\", \"answers\": [\"the dog\", \"dog\"]}\n",
            "not json\n",
            "{\"context\": \"x\", \"question\": \"gato azul\", \"answers\": \"blue cat\"}\n",
        ),
    )
    .unwrap();
    cfg.paths.input = Some(qa);
    cfg.paths.shots = None;
    cfg.paths.output = Some(dir.path().join("qa.out"));
    cfg.paths.manifest = Some(dir.path().join("qa.manifest.jsonl"));
    let summary = cmd_qa(&cfg).unwrap();
    assert_eq!((summary.total_items, summary.skipped_records), (2, 1));
    assert_eq!(read(path(&cfg.paths.output)), "the dog\ncat blue\n");
    assert_eq!(summary.mean_scores["em"], 0.5);
    // "cat blue" against "blue cat": no exact match, full token overlap.
    assert_eq!(summary.mean_scores["f1"], 1.0);

    let sum = dir.path().join("sum.jsonl");
    std::fs::write(&sum, "{\"article\": \"el sol y la luna\", \"summary\": \"the sun and la moon\"}\n").unwrap();
    cfg.paths.input = Some(sum);
    cfg.paths.output = Some(dir.path().join("sum.out"));
    cfg.paths.manifest = Some(dir.path().join("sum.manifest.jsonl"));
    let summary = cmd_summarize(&cfg).unwrap();
    assert!((summary.mean_scores["rouge_l"] - 1.0).abs() < 1e-12);
}

#[test]
fn duplicate_dataset_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 10);
    let qa = dir.path().join("qa.jsonl");
    let rec = "{\"id\": 1, \"context\": \"c\", \"question\": \"q\"}\n";
    std::fs::write(&qa, format!("{rec}{rec}")).unwrap();
    cfg.paths.input = Some(qa);
    cfg.paths.shots = None;
    assert!(matches!(cmd_qa(&cfg), Err(Error::Format { .. })));
}
