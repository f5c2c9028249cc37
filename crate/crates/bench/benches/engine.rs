use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sap_core::backend::{MockEmbedder, MockInfill};
use sap_core::metrics::{corpus_bleu, lcs_length, BleuConfig};
use sap_core::scoring::{detect_language, Scorer};
use sap_core::toy::ToyWorld;
use sap_core::{sap_generate, strip_repetition, SapConfig, TaskSpec};

fn sap_loop(c: &mut Criterion) {
    let w = ToyWorld::new();
    let task = TaskSpec::translation(&w.spanish, &w.english, Vec::new()).unwrap();
    let corpus = w.corpus(&w.spanish, 64, 20, 3).unwrap();
    let cfg = SapConfig::default();
    let mut group = c.benchmark_group("sap_generate");
    for span in [1, 3, 5] {
        let backend = MockInfill::new(w.mock_spec(span)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(span), &span, |b, _| {
            b.iter(|| {
                for s in &corpus {
                    black_box(sap_generate(&task, s, &backend, &cfg).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let w = ToyWorld::new();
    let scorer = Scorer::new(Arc::new(w.embedder()), w.profiles());
    let src = w.corpus(&w.spanish, 32, 20, 5).unwrap();
    let cands: Vec<(String, String)> = src
        .iter()
        .map(|s| (s.clone(), w.translate(s, &w.spanish, &w.english).unwrap()))
        .collect();
    c.bench_function("filter_candidates/32", |b| {
        b.iter(|| black_box(scorer.filter_candidates(&cands, &w.english).unwrap()))
    });
    let profiles = w.profiles();
    c.bench_function("detect_language", |b| {
        b.iter(|| black_box(detect_language(&cands[0].1, &profiles).unwrap()))
    });
    let embedder = MockEmbedder::new();
    c.bench_function("mock_embed", |b| b.iter(|| black_box(embedder.embed_text(&cands[0].1))));
}

fn metrics(c: &mut Criterion) {
    let w = ToyWorld::new();
    let refs = w.corpus(&w.english, 500, 20, 9).unwrap();
    let hyps: Vec<String> = refs.iter().map(|r| r.replacen(' ', " x ", 1)).collect();
    let cfg = BleuConfig::default();
    c.bench_function("corpus_bleu/500", |b| {
        b.iter(|| black_box(corpus_bleu(&hyps, &refs, &cfg).unwrap()))
    });
    let a: Vec<&str> = refs[..40].iter().flat_map(|s| s.split(' ')).collect();
    let bb: Vec<&str> = hyps[..40].iter().flat_map(|s| s.split(' ')).collect();
    c.bench_function("lcs_length", |b| b.iter(|| black_box(lcs_length(&a, &bb))));
    let long = refs[..50].join(" ");
    c.bench_function("strip_repetition", |b| b.iter(|| black_box(strip_repetition(&long, 3))));
}

criterion_group!(benches, sap_loop, scoring, metrics);
criterion_main!(benches);
