//! Parallel vs sequential throughput on the two hot paths: dense matmul
//! inside the tape, and per-sample gradient probing across a batch.
//!
//! The `dispatch` / batched variants use rayon when the crate is built with
//! the default `parallel` feature and degrade to the sequential path
//! otherwise, so running this bench under both feature sets shows the
//! speedup (or the cost of the fallback).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gmint::autodiff::{matmul_into_dispatch, matmul_into_seq};
use gmint::models::{encode_samples, AuditedModel, AuditedModelSpec, ModelKind};
use gmint::probe::{per_sample_gradient, LayerSelector};
use gmint::text::{build_vocab, synth_corpus, SynthSpec};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &n in &[64usize, 128, 256] {
        let a: Vec<f64> = (0..n * n).map(|i| (i % 97) as f64 * 0.01).collect();
        let b: Vec<f64> = (0..n * n).map(|i| (i % 89) as f64 * 0.01).collect();
        let mut out = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bench, &n| {
            bench.iter(|| matmul_into_seq(&mut out, &a, &b, n, n, n));
        });
        group.bench_with_input(BenchmarkId::new("dispatch", n), &n, |bench, &n| {
            bench.iter(|| matmul_into_dispatch(&mut out, &a, &b, n, n, n));
        });
    }
    group.finish();
}

fn bench_probe(c: &mut Criterion) {
    let corpus = synth_corpus(&SynthSpec {
        num_classes: 2,
        samples_per_class: 64,
        vocab_size: 200,
        class_signal_strength: 0.5,
        seed: 11,
    })
    .expect("synth corpus");
    let vocab = build_vocab(&corpus, 200).expect("vocab");
    let spec = AuditedModelSpec {
        kind: ModelKind::Mlp,
        vocab_size: vocab.size(),
        max_len: 20,
        embed_dim: 16,
        hidden_dim: 32,
        num_heads: 1,
        num_classes: 2,
        seed: 3,
    };
    let model = AuditedModel::build(&spec).expect("model");
    let encoded = encode_samples(corpus.samples.iter(), &vocab, spec.max_len);
    let selector = LayerSelector::parse("last:2").expect("selector");

    let mut group = c.benchmark_group("probe_batch");
    group.bench_function("sequential_loop", |bench| {
        bench.iter(|| {
            let mut acc = 0.0;
            for s in &encoded {
                let g = per_sample_gradient(&model, s, &selector).expect("gradient");
                acc += g[0];
            }
            acc
        });
    });
    group.bench_function("batched", |bench| {
        bench.iter(|| {
            let grads = gmint::probe::batch_gradients(&model, &encoded, &selector)
                .expect("gradients");
            grads.iter().map(|g| g[0]).sum::<f64>()
        });
    });
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_probe);
criterion_main!(benches);
