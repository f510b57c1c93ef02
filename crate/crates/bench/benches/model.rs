use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use repospd_core::encoder::{encode_graph, encode_sequence, Branch, ModelConfig, Params};
use repospd_core::ingest::{RepoSnapshot, Side};
use repospd_core::pipeline::{build_patch, BuildConfig};
use repospd_core::synth::mutated_pair;
use repospd_core::trainer::{accumulate_grad, classify, train, Prepared, Sample, TrainConfig};

const HELPERS: &str = "int g(int x) {\n  return x * 2;\n}\n\nvoid use(int p, int q) {\n  sink(p + q);\n}\n";

fn samples(n: usize, cfg: &ModelConfig) -> Vec<Prepared> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n)
        .map(|i| {
            let (pre, post) = mutated_pair(&mut rng, 30);
            let built = build_patch(
                &RepoSnapshot::from_sources(Side::Pre, [("a.c", pre.as_str()), ("lib.c", HELPERS)]),
                &RepoSnapshot::from_sources(Side::Post, [("a.c", post.as_str()), ("lib.c", HELPERS)]),
                None,
                &BuildConfig::default(),
            )
            .unwrap();
            Sample {
                id: format!("s{i}"),
                graph: built.graph,
                seq: built.seq,
                label: (i % 2) as i64,
                tag: None,
            }
            .prepare(cfg)
            .unwrap()
        })
        .collect()
}

fn forward_backward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let p = Params::init(cfg, 1).unwrap();
    let xs = samples(1, &cfg);
    let x = &xs[0];
    c.bench_function(&format!("encode_graph ({} nodes)", x.graph.n), |b| {
        b.iter(|| encode_graph(&p, black_box(&x.graph)).unwrap())
    });
    c.bench_function(&format!("encode_sequence ({} tokens)", x.seq.tokens.len()), |b| {
        b.iter(|| encode_sequence(&p, black_box(&x.seq)))
    });
    c.bench_function("classify", |b| b.iter(|| classify(&p, black_box(x)).unwrap()));
    for (name, branch) in [("graph", Branch::Graph), ("sequence", Branch::Sequence)] {
        c.bench_function(&format!("gradient {name} branch"), |b| {
            b.iter(|| {
                let mut grads = p.zeros_like();
                accumulate_grad(&p, black_box(x), branch, 1.0, &mut grads).unwrap()
            })
        });
    }
}

fn training(c: &mut Criterion) {
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let xs = samples(16, &cfg.model);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("16 samples, 2 epochs", |b| {
        b.iter(|| train(black_box(&xs), &[], &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, forward_backward, training);
criterion_main!(benches);
