//! Encoder and per-step decoder throughput at a realistic model size.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use setrnn_core::model::neural::NeuralModel;
use setrnn_core::model::params::ModelConfig;
use setrnn_core::model::SequenceModel;
use setrnn_core::{Document, STOP};

fn cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 5000,
        num_labels: 100,
        embed_dim: 64,
        hidden_dim: 128,
        max_doc_len: 120,
        dropout: 0.0,
        repeat_masking: true,
    }
}

fn doc(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Document {
    use rand::Rng;
    let tokens: Vec<usize> = (0..cfg.max_doc_len)
        .map(|_| rng.gen_range(3..cfg.vocab_size))
        .collect();
    Document::from_tokens(tokens, cfg.max_doc_len)
}

fn bench_decode(c: &mut Criterion) {
    let cfg = cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model: NeuralModel<f32> = NeuralModel::init(cfg.clone(), &mut rng).unwrap();
    let d = doc(&cfg, &mut rng);

    c.bench_function("encode_120_tokens", |b| {
        b.iter(|| model.context(&d).unwrap())
    });

    let ctx = model.context(&d).unwrap();
    let initial = model.initial_state(&ctx);
    c.bench_function("decode_step", |b| {
        b.iter_batched(
            || initial.clone(),
            |state| model.decode_step(&ctx, &state, STOP).unwrap(),
            BatchSize::SmallInput,
        )
    });

    c.bench_function("decode_5_label_sequence", |b| {
        b.iter(|| {
            let mut state = model.initial_state(&ctx);
            let mut prev = STOP;
            for label in 1..=5 {
                let (_, next) = model.decode_step(&ctx, &state, prev).unwrap();
                state = next;
                prev = label;
            }
        })
    });
}

criterion_group!(benches, bench_decode);
criterion_main!(benches);
