use criterion::{black_box, criterion_group, criterion_main, Criterion};

use tinylm::models::ARCHITECTURES;
use tinylm::scoring::{perplexity, sentence_scores};
use tinylm::tokenizer::{pad_batch, Specials};
use tinylm::trainer::{causal_targets, loss_and_grads};
use tinylm_bench::{model, utterances};

fn forward_backward(c: &mut Criterion) {
    let sp = Specials::standard();
    let data = utterances(32, 1);
    let batch = pad_batch(&data, sp.pad);
    let targets = causal_targets(&batch, sp.pad);
    let mut g = c.benchmark_group("train_step_f32_batch32");
    for &(family, layers) in &ARCHITECTURES {
        let m = model::<f32>(family, layers);
        g.bench_function(m.config().tag(), |b| {
            b.iter(|| loss_and_grads(&m, black_box(&batch), &targets, None).unwrap())
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let data = utterances(64, 2);
    let mut g = c.benchmark_group("score_64_utterances_f32");
    g.sample_size(20);
    for &(family, layers) in &ARCHITECTURES {
        let m = model::<f32>(family, layers);
        g.bench_function(format!("{}/sentences", m.config().tag()), |b| {
            b.iter(|| sentence_scores(&m, black_box(&data)).unwrap())
        });
        g.bench_function(format!("{}/perplexity", m.config().tag()), |b| {
            b.iter(|| perplexity(&m, black_box(&data)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward_backward, scoring);
criterion_main!(benches);
