//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinylm::embeddings::DistanceMatrix;
use tinylm::models::{Family, LanguageModel, ModelConfig};
use tinylm::tokenizer::Specials;

pub const VOCAB: usize = 400;

/// Reduced-width model of the given architecture, 64 wide.
pub fn model<T: tinylm::autodiff::Float>(family: Family, layers: usize) -> LanguageModel<T> {
    let mut cfg = ModelConfig::standard(family, layers, VOCAB)
        .and_then(|c| c.with_width(64, 256, 4))
        .expect("valid width");
    cfg.max_len = 32;
    cfg.dropout = 0.0;
    LanguageModel::build(cfg, 0).expect("valid config")
}

/// `n` utterances of 3 to 12 words, framed by `<sos>` and `<eos>`.
pub fn utterances(n: usize, seed: u64) -> Vec<Vec<u32>> {
    let sp = Specials::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..=12);
            let mut s = vec![sp.sos];
            s.extend((0..len).map(|_| rng.gen_range(5..VOCAB as u32)));
            s.push(sp.eos);
            s
        })
        .collect()
}

/// Cosine-like distances between `n` random points in 16 dimensions.
pub fn distances(n: usize, seed: u64) -> DistanceMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    DistanceMatrix::from_fn(n, |i, j| {
        tinylm::embeddings::cosine_distance(&pts[i], &pts[j]).expect("equal dimensions")
    })
}
