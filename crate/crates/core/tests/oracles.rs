//! Scoring, acceptability and cloze results against brute-force enumeration on
//! bigram-table models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinylm::autodiff::log_sum_exp;
use tinylm::cloze::{class_mass, Candidates, CandidateMode, ClozeItem, PosTag};
use tinylm::models::Objective;
use tinylm::scoring::{pseudo_logprob, sequence_logprob, BigramModel, TokenScorer};
use tinylm::tokenizer::Vocabulary;
use tinylm::zorro::{score_pair, score_pairs, MinimalPair, SuiteReport};

const WORDS: [&str; 8] = ["the", "baby", "gave", "she", "my", "book", "dog", "runs"];

fn vocab() -> Vocabulary {
    Vocabulary::from_word_list(&WORDS).unwrap()
}

fn bigram(objective: Objective, seed: u64) -> BigramModel {
    BigramModel::random(vocab().len(), objective, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Joint log-probability of a whole sequence as a product of transitions.
fn chain(m: &BigramModel, ids: &[u32]) -> f64 {
    ids.windows(2).map(|w| m.logp(w[0], w[1])).sum()
}

/// `log P(ids[j] | all other positions)` by normalizing the joint over every
/// possible filler of position `j`.
fn conditional(m: &BigramModel, ids: &[u32], j: usize, v: usize) -> f64 {
    let joint = |w: u32| {
        let mut s = ids.to_vec();
        s[j] = w;
        chain(m, &s)
    };
    joint(ids[j]) - log_sum_exp((0..v as u32).map(joint))
}

fn brute_pseudo(m: &BigramModel, ids: &[u32], v: usize) -> f64 {
    (1..ids.len() - 1).map(|j| conditional(m, ids, j, v)).sum()
}

fn random_sentence(rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(1..=6);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
}

#[test]
fn sequence_logprob_matches_chain_rule() {
    let v = vocab();
    let m = bigram(Objective::Causal, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let ids = v.encode_words(&random_sentence(&mut rng));
        assert!((sequence_logprob(&m, &ids).unwrap() - chain(&m, &ids)).abs() < 1e-9);
    }
}

#[test]
fn pseudo_logprob_matches_enumeration() {
    let v = vocab();
    let m = bigram(Objective::Masked, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let ids = v.encode_words(&random_sentence(&mut rng));
        let got = pseudo_logprob(&m, &ids).unwrap();
        assert!((got - brute_pseudo(&m, &ids, v.len())).abs() < 1e-9);
    }
}

#[test]
fn verdicts_match_brute_force_on_random_pairs() {
    let v = vocab();
    for objective in [Objective::Causal, Objective::Masked] {
        let m = bigram(objective, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<MinimalPair> = (0..50)
            .map(|_| MinimalPair {
                good: random_sentence(&mut rng),
                bad: random_sentence(&mut rng),
                test: "t".into(),
                phenomenon: "p".into(),
            })
            .collect();
        let got = score_pairs(&m, &v, &pairs, false).unwrap();
        for (p, g) in pairs.iter().zip(got) {
            let (a, b) = (v.encode_words(&p.good), v.encode_words(&p.bad));
            let expected = match objective {
                Objective::Causal => chain(&m, &a) > chain(&m, &b),
                Objective::Masked => brute_pseudo(&m, &a, v.len()) > brute_pseudo(&m, &b, v.len()),
            };
            assert_eq!(g, expected, "{:?} vs {:?}", p.good, p.bad);
        }
    }
}

#[test]
fn figure_style_pair_under_constructed_oracle() {
    let v = vocab();
    let n = v.len();
    let good = ["she", "gave", "the", "baby", "my", "book"];
    let bad = ["the", "baby", "gave", "she", "my", "book"];
    // Favour every transition of the good sentence.
    let mut scores = vec![0.0; n * n];
    let ids = v.encode_words(&good);
    for w in ids.windows(2) {
        scores[w[0] as usize * n + w[1] as usize] = 5.0;
    }
    let mut table = Vec::with_capacity(n * n);
    for row in scores.chunks(n) {
        let lse = log_sum_exp(row.iter().copied());
        table.extend(row.iter().map(|x| x - lse));
    }
    for objective in [Objective::Causal, Objective::Masked] {
        let m = BigramModel::new(n, table.clone(), objective).unwrap();
        let pair = |g: &[&str], b: &[&str]| MinimalPair {
            good: g.iter().map(|s| s.to_string()).collect(),
            bad: b.iter().map(|s| s.to_string()).collect(),
            test: "t".into(),
            phenomenon: "p".into(),
        };
        assert!(score_pair(&m, &v, &pair(&good, &bad), false).unwrap());
        assert!(!score_pair(&m, &v, &pair(&bad, &good), false).unwrap());
        assert!(!score_pair(&m, &v, &pair(&good, &good), false).unwrap());
    }
}

#[test]
fn coin_flip_verdicts_average_to_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<MinimalPair> = (0..2000)
        .map(|i| MinimalPair {
            good: vec![format!("g{i}")],
            bad: vec![format!("b{i}")],
            test: "t".into(),
            phenomenon: "p".into(),
        })
        .collect();
    let verdicts: Vec<bool> = (0..2000).map(|_| rng.gen_bool(0.5)).collect();
    let acc = SuiteReport::from_verdicts(&pairs, &verdicts).overall();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

fn cloze_fixture() -> (Vocabulary, ClozeItem, Candidates) {
    let v = vocab();
    let item = ClozeItem {
        tokens: ["the", "dog", "gave", "my", "book"].iter().map(|s| s.to_string()).collect(),
        blank_index: 1,
        target_class: PosTag::Noun,
    };
    let c = Candidates {
        noun: vec![v.id("dog").unwrap(), v.id("baby").unwrap()],
        verb: vec![v.id("gave").unwrap(), v.id("runs").unwrap()],
    };
    (v, item, c)
}

#[test]
fn causal_class_mass_matches_sentence_enumeration() {
    let (v, item, c) = cloze_fixture();
    let m = bigram(Objective::Causal, 8);
    let (n, vb) = class_mass(&m, &v, &item, &c, CandidateMode::IncludeTarget).unwrap();
    let ids = v.encode_words(&item.tokens);
    let mass = |cands: &[u32]| {
        log_sum_exp(cands.iter().map(|&w| {
            let mut s = ids.clone();
            s[item.blank_index + 1] = w;
            chain(&m, &s)
        }))
    };
    assert!((n - mass(&c.noun)).abs() < 1e-9);
    assert!((vb - mass(&c.verb)).abs() < 1e-9);
}

#[test]
fn masked_class_mass_matches_conditional_enumeration() {
    let (v, item, c) = cloze_fixture();
    let m = bigram(Objective::Masked, 9);
    let (n, vb) = class_mass(&m, &v, &item, &c, CandidateMode::IncludeTarget).unwrap();
    let ids = v.encode_words(&item.tokens);
    let j = item.blank_index + 1;
    let mass = |cands: &[u32]| {
        log_sum_exp(cands.iter().map(|&w| {
            let mut s = ids.clone();
            s[j] = w;
            conditional(&m, &s, j, v.len())
        }))
    };
    assert!((n - mass(&c.noun)).abs() < 1e-9);
    assert!((vb - mass(&c.verb)).abs() < 1e-9);
}

#[test]
fn class_mass_ignores_candidate_order() {
    let (v, item, c) = cloze_fixture();
    for objective in [Objective::Causal, Objective::Masked] {
        let m = bigram(objective, 10);
        let rev = Candidates {
            noun: c.noun.iter().rev().copied().collect(),
            verb: c.verb.iter().rev().copied().collect(),
        };
        let a = class_mass(&m, &v, &item, &c, CandidateMode::IncludeTarget).unwrap();
        let b = class_mass(&m, &v, &item, &rev, CandidateMode::IncludeTarget).unwrap();
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }
}

#[test]
fn bigram_oracle_is_a_proper_scorer() {
    let m = bigram(Objective::Causal, 11);
    assert_eq!(m.vocab_size(), vocab().len());
    for prev in 0..m.vocab_size() as u32 {
        let total = log_sum_exp((0..m.vocab_size() as u32).map(|w| m.logp(prev, w)));
        assert!(total.abs() < 1e-12);
    }
}
