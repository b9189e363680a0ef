//! Template-generated minimal-pair suites and their evaluation.

mod template;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

pub use template::{parse_templates, Lexicon, Piece, Slot, Template};

use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::scoring::{sentence_scores, TokenScorer};
use crate::table::Table;
use crate::tokenizer::Vocabulary;

pub const PAIRS_PER_TEST: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MinimalPair {
    pub good: Vec<String>,
    pub bad: Vec<String>,
    pub test: String,
    pub phenomenon: String,
}

/// Non-special words present in every vocabulary.
pub fn intersect_vocab(vocabularies: &[&Vocabulary]) -> BTreeSet<String> {
    let Some((first, rest)) = vocabularies.split_first() else {
        return BTreeSet::new();
    };
    first
        .words()
        .filter(|w| rest.iter().all(|v| v.contains(w)))
        .map(str::to_string)
        .collect()
}

fn realize(frame: &[Piece], fillers: &BTreeMap<&str, &Vec<String>>) -> Vec<String> {
    frame
        .iter()
        .map(|p| match p {
            Piece::Word(w) => w.clone(),
            Piece::Slot(s) => fillers[s.key.as_str()][s.variant].clone(),
        })
        .collect()
}

/// Lexicon entries whose every member is in `vocab`.
fn filtered_lexicons<'a>(
    t: &'a Template,
    vocab: &BTreeSet<String>,
) -> Result<Vec<(String, Vec<&'a Vec<String>>)>> {
    if let Some(w) = t.literals().find(|w| !vocab.contains(*w)) {
        return Err(Error::EmptySlot {
            test: t.test.clone(),
            slot: format!("literal word {w:?}"),
        });
    }
    t.slot_keys()
        .into_iter()
        .map(|(key, kind)| {
            let entries: Vec<&Vec<String>> = t.lexicons[&kind]
                .iter()
                .filter(|e| e.iter().all(|w| vocab.contains(w)))
                .collect();
            if entries.is_empty() {
                return Err(Error::EmptySlot {
                    test: t.test.clone(),
                    slot: key,
                });
            }
            Ok((key, entries))
        })
        .collect()
}

fn pair_from(t: &Template, slots: &[(String, Vec<&Vec<String>>)], choice: &[usize]) -> MinimalPair {
    let fillers: BTreeMap<&str, &Vec<String>> = slots
        .iter()
        .zip(choice)
        .map(|((k, entries), &c)| (k.as_str(), entries[c]))
        .collect();
    MinimalPair {
        good: realize(&t.good, &fillers),
        bad: realize(&t.bad, &fillers),
        test: t.test.clone(),
        phenomenon: t.phenomenon.clone(),
    }
}

/// Instantiates `pairs_per_test` distinct pairs per template using only words in
/// `vocab`. When a template's space holds fewer distinct pairs, all of them are
/// emitted and a warning is returned.
pub fn instantiate_suite(
    templates: &[Template],
    vocab: &BTreeSet<String>,
    pairs_per_test: usize,
    seed: u64,
) -> Result<(Vec<MinimalPair>, Vec<String>)> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (i, t) in templates.iter().enumerate() {
        let slots = filtered_lexicons(t, vocab)?;
        let mut rng = rng::stream(derive_seed(seed, i as u64), rng::SUITE);
        let space = slots
            .iter()
            .try_fold(1usize, |acc, (_, e)| acc.checked_mul(e.len()));
        let mut chosen: Vec<MinimalPair> = Vec::new();
        let mut seen: HashSet<(Vec<String>, Vec<String>)> = HashSet::new();
        let mut accept = |p: MinimalPair, chosen: &mut Vec<MinimalPair>| {
            if p.good != p.bad && seen.insert((p.good.clone(), p.bad.clone())) {
                chosen.push(p);
            }
        };
        match space {
            Some(n) if n <= pairs_per_test.saturating_mul(4) => {
                let mut choice = vec![0usize; slots.len()];
                let mut all = Vec::with_capacity(n);
                for _ in 0..n {
                    all.push(pair_from(t, &slots, &choice));
                    for (d, (_, e)) in choice.iter_mut().zip(&slots).rev() {
                        *d += 1;
                        if *d < e.len() {
                            break;
                        }
                        *d = 0;
                    }
                }
                all.shuffle(&mut rng);
                for p in all {
                    if chosen.len() == pairs_per_test {
                        break;
                    }
                    accept(p, &mut chosen);
                }
            }
            _ => {
                let max_draws = pairs_per_test.saturating_mul(50);
                let mut draws = 0;
                while chosen.len() < pairs_per_test && draws < max_draws {
                    let choice: Vec<usize> = slots.iter().map(|(_, e)| rng.gen_range(0..e.len())).collect();
                    accept(pair_from(t, &slots, &choice), &mut chosen);
                    draws += 1;
                }
            }
        }
        if chosen.len() < pairs_per_test {
            let msg = format!(
                "test {}: only {} distinct pairs available (requested {pairs_per_test})",
                t.test,
                chosen.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        pairs.extend(chosen);
    }
    Ok((pairs, warnings))
}

/// One pair per line: `bad TAB good TAB test TAB phenomenon`.
pub fn suite_to_tsv(pairs: &[MinimalPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.bad.join(" "),
            p.good.join(" "),
            p.test,
            p.phenomenon
        ));
    }
    out
}

pub fn suite_from_tsv(text: &str, source: &str) -> Result<Vec<MinimalPair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        pairs.push(MinimalPair {
            bad: words(fields[0]),
            good: words(fields[1]),
            test: fields[2].to_string(),
            phenomenon: fields[3].to_string(),
        });
    }
    Ok(pairs)
}

fn encode_strict(vocab: &Vocabulary, words: &[String]) -> Result<Vec<u32>> {
    if let Some(w) = words.iter().find(|w| !vocab.contains(w)) {
        return Err(Error::UnknownWord(w.clone()));
    }
    Ok(vocab.encode_words(words))
}

/// Sentence score under the model's objective; optionally divided by the number
/// of scored tokens.
fn scores<S: TokenScorer + ?Sized>(
    scorer: &S,
    encoded: &[Vec<u32>],
    normalize: bool,
) -> Result<Vec<f64>> {
    let raw = sentence_scores(scorer, encoded)?;
    if !normalize {
        return Ok(raw);
    }
    let sp = scorer.specials();
    Ok(raw
        .into_iter()
        .zip(encoded)
        .map(|(s, ids)| {
            let n = match scorer.objective() {
                crate::models::Objective::Causal => ids.len() - 1,
                crate::models::Objective::Masked => ids.iter().filter(|&&i| !sp.is_special(i)).count(),
            };
            s / n.max(1) as f64
        })
        .collect())
}

/// `true` iff the good sentence scores strictly higher; ties are incorrect.
pub fn verdict(good: f64, bad: f64) -> bool {
    good > bad
}

/// Per-pair verdicts, scored in parallel batches.
pub fn score_pairs<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    pairs: &[MinimalPair],
    normalize: bool,
) -> Result<Vec<bool>> {
    let mut encoded = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        encoded.push(encode_strict(vocab, &p.good)?);
        encoded.push(encode_strict(vocab, &p.bad)?);
    }
    let s = scores(scorer, &encoded, normalize)?;
    Ok(s.chunks(2).map(|c| verdict(c[0], c[1])).collect())
}

pub fn score_pair<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    pair: &MinimalPair,
    normalize: bool,
) -> Result<bool> {
    Ok(score_pairs(scorer, vocab, std::slice::from_ref(pair), normalize)?[0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestResult {
    pub test: String,
    pub phenomenon: String,
    pub n: usize,
    pub correct: usize,
}

impl TestResult {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    /// In order of first appearance in the suite.
    pub tests: Vec<TestResult>,
}

impl SuiteReport {
    pub fn from_verdicts(pairs: &[MinimalPair], verdicts: &[bool]) -> Self {
        let mut tests: Vec<TestResult> = Vec::new();
        for (p, &ok) in pairs.iter().zip(verdicts) {
            let idx = match tests.iter().position(|t| t.test == p.test) {
                Some(i) => i,
                None => {
                    tests.push(TestResult {
                        test: p.test.clone(),
                        phenomenon: p.phenomenon.clone(),
                        n: 0,
                        correct: 0,
                    });
                    tests.len() - 1
                }
            };
            tests[idx].n += 1;
            tests[idx].correct += ok as usize;
        }
        SuiteReport { tests }
    }

    /// Unweighted mean of per-test accuracies.
    pub fn overall(&self) -> f64 {
        if self.tests.is_empty() {
            return 0.0;
        }
        self.tests.iter().map(TestResult::accuracy).sum::<f64>() / self.tests.len() as f64
    }

    /// Mean test accuracy per phenomenon, in order of first appearance.
    pub fn per_phenomenon(&self) -> Vec<(String, f64)> {
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for t in &self.tests {
            match groups.iter_mut().find(|(p, _)| *p == t.phenomenon) {
                Some((_, v)) => v.push(t.accuracy()),
                None => groups.push((t.phenomenon.clone(), vec![t.accuracy()])),
            }
        }
        groups
            .into_iter()
            .map(|(p, v)| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                (p, mean)
            })
            .collect()
    }

    /// CSV `test,phenomenon,n,accuracy`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["test", "phenomenon", "n", "accuracy"]);
        for r in &self.tests {
            t.push([
                r.test.clone(),
                r.phenomenon.clone(),
                r.n.to_string(),
                format!("{:.4}", r.accuracy()),
            ]);
        }
        t
    }
}

pub fn evaluate_suite<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    pairs: &[MinimalPair],
    normalize: bool,
) -> Result<SuiteReport> {
    let verdicts = score_pairs(scorer, vocab, pairs, normalize)?;
    Ok(SuiteReport::from_verdicts(pairs, &verdicts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Objective;
    use crate::scoring::{BigramModel, UniformScorer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_word_list(words).unwrap()
    }

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    const TEMPLATES: &str = "lexicon NOUN: dog/dogs cat/cats\n\
        lexicon VERB: runs/run sleeps/sleep\n\
        test: agree\n\
        phenomenon: agreement\n\
        good: the ⟨NOUN#1.0⟩ ⟨VERB#1.0⟩\n\
        bad: the ⟨NOUN#1.0⟩ ⟨VERB#1.1⟩\n";

    #[test]
    fn intersection() {
        let a = vocab(&["a", "b"]);
        let b = vocab(&["b", "c"]);
        assert_eq!(intersect_vocab(&[&a, &b]), set(&["b"]));
        assert_eq!(intersect_vocab(&[&a]), set(&["a", "b"]));
        let c = vocab(&["z"]);
        assert!(intersect_vocab(&[&a, &c]).is_empty());
    }

    #[test]
    fn small_space_is_exhausted_with_warning() {
        let t = parse_templates(TEMPLATES, "t").unwrap();
        let v = set(&["the", "dog", "dogs", "cat", "cats", "runs", "run", "sleeps", "sleep"]);
        let (pairs, warnings) = instantiate_suite(&t, &v, 2000, 0).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(warnings.len(), 1);
        let (again, _) = instantiate_suite(&t, &v, 2000, 0).unwrap();
        assert_eq!(pairs, again);
    }

    #[test]
    fn vocabulary_filter_and_empty_slot() {
        let t = parse_templates(TEMPLATES, "t").unwrap();
        let v = set(&["the", "dog", "dogs", "runs", "run", "sleeps"]);
        let (pairs, _) = instantiate_suite(&t, &v, 10, 1).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(pairs.iter().all(|p| p.good.iter().chain(&p.bad).all(|w| v.contains(w))));
        let v = set(&["the", "runs", "run"]);
        assert!(matches!(
            instantiate_suite(&t, &v, 10, 1),
            Err(Error::EmptySlot { slot, .. }) if slot == "NOUN#1"
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let t = parse_templates(TEMPLATES, "t").unwrap();
        let v = set(&["the", "dog", "dogs", "cat", "cats", "runs", "run", "sleeps", "sleep"]);
        let (pairs, _) = instantiate_suite(&t, &v, 3, 2).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(suite_from_tsv(&suite_to_tsv(&pairs), "s").unwrap(), pairs);
    }

    #[test]
    fn ties_are_incorrect_and_swaps_flip() {
        let v = vocab(&["the", "dog", "runs", "run"]);
        let p = MinimalPair {
            good: vec!["the".into(), "dog".into(), "runs".into()],
            bad: vec!["the".into(), "dog".into(), "runs".into()],
            test: "t".into(),
            phenomenon: "p".into(),
        };
        let u = UniformScorer {
            vocab_size: v.len(),
            objective: Objective::Causal,
        };
        assert!(!score_pair(&u, &v, &p, false).unwrap());
        let m = BigramModel::random(v.len(), Objective::Causal, &mut ChaCha8Rng::seed_from_u64(0));
        let q = MinimalPair {
            bad: vec!["the".into(), "dog".into(), "run".into()],
            ..p
        };
        let swapped = MinimalPair {
            good: q.bad.clone(),
            bad: q.good.clone(),
            ..q.clone()
        };
        assert_ne!(score_pair(&m, &v, &q, false).unwrap(), score_pair(&m, &v, &swapped, false).unwrap());
    }

    #[test]
    fn unknown_word_is_an_error() {
        let v = vocab(&["the"]);
        let p = MinimalPair {
            good: vec!["the".into(), "cat".into()],
            bad: vec!["cat".into(), "the".into()],
            test: "t".into(),
            phenomenon: "p".into(),
        };
        let u = UniformScorer {
            vocab_size: v.len(),
            objective: Objective::Causal,
        };
        assert!(matches!(score_pair(&u, &v, &p, false), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn report_aggregates_unweighted() {
        let mk = |test: &str, ph: &str| MinimalPair {
            good: vec![],
            bad: vec![],
            test: test.into(),
            phenomenon: ph.into(),
        };
        let pairs = vec![mk("a", "x"), mk("a", "x"), mk("b", "x"), mk("c", "y")];
        let r = SuiteReport::from_verdicts(&pairs, &[true, false, true, true]);
        assert_eq!(r.tests.len(), 3);
        assert!((r.overall() - (0.5 + 1.0 + 1.0) / 3.0).abs() < 1e-12);
        assert_eq!(r.per_phenomenon(), vec![("x".into(), 0.75), ("y".into(), 1.0)]);
        assert_eq!(r.to_table().to_csv().lines().next().unwrap(), "test,phenomenon,n,accuracy");
    }
}
