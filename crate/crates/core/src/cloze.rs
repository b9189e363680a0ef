//! Noun/verb cloze items built from held-out utterances and scored by total class
//! probability mass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};
use crate::models::Objective;
use crate::preprocess::TokenizedUtterance;
use crate::scoring::{sequence_logprobs, TokenScorer};
use crate::table::Table;
use crate::tokenizer::{pad_batch, Vocabulary};

/// Candidates kept per class, most frequent first.
pub const MAX_CANDIDATES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl PosTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NOUN" => Ok(PosTag::Noun),
            "VERB" => Ok(PosTag::Verb),
            "ADJ" => Ok(PosTag::Adj),
            "ADV" => Ok(PosTag::Adv),
            "OTHER" => Ok(PosTag::Other),
            other => Err(Error::Config(format!("unknown POS tag {other:?}"))),
        }
    }
}

/// Word → set of possible tags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PosLexicon {
    tags: BTreeMap<String, BTreeSet<PosTag>>,
}

impl PosLexicon {
    pub fn insert(&mut self, word: impl Into<String>, tag: PosTag) {
        self.tags.entry(word.into()).or_default().insert(tag);
    }

    pub fn tags(&self, word: &str) -> Option<&BTreeSet<PosTag>> {
        self.tags.get(word)
    }

    /// The single tag of a word tagged exactly once.
    pub fn unambiguous(&self, word: &str) -> Option<PosTag> {
        match self.tags.get(word) {
            Some(set) if set.len() == 1 => set.iter().next().copied(),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Two whitespace-separated columns, `word tag`; a word may repeat with other tags.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lex = PosLexicon::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg,
            };
            if cols.len() != 2 {
                return Err(err(format!("expected `word tag`, got {line:?}")));
            }
            let tag = cols[1].parse().map_err(|e: Error| err(e.to_string()))?;
            lex.insert(cols[0], tag);
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, tags) in &self.tags {
            for t in tags {
                out.push_str(&format!("{w}\t{t}\n"));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClozeItem {
    pub tokens: Vec<String>,
    pub blank_index: usize,
    pub target_class: PosTag,
}

impl ClozeItem {
    pub fn target(&self) -> &str {
        &self.tokens[self.blank_index]
    }
}

/// One item per position holding a word that is unambiguously a noun or a verb.
pub fn extract_clozes(split: &[TokenizedUtterance], lexicon: &PosLexicon) -> Vec<ClozeItem> {
    let mut items = Vec::new();
    for u in split {
        for (i, w) in u.tokens().iter().enumerate() {
            if let Some(tag @ (PosTag::Noun | PosTag::Verb)) = lexicon.unambiguous(w) {
                items.push(ClozeItem {
                    tokens: u.tokens().to_vec(),
                    blank_index: i,
                    target_class: tag,
                });
            }
        }
    }
    items
}

/// Whether an item's own word competes among its class's candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CandidateMode {
    #[default]
    IncludeTarget,
    ExcludeTarget,
}

/// Vocabulary ids of unambiguous nouns and verbs, most frequent first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidates {
    pub noun: Vec<u32>,
    pub verb: Vec<u32>,
}

impl Candidates {
    /// Vocabulary ids ascend with decreasing training frequency, so the first
    /// `cap` members of each class are the most frequent.
    pub fn from_vocab(vocab: &Vocabulary, lexicon: &PosLexicon, cap: usize) -> Result<Self> {
        let class = |tag: PosTag| -> Vec<u32> {
            vocab
                .words()
                .filter(|w| lexicon.unambiguous(w) == Some(tag))
                .filter_map(|w| vocab.id(w))
                .take(cap)
                .collect()
        };
        let c = Candidates {
            noun: class(PosTag::Noun),
            verb: class(PosTag::Verb),
        };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        if self.noun.is_empty() {
            return Err(Error::EmptyClass("NOUN".into()));
        }
        if self.verb.is_empty() {
            return Err(Error::EmptyClass("VERB".into()));
        }
        Ok(())
    }

    fn for_item(&self, target: u32, class: PosTag, mode: CandidateMode) -> Result<Candidates> {
        let mut c = self.clone();
        if mode == CandidateMode::ExcludeTarget {
            match class {
                PosTag::Noun => c.noun.retain(|&id| id != target),
                _ => c.verb.retain(|&id| id != target),
            }
        }
        c.check()?;
        Ok(c)
    }
}

/// Log class masses `(noun, verb)` for one item.
///
/// Masked models read the mask-position distribution once; causal models score
/// the full sentence once per candidate.
pub fn class_mass<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    item: &ClozeItem,
    candidates: &Candidates,
    mode: CandidateMode,
) -> Result<(f64, f64)> {
    Ok(class_masses(scorer, vocab, std::slice::from_ref(item), candidates, mode)?[0])
}

pub fn class_masses<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    items: &[ClozeItem],
    candidates: &Candidates,
    mode: CandidateMode,
) -> Result<Vec<(f64, f64)>> {
    let mut prepared = Vec::with_capacity(items.len());
    for item in items {
        let target = vocab
            .id(item.target())
            .ok_or_else(|| Error::UnknownWord(item.target().to_string()))?;
        let ids = vocab.encode_words(&item.tokens);
        let blank = item.blank_index + 1;
        prepared.push((ids, blank, candidates.for_item(target, item.target_class, mode)?));
    }
    match scorer.objective() {
        Objective::Masked => {
            let mask = scorer.specials().mask;
            let masked: Vec<Vec<u32>> = prepared
                .iter()
                .map(|(ids, blank, _)| {
                    let mut m = ids.clone();
                    m[*blank] = mask;
                    m
                })
                .collect();
            let v = scorer.vocab_size();
            let mut out = Vec::with_capacity(items.len());
            for (chunk, prep) in masked
                .chunks(crate::scoring::SCORE_BATCH)
                .zip(prepared.chunks(crate::scoring::SCORE_BATCH))
            {
                let batch = pad_batch(chunk, scorer.specials().pad);
                let lp = scorer.log_probs(&batch)?;
                for (r, (_, blank, c)) in prep.iter().enumerate() {
                    let row = &lp[(r * batch.cols + blank) * v..(r * batch.cols + blank + 1) * v];
                    let mass = |ids: &[u32]| log_sum_exp(ids.iter().map(|&i| row[i as usize]));
                    out.push((mass(&c.noun), mass(&c.verb)));
                }
            }
            Ok(out)
        }
        Objective::Causal => {
            let mut out = Vec::with_capacity(items.len());
            for (ids, blank, c) in &prepared {
                let fill = |w: &u32| {
                    let mut s = ids.clone();
                    s[*blank] = *w;
                    s
                };
                let sentences: Vec<Vec<u32>> = c.noun.iter().chain(&c.verb).map(fill).collect();
                let scores = sequence_logprobs(scorer, &sentences)?;
                let (n, v) = scores.split_at(c.noun.len());
                out.push((log_sum_exp(n.iter().copied()), log_sum_exp(v.iter().copied())));
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClozeOutcome {
    pub mass_noun: f64,
    pub mass_verb: f64,
    pub correct: bool,
}

/// Strictly more mass on the target class; ties are incorrect.
pub fn judge(target: PosTag, mass_noun: f64, mass_verb: f64) -> bool {
    match target {
        PosTag::Noun => mass_noun > mass_verb,
        _ => mass_verb > mass_noun,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClozeReport {
    pub n_clozes: usize,
    pub n_noun: usize,
    pub n_correct: usize,
}

impl ClozeReport {
    pub fn noun_ratio(&self) -> f64 {
        ratio(self.n_noun, self.n_clozes)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.n_correct, self.n_clozes)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn evaluate_clozes<S: TokenScorer + ?Sized>(
    scorer: &S,
    vocab: &Vocabulary,
    items: &[ClozeItem],
    candidates: &Candidates,
    mode: CandidateMode,
) -> Result<(ClozeReport, Vec<ClozeOutcome>)> {
    let masses = class_masses(scorer, vocab, items, candidates, mode)?;
    let outcomes: Vec<ClozeOutcome> = items
        .iter()
        .zip(masses)
        .map(|(item, (n, v))| ClozeOutcome {
            mass_noun: n,
            mass_verb: v,
            correct: judge(item.target_class, n, v),
        })
        .collect();
    let report = ClozeReport {
        n_clozes: items.len(),
        n_noun: items.iter().filter(|i| i.target_class == PosTag::Noun).count(),
        n_correct: outcomes.iter().filter(|o| o.correct).count(),
    };
    Ok((report, outcomes))
}

/// CSV `utterance,blank_index,target_class,mass_noun,mass_verb,correct`.
pub fn dump_table(items: &[ClozeItem], outcomes: &[ClozeOutcome]) -> Table {
    let mut t = Table::new(["utterance", "blank_index", "target_class", "mass_noun", "mass_verb", "correct"]);
    for (i, o) in items.iter().zip(outcomes) {
        t.push([
            i.tokens.join(" "),
            i.blank_index.to_string(),
            i.target_class.to_string(),
            format!("{:.6}", o.mass_noun),
            format!("{:.6}", o.mass_verb),
            o.correct.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{BigramModel, UniformScorer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lex() -> PosLexicon {
        PosLexicon::parse("like VERB\ndogs NOUN\nwe OTHER\nrun VERB\nrun NOUN\ncats NOUN\neat VERB\n", "l").unwrap()
    }

    fn utt(s: &str) -> TokenizedUtterance {
        TokenizedUtterance::from_line(s)
    }

    #[test]
    fn extraction_follows_unambiguous_tags() {
        let items = extract_clozes(&[utt("we like dogs")], &lex());
        assert_eq!(items.len(), 2);
        assert_eq!((items[0].blank_index, items[0].target_class), (1, PosTag::Verb));
        assert_eq!((items[1].blank_index, items[1].target_class), (2, PosTag::Noun));
        assert!(extract_clozes(&[utt("we run")], &lex()).is_empty());
        assert!(extract_clozes(&[utt("we like dogs")], &PosLexicon::default()).is_empty());
    }

    #[test]
    fn uniform_masked_mass_difference_is_log_count_ratio() {
        let vocab = Vocabulary::from_word_list(&["we", "like", "dogs", "cats", "eat", "run"]).unwrap();
        let u = UniformScorer {
            vocab_size: vocab.len(),
            objective: Objective::Masked,
        };
        let cands = Candidates {
            noun: vec![vocab.id("dogs").unwrap(), vocab.id("cats").unwrap(), vocab.id("run").unwrap()],
            verb: vec![vocab.id("like").unwrap()],
        };
        let item = extract_clozes(&[utt("we like dogs")], &lex()).remove(1);
        let (n, v) = class_mass(&u, &vocab, &item, &cands, CandidateMode::IncludeTarget).unwrap();
        assert!((n - v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn causal_single_candidate_equals_sentence_score() {
        let vocab = Vocabulary::from_word_list(&["we", "like", "dogs", "cats", "eat"]).unwrap();
        let m = BigramModel::random(vocab.len(), Objective::Causal, &mut ChaCha8Rng::seed_from_u64(4));
        let cands = Candidates {
            noun: vec![vocab.id("cats").unwrap()],
            verb: vec![vocab.id("eat").unwrap()],
        };
        let item = extract_clozes(&[utt("we like dogs")], &lex()).remove(1);
        let (n, v) = class_mass(&m, &vocab, &item, &cands, CandidateMode::IncludeTarget).unwrap();
        let s = |w: &str| crate::scoring::sequence_logprob(&m, &vocab.encode_words(&["we", "like", w])).unwrap();
        assert_eq!(n, s("cats"));
        assert_eq!(v, s("eat"));
    }

    #[test]
    fn exclude_mode_drops_target_and_can_empty_a_class() {
        let vocab = Vocabulary::from_word_list(&["we", "like", "dogs", "cats"]).unwrap();
        let u = UniformScorer {
            vocab_size: vocab.len(),
            objective: Objective::Masked,
        };
        let cands = Candidates::from_vocab(&vocab, &lex(), MAX_CANDIDATES).unwrap();
        let item = extract_clozes(&[utt("we like dogs")], &lex()).remove(1);
        let inc = class_mass(&u, &vocab, &item, &cands, CandidateMode::IncludeTarget).unwrap();
        let exc = class_mass(&u, &vocab, &item, &cands, CandidateMode::ExcludeTarget).unwrap();
        assert!((inc.0 - exc.0 - 2f64.ln()).abs() < 1e-12);
        assert_eq!(inc.1, exc.1);
        let verb_item = extract_clozes(&[utt("we like dogs")], &lex()).remove(0);
        assert!(matches!(
            class_mass(&u, &vocab, &verb_item, &cands, CandidateMode::ExcludeTarget),
            Err(Error::EmptyClass(_))
        ));
    }

    #[test]
    fn ties_count_as_incorrect() {
        assert!(!judge(PosTag::Noun, -1.0, -1.0));
        assert!(!judge(PosTag::Verb, -1.0, -1.0));
        assert!(judge(PosTag::Verb, -2.0, -1.0));
    }

    #[test]
    fn lexicon_round_trip_and_errors() {
        let l = lex();
        assert_eq!(PosLexicon::parse(&l.to_text(), "x").unwrap(), l);
        assert!(PosLexicon::parse("dog NOUNISH\n", "x").is_err());
        assert!(PosLexicon::parse("dog\n", "x").is_err());
    }
}
