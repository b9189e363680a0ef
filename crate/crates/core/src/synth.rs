//! A small probabilistic grammar with subject-verb number agreement, used for
//! demo corpora and end-to-end checks.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::cloze::{PosLexicon, PosTag};
use crate::rng;

/// (singular, plural)
pub const NOUNS: [(&str, &str); 12] = [
    ("dog", "dogs"),
    ("cat", "cats"),
    ("ball", "balls"),
    ("baby", "babies"),
    ("bird", "birds"),
    ("car", "cars"),
    ("cup", "cups"),
    ("book", "books"),
    ("duck", "ducks"),
    ("shoe", "shoes"),
    ("apple", "apples"),
    ("truck", "trucks"),
];

/// (third-person singular, plural)
pub const TRANSITIVE: [(&str, &str); 8] = [
    ("sees", "see"),
    ("wants", "want"),
    ("likes", "like"),
    ("finds", "find"),
    ("gets", "get"),
    ("holds", "hold"),
    ("eats", "eat"),
    ("takes", "take"),
];

pub const INTRANSITIVE: [(&str, &str); 2] = [("runs", "run"), ("sleeps", "sleep")];

pub const ADJECTIVES: [&str; 8] = ["big", "little", "red", "happy", "soft", "new", "good", "small"];

pub const DETERMINERS_BOTH: [&str; 3] = ["the", "my", "your"];
pub const DETERMINERS_SG: [&str; 2] = ["this", "a"];
pub const DETERMINERS_PL: [&str; 1] = ["these"];

const P_TRANSITIVE: f64 = 0.7;
const P_ADJECTIVE: f64 = 0.3;
const P_PLURAL: f64 = 0.5;

/// Zipf-like weights so that word frequencies are distinct.
fn weights(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|i| 1.0 / (i as f64 + 1.0).sqrt())).expect("positive weights")
}

struct Sampler {
    noun: WeightedIndex<f64>,
    trans: WeightedIndex<f64>,
    intrans: WeightedIndex<f64>,
    adj: WeightedIndex<f64>,
}

impl Sampler {
    fn new() -> Self {
        Sampler {
            noun: weights(NOUNS.len()),
            trans: weights(TRANSITIVE.len()),
            intrans: weights(INTRANSITIVE.len()),
            adj: weights(ADJECTIVES.len()),
        }
    }

    fn noun_phrase<R: Rng>(&self, rng: &mut R, plural: bool, out: &mut Vec<&'static str>) {
        let dets: Vec<&'static str> = if plural {
            DETERMINERS_BOTH.iter().chain(&DETERMINERS_PL).copied().collect()
        } else {
            DETERMINERS_BOTH.iter().chain(&DETERMINERS_SG).copied().collect()
        };
        out.push(dets[rng.gen_range(0..dets.len())]);
        if rng.gen_bool(P_ADJECTIVE) {
            out.push(ADJECTIVES[self.adj.sample(rng)]);
        }
        let (sg, pl) = NOUNS[self.noun.sample(rng)];
        out.push(if plural { pl } else { sg });
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> String {
        let mut words = Vec::with_capacity(8);
        let plural = rng.gen_bool(P_PLURAL);
        self.noun_phrase(rng, plural, &mut words);
        if rng.gen_bool(P_TRANSITIVE) {
            let (sg, pl) = TRANSITIVE[self.trans.sample(rng)];
            words.push(if plural { pl } else { sg });
            let object_plural = rng.gen_bool(P_PLURAL);
            self.noun_phrase(rng, object_plural, &mut words);
        } else {
            let (sg, pl) = INTRANSITIVE[self.intrans.sample(rng)];
            words.push(if plural { pl } else { sg });
        }
        words.join(" ")
    }
}

/// `n` utterances, one per line, drawn from the grammar.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = rng::stream(seed, rng::SYNTH);
    let s = Sampler::new();
    (0..n).map(|_| s.sentence(&mut rng)).collect()
}

pub fn pos_lexicon() -> PosLexicon {
    let mut lex = PosLexicon::default();
    for (sg, pl) in NOUNS {
        lex.insert(sg, PosTag::Noun);
        lex.insert(pl, PosTag::Noun);
    }
    for (sg, pl) in TRANSITIVE.iter().chain(&INTRANSITIVE) {
        lex.insert(*sg, PosTag::Verb);
        lex.insert(*pl, PosTag::Verb);
    }
    for a in ADJECTIVES {
        lex.insert(a, PosTag::Adj);
    }
    for d in DETERMINERS_BOTH.iter().chain(&DETERMINERS_SG).chain(&DETERMINERS_PL) {
        lex.insert(*d, PosTag::Other);
    }
    lex
}

fn pairs(list: &[(&str, &str)]) -> String {
    list.iter().map(|(a, b)| format!("{a}/{b}")).collect::<Vec<_>>().join(" ")
}

/// Agreement minimal-pair templates over the grammar's lexicon.
pub fn agreement_templates() -> String {
    format!(
        "\
lexicon NOUN: {nouns}
lexicon TVERB: {trans}
lexicon IVERB: {intrans}
lexicon ADJ: {adjs}

test: agreement_subject_verb-singular
phenomenon: agreement_subject_verb
good: the ⟨NOUN#1.0⟩ ⟨TVERB#1.0⟩ the ⟨NOUN#2.0⟩
bad: the ⟨NOUN#1.0⟩ ⟨TVERB#1.1⟩ the ⟨NOUN#2.0⟩

test: agreement_subject_verb-plural
phenomenon: agreement_subject_verb
good: the ⟨NOUN#1.1⟩ ⟨TVERB#1.1⟩ the ⟨NOUN#2.0⟩
bad: the ⟨NOUN#1.1⟩ ⟨TVERB#1.0⟩ the ⟨NOUN#2.0⟩

test: agreement_subject_verb-across_adjective
phenomenon: agreement_subject_verb
good: my ⟨ADJ#1⟩ ⟨NOUN#1.1⟩ ⟨IVERB#1.1⟩
bad: my ⟨ADJ#1⟩ ⟨NOUN#1.1⟩ ⟨IVERB#1.0⟩

test: agreement_determiner_noun-this_these
phenomenon: agreement_determiner_noun
good: this ⟨NOUN#1.0⟩ ⟨IVERB#1.0⟩
bad: these ⟨NOUN#1.0⟩ ⟨IVERB#1.0⟩
",
        nouns = pairs(&NOUNS),
        trans = pairs(&TRANSITIVE),
        intrans = pairs(&INTRANSITIVE),
        adjs = ADJECTIVES.join(" "),
    )
}

/// Syntactic category file for the grammar's open-class words.
pub fn syntactic_categories() -> String {
    let flat = |l: &[(&str, &str)]| l.iter().flat_map(|(a, b)| [*a, *b]).collect::<Vec<_>>().join(" ");
    let verbs: Vec<(&str, &str)> = TRANSITIVE.iter().chain(&INTRANSITIVE).copied().collect();
    format!(
        "NOUN: {}\nVERB: {}\nADJ: {}\n",
        flat(&NOUNS),
        flat(&verbs),
        ADJECTIVES.join(" ")
    )
}

pub fn vocabulary_size() -> usize {
    2 * (NOUNS.len() + TRANSITIVE.len() + INTRANSITIVE.len())
        + ADJECTIVES.len()
        + DETERMINERS_BOTH.len()
        + DETERMINERS_SG.len()
        + DETERMINERS_PL.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::CategoryFile;
    use crate::zorro::parse_templates;

    fn plural_noun(w: &str) -> Option<bool> {
        NOUNS.iter().find_map(|(s, p)| (*s == w).then_some(false).or((*p == w).then_some(true)))
    }

    fn plural_verb(w: &str) -> Option<bool> {
        TRANSITIVE
            .iter()
            .chain(&INTRANSITIVE)
            .find_map(|(s, p)| (*s == w).then_some(false).or((*p == w).then_some(true)))
    }

    #[test]
    fn subjects_agree_with_verbs() {
        for line in generate_corpus(2000, 5) {
            let words: Vec<&str> = line.split(' ').collect();
            let v = words.iter().position(|w| plural_verb(w).is_some()).unwrap();
            assert_eq!(plural_noun(words[v - 1]), plural_verb(words[v]), "{line}");
            assert!(words.len() >= 3 && words.len() <= 8);
        }
    }

    #[test]
    fn deterministic_and_covering() {
        let a = generate_corpus(5000, 1);
        assert_eq!(a, generate_corpus(5000, 1));
        assert_ne!(a, generate_corpus(5000, 2));
        let seen: std::collections::BTreeSet<&str> = a.iter().flat_map(|l| l.split(' ')).collect();
        assert_eq!(seen.len(), vocabulary_size());
        assert!((50..=70).contains(&vocabulary_size()));
    }

    #[test]
    fn bundled_files_parse() {
        assert_eq!(parse_templates(&agreement_templates(), "synth").unwrap().len(), 4);
        let cats = CategoryFile::parse(&syntactic_categories(), "synth").unwrap();
        assert_eq!(cats.labels(), vec!["NOUN", "VERB", "ADJ"]);
        let lex = pos_lexicon();
        assert_eq!(lex.len(), vocabulary_size());
        assert_eq!(lex.unambiguous("babies"), Some(PosTag::Noun));
    }
}
