//! Word-level vocabulary with five reserved tokens.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::TokenizedUtterance;

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";
pub const PAD: &str = "<pad>";

/// Reserved tokens in id order.
pub const SPECIAL_TOKENS: [&str; 5] = [SOS, EOS, UNK, MASK, PAD];

/// Ids of the reserved tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub sos: u32,
    pub eos: u32,
    pub unk: u32,
    pub mask: u32,
    pub pad: u32,
}

impl Specials {
    pub const fn standard() -> Self {
        Specials {
            sos: 0,
            eos: 1,
            unk: 2,
            mask: 3,
            pad: 4,
        }
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }
}

impl Default for Specials {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    word_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>) -> Result<Self> {
        let mut word_to_id = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            if word_to_id.insert(w.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Vocabulary {
            id_to_word: words,
            word_to_id,
        })
    }

    /// Builds the vocabulary from a `<unk>`-thresholded training corpus. Words are
    /// ordered by descending frequency, then lexicographically, after the specials.
    pub fn build(train: &[TokenizedUtterance]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for u in train {
            for tok in u.tokens() {
                if !SPECIAL_TOKENS.contains(&tok.as_str()) {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let words = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Self::from_words(words)
    }

    /// Vocabulary from an explicit word list (specials are prepended).
    pub fn from_word_list<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let all = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.iter().map(|w| w.as_ref().to_string()))
            .collect();
        Self::from_words(all)
    }

    pub fn specials(&self) -> Specials {
        Specials::standard()
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    /// Non-special words in id order (most frequent first).
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_word[SPECIAL_TOKENS.len()..]
            .iter()
            .map(String::as_str)
    }

    /// `<sos>` + ids + `<eos>`; unknown words map to `<unk>`.
    pub fn encode(&self, u: &TokenizedUtterance) -> Vec<u32> {
        self.encode_words(u.tokens())
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let sp = self.specials();
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(sp.sos);
        ids.extend(
            words
                .iter()
                .map(|w| self.id(w.as_ref()).unwrap_or(sp.unk)),
        );
        ids.push(sp.eos);
        ids
    }

    /// Words for `ids`, dropping `<sos>`, `<eos>` and `<pad>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        let sp = self.specials();
        ids.iter()
            .filter(|&&id| id != sp.sos && id != sp.eos && id != sp.pad)
            .filter_map(|&id| self.word(id).map(str::to_string))
            .collect()
    }

    /// One word per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.id_to_word {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        if words.len() < SPECIAL_TOKENS.len()
            || words[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Config(
                "vocabulary file must start with <sos> <eos> <unk> <mask> <pad>".into(),
            ));
        }
        Self::from_words(words)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&crate::io::read_to_string(path)?)
    }
}

/// Right-padded id matrix with the true length of each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    /// Row-major `rows × cols`.
    pub ids: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.cols..(r + 1) * self.cols]
    }
}

/// Pads every sequence to the batch maximum with `pad_id`.
pub fn pad_batch<S: AsRef<[u32]>>(sequences: &[S], pad_id: u32) -> PaddedBatch {
    let cols = sequences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(cols * sequences.len());
    let mut lengths = Vec::with_capacity(sequences.len());
    for s in sequences {
        let s = s.as_ref();
        ids.extend_from_slice(s);
        ids.extend(std::iter::repeat_n(pad_id, cols - s.len()));
        lengths.push(s.len());
    }
    PaddedBatch {
        ids,
        rows: sequences.len(),
        cols,
        lengths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(words: &[&str]) -> TokenizedUtterance {
        TokenizedUtterance::new(words.iter().map(|w| w.to_string()).collect()).unwrap()
    }

    #[test]
    fn ordering_by_frequency_then_lexicographic() {
        let v = Vocabulary::build(&[utt(&["a", "b"]), utt(&["a"])]).unwrap();
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), Some(6));
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), Some(i as u32));
        }
        let tie = Vocabulary::build(&[utt(&["zeta", "alpha"])]).unwrap();
        assert_eq!(tie.words().collect::<Vec<_>>(), vec!["alpha", "zeta"]);
    }

    #[test]
    fn unk_in_corpus_uses_reserved_id() {
        let v = Vocabulary::build(&[utt(&["<unk>", "a", "<unk>"])]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<unk>"), Some(2));
    }

    #[test]
    fn empty_corpus_is_insufficient() {
        assert!(matches!(
            Vocabulary::build(&[]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn encode_places_specials() {
        let v = Vocabulary::build(&[utt(&["a"])]).unwrap();
        assert_eq!(v.encode(&utt(&["a"])), vec![0, 5, 1]);
        assert_eq!(v.encode_words::<&str>(&[]), vec![0, 1]);
        assert_eq!(v.encode(&utt(&["zzz"])), vec![0, 2, 1]);
    }

    #[test]
    fn padding() {
        let b = pad_batch(&[vec![0, 5, 1], vec![0, 1]], 4);
        assert_eq!(b.ids, vec![0, 5, 1, 0, 1, 4]);
        assert_eq!(b.lengths, vec![3, 2]);
        let single = pad_batch(&[vec![0, 7, 1]], 4);
        assert_eq!(single.ids, vec![0, 7, 1]);
        let equal = pad_batch(&[vec![0, 1], vec![0, 1]], 4);
        assert_eq!(equal.cols, 2);
        assert!(!equal.ids.contains(&4));
    }

    #[test]
    fn text_round_trip_and_validation() {
        let v = Vocabulary::build(&[utt(&["b", "a", "b"])]).unwrap();
        let text = v.to_text();
        assert_eq!(text.lines().nth(5), Some("b"));
        assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            corpus in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 1..6), 1..10),
            pick in 0usize..10,
        ) {
            let utts: Vec<_> = corpus.iter().map(|ws| TokenizedUtterance::new(ws.clone()).unwrap()).collect();
            let v = Vocabulary::build(&utts).unwrap();
            let u = &utts[pick % utts.len()];
            prop_assert_eq!(v.decode(&v.encode(u)), u.tokens().to_vec());
            prop_assert_eq!(Vocabulary::build(&utts).unwrap(), v);
        }
    }
}
