use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Words kept per category.
pub const TOP_K: usize = 6;

pub const DEFAULT_SYNTACTIC: &str = "\
NOUN: dog cat ball baby bird car cup book duck shoe apple truck juice milk water mommy daddy
VERB: see want like find get hold eat take go come put look play make give run sleep
ADJ: big little red happy soft new good small hot wet dirty pretty blue yellow green
ADV: now here there up down again too very away back out
";

pub const DEFAULT_SEMANTIC: &str = "\
body_parts: nose eye eyes ear ears mouth hand hands foot feet toe toes head hair tummy
clothing: shoe shoes sock socks hat shirt pants coat diaper boots jacket dress
animals: dog cat bird duck fish cow horse pig bear sheep bunny monkey
places: house home park outside store school bathroom kitchen room bed garden
food: apple banana cookie milk juice water cheese bread egg cracker cereal
toys: ball block blocks doll puzzle book balloon bubbles teddy crayon
vehicles: car truck bus train boat plane bike tractor
household: cup spoon bowl plate chair table door window blanket towel bottle
";

/// Ordered `label → words` lists with disjoint membership.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryFile {
    pub categories: Vec<(String, Vec<String>)>,
}

impl CategoryFile {
    /// One `label: w1 w2 ...` line per category.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut categories: Vec<(String, Vec<String>)> = Vec::new();
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: source.to_string(),
                line: i + 1,
                msg,
            };
            let (label, words) = line
                .split_once(':')
                .ok_or_else(|| err(format!("expected `label: words`, got {line:?}")))?;
            let label = label.trim();
            if label.is_empty() {
                return Err(err("empty label".into()));
            }
            if categories.iter().any(|(l, _)| l == label) {
                return Err(err(format!("label {label:?} appears twice")));
            }
            let mut list = Vec::new();
            for w in words.split_whitespace() {
                if let Some(prev) = owner.insert(w.to_string(), label.to_string()) {
                    if prev != label {
                        return Err(err(format!("{w:?} is listed under both {prev:?} and {label:?}")));
                    }
                    continue;
                }
                list.push(w.to_string());
            }
            categories.push((label.to_string(), list));
        }
        if categories.is_empty() {
            return Err(Error::Parse {
                path: source.to_string(),
                line: 0,
                msg: "no categories".into(),
            });
        }
        Ok(CategoryFile { categories })
    }

    pub fn labels(&self) -> Vec<&str> {
        self.categories.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn label_of(&self, word: &str) -> Option<&str> {
        self.categories
            .iter()
            .find(|(_, ws)| ws.iter().any(|w| w == word))
            .map(|(l, _)| l.as_str())
    }
}

/// The `k` most frequent members with nonzero frequency; equal counts go to the
/// lexicographically smaller word. A warning is returned when fewer than `k`
/// members qualify.
pub fn select_category_words(
    members: &[String],
    frequencies: &BTreeMap<String, usize>,
    k: usize,
) -> (Vec<String>, Option<String>) {
    let unique: BTreeSet<&String> = members.iter().collect();
    let mut ranked: Vec<(usize, &String)> = unique
        .into_iter()
        .filter_map(|w| frequencies.get(w).filter(|&&c| c > 0).map(|&c| (c, w)))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let chosen: Vec<String> = ranked.iter().take(k).map(|(_, w)| (*w).clone()).collect();
    let warning = (chosen.len() < k).then(|| {
        format!(
            "only {} of {k} requested words are in the vocabulary",
            chosen.len()
        )
    });
    (chosen, warning)
}
