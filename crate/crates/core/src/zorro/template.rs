//! Minimal-pair template files.
//!
//! ```text
//! lexicon NOUN: dog/dogs cat/cats
//! test: subject_verb_agreement
//! phenomenon: agreement
//! good: the ⟨NOUN#1.1⟩ ⟨VERB#1.1⟩
//! bad: the ⟨NOUN#1.1⟩ ⟨VERB#1.0⟩
//! ```
//!
//! A slot is `⟨TYPE[#instance][.variant]⟩`. Slots with the same `TYPE#instance`
//! share one sampled lexicon entry across both frames; an entry may be a
//! slash-joined tuple and `.variant` picks a member (default 0). Slots without an
//! instance are keyed by their occurrence order within the frame. Lexicons before
//! the first `test:` are global; later ones belong to the current test.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub kind: String,
    /// `TYPE#instance`; equal keys share a filler.
    pub key: String,
    pub variant: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Piece {
    Word(String),
    Slot(Slot),
}

pub type Lexicon = Vec<Vec<String>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    pub test: String,
    pub phenomenon: String,
    pub good: Vec<Piece>,
    pub bad: Vec<Piece>,
    pub lexicons: BTreeMap<String, Lexicon>,
}

impl Template {
    /// Distinct slot keys in order of first appearance, with their type.
    pub fn slot_keys(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        for p in self.good.iter().chain(&self.bad) {
            if let Piece::Slot(s) = p {
                if !out.iter().any(|(k, _)| *k == s.key) {
                    out.push((s.key.clone(), s.kind.clone()));
                }
            }
        }
        out
    }

    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.good.iter().chain(&self.bad).filter_map(|p| match p {
            Piece::Word(w) => Some(w.as_str()),
            Piece::Slot(_) => None,
        })
    }
}

fn parse_error(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_frame(text: &str, source: &str, line: usize) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for token in text.split_whitespace() {
        let Some(inner) = token.strip_prefix('⟨').and_then(|t| t.strip_suffix('⟩')) else {
            if token.contains('⟨') || token.contains('⟩') {
                return Err(parse_error(source, line, format!("malformed slot {token:?}")));
            }
            pieces.push(Piece::Word(token.to_string()));
            continue;
        };
        let (head, variant) = match inner.split_once('.') {
            Some((h, v)) => (
                h,
                v.parse()
                    .map_err(|_| parse_error(source, line, format!("bad variant in {token:?}")))?,
            ),
            None => (inner, 0),
        };
        let (kind, instance) = match head.split_once('#') {
            Some((k, i)) => (k.to_string(), i.to_string()),
            None => {
                let n = seen.entry(head.to_string()).or_insert(0);
                *n += 1;
                (head.to_string(), format!("_{n}"))
            }
        };
        if kind.is_empty() || instance.is_empty() {
            return Err(parse_error(source, line, format!("malformed slot {token:?}")));
        }
        pieces.push(Piece::Slot(Slot {
            key: format!("{kind}#{instance}"),
            kind,
            variant,
        }));
    }
    if pieces.is_empty() {
        return Err(parse_error(source, line, "empty frame"));
    }
    Ok(pieces)
}

#[derive(Default)]
struct Draft {
    test: String,
    line: usize,
    phenomenon: Option<String>,
    good: Option<Vec<Piece>>,
    bad: Option<Vec<Piece>>,
    lexicons: BTreeMap<String, Lexicon>,
}

fn finish(d: Draft, global: &BTreeMap<String, Lexicon>, source: &str) -> Result<Template> {
    let missing = |what: &str| parse_error(source, d.line, format!("test {} has no {what}", d.test));
    let mut lexicons = global.clone();
    lexicons.extend(d.lexicons);
    let t = Template {
        phenomenon: d.phenomenon.ok_or_else(|| missing("phenomenon"))?,
        good: d.good.ok_or_else(|| missing("good frame"))?,
        bad: d.bad.ok_or_else(|| missing("bad frame"))?,
        test: d.test,
        lexicons,
    };
    for p in t.good.iter().chain(&t.bad) {
        if let Piece::Slot(s) = p {
            let lex = t.lexicons.get(&s.kind).ok_or_else(|| {
                parse_error(source, d.line, format!("test {}: no lexicon for {}", t.test, s.kind))
            })?;
            if lex.iter().any(|entry| s.variant >= entry.len()) {
                return Err(parse_error(
                    source,
                    d.line,
                    format!("test {}: {} has entries without variant {}", t.test, s.kind, s.variant),
                ));
            }
        }
    }
    if t.good == t.bad {
        return Err(parse_error(source, d.line, format!("test {}: frames are identical", t.test)));
    }
    Ok(t)
}

pub fn parse_templates(text: &str, source: &str) -> Result<Vec<Template>> {
    let mut global: BTreeMap<String, Lexicon> = BTreeMap::new();
    let mut current: Option<Draft> = None;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once(':') else {
            return Err(parse_error(source, line, format!("expected `key: value`, got {trimmed:?}")));
        };
        let value = value.trim();
        if let Some(kind) = key.strip_prefix("lexicon ") {
            let kind = kind.trim().to_string();
            let entries: Lexicon = value
                .split_whitespace()
                .map(|e| e.split('/').map(str::to_string).collect())
                .collect();
            if entries.iter().flatten().any(String::is_empty) {
                return Err(parse_error(source, line, format!("empty word in lexicon {kind}")));
            }
            match current.as_mut() {
                Some(d) => d.lexicons.insert(kind, entries),
                None => global.insert(kind, entries),
            };
            continue;
        }
        match key.trim() {
            "test" => {
                if let Some(d) = current.take() {
                    out.push(finish(d, &global, source)?);
                }
                if value.is_empty() {
                    return Err(parse_error(source, line, "empty test name"));
                }
                current = Some(Draft {
                    test: value.to_string(),
                    line,
                    ..Draft::default()
                });
            }
            k @ ("phenomenon" | "good" | "bad") => {
                let d = current
                    .as_mut()
                    .ok_or_else(|| parse_error(source, line, format!("{k} before any test")))?;
                match k {
                    "phenomenon" => d.phenomenon = Some(value.to_string()),
                    "good" => d.good = Some(parse_frame(value, source, line)?),
                    _ => d.bad = Some(parse_frame(value, source, line)?),
                }
            }
            other => return Err(parse_error(source, line, format!("unknown key {other:?}"))),
        }
    }
    if let Some(d) = current.take() {
        out.push(finish(d, &global, source)?);
    }
    Ok(out)
}
