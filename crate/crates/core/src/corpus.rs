//! Transcript ingestion: CHAT-style tier files and plain one-utterance-per-line text.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Three-letter speaker code such as `MOT` or `CHI`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Speaker(String);

impl Speaker {
    /// Code assigned to every line of a plain-text transcript.
    pub const PLAIN: &'static str = "ADU";
    pub const CHILD: &'static str = "CHI";

    pub fn new(code: &str) -> Option<Self> {
        let valid = code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase());
        valid.then(|| Speaker(code.to_string()))
    }

    pub fn plain() -> Self {
        Speaker(Self::PLAIN.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Speaker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Speaker::new(s).ok_or_else(|| Error::Config(format!("invalid speaker code {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawUtterance {
    pub speaker: Speaker,
    /// Cleaned text; never contains tier markers or newlines.
    pub text: String,
    /// 1-based line of the tier start in the source.
    pub line_no: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub utterances: Vec<RawUtterance>,
    pub source_path: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Chat,
    Plain,
}

impl Format {
    /// `.cha` files are CHAT, anything else is plain text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("cha") => Format::Chat,
            _ => Format::Plain,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chat" | "cha" => Ok(Format::Chat),
            "plain" | "txt" | "text" => Ok(Format::Plain),
            other => Err(Error::Config(format!("unknown transcript format {other:?}"))),
        }
    }
}

/// Parses a CHAT-style document given as raw bytes.
pub fn parse_chat_bytes(bytes: &[u8]) -> Result<Transcript> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    parse_chat(text)
}

/// Parses `*SPK:` utterance tiers, dropping `%` and `@` tiers. Tab-indented
/// lines continue the preceding tier.
pub fn parse_chat(text: &str) -> Result<Transcript> {
    let mut utterances: Vec<RawUtterance> = Vec::new();
    // Raw text of the tier being accumulated, if it is an utterance tier.
    let mut open: Option<(Speaker, usize, String)> = None;

    let mut flush = |open: &mut Option<(Speaker, usize, String)>| {
        if let Some((speaker, line_no, raw)) = open.take() {
            utterances.push(RawUtterance {
                speaker,
                text: clean_annotations(&raw),
                line_no,
            });
        }
    };

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if let Some(rest) = line.strip_prefix('*') {
            flush(&mut open);
            let Some((code, body)) = rest.split_once(':') else {
                return Err(Error::MalformedTier {
                    line: line_no,
                    text: line.to_string(),
                });
            };
            let speaker = Speaker::new(code).ok_or_else(|| Error::MalformedTier {
                line: line_no,
                text: line.to_string(),
            })?;
            open = Some((speaker, line_no, body.to_string()));
        } else if line.starts_with('\t') {
            if let Some((_, _, raw)) = open.as_mut() {
                raw.push(' ');
                raw.push_str(line);
            }
        } else {
            // `%` dependent tiers, `@` headers, and anything else end the open tier.
            flush(&mut open);
        }
    }
    flush(&mut open);
    Ok(Transcript {
        utterances,
        source_path: String::new(),
    })
}

/// Removes `[...]` spans, `&`-prefixed fragments, and `xxx`/`yyy` markers, then
/// collapses whitespace.
pub fn clean_annotations(raw: &str) -> String {
    let mut unbracketed = String::with_capacity(raw.len());
    let mut depth = 0usize;
    for ch in raw.chars() {
        match ch {
            '[' => depth += 1,
            ']' if depth > 0 => depth -= 1,
            _ if depth == 0 => unbracketed.push(ch),
            _ => {}
        }
    }
    unbracketed
        .split_whitespace()
        .filter(|tok| !tok.starts_with('&') && *tok != "xxx" && *tok != "yyy")
        .collect::<Vec<_>>()
        .join(" ")
}

/// One utterance per non-empty line, all attributed to the plain-text speaker.
pub fn load_plaintext(text: &str) -> Transcript {
    let utterances = text
        .lines()
        .enumerate()
        .filter_map(|(idx, line)| {
            let text = line.split_whitespace().collect::<Vec<_>>().join(" ");
            (!text.is_empty()).then(|| RawUtterance {
                speaker: Speaker::plain(),
                text,
                line_no: idx + 1,
            })
        })
        .collect();
    Transcript {
        utterances,
        source_path: String::new(),
    }
}

/// Reads a transcript file in the given format.
pub fn read_transcript(path: &Path, format: Format) -> Result<Transcript> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut transcript = match format {
        Format::Chat => parse_chat_bytes(&bytes)?,
        Format::Plain => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Decode(e.to_string()))?;
            load_plaintext(text)
        }
    };
    transcript.source_path = path.display().to_string();
    Ok(transcript)
}

/// Utterances whose speaker is not in `excluded`, in source order.
pub fn exclude_speakers(t: &Transcript, excluded: &HashSet<Speaker>) -> Vec<RawUtterance> {
    t.utterances
        .iter()
        .filter(|u| !excluded.contains(&u.speaker))
        .cloned()
        .collect()
}

/// The default exclusion set: the target child's own speech.
pub fn child_speaker() -> HashSet<Speaker> {
    HashSet::from([Speaker(Speaker::CHILD.to_string())])
}

impl Transcript {
    /// Serializes the utterance tiers back to CHAT lines.
    pub fn to_chat(&self) -> String {
        self.utterances
            .iter()
            .map(|u| format!("*{}:\t{}\n", u.speaker, u.text))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(t: &Transcript) -> Vec<(&str, &str)> {
        t.utterances
            .iter()
            .map(|u| (u.speaker.as_str(), u.text.as_str()))
            .collect()
    }

    #[test]
    fn empty_document() {
        assert!(parse_chat("").unwrap().utterances.is_empty());
    }

    #[test]
    fn dependent_tiers_dropped() {
        let t = parse_chat("*MOT:\tlook at the doggie .\n%com:\tpoints\n*CHI:\tdoggie .").unwrap();
        assert_eq!(
            pairs(&t),
            vec![("MOT", "look at the doggie ."), ("CHI", "doggie .")]
        );
        assert_eq!(t.utterances[1].line_no, 3);
    }

    #[test]
    fn bracketed_annotation_stripped() {
        let t = parse_chat("*MOT:\tyou want [?] the ball ?\n").unwrap();
        assert_eq!(pairs(&t), vec![("MOT", "you want the ball ?")]);
    }

    #[test]
    fn fragments_and_unintelligible_markers_stripped() {
        let t = parse_chat("*FAT:\t&uh xxx give &=laughs it yyy [: this] to me .").unwrap();
        assert_eq!(t.utterances[0].text, "give it to me .");
    }

    #[test]
    fn continuation_lines_join_with_one_space() {
        let doc = "@Begin\n*MOT:\twhat is\n\tthat over\n\tthere ?\n@End\n";
        let t = parse_chat(doc).unwrap();
        assert_eq!(pairs(&t), vec![("MOT", "what is that over there ?")]);
    }

    #[test]
    fn continuation_of_dependent_tier_ignored() {
        let t = parse_chat("*MOT:\thi .\n%mor:\tco|hi\n\t.\n").unwrap();
        assert_eq!(pairs(&t), vec![("MOT", "hi .")]);
    }

    #[test]
    fn tier_without_colon_is_malformed() {
        match parse_chat("*MOT:\tok .\n*MOT hello\n") {
            Err(Error::MalformedTier { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_a_decode_error() {
        assert!(matches!(
            parse_chat_bytes(b"*MOT:\t\xff\xfe\n"),
            Err(Error::Decode(_))
        ));
    }

    #[test]
    fn plaintext_lines() {
        assert!(load_plaintext("").utterances.is_empty());
        let t = load_plaintext("hi there\n\nbye");
        assert_eq!(pairs(&t), vec![("ADU", "hi there"), ("ADU", "bye")]);
        assert_eq!(load_plaintext("a b c").utterances[0].text, "a b c");
    }

    #[test]
    fn exclusion() {
        let t = parse_chat("*MOT:\tlook .\n*CHI:\tdoggie .").unwrap();
        let kept = exclude_speakers(&t, &child_speaker());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].speaker.as_str(), "MOT");
        assert_eq!(exclude_speakers(&t, &HashSet::new()).len(), 2);
        let all_child = parse_chat("*CHI:\ta .\n*CHI:\tb .").unwrap();
        assert!(exclude_speakers(&all_child, &child_speaker()).is_empty());
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(Format::from_path(Path::new("x/brown.cha")), Format::Chat);
        assert_eq!(Format::from_path(Path::new("x/wiki.txt")), Format::Plain);
    }

    fn utterance() -> impl Strategy<Value = (String, String)> {
        (
            "[A-Z]{3}",
            prop::collection::vec("[a-w']{1,8}", 1..8).prop_map(|w| w.join(" ")),
        )
    }

    proptest! {
        #[test]
        fn chat_round_trip(utts in prop::collection::vec(utterance(), 0..12)) {
            let t = Transcript {
                utterances: utts
                    .iter()
                    .enumerate()
                    .map(|(i, (s, text))| RawUtterance {
                        speaker: Speaker::new(s).unwrap(),
                        text: text.clone(),
                        line_no: i + 1,
                    })
                    .collect(),
                source_path: String::new(),
            };
            let doc = t.to_chat();
            let parsed = parse_chat(&doc).unwrap();
            prop_assert_eq!(parsed.utterances.len(), doc.lines().filter(|l| l.starts_with('*')).count());
            prop_assert_eq!(parsed, t);
        }

        #[test]
        fn exclusion_output_is_subsequence(
            utts in prop::collection::vec(utterance(), 0..20),
            drop in "[A-Z]{3}",
        ) {
            let t = Transcript {
                utterances: utts
                    .iter()
                    .enumerate()
                    .map(|(i, (s, text))| RawUtterance {
                        speaker: Speaker::new(s).unwrap(),
                        text: text.clone(),
                        line_no: i + 1,
                    })
                    .collect(),
                source_path: String::new(),
            };
            let kept = exclude_speakers(&t, &HashSet::from([Speaker::new(&drop).unwrap()]));
            let mut it = t.utterances.iter();
            for k in &kept {
                prop_assert!(it.any(|u| u == k));
                prop_assert!(k.speaker.as_str() != drop);
            }
        }
    }
}
