// SPDX-License-Identifier: MIT OR Apache-2.0

//! Idiom dataset rows and their JSONL encoding.
//!
//! One JSON object per line:
//!
//! | field                    | type              | meaning                                               |
//! |--------------------------|-------------------|-------------------------------------------------------|
//! | `id`                     | string            | unique instance key, also used by the embeddings file |
//! | `idiom`                  | string            | the idiom in its base form                            |
//! | `pronoun`                | string            | the subject pronoun of the template                   |
//! | `connector`              | `so`/`too`/`a`/`the` | last word of the template                          |
//! | `s_a`, `s_f`, `s_l`      | sentence object   | ambiguous sentence, figurative and literal paraphrase |
//! | `idiom_span`             | `[start, end)`    | idiom token positions in `s_a.ids`                    |
//! | `subsequent_token_index` | integer           | position of `because` in `s_a` (= span end)           |
//! | `last_token_index`       | integer           | last position of `s_a`                                |
//! | `c_f`, `c_l`             | 20 token ids each | figurative / literal candidate continuations          |
//!
//! A sentence object is `{"text": ..., "ids": [...], "span": [start, end)}`;
//! `span` marks the idiom or paraphrase phrase and is optional. Token ids are
//! authoritative; the text is kept for display.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Number of token ids in each candidate set.
pub const CANDIDATE_SET_SIZE: usize = 20;

/// Which of an instance's three sentences to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `s_a`, the sentence containing the idiom.
    #[serde(alias = "sa")]
    Ambiguous,
    /// `s_f`, the figurative paraphrase.
    #[serde(alias = "sf")]
    Figurative,
    /// `s_l`, the literal paraphrase.
    #[serde(alias = "sl")]
    Literal,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ambiguous, Variant::Figurative, Variant::Literal];

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Ambiguous => "sa",
            Self::Figurative => "sf",
            Self::Literal => "sl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" | "s_a" | "ambiguous" => Ok(Self::Ambiguous),
            "sf" | "s_f" | "figurative" => Ok(Self::Figurative),
            "sl" | "s_l" | "literal" => Ok(Self::Literal),
            other => Err(Error::InvalidInput(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connector {
    So,
    Too,
    A,
    The,
}

impl Connector {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::So => "so",
            Self::Too => "too",
            Self::A => "a",
            Self::The => "the",
        }
    }
}

impl FromStr for Connector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "so" => Ok(Self::So),
            "too" => Ok(Self::Too),
            "a" => Ok(Self::A),
            "the" => Ok(Self::The),
            other => Err(Error::InvalidInput(format!("unknown connector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdiomInstance {
    pub id: String,
    pub idiom: String,
    pub pronoun: String,
    pub connector: Connector,
    pub s_a: Sentence,
    pub s_f: Sentence,
    pub s_l: Sentence,
    pub idiom_span: [usize; 2],
    pub subsequent_token_index: usize,
    pub last_token_index: usize,
    pub c_f: Vec<u32>,
    pub c_l: Vec<u32>,
}

impl IdiomInstance {
    pub fn sentence(&self, variant: Variant) -> &Sentence {
        match variant {
            Variant::Ambiguous => &self.s_a,
            Variant::Figurative => &self.s_f,
            Variant::Literal => &self.s_l,
        }
    }

    pub fn tokens(&self, variant: Variant) -> &[u32] {
        &self.sentence(variant).ids
    }

    /// Phrase span of `variant` as `(start, end)`.
    pub fn span(&self, variant: Variant) -> Result<(usize, usize)> {
        match variant {
            Variant::Ambiguous => Ok((self.idiom_span[0], self.idiom_span[1])),
            v => self.sentence(v).span.map(|[s, e]| (s, e)).ok_or_else(|| {
                Error::InvalidInput(format!("instance {:?} has no phrase span for {v}", self.id))
            }),
        }
    }

    /// Position of the token right after the phrase (`because`).
    ///
    /// Paraphrases without an explicit span share the template suffix with
    /// `s_a`, so the position is derived from the suffix length.
    pub fn subsequent(&self, variant: Variant) -> Result<usize> {
        if variant == Variant::Ambiguous {
            return Ok(self.subsequent_token_index);
        }
        if let Some([_, end]) = self.sentence(variant).span {
            return Ok(end);
        }
        let suffix = self.s_a.ids.len() - self.subsequent_token_index;
        let len = self.tokens(variant).len();
        len.checked_sub(suffix).filter(|&p| p > 0).ok_or_else(|| {
            Error::InvalidInput(format!(
                "instance {:?}: {variant} is too short to hold the template suffix",
                self.id
            ))
        })
    }

    pub fn last(&self, variant: Variant) -> usize {
        self.tokens(variant).len() - 1
    }

    /// Checks every structural invariant of the row.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        for v in Variant::ALL {
            let s = self.sentence(v);
            if s.ids.is_empty() {
                return Err(format!("{v} has no token ids"));
            }
            if let Some([a, b]) = s.span {
                if a >= b || b > s.ids.len() {
                    return Err(format!("bad span [{a}, {b}) for {v} of length {}", s.ids.len()));
                }
            }
        }
        let t = self.s_a.ids.len();
        let [start, end] = self.idiom_span;
        if start >= end || end > t {
            return Err(format!("bad idiom span [{start}, {end}) for s_a of length {t}"));
        }
        if let Some(span) = self.s_a.span {
            if span != self.idiom_span {
                return Err("s_a.span disagrees with idiom_span".into());
            }
        }
        if self.subsequent_token_index != end {
            return Err(format!(
                "subsequent_token_index {} must equal idiom span end {end}",
                self.subsequent_token_index
            ));
        }
        if end >= t {
            return Err("idiom span leaves no subsequent token".into());
        }
        if self.last_token_index != t - 1 {
            return Err(format!(
                "last_token_index {} must be {}",
                self.last_token_index,
                t - 1
            ));
        }
        check_template(&self.s_a.text, self.connector)?;
        for (name, set) in [("c_f", &self.c_f), ("c_l", &self.c_l)] {
            if set.len() != CANDIDATE_SET_SIZE {
                return Err(format!(
                    "{name} has {} ids, expected {CANDIDATE_SET_SIZE}",
                    set.len()
                ));
            }
            if set.iter().collect::<HashSet<_>>().len() != set.len() {
                return Err(format!("{name} contains duplicate ids"));
            }
        }
        let cf: HashSet<_> = self.c_f.iter().collect();
        let overlap: Vec<_> = self.c_l.iter().filter(|id| cf.contains(id)).collect();
        if !overlap.is_empty() {
            return Err(format!("candidate overlap between c_f and c_l: {overlap:?}"));
        }
        Ok(())
    }

    /// Checks token ids against a model's vocabulary and context length.
    pub fn check_against(&self, config: &ModelConfig) -> Result<(), String> {
        let ok = |id: &u32| (*id as usize) < config.vocab_size;
        for v in Variant::ALL {
            let ids = self.tokens(v);
            if !ids.iter().all(ok) {
                return Err(format!("{v} contains ids outside the vocabulary"));
            }
            if ids.len() > config.max_seq_len {
                return Err(format!("{v} exceeds max_seq_len"));
            }
        }
        if !self.c_f.iter().chain(&self.c_l).all(ok) {
            return Err("candidate ids outside the vocabulary".into());
        }
        Ok(())
    }
}

/// `s_a` must end with `because <X> <copula> <connector>`.
fn check_template(text: &str, connector: Connector) -> Result<(), String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let n = words.len();
    if n < 5 || !words[n - 4].eq_ignore_ascii_case("because") {
        return Err(format!("s_a {text:?} does not follow the \"... because X was <connector>\" template"));
    }
    if !words[n - 1].eq_ignore_ascii_case(connector.as_str()) {
        return Err(format!(
            "s_a {text:?} does not end with connector {:?}",
            connector.as_str()
        ));
    }
    Ok(())
}

pub fn parse_dataset(text: &str, source: &str) -> Result<Vec<IdiomInstance>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{source}:{}", n + 1);
        let inst: IdiomInstance =
            serde_json::from_str(line).map_err(|e| Error::validation(loc(), e.to_string()))?;
        inst.validate().map_err(|m| Error::validation(loc(), m))?;
        if !ids.insert(inst.id.clone()) {
            return Err(Error::validation(loc(), format!("duplicate id {:?}", inst.id)));
        }
        out.push(inst);
    }
    Ok(out)
}

/// Reads a JSONL dataset, validating every row. Errors name the line.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<IdiomInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn dataset_to_jsonl(instances: &[IdiomInstance]) -> Result<String> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, instances: &[IdiomInstance]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_jsonl(instances)?).map_err(|e| Error::io(path, e))
}

/// Verifies every instance against a model configuration.
pub fn check_dataset(instances: &[IdiomInstance], config: &ModelConfig) -> Result<()> {
    for inst in instances {
        inst.check_against(config)
            .map_err(|m| Error::validation(format!("instance {:?}", inst.id), m))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> IdiomInstance {
        IdiomInstance {
            id: "kick-the-bucket".into(),
            idiom: "kick the bucket".into(),
            pronoun: "he".into(),
            connector: Connector::So,
            s_a: Sentence {
                text: "He would kick the bucket because he was so".into(),
                ids: vec![1, 2, 3, 4, 5, 6, 7, 8, 9],
                span: None,
            },
            s_f: Sentence {
                text: "He would die because he was so".into(),
                ids: vec![1, 2, 10, 6, 7, 8, 9],
                span: Some([2, 3]),
            },
            s_l: Sentence {
                text: "He would kick the container because he was so".into(),
                ids: vec![1, 2, 3, 4, 11, 6, 7, 8, 9],
                span: Some([2, 5]),
            },
            idiom_span: [2, 5],
            subsequent_token_index: 5,
            last_token_index: 8,
            c_f: (100..120).collect(),
            c_l: (200..220).collect(),
        }
    }

    #[test]
    fn single_well_formed_line() {
        let line = serde_json::to_string(&sample()).unwrap();
        let rows = parse_dataset(&line, "mem").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], sample());
    }

    #[test]
    fn candidate_overlap_is_rejected_with_line_number() {
        let mut bad = sample();
        bad.c_f[0] = 42;
        bad.c_l[3] = 42;
        let text = format!(
            "{}\n{}\n",
            serde_json::to_string(&{
                let mut s = sample();
                s.id = "other".into();
                s
            })
            .unwrap(),
            serde_json::to_string(&bad).unwrap()
        );
        let err = parse_dataset(&text, "d.jsonl").unwrap_err().to_string();
        assert!(err.contains("candidate overlap"), "{err}");
        assert!(err.starts_with("d.jsonl:2"), "{err}");
    }

    #[test]
    fn bad_span_is_rejected() {
        let mut bad = sample();
        bad.idiom_span = [2, 9];
        bad.subsequent_token_index = 9;
        let err = bad.validate().unwrap_err();
        assert!(err.contains("subsequent"), "{err}");
        let mut bad = sample();
        bad.subsequent_token_index = 4;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wrong_candidate_count_is_rejected() {
        let mut bad = sample();
        bad.c_f.pop();
        assert!(bad.validate().unwrap_err().contains("expected 20"));
    }

    #[test]
    fn template_is_checked() {
        let mut bad = sample();
        bad.s_a.text = "He would kick the bucket".into();
        assert!(bad.validate().unwrap_err().contains("template"));
        let mut bad = sample();
        bad.connector = Connector::Too;
        assert!(bad.validate().unwrap_err().contains("connector"));
    }

    #[test]
    fn malformed_json_names_the_line() {
        let err = parse_dataset("\n{not json", "x.jsonl").unwrap_err().to_string();
        assert!(err.starts_with("x.jsonl:2"), "{err}");
    }

    #[test]
    fn subsequent_is_derived_from_the_shared_suffix() {
        let mut inst = sample();
        assert_eq!(inst.subsequent(Variant::Figurative).unwrap(), 3);
        inst.s_f.span = None;
        assert_eq!(inst.subsequent(Variant::Figurative).unwrap(), 3);
        assert_eq!(inst.subsequent(Variant::Ambiguous).unwrap(), 5);
    }

    #[test]
    fn loading_is_order_preserving_and_idempotent() {
        let rows: Vec<IdiomInstance> = (0..4)
            .map(|i| {
                let mut s = sample();
                s.id = format!("row-{i}");
                s
            })
            .collect();
        let text = dataset_to_jsonl(&rows).unwrap();
        let once = parse_dataset(&text, "m").unwrap();
        assert_eq!(once, rows);
        let twice = parse_dataset(&dataset_to_jsonl(&once).unwrap(), "m").unwrap();
        assert_eq!(twice, once);
    }
}
