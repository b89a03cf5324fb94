// SPDX-License-Identifier: MIT OR Apache-2.0

//! Byte-level BPE tokenizer reading the Hugging Face `tokenizer.json` layout.
//!
//! Text is split by the pre-tokenizer regex, each piece is mapped to its
//! bytes, and adjacent symbols are merged greedily by merge rank until no
//! ranked pair remains. Every byte has its own token, so `decode(encode(s))`
//! reproduces any UTF-8 input.

use std::collections::HashMap;
use std::path::Path;

use fancy_regex::Regex;
use serde_json::Value;

use crate::error::{Error, Result};

/// Pre-tokenizer of the Llama 3 family.
pub const LLAMA3_PATTERN: &str = r"(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+";

/// Pre-tokenizer of GPT-2 style byte-level models.
pub const GPT2_PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// The reversible byte → printable-char table used by byte-level BPE vocabularies.
fn byte_to_char() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut n = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            n += 1;
            char::from_u32(255 + n).expect("valid code point")
        };
    }
    table
}

fn decode_token_string(s: &str, reverse: &HashMap<char, u8>) -> Option<Vec<u8>> {
    s.chars().map(|c| reverse.get(&c).copied()).collect()
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    id_to_bytes: Vec<Vec<u8>>,
    bytes_to_id: HashMap<Vec<u8>, u32>,
    byte_ids: [u32; 256],
    added: HashMap<String, u32>,
    merges: HashMap<(u32, u32), (usize, u32)>,
    pattern: Regex,
    ignore_merges: bool,
}

impl Tokenizer {
    /// Builds a tokenizer from byte-level vocabulary strings and merge pairs.
    pub fn new(
        vocab: &HashMap<String, u32>,
        merges: &[(String, String)],
        added: &[(u32, String)],
        pattern: &str,
        ignore_merges: bool,
    ) -> Result<Self> {
        let table = byte_to_char();
        let reverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let size = vocab
            .values()
            .chain(added.iter().map(|(id, _)| id))
            .map(|&i| i as usize + 1)
            .max()
            .unwrap_or(0);
        let mut id_to_bytes = vec![Vec::new(); size];
        let mut bytes_to_id = HashMap::with_capacity(vocab.len());
        for (tok, &id) in vocab {
            let bytes = decode_token_string(tok, &reverse).ok_or_else(|| {
                Error::validation("tokenizer vocab", format!("token {tok:?} is not byte-level encoded"))
            })?;
            bytes_to_id.insert(bytes.clone(), id);
            id_to_bytes[id as usize] = bytes;
        }
        for (id, content) in added {
            id_to_bytes[*id as usize] = content.as_bytes().to_vec();
        }
        let added: HashMap<String, u32> = added.iter().map(|(id, s)| (s.clone(), *id)).collect();
        let mut byte_ids = [0u32; 256];
        for b in 0..=255u8 {
            byte_ids[b as usize] = *bytes_to_id.get(&vec![b]).ok_or_else(|| {
                Error::validation("tokenizer vocab", format!("no token for byte {b:#04x}"))
            })?;
        }
        let mut merge_map = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let loc = || format!("tokenizer merges: entry {rank}");
            let lookup = |s: &str| {
                vocab
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::validation(loc(), format!("unknown token {s:?}")))
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            let merged = lookup(&format!("{a}{b}"))?;
            merge_map.entry((ia, ib)).or_insert((rank, merged));
        }
        let pattern = Regex::new(pattern)
            .map_err(|e| Error::validation("tokenizer pattern", e.to_string()))?;
        Ok(Self {
            id_to_bytes,
            bytes_to_id,
            byte_ids,
            added,
            merges: merge_map,
            pattern,
            ignore_merges,
        })
    }

    /// A tokenizer whose first 256 ids are the raw bytes, followed by one id
    /// per merge in order.
    pub fn from_byte_merges(merges: &[(&[u8], &[u8])]) -> Result<Self> {
        let table = byte_to_char();
        let enc = |bytes: &[u8]| bytes.iter().map(|&b| table[b as usize]).collect::<String>();
        let mut vocab: HashMap<String, u32> = (0..=255u8).map(|b| (enc(&[b]), u32::from(b))).collect();
        let mut pairs = Vec::with_capacity(merges.len());
        for (a, b) in merges {
            let joined: Vec<u8> = a.iter().chain(b.iter()).copied().collect();
            let next = vocab.len() as u32;
            vocab.entry(enc(&joined)).or_insert(next);
            pairs.push((enc(a), enc(b)));
        }
        Self::new(&vocab, &pairs, &[], LLAMA3_PATTERN, false)
    }

    /// Parses a Hugging Face `tokenizer.json`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let model = root
            .get("model")
            .ok_or_else(|| Error::validation("tokenizer.json", "missing \"model\""))?;
        if let Some(t) = model.get("type").and_then(Value::as_str) {
            if t != "BPE" {
                return Err(Error::validation("tokenizer.json", format!("unsupported model type {t:?}")));
            }
        }
        let vocab: HashMap<String, u32> = serde_json::from_value(
            model
                .get("vocab")
                .cloned()
                .ok_or_else(|| Error::validation("tokenizer.json", "missing model.vocab"))?,
        )?;
        let raw_merges = model
            .get("merges")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::validation("tokenizer.json", "missing model.merges"))?;
        let mut merges = Vec::with_capacity(raw_merges.len());
        for (i, m) in raw_merges.iter().enumerate() {
            let pair = match m {
                Value::String(s) => s.split_once(' ').map(|(a, b)| (a.to_owned(), b.to_owned())),
                Value::Array(a) if a.len() == 2 => match (a[0].as_str(), a[1].as_str()) {
                    (Some(x), Some(y)) => Some((x.to_owned(), y.to_owned())),
                    _ => None,
                },
                _ => None,
            };
            merges.push(pair.ok_or_else(|| {
                Error::validation(format!("tokenizer merges: entry {i}"), "expected a pair of tokens")
            })?);
        }
        let added: Vec<(u32, String)> = root
            .get("added_tokens")
            .and_then(Value::as_array)
            .map(|arr| {
                arr.iter()
                    .filter_map(|t| {
                        Some((t.get("id")?.as_u64()? as u32, t.get("content")?.as_str()?.to_owned()))
                    })
                    .collect()
            })
            .unwrap_or_default();
        let ignore_merges = model.get("ignore_merges").and_then(Value::as_bool).unwrap_or(false);
        let pattern = root
            .get("pre_tokenizer")
            .and_then(find_split_regex)
            .unwrap_or_else(|| {
                if root.get("pre_tokenizer").is_some_and(|p| p.to_string().contains("ByteLevel"))
                    && !root.to_string().contains("\"Split\"")
                {
                    GPT2_PATTERN.to_owned()
                } else {
                    LLAMA3_PATTERN.to_owned()
                }
            });
        Self::new(&vocab, &merges, &added, &pattern, ignore_merges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_bytes.len()
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        self.bytes_to_id.get(bytes).copied()
    }

    /// Id of an added (special) token such as `<|begin_of_text|>`.
    pub fn special_token(&self, content: &str) -> Option<u32> {
        self.added.get(content).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let mut last = 0;
        for m in self.pattern.find_iter(text) {
            // The pattern covers every character, but stay total if a
            // custom pattern leaves gaps.
            let Ok(m) = m else { break };
            if m.start() > last {
                self.encode_piece(&text.as_bytes()[last..m.start()], &mut out);
            }
            self.encode_piece(m.as_str().as_bytes(), &mut out);
            last = m.end();
        }
        if last < text.len() {
            self.encode_piece(&text.as_bytes()[last..], &mut out);
        }
        out
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        if self.ignore_merges {
            if let Some(&id) = self.bytes_to_id.get(piece) {
                out.push(id);
                return;
            }
        }
        let mut word: Vec<u32> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        loop {
            let best = word
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.merges.get(&(w[0], w[1])).map(|&(rank, id)| (rank, i, id)))
                .min();
            let Some((_, i, id)) = best else { break };
            word[i] = id;
            word.remove(i + 1);
        }
        out.extend(word);
    }

    /// Concatenates token bytes; invalid UTF-8 (only possible for arbitrary id
    /// sequences) is replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter_map(|&i| self.id_to_bytes.get(i as usize))
            .flatten()
            .copied()
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

fn find_split_regex(v: &Value) -> Option<String> {
    match v {
        Value::Object(map) => {
            if map.get("type").and_then(Value::as_str) == Some("Split") {
                if let Some(r) = map.get("pattern").and_then(|p| p.get("Regex")).and_then(Value::as_str) {
                    return Some(r.to_owned());
                }
            }
            map.values().find_map(find_split_regex)
        }
        Value::Array(a) => a.iter().find_map(find_split_regex),
        _ => None,
    }
}
