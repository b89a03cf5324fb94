// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sidecar of precomputed sentence embeddings.
//!
//! JSONL, one vector per line:
//! `{"id": "<instance id>", "variant": "figurative_meaning" | "literal_meaning", "vector": [...]}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Meaning {
    FigurativeMeaning,
    LiteralMeaning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub variant: Meaning,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    width: usize,
    vectors: BTreeMap<(String, Meaning), Vec<f32>>,
}

impl EmbeddingTable {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str, meaning: Meaning) -> Option<&[f32]> {
        self.vectors.get(&(id.to_owned(), meaning)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, row: EmbeddingRow) -> Result<(), String> {
        if row.vector.is_empty() {
            return Err("empty vector".into());
        }
        if self.vectors.is_empty() {
            self.width = row.vector.len();
        } else if row.vector.len() != self.width {
            return Err(format!(
                "vector width {} differs from {}",
                row.vector.len(),
                self.width
            ));
        }
        if row.vector.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        if self.vectors.insert((row.id.clone(), row.variant), row.vector).is_some() {
            return Err(format!("duplicate entry for {:?}/{:?}", row.id, row.variant));
        }
        Ok(())
    }

    /// Rows in key order, for writing back out.
    pub fn rows(&self) -> impl Iterator<Item = EmbeddingRow> + '_ {
        self.vectors.iter().map(|((id, variant), v)| EmbeddingRow {
            id: id.clone(),
            variant: *variant,
            vector: v.clone(),
        })
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut table = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let loc = format!("{source}:{}", n + 1);
            let row: EmbeddingRow =
                serde_json::from_str(line).map_err(|e| Error::validation(&loc, e.to_string()))?;
            table.insert(row).map_err(|m| Error::validation(&loc, m))?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(&row)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_width() {
        let text = r#"{"id":"a","variant":"figurative_meaning","vector":[1,2]}
{"id":"a","variant":"literal_meaning","vector":[3,4]}"#;
        let t = EmbeddingTable::parse(text, "e").unwrap();
        assert_eq!(t.width(), 2);
        assert_eq!(t.get("a", Meaning::LiteralMeaning), Some(&[3.0, 4.0][..]));
        let bad = format!("{text}\n{{\"id\":\"b\",\"variant\":\"literal_meaning\",\"vector\":[1]}}");
        let err = EmbeddingTable::parse(&bad, "e").unwrap_err().to_string();
        assert!(err.starts_with("e:3"), "{err}");
    }

    #[test]
    fn rejects_duplicates() {
        let text = r#"{"id":"a","variant":"figurative_meaning","vector":[1]}
{"id":"a","variant":"figurative_meaning","vector":[2]}"#;
        assert!(EmbeddingTable::parse(text, "e").is_err());
    }
}
