// SPDX-License-Identifier: MIT OR Apache-2.0

//! Template instantiation, candidate-token extraction and the validation
//! filter that turn `(idiom, figurative paraphrase, literal paraphrase)`
//! triples into dataset rows.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Connector, IdiomInstance, Sentence, CANDIDATE_SET_SIZE};
use crate::error::{Error, Result};
use crate::io::Tokenizer;
use crate::metrics::{interpretation_scores, InterpretationScore};
use crate::model::{logits, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pronoun {
    He,
    She,
    It,
    They,
}

impl Pronoun {
    pub const ALL: [Pronoun; 4] = [Pronoun::He, Pronoun::She, Pronoun::It, Pronoun::They];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::He => "he",
            Self::She => "she",
            Self::It => "it",
            Self::They => "they",
        }
    }

    fn capitalized(self) -> &'static str {
        match self {
            Self::He => "He",
            Self::She => "She",
            Self::It => "It",
            Self::They => "They",
        }
    }

    /// Copula agreeing in number with the pronoun.
    pub fn copula(self) -> Copula {
        match self {
            Self::They => Copula::Were,
            _ => Copula::Was,
        }
    }
}

impl FromStr for Pronoun {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown pronoun {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Copula {
    Was,
    Were,
}

impl fmt::Display for Copula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Was => "was",
            Self::Were => "were",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub pronoun: Pronoun,
    pub use_would: bool,
    pub connector: Connector,
    pub copula: Copula,
}

impl TemplateSpec {
    /// Spec with the copula chosen by the pronoun.
    pub fn new(pronoun: Pronoun, use_would: bool, connector: Connector) -> Self {
        Self {
            pronoun,
            use_would,
            connector,
            copula: pronoun.copula(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.copula != self.pronoun.copula() {
            return Err(Error::InvalidInput(format!(
                "pronoun {:?} requires copula {:?}",
                self.pronoun.as_str(),
                self.pronoun.copula().to_string()
            )));
        }
        Ok(())
    }

    /// Text before the phrase, without a trailing space.
    pub fn prefix(&self) -> String {
        if self.use_would {
            format!("{} would", self.pronoun.capitalized())
        } else {
            self.pronoun.capitalized().to_owned()
        }
    }

    /// Text after the phrase, without a leading space.
    pub fn suffix(&self) -> String {
        format!("because {} {} {}", self.pronoun.as_str(), self.copula, self.connector.as_str())
    }
}

/// `"<X> [would] <phrase> because <x> <copula> <connector>"`.
///
/// The phrase is expected to be nonempty; surrounding whitespace is trimmed.
pub fn instantiate(phrase: &str, spec: &TemplateSpec) -> String {
    format!("{} {} {}", spec.prefix(), phrase.trim(), spec.suffix())
}

/// Figurative and literal candidate sets from final-position logits.
///
/// With `Δz = z_f - z_l`, `C_f` holds the `k` ids with the largest `Δz` and
/// `C_l` the `k` ids with the smallest among the rest. Ties prefer the lower
/// id. Each set is returned in rank order.
pub fn candidate_tokens(z_f: &[f32], z_l: &[f32], k: usize) -> Result<(Vec<u32>, Vec<u32>)> {
    if z_f.len() != z_l.len() {
        return Err(Error::InvalidInput(format!(
            "logit vectors differ in length: {} vs {}",
            z_f.len(),
            z_l.len()
        )));
    }
    if k == 0 || 2 * k > z_f.len() {
        return Err(Error::InvalidInput(format!(
            "candidate set size {k} needs 1 <= 2k <= |V| = {}",
            z_f.len()
        )));
    }
    let dz: Vec<f64> = z_f.iter().zip(z_l).map(|(&f, &l)| f64::from(f) - f64::from(l)).collect();
    let mut desc: Vec<usize> = (0..dz.len()).collect();
    desc.sort_by(|&a, &b| dz[b].total_cmp(&dz[a]).then(a.cmp(&b)));
    let c_f: Vec<u32> = desc[..k].iter().map(|&i| i as u32).collect();
    let taken: HashSet<u32> = c_f.iter().copied().collect();
    let mut asc: Vec<usize> = (0..dz.len()).filter(|&i| !taken.contains(&(i as u32))).collect();
    asc.sort_by(|&a, &b| dz[a].total_cmp(&dz[b]).then(a.cmp(&b)));
    let c_l = asc[..k].iter().map(|&i| i as u32).collect();
    Ok((c_f, c_l))
}

/// Outcome of the three-inequality filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceValidation {
    pub passed: bool,
    /// `F(s_a) > L(s_a)`.
    pub ambiguous_figurative: bool,
    /// `F(s_f) > L(s_f)`.
    pub figurative_figurative: bool,
    /// `L(s_l) > F(s_l)`.
    pub literal_literal: bool,
    pub scores: [InterpretationScore; 3],
}

/// Strict inequalities; exact ties fail.
pub fn validate_instance(
    logits_a: &[f32],
    logits_f: &[f32],
    logits_l: &[f32],
    c_f: &[u32],
    c_l: &[u32],
) -> Result<InstanceValidation> {
    let a = interpretation_scores(logits_a, c_f, c_l)?;
    let f = interpretation_scores(logits_f, c_f, c_l)?;
    let l = interpretation_scores(logits_l, c_f, c_l)?;
    let ambiguous_figurative = a.f > a.l;
    let figurative_figurative = f.f > f.l;
    let literal_literal = l.l > l.f;
    Ok(InstanceValidation {
        passed: ambiguous_figurative && figurative_figurative && literal_literal,
        ambiguous_figurative,
        figurative_figurative,
        literal_literal,
        scores: [a, f, l],
    })
}

/// One row of the builder's CSV input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildRow {
    #[serde(default)]
    pub id: Option<String>,
    pub idiom: String,
    pub figurative: String,
    pub literal: String,
    pub pronoun: Pronoun,
    pub connector: Connector,
    #[serde(default = "default_would")]
    pub would: bool,
}

fn default_would() -> bool {
    true
}

impl BuildRow {
    pub fn spec(&self) -> TemplateSpec {
        TemplateSpec::new(self.pronoun, self.would, self.connector)
    }

    pub fn instance_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            let slug: String = self
                .idiom
                .chars()
                .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
                .collect();
            format!("{slug}-{}-{}", self.pronoun.as_str(), self.connector.as_str())
        })
    }
}

pub fn parse_build_rows(text: &str, source: &str) -> Result<Vec<BuildRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in r.deserialize::<BuildRow>().enumerate() {
        let loc = format!("{source}:{}", i + 2);
        let row = rec.map_err(|e| Error::validation(&loc, e.to_string()))?;
        for (name, v) in [("idiom", &row.idiom), ("figurative", &row.figurative), ("literal", &row.literal)] {
            if v.trim().is_empty() {
                return Err(Error::validation(&loc, format!("empty {name} phrase")));
            }
        }
        if !ids.insert(row.instance_id()) {
            return Err(Error::validation(&loc, format!("duplicate id {:?}", row.instance_id())));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_build_rows(path: impl AsRef<Path>) -> Result<Vec<BuildRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_build_rows(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub id: String,
    pub validation: InstanceValidation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    /// Rows that passed, in input order.
    pub instances: Vec<IdiomInstance>,
    /// Every row's filter result, in input order.
    pub reports: Vec<RowReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub candidates: usize,
    /// Token prepended to every sentence, e.g. a beginning-of-text marker.
    pub bos: Option<u32>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            candidates: CANDIDATE_SET_SIZE,
            bos: None,
        }
    }
}

/// Tokenizes `prefix phrase suffix`, returning the ids and the phrase span.
fn tokenize_with_span(tok: &Tokenizer, spec: &TemplateSpec, phrase: &str, bos: Option<u32>) -> Result<Sentence> {
    let phrase = phrase.trim();
    let text = instantiate(phrase, spec);
    let head = tok.encode(&spec.prefix());
    let upto = tok.encode(&format!("{} {phrase}", spec.prefix()));
    let full = tok.encode(&text);
    if !upto.starts_with(&head) || !full.starts_with(&upto) || upto.len() == head.len() || full.len() == upto.len() {
        return Err(Error::InvalidInput(format!(
            "phrase {phrase:?} does not tokenize on word boundaries in {text:?}"
        )));
    }
    let offset = usize::from(bos.is_some());
    let ids: Vec<u32> = bos.into_iter().chain(full).collect();
    Ok(Sentence {
        text,
        ids,
        span: Some([head.len() + offset, upto.len() + offset]),
    })
}

/// Instantiates, tokenizes, extracts candidates and filters every row.
pub fn build(weights: &Weights, tok: &Tokenizer, rows: &[BuildRow], opts: &BuildOptions) -> Result<BuildOutcome> {
    let results = crate::par::try_map(rows, |row| {
        let spec = row.spec();
        let id = row.instance_id();
        let ctx = |e: Error| Error::validation(format!("row {id:?}"), e.to_string());
        let mut s_a = tokenize_with_span(tok, &spec, &row.idiom, opts.bos).map_err(ctx)?;
        let s_f = tokenize_with_span(tok, &spec, &row.figurative, opts.bos).map_err(ctx)?;
        let s_l = tokenize_with_span(tok, &spec, &row.literal, opts.bos).map_err(ctx)?;
        let z_a = logits(weights, &s_a.ids, None)?;
        let z_f = logits(weights, &s_f.ids, None)?;
        let z_l = logits(weights, &s_l.ids, None)?;
        let (c_f, c_l) = candidate_tokens(&z_f, &z_l, opts.candidates)?;
        let validation = validate_instance(&z_a, &z_f, &z_l, &c_f, &c_l)?;
        let span = s_a.span.take().expect("span set by tokenizer");
        let t = s_a.ids.len();
        let inst = IdiomInstance {
            id: id.clone(),
            idiom: row.idiom.trim().to_owned(),
            pronoun: row.pronoun.as_str().to_owned(),
            connector: row.connector,
            s_a,
            s_f,
            s_l,
            idiom_span: span,
            subsequent_token_index: span[1],
            last_token_index: t - 1,
            c_f,
            c_l,
        };
        if opts.candidates == CANDIDATE_SET_SIZE {
            inst.validate().map_err(|m| Error::validation(format!("row {id:?}"), m))?;
        }
        Ok((inst, RowReport { id, validation }))
    })?;
    let mut instances = Vec::new();
    let mut reports = Vec::with_capacity(results.len());
    for (inst, report) in results {
        if report.validation.passed {
            instances.push(inst);
        }
        reports.push(report);
    }
    Ok(BuildOutcome { instances, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_examples() {
        let he = TemplateSpec::new(Pronoun::He, true, Connector::So);
        assert_eq!(instantiate("kick the bucket", &he), "He would kick the bucket because he was so");
        assert_eq!(instantiate("die", &he), "He would die because he was so");
        let they = TemplateSpec::new(Pronoun::They, false, Connector::A);
        assert_eq!(instantiate("p", &they), "They p because they were a");
    }

    #[test]
    fn copula_must_agree() {
        let mut s = TemplateSpec::new(Pronoun::They, true, Connector::The);
        s.validate().unwrap();
        s.copula = Copula::Was;
        assert!(s.validate().is_err());
    }

    #[test]
    fn instantiate_is_injective_over_specs() {
        let mut seen = HashSet::new();
        for p in Pronoun::ALL {
            for would in [false, true] {
                for c in [Connector::So, Connector::Too, Connector::A, Connector::The] {
                    assert!(seen.insert(instantiate("spill the beans", &TemplateSpec::new(p, would, c))));
                }
            }
        }
    }

    #[test]
    fn candidate_extremes_and_ties() {
        let (f, l) = candidate_tokens(&[3., 0., 0., 0., 0., 0.], &[0., 0., 0., 0., 0., 3.], 1).unwrap();
        assert_eq!((f, l), (vec![0], vec![5]));
        let z = [1.0f32; 8];
        let (f, l) = candidate_tokens(&z, &z, 3).unwrap();
        assert_eq!((f, l), (vec![0, 1, 2], vec![3, 4, 5]));
        assert!(candidate_tokens(&z, &z[..7], 1).is_err());
        assert!(candidate_tokens(&z, &z, 5).is_err());
    }

    #[test]
    fn uniform_logits_fail_every_check() {
        let z = [0.0f32; 10];
        let v = validate_instance(&z, &z, &z, &[0, 1], &[2, 3]).unwrap();
        assert!(!v.passed);
        assert!(!v.ambiguous_figurative && !v.figurative_figurative && !v.literal_literal);
    }

    #[test]
    fn parses_csv_rows() {
        let text = "idiom,figurative,literal,pronoun,connector\nkick the bucket,die,kick the pail,he,so\n";
        let rows = parse_build_rows(text, "in.csv").unwrap();
        assert!(rows[0].would);
        assert_eq!(rows[0].instance_id(), "kick-the-bucket-he-so");
        let bad = "idiom,figurative,literal,pronoun,connector\nx,y,z,we,so\n";
        assert!(parse_build_rows(bad, "in.csv").unwrap_err().to_string().starts_with("in.csv:2"));
    }
}
