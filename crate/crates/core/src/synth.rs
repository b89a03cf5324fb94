// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded tiny models and synthetic dataset rows for tests, demos and smoke
//! runs of the experiment pipeline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Connector, IdiomInstance, Sentence, CANDIDATE_SET_SIZE};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Weights};

/// Smallest vocabulary that fits two disjoint candidate sets.
pub const MIN_VOCAB: usize = 2 * CANDIDATE_SET_SIZE;

/// `L = 2`, `d = 8`, two query heads sharing one key/value head.
pub fn tiny_config() -> ModelConfig {
    ModelConfig::tiny(2, 8, 2, 1, 16, 48)
}

pub fn tiny_model(seed: u64) -> Result<Weights> {
    Weights::random(&tiny_config(), seed)
}

/// `n` template-shaped instances over random token ids.
///
/// Every instance has a two-token prefix, an idiom span of 2-3 tokens, a
/// figurative paraphrase span of 1-2 tokens, a literal paraphrase span of the
/// idiom's length, and the four-token suffix `because X was <connector>`.
pub fn synthetic_instances(config: &ModelConfig, n: usize, seed: u64) -> Result<Vec<IdiomInstance>> {
    if config.vocab_size < MIN_VOCAB {
        return Err(Error::Config(format!(
            "synthetic instances need a vocabulary of at least {MIN_VOCAB}, got {}",
            config.vocab_size
        )));
    }
    if config.max_seq_len < 9 {
        return Err(Error::Config("synthetic instances need max_seq_len >= 9".into()));
    }
    let v = config.vocab_size as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let connectors = [Connector::So, Connector::Too, Connector::A, Connector::The];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let tok = |rng: &mut ChaCha8Rng| rng.random_range(0..v);
        let prefix = [tok(&mut rng), tok(&mut rng)];
        let suffix = [tok(&mut rng), tok(&mut rng), tok(&mut rng), tok(&mut rng)];
        let idiom_len = rng.random_range(2..=3usize);
        let fig_len = rng.random_range(1..=2usize);
        let idiom: Vec<u32> = (0..idiom_len).map(|_| tok(&mut rng)).collect();
        let fig: Vec<u32> = (0..fig_len).map(|_| tok(&mut rng)).collect();
        let lit: Vec<u32> = (0..idiom_len).map(|_| tok(&mut rng)).collect();
        let connector = connectors[i % connectors.len()];
        let words = |ids: &[u32]| ids.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
        let sentence = |phrase: &[u32]| {
            let ids: Vec<u32> = prefix.iter().chain(phrase).chain(&suffix).copied().collect();
            Sentence {
                text: format!("He would {} because he was {}", words(phrase), connector.as_str()),
                ids,
                span: Some([2, 2 + phrase.len()]),
            }
        };
        let mut pool: Vec<u32> = (0..v).collect();
        pool.shuffle(&mut rng);
        let mut s_a = sentence(&idiom);
        s_a.span = None;
        let t = s_a.ids.len();
        let inst = IdiomInstance {
            id: format!("synthetic-{i}"),
            idiom: words(&idiom),
            pronoun: "he".into(),
            connector,
            s_a,
            s_f: sentence(&fig),
            s_l: sentence(&lit),
            idiom_span: [2, 2 + idiom_len],
            subsequent_token_index: 2 + idiom_len,
            last_token_index: t - 1,
            c_f: pool[..CANDIDATE_SET_SIZE].to_vec(),
            c_l: pool[CANDIDATE_SET_SIZE..2 * CANDIDATE_SET_SIZE].to_vec(),
        };
        inst.validate().map_err(Error::InvalidInput)?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_validate_and_fit_the_model() {
        let cfg = tiny_config();
        let rows = synthetic_instances(&cfg, 6, 3).unwrap();
        for r in &rows {
            r.check_against(&cfg).unwrap();
        }
        assert_eq!(rows, synthetic_instances(&cfg, 6, 3).unwrap());
    }

    #[test]
    fn small_vocab_is_rejected() {
        let cfg = ModelConfig::tiny(1, 4, 1, 1, 8, 10);
        assert!(synthetic_instances(&cfg, 1, 0).is_err());
    }
}
