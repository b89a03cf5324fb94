// SPDX-License-Identifier: MIT OR Apache-2.0

//! Parameter tensors of a Llama-style decoder.
//!
//! Linear layers are stored `[out, in]`. Head `j` of the query projection
//! owns output rows `j*hd..(j+1)*hd`; head `j` of the output projection owns
//! input columns `j*hd..(j+1)*hd`, so the per-head views partition both
//! matrices into `num_heads` equal slices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    /// `[num_heads * hd, d]`
    pub wq: Matrix,
    /// `[num_kv_heads * hd, d]`
    pub wk: Matrix,
    /// `[num_kv_heads * hd, d]`
    pub wv: Matrix,
    /// `[d, num_heads * hd]`
    pub wo: Matrix,
    pub mlp_norm: Vec<f32>,
    /// `[d_ff, d]`
    pub w_gate: Matrix,
    /// `[d_ff, d]`
    pub w_up: Matrix,
    /// `[d, d_ff]`
    pub w_down: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    /// `[vocab, d]`
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    /// `[vocab, d]`; `None` when tied to the embedding matrix.
    pub unembedding: Option<Matrix>,
}

impl Weights {
    /// The matrix mapping the final hidden state onto vocabulary logits.
    pub fn unembedding(&self) -> &Matrix {
        self.unembedding.as_ref().unwrap_or(&self.embedding)
    }

    /// Gaussian-initialised weights, reproducible from `seed`.
    ///
    /// Linear layers use standard deviation `1/sqrt(fan_in)`; norm scales are
    /// drawn around 1 so that tests exercise non-trivial scaling.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let hd = config.head_dim();
        let mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0f32, 1.0 / (cols as f32).sqrt()).expect("valid std");
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
        };
        let norm = |rng: &mut ChaCha8Rng| {
            let normal = Normal::new(1.0f32, 0.1).expect("valid std");
            (0..d).map(|_| normal.sample(rng)).collect::<Vec<_>>()
        };
        let embedding = {
            let normal = Normal::new(0.0f32, 1.0).expect("valid std");
            Matrix::from_vec(
                config.vocab_size,
                d,
                (0..config.vocab_size * d).map(|_| normal.sample(&mut rng)).collect(),
            )
        };
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(LayerWeights {
                attn_norm: norm(&mut rng),
                wq: mat(config.num_heads * hd, d, &mut rng),
                wk: mat(config.num_kv_heads * hd, d, &mut rng),
                wv: mat(config.num_kv_heads * hd, d, &mut rng),
                wo: mat(d, config.num_heads * hd, &mut rng),
                mlp_norm: norm(&mut rng),
                w_gate: mat(config.ff_dim, d, &mut rng),
                w_up: mat(config.ff_dim, d, &mut rng),
                w_down: mat(d, config.ff_dim, &mut rng),
            });
        }
        let final_norm = norm(&mut rng);
        let unembedding = Some(mat(config.vocab_size, d, &mut rng));
        Ok(Self {
            config: config.clone(),
            embedding,
            layers,
            final_norm,
            unembedding,
        })
    }

    /// Checks every tensor shape against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.hidden_dim;
        let hd = c.head_dim();
        let check = |name: String, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name}: expected [{rows}, {cols}], found [{}, {}]",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        let check_vec = |name: String, v: &[f32]| -> Result<()> {
            if v.len() != d {
                return Err(Error::Shape(format!(
                    "{name}: expected [{d}], found [{}]",
                    v.len()
                )));
            }
            Ok(())
        };
        check("embedding".into(), &self.embedding, c.vocab_size, d)?;
        if self.layers.len() != c.num_layers {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                c.num_layers,
                self.layers.len()
            )));
        }
        for (l, lw) in self.layers.iter().enumerate() {
            check_vec(format!("layers.{l}.attn_norm"), &lw.attn_norm)?;
            check(format!("layers.{l}.wq"), &lw.wq, c.num_heads * hd, d)?;
            check(format!("layers.{l}.wk"), &lw.wk, c.num_kv_heads * hd, d)?;
            check(format!("layers.{l}.wv"), &lw.wv, c.num_kv_heads * hd, d)?;
            check(format!("layers.{l}.wo"), &lw.wo, d, c.num_heads * hd)?;
            check_vec(format!("layers.{l}.mlp_norm"), &lw.mlp_norm)?;
            check(format!("layers.{l}.w_gate"), &lw.w_gate, c.ff_dim, d)?;
            check(format!("layers.{l}.w_up"), &lw.w_up, c.ff_dim, d)?;
            check(format!("layers.{l}.w_down"), &lw.w_down, d, c.ff_dim)?;
        }
        check_vec("final_norm".into(), &self.final_norm)?;
        if let Some(u) = &self.unembedding {
            check("unembedding".into(), u, c.vocab_size, d)?;
        }
        Ok(())
    }
}
