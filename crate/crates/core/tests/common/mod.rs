// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resid_scope::model::{embed, mlp_sublayer, rms_norm, unembed, ModelConfig, RopeTable, Weights};
use resid_scope::tensor::{add_assign, dot, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random small config: `L ∈ {1,2,3}`, `d ∈ {4,8}`, `H ∈ {1,2}`,
/// `H_kv ∈ {1,H}`.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let layers = rng.random_range(1..=3);
    let d = [4, 8][rng.random_range(0..2)];
    let heads = rng.random_range(1..=2);
    let kv = if rng.random_bool(0.5) { 1 } else { heads };
    let ff = [8, 12, 16][rng.random_range(0..3)];
    let vocab = rng.random_range(12..40);
    ModelConfig::tiny(layers, d, heads, kv, ff, vocab)
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn rms64(x: &[f64], scale: &[f32], eps: f32) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + f64::from(eps)).sqrt();
    x.iter().zip(scale).map(|(v, s)| v * inv * f64::from(*s)).collect()
}

fn matvec64(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| f64::from(m.get(r, c)) * x[c]).sum())
        .collect()
}

fn rope64(v: &mut [f64], pos: usize, theta: f32) {
    let hd = v.len();
    let half = hd / 2;
    for k in 0..half {
        let freq = f64::from(theta).powf(-2.0 * k as f64 / hd as f64);
        let (s, c) = (pos as f64 * freq).sin_cos();
        let (a, b) = (v[k], v[k + half]);
        v[k] = a * c - b * s;
        v[k + half] = a * s + b * c;
    }
}

/// Straight scalar-loop decoder in f64; shares no code with the engine.
pub fn reference_logits(w: &Weights, tokens: &[u32]) -> Vec<f64> {
    let c = &w.config;
    let d = c.hidden_dim;
    let hd = d / c.num_heads;
    let group = c.num_heads / c.num_kv_heads;
    let t_len = tokens.len();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| (0..d).map(|j| f64::from(w.embedding.get(t as usize, j))).collect())
        .collect();
    for lw in &w.layers {
        let normed: Vec<Vec<f64>> = x.iter().map(|r| rms64(r, &lw.attn_norm, c.norm_eps)).collect();
        let mut q: Vec<Vec<f64>> = normed.iter().map(|r| matvec64(&lw.wq, r)).collect();
        let mut k: Vec<Vec<f64>> = normed.iter().map(|r| matvec64(&lw.wk, r)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|r| matvec64(&lw.wv, r)).collect();
        for i in 0..t_len {
            for h in 0..c.num_heads {
                rope64(&mut q[i][h * hd..(h + 1) * hd], i, c.rope_theta);
            }
            for h in 0..c.num_kv_heads {
                rope64(&mut k[i][h * hd..(h + 1) * hd], i, c.rope_theta);
            }
        }
        let mut next = Vec::with_capacity(t_len);
        for i in 0..t_len {
            let mut a = vec![0.0f64; d];
            for h in 0..c.num_heads {
                let kv = h / group;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        (0..hd).map(|e| q[i][h * hd + e] * k[j][kv * hd + e]).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let mut o = vec![0.0f64; hd];
                for j in 0..=i {
                    for e in 0..hd {
                        o[e] += exps[j] / z * v[j][kv * hd + e];
                    }
                }
                for (r, ar) in a.iter_mut().enumerate() {
                    *ar += (0..hd).map(|e| f64::from(lw.wo.get(r, h * hd + e)) * o[e]).sum::<f64>();
                }
            }
            let mid: Vec<f64> = x[i].iter().zip(&a).map(|(p, q)| p + q).collect();
            let hn = rms64(&mid, &lw.mlp_norm, c.norm_eps);
            let g = matvec64(&lw.w_gate, &hn);
            let u = matvec64(&lw.w_up, &hn);
            let act: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            let m = matvec64(&lw.w_down, &act);
            next.push(mid.iter().zip(&m).map(|(p, q)| p + q).collect());
        }
        x = next;
    }
    let h = rms64(&x[t_len - 1], &w.final_norm, c.norm_eps);
    matvec64(w.unembedding(), &h)
}

/// Score assigned to a blocked edge in [`reference_floored`]; `exp` of it
/// minus any finite maximum is exactly zero in f32.
pub const FLOOR: f32 = -1.0e30;

/// f32 recomputation of a forward pass in which blocked query→key scores
/// are replaced by [`FLOOR`] instead of being masked. Follows the engine's
/// order of operations so that results can be compared bit for bit.
pub fn reference_floored(w: &Weights, tokens: &[u32], blocked: &dyn Fn(usize, usize, usize, usize) -> bool) -> Vec<f32> {
    let c = &w.config;
    let d = c.hidden_dim;
    let hd = c.head_dim();
    let t_len = tokens.len();
    let rope = RopeTable::new(c);
    let mut x = embed(w, tokens).unwrap();
    for (l, lw) in w.layers.iter().enumerate() {
        let mut normed = Matrix::zeros(t_len, d);
        for i in 0..t_len {
            normed.row_mut(i).copy_from_slice(&rms_norm(x.row(i), &lw.attn_norm, c.norm_eps));
        }
        let mut q = normed.matmul_t(&lw.wq);
        let mut k = normed.matmul_t(&lw.wk);
        let v = normed.matmul_t(&lw.wv);
        for i in 0..t_len {
            for h in 0..c.num_heads {
                rope.rotate(&mut q.row_mut(i)[h * hd..(h + 1) * hd], i);
            }
            for h in 0..c.num_kv_heads {
                rope.rotate(&mut k.row_mut(i)[h * hd..(h + 1) * hd], i);
            }
        }
        let scale = 1.0 / (hd as f32).sqrt();
        let mut a = Matrix::zeros(t_len, d);
        for h in 0..c.num_heads {
            let kv = c.kv_head(h);
            for i in 0..t_len {
                let qi = &q.row(i)[h * hd..(h + 1) * hd];
                let scores: Vec<f32> = (0..=i)
                    .map(|j| {
                        if blocked(l, h, i, j) {
                            FLOOR
                        } else {
                            dot(qi, &k.row(j)[kv * hd..(kv + 1) * hd]) * scale
                        }
                    })
                    .collect();
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut p: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f32 = p.iter().fold(0.0, |acc, e| acc + e);
                p.iter_mut().for_each(|e| *e /= total);
                let mut mix = vec![0.0f32; hd];
                for (j, &wgt) in p.iter().enumerate() {
                    if wgt != 0.0 {
                        for (m, val) in mix.iter_mut().zip(&v.row(j)[kv * hd..(kv + 1) * hd]) {
                            *m += wgt * val;
                        }
                    }
                }
                let contrib: Vec<f32> = (0..d).map(|o| dot(&lw.wo.row(o)[h * hd..(h + 1) * hd], &mix)).collect();
                add_assign(a.row_mut(i), &contrib);
            }
        }
        let mut next = Matrix::zeros(t_len, d);
        for i in 0..t_len {
            let mid: Vec<f32> = x.row(i).iter().zip(a.row(i)).map(|(p, q)| p + q).collect();
            let m = mlp_sublayer(w, &mid, l).unwrap();
            for ((o, p), q) in next.row_mut(i).iter_mut().zip(&mid).zip(&m) {
                *o = p + q;
            }
        }
        x = next;
    }
    unembed(w, x.row(t_len - 1))
}

/// Two-sided p-value of Student's t with `df` degrees of freedom by
/// composite Simpson integration of the density.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    fn ln_gamma(x: f64) -> f64 {
        // Lanczos approximation, g = 7.
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
    let norm = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let pdf = |x: f64| norm * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let t = t.abs();
    let n = 20_000;
    let h = t / n as f64;
    let mut s = pdf(0.0) + pdf(t);
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let central = s * h / 3.0;
    (1.0 - 2.0 * central).clamp(0.0, 1.0)
}

/// Softmax by explicit exponentiation and normalisation in f64.
pub fn softmax64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().map(|&z| f64::from(z)).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (f64::from(z) - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// `W_U · RMSNorm_final(x)` in f64.
pub fn reference_unembed(w: &Weights, x: &[f32]) -> Vec<f64> {
    let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    let h = rms64(&x, &w.final_norm, w.config.norm_eps);
    matvec64(w.unembedding(), &h)
}

pub fn max_abs_diff64(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (f64::from(*x) - y).abs()).fold(0.0, f64::max)
}
