// SPDX-License-Identifier: MIT OR Apache-2.0

//! Figurative/literal interpretation scores.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative next-token probability of the figurative (`f`) and literal
/// (`l`) candidate sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpretationScore {
    pub f: f64,
    pub l: f64,
}

/// Signed change of both scores under an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDelta {
    pub df: f64,
    pub dl: f64,
}

/// Softmax over the whole vocabulary, summed over each candidate set.
pub fn interpretation_scores(logits: &[f32], c_f: &[u32], c_l: &[u32]) -> Result<InterpretationScore> {
    if c_f.is_empty() || c_l.is_empty() {
        return Err(Error::InvalidInput("candidate sets must be nonempty".into()));
    }
    let fs: HashSet<u32> = c_f.iter().copied().collect();
    if let Some(t) = c_l.iter().find(|t| fs.contains(t)) {
        return Err(Error::InvalidInput(format!("candidate overlap: token {t} in both sets")));
    }
    if let Some(t) = c_f.iter().chain(c_l).find(|&&t| t as usize >= logits.len()) {
        return Err(Error::InvalidInput(format!(
            "candidate token {t} outside vocabulary of {}",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(f64::from(z)));
    let log_norm = max + logits.iter().map(|&z| (f64::from(z) - max).exp()).sum::<f64>().ln();
    let mass = |set: &[u32]| {
        set.iter()
            .map(|&t| (f64::from(logits[t as usize]) - log_norm).exp())
            .sum::<f64>()
    };
    Ok(InterpretationScore {
        f: mass(c_f),
        l: mass(c_l),
    })
}

pub fn delta_i(intervened: InterpretationScore, original: InterpretationScore) -> ScoreDelta {
    ScoreDelta {
        df: intervened.f - original.f,
        dl: intervened.l - original.l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let s = interpretation_scores(&[0.5; 10], &[0, 1], &[2, 3]).unwrap();
        assert!((s.f - 0.2).abs() < 1e-12);
        assert!((s.l - 0.2).abs() < 1e-12);
    }

    #[test]
    fn dominant_figurative_token() {
        let mut z = vec![0.0f32; 10];
        z[1] = 1e4;
        let s = interpretation_scores(&z, &[0, 1], &[2, 3]).unwrap();
        assert!((s.f - 1.0).abs() < 1e-12);
        assert!(s.l < 1e-12);
    }

    #[test]
    fn overlap_is_rejected() {
        assert!(interpretation_scores(&[0.0; 4], &[0, 1], &[1]).is_err());
        assert!(interpretation_scores(&[0.0; 4], &[], &[1]).is_err());
        assert!(interpretation_scores(&[0.0; 4], &[0], &[9]).is_err());
    }

    #[test]
    fn deltas() {
        let a = InterpretationScore { f: 0.6, l: 0.1 };
        let b = InterpretationScore { f: 0.2, l: 0.3 };
        assert_eq!(delta_i(a, a), ScoreDelta { df: 0.0, dl: 0.0 });
        let d = delta_i(b, a);
        assert!((d.df + 0.4).abs() < 1e-12);
        assert!((d.dl - 0.2).abs() < 1e-12);
    }
}
