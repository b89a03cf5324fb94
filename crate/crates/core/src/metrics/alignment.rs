// SPDX-License-Identifier: MIT OR Apache-2.0

//! Mutual nearest-neighbour kernel alignment between two representation
//! spaces of the same items.

use crate::error::{Error, Result};

/// Default neighbourhood size.
pub const DEFAULT_K: usize = 10;

/// Mean over items of `|kNN_a(i) ∩ kNN_b(i)| / k` under cosine similarity.
pub fn kernel_alignment<A, B>(a: &[A], b: &[B], k: usize) -> Result<f64>
where
    A: AsRef<[f32]> + Sync,
    B: AsRef<[f32]> + Sync,
{
    let items = kernel_alignment_items(a, b, k)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}

/// Per-item neighbourhood overlap fractions; their mean is
/// [`kernel_alignment`].
pub fn kernel_alignment_items<A, B>(a: &[A], b: &[B], k: usize) -> Result<Vec<f64>>
where
    A: AsRef<[f32]> + Sync,
    B: AsRef<[f32]> + Sync,
{
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "alignment sets differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if k == 0 || a.len() <= k {
        return Err(Error::InvalidInput(format!(
            "kernel alignment needs n > k >= 1 (n = {}, k = {k})",
            a.len()
        )));
    }
    let na = knn_sets(a, k, "first")?;
    let nb = knn_sets(b, k, "second")?;
    Ok(na
        .iter()
        .zip(&nb)
        .map(|(x, y)| x.iter().filter(|i| y.binary_search(i).is_ok()).count() as f64 / k as f64)
        .collect())
}

/// Sorted `k`-nearest-neighbour index sets (self excluded). Equal
/// similarities prefer the lower index.
pub fn knn_sets<R: AsRef<[f32]> + Sync>(rows: &[R], k: usize, label: &str) -> Result<Vec<Vec<usize>>> {
    let width = rows.first().map_or(0, |r| r.as_ref().len());
    let mut unit = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::InvalidInput(format!(
                "{label} set: row {i} has width {}, expected {width}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{label} set: row {i} is not finite")));
        }
        let norm = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate(format!("{label} set: row {i} has zero norm")));
        }
        unit.push(r.iter().map(|&v| f64::from(v) / norm).collect::<Vec<f64>>());
    }
    crate::par::try_map_range(rows.len(), |i| {
        let mut sims: Vec<(f64, usize)> = (0..unit.len())
            .filter(|&j| j != i)
            .map(|j| (unit[i].iter().zip(&unit[j]).map(|(x, y)| x * y).sum(), j))
            .collect();
        sims.sort_unstable_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut set: Vec<usize> = sims[..k].iter().map(|&(_, j)| j).collect();
        set.sort_unstable();
        Ok(set)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|i| {
                let t = i as f32 * 0.37;
                vec![t.cos() + 0.1 * i as f32, t.sin(), 1.0 + (i % 3) as f32]
            })
            .collect()
    }

    #[test]
    fn identical_sets_align_fully() {
        let x = grid(12);
        assert_eq!(kernel_alignment(&x, &x, 3).unwrap(), 1.0);
    }

    #[test]
    fn positive_rescaling_is_invisible() {
        let x = grid(12);
        let y: Vec<Vec<f32>> = x
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|v| v * (1.0 + i as f32)).collect())
            .collect();
        assert_eq!(kernel_alignment(&x, &y, 4).unwrap(), 1.0);
    }

    #[test]
    fn rejects_small_n() {
        let x = grid(3);
        assert!(kernel_alignment(&x, &x, 3).is_err());
        assert!(kernel_alignment(&x, &x, 0).is_err());
        assert!(kernel_alignment(&x, &grid(4), 1).is_err());
    }

    #[test]
    fn zero_row_is_degenerate() {
        let mut x = grid(5);
        x[2] = vec![0.0; 3];
        assert!(matches!(kernel_alignment(&x, &x, 2), Err(Error::Degenerate(_))));
    }
}
