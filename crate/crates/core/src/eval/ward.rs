//! Agglomerative clustering with Ward's minimum-variance criterion.

use ndarray::Array2;

use crate::error::{validation, Result};

/// Clusters the rows of `x` into `k` groups with Ward linkage on Euclidean
/// distances (the `ward.D2` convention). Labels are numbered in order of
/// first appearance.
pub fn ward_clusters(x: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if k == 0 || n < k {
        return Err(validation(format!("cannot form {k} clusters from {n} samples")));
    }
    // squared Euclidean distances; the Lance–Williams Ward update on these
    // is exact for merge costs
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d[i][j] = s;
            d[j][i] = s;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..(n - k) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let nm = size[m] as f64;
            let v = ((ni + nm) * d[i][m] + (nj + nm) * d[j][m] - nm * dij) / (ni + nj + nm);
            d[i][m] = v;
            d[m][i] = v;
        }
        active[j] = false;
        size[i] += size[j];
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
    }
    let mut ids: Vec<usize> = Vec::new();
    Ok(owner
        .iter()
        .map(|o| match ids.iter().position(|x| x == o) {
            Some(p) => p,
            None => {
                ids.push(*o);
                ids.len() - 1
            }
        })
        .collect())
}
