use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::{CountMatrix, Scale};
use crate::error::{validation, Result};
use crate::stats::{mean, median, sample_sd};

/// Per-marker mean and standard deviation of `log2(count + 1)`, and the
/// fraction of samples with a zero count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub sparsity: Vec<f64>,
}

/// Values of `m` on the log2(x+1) scale.
pub(crate) fn log_values(m: &CountMatrix) -> ndarray::Array2<f64> {
    match m.scale() {
        Scale::Log2p1 => m.counts().clone(),
        Scale::RawCounts => m.counts().mapv(|v| (v + 1.0).log2()),
    }
}

pub fn marker_summary(m: &CountMatrix) -> Result<SummaryStats> {
    if m.n_samples() < 2 {
        return Err(validation("marker summaries need at least two samples"));
    }
    let logs = log_values(m);
    let n = m.n_samples() as f64;
    let mut out = SummaryStats {
        mean: Vec::with_capacity(m.n_markers()),
        sd: Vec::with_capacity(m.n_markers()),
        sparsity: Vec::with_capacity(m.n_markers()),
    };
    for (row, raw) in logs.rows().into_iter().zip(m.counts().rows()) {
        let v = row.to_vec();
        out.mean.push(mean(&v));
        out.sd.push(sample_sd(&v));
        // zero on either scale is a zero count
        out.sparsity.push(raw.iter().filter(|&&c| c == 0.0).count() as f64 / n);
    }
    Ok(out)
}

/// Median over markers of `|a − b|`.
pub fn mad_paired(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(validation(format!(
            "paired vectors must be non-empty and equally long ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(median(&diffs))
}

/// `1 − ` the fraction of markers that are zero in every sample.
pub fn one_minus_pct_zero_markers(m: &CountMatrix) -> f64 {
    let all_zero = m
        .counts()
        .rows()
        .into_iter()
        .filter(|r| r.iter().all(|&v| v == 0.0))
        .count();
    1.0 - all_zero as f64 / m.n_markers() as f64
}

/// Lin's concordance correlation coefficient with `1/n` moments.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(validation("concordance needs two equally long vectors of length ≥ 2"));
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let denom = vx + vy + (mx - my).powi(2);
    if denom == 0.0 {
        return Err(validation("concordance is undefined for two identical constant vectors"));
    }
    Ok(2.0 * cov / denom)
}

fn choose2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(validation("partitions must label the same items"));
    }
    let mut table: HashMap<(&A, &B), usize> = HashMap::new();
    let mut rows: HashMap<&A, usize> = HashMap::new();
    let mut cols: HashMap<&B, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sa: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial (all singletons or one block)
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
