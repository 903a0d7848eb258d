//! Autoregressive connectivity masks.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

/// Degree of each hidden unit: cycles through `1..dim` (all zero when
/// `dim == 1`, so no input feature reaches the hidden layer).
pub(crate) fn hidden_degrees(width: usize, dim: usize) -> Vec<usize> {
    if dim <= 1 {
        return vec![0; width];
    }
    (0..width).map(|k| k % (dim - 1) + 1).collect()
}

/// Masks for a conditioner with `dim` features plus `n_cond` label inputs,
/// hidden `widths`, and `2 · dim` outputs (log-scale then shift for each
/// feature). Output `i` only sees features `0..i`; labels reach every
/// hidden unit.
pub(crate) fn made_masks(dim: usize, n_cond: usize, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut in_deg: Vec<usize> = (1..=dim).collect();
    in_deg.extend(std::iter::repeat_n(0, n_cond));
    let mut masks = Vec::with_capacity(widths.len() + 1);
    let mut prev = in_deg;
    for &w in widths {
        let deg = hidden_degrees(w, dim);
        masks.push(Array2::from_shape_fn((prev.len(), w), |(i, j)| {
            f64::from(u8::from(deg[j] >= prev[i]))
        }));
        prev = deg;
    }
    let out_deg: Vec<usize> = (1..=dim).chain(1..=dim).collect();
    masks.push(Array2::from_shape_fn((prev.len(), 2 * dim), |(i, j)| {
        f64::from(u8::from(out_deg[j] > prev[i]))
    }));
    masks
}

/// Fraction of connections switched off across all masks.
#[cfg(test)]
pub(crate) fn masked_fraction(masks: &[Array2<f64>]) -> f64 {
    let total: usize = masks.iter().map(|m| m.len()).sum();
    let off: usize = masks.iter().map(|m| m.iter().filter(|&&v| v == 0.0).count()).sum();
    off as f64 / total as f64
}

/// Switches off randomly chosen hidden-to-hidden connections until at least
/// `target` of all connections are masked. Removing connections never
/// breaks the autoregressive property.
pub(crate) fn thin_to_fraction(masks: &mut [Array2<f64>], target: f64, rng: &mut impl Rng) {
    let total: usize = masks.iter().map(|m| m.len()).sum();
    let off: usize = masks.iter().map(|m| m.iter().filter(|&&v| v == 0.0).count()).sum();
    let wanted = (target * total as f64).ceil() as usize;
    if off >= wanted || masks.len() < 3 {
        return;
    }
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (l, m) in masks.iter().enumerate().take(masks.len() - 1).skip(1) {
        for ((i, j), &v) in m.indexed_iter() {
            if v != 0.0 {
                candidates.push((l, i, j));
            }
        }
    }
    candidates.shuffle(rng);
    for &(l, i, j) in candidates.iter().take(wanted - off) {
        masks[l][[i, j]] = 0.0;
    }
}
