use rand::seq::index::sample;

use super::CountMatrix;
use crate::error::{validation, Result};
use crate::rng::seeded;

/// Draws a pilot dataset without replacement.
///
/// With groups attached, `n_per_group` samples are drawn from every group
/// (output ordered by group level, then draw order); otherwise `n_per_group`
/// samples are drawn from the whole matrix.
pub fn subsample_pilot(m: &CountMatrix, n_per_group: usize, seed: u64) -> Result<CountMatrix> {
    let mut rng = seeded(seed);
    let pools: Vec<(String, Vec<usize>)> = if m.groups().is_some() {
        m.group_levels()
            .into_iter()
            .map(|l| {
                let idx = m.samples_in_group(&l);
                (l, idx)
            })
            .collect()
    } else {
        vec![("all samples".to_owned(), (0..m.n_samples()).collect())]
    };
    let mut picked = Vec::with_capacity(n_per_group * pools.len());
    for (label, pool) in &pools {
        if n_per_group > pool.len() {
            return Err(validation(format!(
                "requested {n_per_group} samples but {label} has only {}",
                pool.len()
            )));
        }
        picked.extend(sample(&mut rng, pool.len(), n_per_group).into_iter().map(|i| pool[i]));
    }
    m.select_samples(&picked)
}
