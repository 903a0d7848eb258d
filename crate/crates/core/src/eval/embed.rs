use nalgebra::DMatrix;
use ndarray::Array2;

use super::metrics::log_values;
use crate::data::CountMatrix;
use crate::error::{validation, Result};

/// Scores on the first two principal components of the centered
/// log2(x+1) samples, one row per sample. Each component's sign is fixed
/// so its largest-magnitude loading is positive.
pub fn embed_2d(m: &CountMatrix) -> Result<Array2<f64>> {
    pca_scores(&log_values(m).t().to_owned(), 2)
}

pub(crate) fn pca_scores(x: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n < 3 {
        return Err(validation("embedding needs at least three samples"));
    }
    let means = x.mean_axis(ndarray::Axis(0)).expect("n ≥ 3");
    let centered = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - means[j]);
    let svd = centered.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = Array2::zeros((n, k));
    for (c, &comp) in order.iter().take(k).enumerate() {
        let mut loading: Vec<f64> = vt.row(comp).iter().copied().collect();
        let pivot = loading
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            loading.iter_mut().for_each(|v| *v = -*v);
        }
        for i in 0..n {
            out[[i, c]] = (0..d).map(|j| centered[(i, j)] * loading[j]).sum();
        }
    }
    Ok(out)
}
