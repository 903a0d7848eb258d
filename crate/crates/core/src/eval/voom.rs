use statrs::distribution::{ContinuousCDF, StudentsT};

use super::lowess::{interpolate, lowess};
use super::metrics::ccc;
use crate::data::{CountMatrix, Scale};
use crate::error::{validation, Error, Result};

/// Span of the mean-variance trend smoother.
pub const TREND_SPAN: f64 = 0.5;

/// Per-marker differential-expression result.
#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub marker: String,
    pub log2fc: f64,
    pub p_value: f64,
}

/// Precision-weighted two-group comparison on log-CPM values: the
/// residual-variance trend over average log-count gives each observation a
/// weight, then each marker gets a weighted t-test. The fold change is the
/// second group level (in sorted order) minus the first.
pub fn de_voom_lite(m: &CountMatrix) -> Result<Vec<DeResult>> {
    if m.scale() != Scale::RawCounts {
        return Err(Error::State("differential expression expects raw counts".into()));
    }
    let levels = m.group_levels();
    if levels.len() != 2 {
        return Err(validation(format!(
            "differential expression needs exactly two groups, found {}",
            levels.len()
        )));
    }
    let idx: Vec<Vec<usize>> = levels.iter().map(|l| m.samples_in_group(l)).collect();
    if idx.iter().any(|g| g.len() < 2) {
        return Err(validation("each group needs at least two samples"));
    }
    let n = m.n_samples();
    let lib: Vec<f64> = m.library_sizes();
    let counts = m.counts();
    let log_cpm = ndarray::Array2::from_shape_fn(counts.dim(), |(g, j)| {
        ((counts[[g, j]] + 0.5) / (lib[j] + 1.0) * 1e6).log2()
    });
    let offset = lib.iter().map(|l| (l + 1.0).log2()).sum::<f64>() / n as f64 - 1e6f64.log2();

    let df = (n - 2) as f64;
    let mut trend_x = Vec::new();
    let mut trend_y = Vec::new();
    let mut fitted_means = Vec::with_capacity(m.n_markers());
    for (g, row) in log_cpm.rows().into_iter().enumerate() {
        let means: Vec<f64> = idx
            .iter()
            .map(|s| s.iter().map(|&j| row[j]).sum::<f64>() / s.len() as f64)
            .collect();
        let rss: f64 = idx
            .iter()
            .zip(&means)
            .flat_map(|(s, mu)| s.iter().map(move |&j| (row[j] - mu).powi(2)))
            .sum();
        fitted_means.push(means);
        if counts.row(g).iter().all(|&c| c == 0.0) {
            continue;
        }
        trend_x.push(row.sum() / n as f64 + offset);
        trend_y.push((rss / df).sqrt().sqrt());
    }
    if trend_x.len() < 2 {
        return Err(validation("fewer than two expressed markers for the variance trend"));
    }
    let mut order: Vec<usize> = (0..trend_x.len()).collect();
    order.sort_by(|&a, &b| trend_x[a].total_cmp(&trend_x[b]));
    let sx: Vec<f64> = order.iter().map(|&i| trend_x[i]).collect();
    let sy: Vec<f64> = order.iter().map(|&i| trend_y[i]).collect();
    let delta = 0.01 * (sx[sx.len() - 1] - sx[0]);
    let smooth = lowess(&sx, &sy, TREND_SPAN, 3, delta);
    let floor = smooth.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };

    let tdist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut out = Vec::with_capacity(m.n_markers());
    for (g, row) in log_cpm.rows().into_iter().enumerate() {
        let mut sums = [(0.0, 0.0); 2];
        let mut weights = vec![0.0; n];
        for (k, s) in idx.iter().enumerate() {
            for &j in s {
                let fitted_log_count = fitted_means[g][k] + (lib[j] + 1.0).log2() - 1e6f64.log2();
                let sqrt_sd = interpolate(&sx, &smooth, fitted_log_count).max(floor);
                let w = sqrt_sd.powi(-4);
                weights[j] = w;
                sums[k].0 += w;
                sums[k].1 += w * row[j];
            }
        }
        let wmeans = [sums[0].1 / sums[0].0, sums[1].1 / sums[1].0];
        let wrss: f64 = idx
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.iter().map(move |&j| (k, j)))
            .map(|(k, j)| weights[j] * (row[j] - wmeans[k]).powi(2))
            .sum();
        let log2fc = wmeans[1] - wmeans[0];
        let se = (wrss / df * (1.0 / sums[0].0 + 1.0 / sums[1].0)).sqrt();
        let p_value = if se > 0.0 {
            2.0 * tdist.sf((log2fc / se).abs())
        } else if log2fc == 0.0 {
            1.0
        } else {
            0.0
        };
        out.push(DeResult {
            marker: m.marker_ids()[g].clone(),
            log2fc,
            p_value,
        });
    }
    Ok(out)
}

/// Smallest p-value used before taking `−log10`.
const P_FLOOR: f64 = 1e-300;

/// Concordance of `−log10 p` and of log2 fold changes between two result
/// sets over the same markers, in that order.
pub fn de_concordance(generated: &[DeResult], reference: &[DeResult]) -> Result<(f64, f64)> {
    if generated.len() != reference.len()
        || generated.iter().zip(reference).any(|(a, b)| a.marker != b.marker)
    {
        return Err(validation("differential-expression results cover different markers"));
    }
    let nlp = |r: &[DeResult]| -> Vec<f64> { r.iter().map(|d| -d.p_value.max(P_FLOOR).log10()).collect() };
    let fc = |r: &[DeResult]| -> Vec<f64> { r.iter().map(|d| d.log2fc).collect() };
    Ok((
        ccc(&nlp(generated), &nlp(reference))?,
        ccc(&fc(generated), &fc(reference))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stats::spearman;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, Poisson};

    fn two_groups(counts: Array2<f64>, per_group: usize) -> CountMatrix {
        let (g, n) = counts.dim();
        CountMatrix::new(
            (0..g).map(|i| format!("m{i}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            counts,
            Scale::RawCounts,
            Some((0..n).map(|j| if j < per_group { "A".into() } else { "B".into() }).collect()),
        )
        .unwrap()
    }

    fn poisson_counts(seed: u64, markers: usize, per_group: usize, shift: impl Fn(usize) -> f64) -> Array2<f64> {
        let mut rng = seeded(seed);
        let mut out = Array2::zeros((markers, 2 * per_group));
        for g in 0..markers {
            let base = 20.0 * (1.0 + (g % 7) as f64) * rng.random_range(0.8..1.2);
            for j in 0..2 * per_group {
                let mu = if j < per_group { base } else { base * shift(g) };
                out[[g, j]] = Poisson::new(mu).unwrap().sample(&mut rng);
            }
        }
        out
    }

    #[test]
    fn identical_groups_have_zero_fold_change() {
        let half = poisson_counts(1, 30, 4, |_| 1.0).slice(ndarray::s![.., 0..4]).to_owned();
        let counts = ndarray::concatenate![ndarray::Axis(1), half, half];
        let res = de_voom_lite(&two_groups(counts, 4)).unwrap();
        assert!(res.iter().all(|r| r.log2fc.abs() < 1e-12));
    }

    #[test]
    fn four_fold_shift_is_detected() {
        let counts = poisson_counts(2, 40, 20, |g| if g == 0 { 4.0 } else { 1.0 });
        let res = de_voom_lite(&two_groups(counts, 20)).unwrap();
        assert!(res[0].p_value < 1e-3, "p = {}", res[0].p_value);
        assert!((res[0].log2fc - 2.0).abs() < 0.5);
        assert!(res.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));
    }

    fn pooled_t_pvalue(a: &[f64], b: &[f64]) -> f64 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(a), mean(b));
        let ss: f64 = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
            + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
        let df = (a.len() + b.len() - 2) as f64;
        let se = (ss / df * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
        let t = StudentsT::new(0.0, 1.0, df).unwrap();
        2.0 * t.sf(((mb - ma) / se).abs())
    }

    #[test]
    fn ranks_agree_with_pooled_t_test_on_homoskedastic_data() {
        // large counts keep the log-CPM variance roughly constant
        let mut rng = seeded(3);
        let per = 10;
        let mut counts = Array2::zeros((60, 2 * per));
        for g in 0..60 {
            let shift = if g < 20 { 1.0 + 0.1 * g as f64 } else { 1.0 };
            for j in 0..2 * per {
                let mu = 5000.0 * if j < per { 1.0 } else { shift };
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                counts[[g, j]] = (mu * (0.15 * noise).exp()).round();
            }
        }
        let m = two_groups(counts, per);
        let res = de_voom_lite(&m).unwrap();
        let lib = m.library_sizes();
        let t_p: Vec<f64> = (0..60)
            .map(|g| {
                let y: Vec<f64> = (0..2 * per)
                    .map(|j| ((m.counts()[[g, j]] + 0.5) / (lib[j] + 1.0) * 1e6).log2())
                    .collect();
                pooled_t_pvalue(&y[..per], &y[per..])
            })
            .collect();
        let ours: Vec<f64> = res.iter().map(|r| r.p_value).collect();
        let rho = spearman(&ours, &t_p).unwrap();
        assert!(rho > 0.95, "spearman {rho}");
    }

    #[test]
    fn all_zero_marker_is_reported() {
        // an all-zero marker is kept out of the trend but still reported
        let mut counts = poisson_counts(4, 20, 3, |_| 1.0);
        counts.row_mut(5).fill(0.0);
        let res = de_voom_lite(&two_groups(counts, 3)).unwrap();
        assert_eq!(res.len(), 20);
        assert!(res.iter().all(|r| r.p_value.is_finite() && r.log2fc.is_finite()));
    }

    #[test]
    fn rejects_bad_designs() {
        let counts = poisson_counts(5, 10, 3, |_| 1.0);
        let m = two_groups(counts.clone(), 1);
        assert!(matches!(de_voom_lite(&m), Err(Error::Validation(_))));
        let logged = crate::data::log2p1(&two_groups(counts, 3)).unwrap();
        assert!(matches!(de_voom_lite(&logged), Err(Error::State(_))));
    }

    fn results(p: &[f64], fc: &[f64]) -> Vec<DeResult> {
        p.iter()
            .zip(fc)
            .enumerate()
            .map(|(i, (&p_value, &log2fc))| DeResult { marker: format!("m{i}"), log2fc, p_value })
            .collect()
    }

    #[test]
    fn concordance_examples() {
        let a = results(&[0.1, 0.01, 0.5], &[1.0, -1.0, 0.5]);
        assert_eq!(de_concordance(&a, &a).unwrap(), (1.0, 1.0));
        let b = results(&[0.1, 0.01, 0.5], &[-1.0, 1.0, -0.5]);
        let fc_only = de_concordance(&results(&[0.1, 0.2], &[1.0, -1.0]), &results(&[0.3, 0.2], &[-1.0, 1.0]));
        assert_eq!(fc_only.unwrap().1, -1.0);
        // −log10 p = (1, 2) against (2, 1): means equal, var 1/4 each, cov −1/4
        let swapped = de_concordance(&results(&[0.1, 0.01], &[0.0, 1.0]), &results(&[0.01, 0.1], &[0.0, 1.0]));
        assert!((swapped.unwrap().0 + 1.0).abs() < 1e-12);
        assert!(de_concordance(&a, &b[..2]).is_err());
    }
}
