use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use super::metrics::log_values;
use crate::data::CountMatrix;
use crate::error::{validation, Result};

/// Marker clusters keyed by cluster id; iteration order is the id order.
pub type Clusters = BTreeMap<String, Vec<String>>;

/// One within-cluster partial correlation between two markers.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelation {
    pub cluster: String,
    pub first: String,
    pub second: String,
    pub value: f64,
}

/// Reads `cluster_id<TAB>marker_id` lines.
pub fn parse_clusters(text: &str) -> Result<Clusters> {
    let mut out = Clusters::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        match (cells.next(), cells.next(), cells.next()) {
            (Some(c), Some(m), None) => out.entry(c.to_owned()).or_default().push(m.to_owned()),
            _ => {
                return Err(crate::Error::Parse {
                    line: i + 1,
                    message: "expected cluster_id<TAB>marker_id".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Partial correlations within each cluster from the inverse sample
/// covariance of the cluster's log2(x+1) values. Members absent from `m` are
/// dropped; clusters left with fewer than two members, or containing a
/// constant marker, are skipped with a warning.
pub fn partial_correlations(m: &CountMatrix, clusters: &Clusters) -> Result<Vec<PartialCorrelation>> {
    if m.n_samples() <= 2 {
        return Err(validation("partial correlations need more than two samples"));
    }
    let logs = log_values(m);
    let index: BTreeMap<&str, usize> = m
        .marker_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n = m.n_samples();
    let mut out = Vec::new();
    for (cluster, members) in clusters {
        let present: Vec<(&String, usize)> = members
            .iter()
            .filter_map(|id| index.get(id.as_str()).map(|&i| (id, i)))
            .collect();
        if present.len() < 2 {
            warn!("cluster {cluster} has fewer than two markers in the data; skipped");
            continue;
        }
        let p = present.len();
        let mut cov = DMatrix::<f64>::zeros(p, p);
        let centered: Vec<Vec<f64>> = present
            .iter()
            .map(|&(_, i)| {
                let row = logs.row(i);
                let mu = row.sum() / n as f64;
                row.iter().map(|v| v - mu).collect()
            })
            .collect();
        for a in 0..p {
            for b in a..p {
                let s: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
                cov[(a, b)] = s / (n - 1) as f64;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        if (0..p).any(|a| cov[(a, a)] == 0.0) {
            warn!("cluster {cluster} contains a constant marker; skipped");
            continue;
        }
        if p == 2 {
            // closed form; no regularization needed
            out.push(PartialCorrelation {
                cluster: cluster.clone(),
                first: present[0].0.clone(),
                second: present[1].0.clone(),
                value: (cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt()).clamp(-1.0, 1.0),
            });
            continue;
        }
        let Some(prec) = precision(cov) else {
            warn!("cluster {cluster}: covariance could not be inverted; skipped");
            continue;
        };
        for a in 0..p {
            for b in (a + 1)..p {
                let value = -prec[(a, b)] / (prec[(a, a)] * prec[(b, b)]).sqrt();
                out.push(PartialCorrelation {
                    cluster: cluster.clone(),
                    first: present[a].0.clone(),
                    second: present[b].0.clone(),
                    value: value.clamp(-1.0, 1.0),
                });
            }
        }
    }
    Ok(out)
}

const MIN_RECIPROCAL_CONDITION: f64 = 1e-12;

fn precision(cov: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = cov.nrows();
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let cov = if min <= max * MIN_RECIPROCAL_CONDITION {
        let delta = 1e-6 * cov.trace() / p as f64;
        cov + DMatrix::identity(p, p) * delta
    } else {
        cov
    };
    cov.cholesky().map(|c| c.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scale;
    use crate::rng::{seeded, standard_normal};
    use crate::stats::pearson;
    use ndarray::Array2;
    use proptest::{prop_assert, proptest};

    fn matrix(rows: Array2<f64>) -> CountMatrix {
        let (g, n) = rows.dim();
        CountMatrix::new(
            (0..g).map(|i| format!("m{i}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            rows.mapv(|v| v + 10.0),
            Scale::Log2p1,
            None,
        )
        .unwrap()
    }

    fn one_cluster(ids: &[&str]) -> Clusters {
        Clusters::from([("c1".to_string(), ids.iter().map(|s| s.to_string()).collect())])
    }

    #[test]
    fn pair_reduces_to_pearson() {
        let x = standard_normal(&mut seeded(3), 2, 30).mapv(|v| v + 5.0);
        let r = pearson(&x.row(0).to_vec(), &x.row(1).to_vec()).unwrap();
        let pcc = partial_correlations(&matrix(x), &one_cluster(&["m0", "m1"])).unwrap();
        assert_eq!(pcc.len(), 1);
        assert!((pcc[0].value - r).abs() < 1e-12);
    }

    #[test]
    fn perfectly_correlated_pair() {
        let base = standard_normal(&mut seeded(4), 1, 20).mapv(|v| v + 5.0);
        let mut x = Array2::zeros((2, 20));
        x.row_mut(0).assign(&base.row(0));
        x.row_mut(1).assign(&base.row(0).mapv(|v| 2.0 * v + 1.0));
        let pcc = partial_correlations(&matrix(x), &one_cluster(&["m0", "m1"])).unwrap();
        assert!((pcc[0].value - 1.0).abs() < 1e-9);
    }

    fn residuals(y: &[f64], z: &[f64]) -> Vec<f64> {
        // least squares of y on [1, z]
        let n = y.len() as f64;
        let (my, mz) = (y.iter().sum::<f64>() / n, z.iter().sum::<f64>() / n);
        let szz: f64 = z.iter().map(|v| (v - mz).powi(2)).sum();
        let szy: f64 = z.iter().zip(y).map(|(a, b)| (a - mz) * (b - my)).sum();
        let slope = szy / szz;
        y.iter().zip(z).map(|(b, a)| b - my - slope * (a - mz)).collect()
    }

    #[test]
    fn three_marker_cluster_matches_residual_oracle() {
        let noise = standard_normal(&mut seeded(5), 3, 200);
        let mut x = Array2::zeros((3, 200));
        for j in 0..200 {
            let a = noise[[0, j]];
            let b = 0.6 * a + noise[[1, j]];
            let c = -0.4 * a + 0.5 * b + noise[[2, j]];
            x[[0, j]] = a + 4.0;
            x[[1, j]] = b + 4.0;
            x[[2, j]] = c + 4.0;
        }
        let rows: Vec<Vec<f64>> = (0..3).map(|i| x.row(i).to_vec()).collect();
        let pcc = partial_correlations(&matrix(x), &one_cluster(&["m0", "m1", "m2"])).unwrap();
        let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
        assert_eq!(pcc.len(), 3);
        for (got, (i, j, k)) in pcc.iter().zip(pairs) {
            let ri = residuals(&rows[i], &rows[k]);
            let rj = residuals(&rows[j], &rows[k]);
            let oracle = pearson(&ri, &rj).unwrap();
            assert!((got.value - oracle).abs() < 1e-10, "{} vs {}", got.value, oracle);
        }
    }

    #[test]
    fn constant_marker_and_missing_members_skip_cluster() {
        let mut x = standard_normal(&mut seeded(6), 3, 10);
        x.row_mut(2).fill(1.0);
        let clusters = Clusters::from([
            ("a".to_string(), vec!["m0".to_string(), "m2".to_string()]),
            ("b".to_string(), vec!["m0".to_string(), "absent".to_string()]),
            ("c".to_string(), vec!["m0".to_string(), "m1".to_string()]),
        ]);
        let pcc = partial_correlations(&matrix(x), &clusters).unwrap();
        assert_eq!(pcc.len(), 1);
        assert_eq!(pcc[0].cluster, "c");
    }

    #[test]
    fn singular_covariance_is_regularized() {
        // m2 = m0 + m1 makes the covariance singular
        let mut x = standard_normal(&mut seeded(7), 3, 15);
        let sum = &x.row(0) + &x.row(1);
        x.row_mut(2).assign(&sum);
        let pcc = partial_correlations(&matrix(x), &one_cluster(&["m0", "m1", "m2"])).unwrap();
        assert_eq!(pcc.len(), 3);
        assert!(pcc.iter().all(|p| p.value.is_finite()));
    }

    #[test]
    fn parses_cluster_file() {
        let c = parse_clusters("c2\tm1\nc1\tm3\nc2\tm4\n").unwrap();
        assert_eq!(c.keys().collect::<Vec<_>>(), ["c1", "c2"]);
        assert_eq!(c["c2"], ["m1", "m4"]);
        assert!(parse_clusters("c1\n").is_err());
    }

    proptest! {
        #[test]
        fn invariant_to_sample_order(seed in 0u64..500, rot in 1usize..11) {
            let x = standard_normal(&mut seeded(seed), 4, 12);
            let clusters = one_cluster(&["m0", "m1", "m2", "m3"]);
            let base = partial_correlations(&matrix(x.clone()), &clusters).unwrap();
            let order: Vec<usize> = (0..12).map(|j| (j + rot) % 12).collect();
            let shuffled = x.select(ndarray::Axis(1), &order);
            let again = partial_correlations(&matrix(shuffled), &clusters).unwrap();
            for (a, b) in base.iter().zip(&again) {
                prop_assert!((a.value - b.value).abs() < 1e-9);
            }
        }
    }
}
