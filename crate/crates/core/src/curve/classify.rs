use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::Command;

use log::debug;
use ndarray::Array2;

use crate::error::{validation, Error, Result};

/// A supervised classifier usable by the accuracy harness: trained on one
/// set of rows and asked to label another. Labels are class indices.
pub trait Classifier: Send + Sync {
    /// Short identifier recorded in curve artifacts.
    fn name(&self) -> String;

    fn fit_predict(&self, train_x: &Array2<f64>, train_y: &[usize], test_x: &Array2<f64>) -> Result<Vec<usize>>;
}

pub const DEFAULT_NEIGHBORS: usize = 20;

/// Majority vote among the `k` nearest training rows by Euclidean
/// distance. A tied vote goes to the class whose tied neighbors are closer
/// on average, then to the smaller label.
pub fn knn_classify(train_x: &Array2<f64>, train_y: &[usize], test_x: &Array2<f64>, k: usize) -> Result<Vec<usize>> {
    let n = train_x.nrows();
    if train_y.len() != n {
        return Err(validation("training labels and rows differ in count"));
    }
    if k == 0 || k > n {
        return Err(validation(format!("K = {k} neighbors needs 1 ≤ K ≤ {n} training samples")));
    }
    if test_x.ncols() != train_x.ncols() {
        return Err(validation("training and test rows differ in width"));
    }
    let mut out = Vec::with_capacity(test_x.nrows());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
    for q in test_x.rows() {
        dist.clear();
        dist.extend(train_x.rows().into_iter().enumerate().map(|(i, r)| {
            let d: f64 = r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
            (d.sqrt(), i)
        }));
        dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for &(d, i) in &dist[..k] {
            let e = votes.entry(train_y[i]).or_default();
            e.0 += 1;
            e.1 += d;
        }
        let winner = votes
            .iter()
            .min_by(|(la, (ca, sa)), (lb, (cb, sb))| {
                cb.cmp(ca)
                    .then((sa / *ca as f64).total_cmp(&(sb / *cb as f64)))
                    .then(la.cmp(lb))
            })
            .map(|(l, _)| *l)
            .expect("k ≥ 1");
        out.push(winner);
    }
    Ok(out)
}

/// Built-in K-nearest-neighbors classifier. When a training fold is
/// smaller than `k`, every training sample votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Knn {
    pub k: usize,
}

impl Default for Knn {
    fn default() -> Self {
        Self { k: DEFAULT_NEIGHBORS }
    }
}

impl Classifier for Knn {
    fn name(&self) -> String {
        format!("knn:{}", self.k)
    }

    fn fit_predict(&self, train_x: &Array2<f64>, train_y: &[usize], test_x: &Array2<f64>) -> Result<Vec<usize>> {
        let k = self.k.min(train_x.nrows());
        if k < self.k {
            debug!("K reduced from {} to {k} for a training fold of that size", self.k);
        }
        knn_classify(train_x, train_y, test_x, k)
    }
}

/// Classifier backed by an external program. The program is run as
/// `program [args..] TRAIN_X TRAIN_Y TEST_X PREDICTIONS` where the feature
/// files are headerless TSVs (one row per sample), `TRAIN_Y` has one integer
/// label per line, and the program must write one integer label per test
/// row to `PREDICTIONS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalClassifier {
    pub program: PathBuf,
    pub args: Vec<String>,
}

fn write_rows(x: &Array2<f64>) -> String {
    let mut s = String::new();
    for r in x.rows() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", cells.join("\t"));
    }
    s
}

impl Classifier for ExternalClassifier {
    fn name(&self) -> String {
        format!("external:{}", self.program.display())
    }

    fn fit_predict(&self, train_x: &Array2<f64>, train_y: &[usize], test_x: &Array2<f64>) -> Result<Vec<usize>> {
        let dir = tempfile::tempdir()?;
        let paths = ["train_x.tsv", "train_y.txt", "test_x.tsv", "predictions.txt"].map(|f| dir.path().join(f));
        std::fs::write(&paths[0], write_rows(train_x))?;
        let labels: String = train_y.iter().map(|y| format!("{y}\n")).collect();
        std::fs::write(&paths[1], labels)?;
        std::fs::write(&paths[2], write_rows(test_x))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .args(&paths)
            .status()
            .map_err(|e| Error::Adapter(format!("cannot run {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::Adapter(format!("{} exited with {status}", self.program.display())));
        }
        let text = std::fs::read_to_string(&paths[3])
            .map_err(|e| Error::Adapter(format!("no predictions written: {e}")))?;
        let preds = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Adapter(format!("bad prediction {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if preds.len() != test_x.nrows() {
            return Err(Error::Adapter(format!(
                "expected {} predictions, got {}",
                test_x.nrows(),
                preds.len()
            )));
        }
        Ok(preds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal};
    use ndarray::array;

    #[test]
    fn one_neighbor_returns_the_match() {
        let x = array![[0.0, 0.0], [5.0, 5.0], [9.0, 1.0]];
        let y = [0, 1, 0];
        assert_eq!(knn_classify(&x, &y, &array![[5.0, 5.0]], 1).unwrap(), vec![1]);
        assert!(knn_classify(&x, &y, &array![[5.0, 5.0]], 4).is_err());
    }

    #[test]
    fn constant_labels() {
        let x = standard_normal(&mut seeded(1), 10, 3);
        let y = [2; 10];
        let t = standard_normal(&mut seeded(2), 4, 3);
        assert_eq!(knn_classify(&x, &y, &t, 5).unwrap(), vec![2; 4]);
    }

    #[test]
    fn tied_votes_prefer_closer_class_then_smaller_label() {
        let x = array![[1.0], [-3.0], [10.0], [-10.0]];
        let y = [0, 0, 1, 1];
        // nearest two to 0: labels 0 (d=1) and 0 (d=3) -> clear
        assert_eq!(knn_classify(&x, &y, &array![[0.0]], 2).unwrap(), vec![0]);
        // all four vote 2–2; class 0 mean distance 2, class 1 mean 10
        assert_eq!(knn_classify(&x, &y, &array![[0.0]], 4).unwrap(), vec![0]);
        let sym = array![[1.0], [-1.0]];
        assert_eq!(knn_classify(&sym, &[1, 0], &array![[0.0]], 2).unwrap(), vec![0]);
    }

    #[test]
    fn separated_blobs_are_classified_perfectly() {
        let mut x = standard_normal(&mut seeded(3), 80, 4);
        let y: Vec<usize> = (0..80).map(|i| i % 2).collect();
        for i in 0..80 {
            x[[i, 0]] += 10.0 * y[i] as f64;
        }
        let (train, test) = (x.slice(ndarray::s![..60, ..]).to_owned(), x.slice(ndarray::s![60.., ..]).to_owned());
        let pred = Knn::default().fit_predict(&train, &y[..60], &test).unwrap();
        assert_eq!(pred, y[60..]);
    }

    #[cfg(unix)]
    #[test]
    fn external_adapter_round_trip() {
        // a shell "classifier" that predicts label 1 for every test row
        let c = ExternalClassifier {
            program: "sh".into(),
            args: vec!["-c".into(), "awk '{print 1}' \"$3\" > \"$4\"".into(), "adapter".into()],
        };
        let x = standard_normal(&mut seeded(4), 6, 2);
        let t = standard_normal(&mut seeded(5), 3, 2);
        assert_eq!(c.fit_predict(&x, &[0, 1, 0, 1, 0, 1], &t).unwrap(), vec![1, 1, 1]);

        let broken = ExternalClassifier { program: "sh".into(), args: vec!["-c".into(), "exit 3".into()] };
        assert!(matches!(broken.fit_predict(&x, &[0; 6], &t), Err(Error::Adapter(_))));
    }
}
