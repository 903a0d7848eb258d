//! Learning curves: classifier accuracy over candidate sample sizes, an
//! inverse-power-law fit, and the sample size needed for a target accuracy.

mod classify;
mod cv;
mod harness;
mod iplf;

use serde::{Deserialize, Serialize};

pub use classify::{knn_classify, Classifier, ExternalClassifier, Knn, DEFAULT_NEIGHBORS};
pub use cv::{cross_val_accuracy, stratified_folds};
pub use harness::{
    accuracy_harness, repeat_seed, HarnessConfig, HarnessResult, SampleSource, DEFAULT_FOLDS, DEFAULT_REPEATS,
};
pub use iplf::{
    fit_iplf, fit_iplf_weighted, project_sample_size, rank_weights, weighted_sse, IplfFit, IplfParams, Prediction,
    STARTS,
};

use crate::error::Result;

/// Number of points in the plotted curve.
pub const PLOT_POINTS: usize = 200;

/// Everything needed to replot or re-project a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveArtifact {
    pub sizes: Vec<usize>,
    pub mean_accuracy: Vec<f64>,
    pub per_repeat: Vec<Vec<f64>>,
    pub params: IplfParams,
    pub covariance: [[f64; 3]; 3],
    pub residual_scale: f64,
    pub classifier: String,
    pub seed: u64,
}

impl CurveArtifact {
    pub fn new(harness: &HarnessResult, fit: &IplfFit, classifier: &str, seed: u64) -> Self {
        Self {
            sizes: harness.sizes.clone(),
            mean_accuracy: harness.mean_accuracy.clone(),
            per_repeat: harness.per_repeat.clone(),
            params: fit.params,
            covariance: fit.covariance,
            residual_scale: fit.residual_scale,
            classifier: classifier.to_owned(),
            seed,
        }
    }

    /// Rebuilds the fit so predictions can be made from a stored artifact.
    pub fn fit(&self) -> IplfFit {
        IplfFit {
            params: self.params,
            covariance: self.covariance,
            residual_scale: self.residual_scale,
            objective: weighted_sse(
                &self.params,
                &self.float_sizes(),
                &self.mean_accuracy,
                &rank_weights(self.sizes.len()),
            ),
            degenerate: self.params.b <= 1e-10,
            sizes: self.float_sizes(),
            accuracy: self.mean_accuracy.clone(),
        }
    }

    fn float_sizes(&self) -> Vec<f64> {
        self.sizes.iter().map(|&n| n as f64).collect()
    }
}

/// Fits the curve to harness output.
pub fn fit_harness(harness: &HarnessResult) -> Result<IplfFit> {
    let sizes: Vec<f64> = harness.sizes.iter().map(|&n| n as f64).collect();
    fit_iplf(&sizes, &harness.mean_accuracy)
}

/// Fitted curve and 95% band at [`PLOT_POINTS`] evenly spaced sizes from the
/// smallest grid size to twice the largest, as TSV with columns
/// `n accuracy lo95 hi95` (bounds empty when unavailable).
pub fn plot_tsv(fit: &IplfFit) -> Result<String> {
    let first = fit.sizes[0];
    let last = 2.0 * fit.sizes[fit.sizes.len() - 1];
    let mut out = String::from("n\taccuracy\tlo95\thi95\n");
    for k in 0..PLOT_POINTS {
        let n = first + (last - first) * k as f64 / (PLOT_POINTS - 1) as f64;
        let p = fit.predict(n)?;
        let (lo, hi) = p.interval.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
        out.push_str(&format!("{n}\t{}\t{lo}\t{hi}\n", p.accuracy));
    }
    Ok(out)
}
