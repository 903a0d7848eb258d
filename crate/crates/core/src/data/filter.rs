use log::warn;
use serde::{Deserialize, Serialize};

use super::{log2p1_with, CountMatrix, Normalization, Scale};
use crate::error::{validation, Result};
use crate::stats::{mean, sample_sd};

/// Fewer retained markers than this triggers a warning: it is the width of
/// the widest hidden layer in the generators.
pub const MIN_RECOMMENDED_MARKERS: usize = 256;

/// Normalization and marker-filtering settings.
///
/// Thresholds are on the `log2(count + 1)` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub normalization: Normalization,
    pub mean_threshold: Option<f64>,
    pub sd_threshold: Option<f64>,
    pub pseudocount: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            normalization: Normalization::None,
            mean_threshold: None,
            sd_threshold: None,
            pseudocount: 1.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pseudocount > 0.0) {
            return Err(validation("pseudocount must be positive"));
        }
        for t in [self.mean_threshold, self.sd_threshold].into_iter().flatten() {
            if !t.is_finite() {
                return Err(validation("filter thresholds must be finite"));
            }
        }
        Ok(())
    }
}

/// Keeps markers whose log-scale mean (and SD, when a threshold is set)
/// reach the configured thresholds. Statistics are taken over samples of
/// `log2(count + pseudocount)`; raw input is transformed internally and the
/// output keeps the input scale.
pub fn filter_markers(m: &CountMatrix, cfg: &PreprocessConfig) -> Result<CountMatrix> {
    cfg.validate()?;
    let logged;
    let view = match m.scale() {
        Scale::RawCounts => {
            logged = log2p1_with(m, cfg.pseudocount)?;
            &logged
        }
        Scale::Log2p1 => m,
    };
    let keep: Vec<usize> = view
        .counts()
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, row)| {
            let v = row.to_vec();
            let mean_ok = cfg.mean_threshold.is_none_or(|t| mean(&v) >= t);
            let sd_ok = cfg
                .sd_threshold
                .is_none_or(|t| v.len() > 1 && sample_sd(&v) >= t);
            mean_ok && sd_ok
        })
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(validation("no markers pass the filter thresholds"));
    }
    if keep.len() < MIN_RECOMMENDED_MARKERS {
        warn!(
            "{} markers remain after filtering (fewer than {MIN_RECOMMENDED_MARKERS})",
            keep.len()
        );
    }
    m.select_markers(&keep)
}
