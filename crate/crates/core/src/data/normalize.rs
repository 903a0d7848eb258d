//! Sequencing-depth normalization: total count (TC), upper quartile (UQ) and
//! trimmed mean of M-values (TMM).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{CountMatrix, Scale};
use crate::error::{validation, Error, Result};
use crate::stats::{average_ranks, quantile_sorted};

/// Depth normalization method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Tc,
    Tmm,
    Uq,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "tc" => Ok(Self::Tc),
            "tmm" => Ok(Self::Tmm),
            "uq" => Ok(Self::Uq),
            other => Err(validation(format!("unknown normalization {other:?}"))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Tc => "tc",
            Self::Tmm => "tmm",
            Self::Uq => "uq",
        })
    }
}

/// Per-sample quantities computed while normalizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationReport {
    pub method: Normalization,
    pub library_sizes: Vec<f64>,
    /// Multiplier applied to each sample's counts.
    pub scaling: Vec<f64>,
    /// TMM normalization factors (geometric mean 1); empty for other methods.
    pub tmm_factors: Vec<f64>,
}

/// Rescales each sample of a raw count matrix. See [`Normalization`].
///
/// Returns the normalized matrix together with the per-sample scaling that
/// was applied.
pub fn normalize(m: &CountMatrix, method: Normalization) -> Result<(CountMatrix, NormalizationReport)> {
    if m.scale() != Scale::RawCounts {
        return Err(Error::State("normalize expects raw counts".into()));
    }
    let lib = m.library_sizes();
    let mut tmm = Vec::new();
    let scaling: Vec<f64> = match method {
        Normalization::None => vec![1.0; lib.len()],
        Normalization::Tc => {
            check_library_sizes(m, &lib)?;
            let target = mean(&lib);
            lib.iter().map(|l| target / l).collect()
        }
        Normalization::Uq => {
            check_library_sizes(m, &lib)?;
            let uq: Vec<f64> = (0..m.n_samples())
                .map(|j| upper_quartile(m.counts().column(j)))
                .collect::<Result<_>>()?;
            let target = mean(&uq);
            uq.iter().map(|u| target / u).collect()
        }
        Normalization::Tmm => {
            check_library_sizes(m, &lib)?;
            tmm = tmm_factors(m.counts())?;
            let target = mean(&lib);
            lib.iter()
                .zip(&tmm)
                .map(|(l, f)| target / (l * f))
                .collect()
        }
    };
    let mut out = m.counts().clone();
    for (mut col, s) in out.columns_mut().into_iter().zip(&scaling) {
        col *= *s;
    }
    let report = NormalizationReport {
        method,
        library_sizes: lib,
        scaling,
        tmm_factors: tmm,
    };
    Ok((m.with_values(out, Scale::RawCounts)?, report))
}

fn check_library_sizes(m: &CountMatrix, lib: &[f64]) -> Result<()> {
    for (s, l) in m.sample_ids().iter().zip(lib) {
        if *l <= 0.0 {
            return Err(validation(format!("sample {s:?} has zero library size")));
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// 75th percentile (linear interpolation between order statistics) of the
/// nonzero entries of one sample.
pub fn upper_quartile(sample: ArrayView1<f64>) -> Result<f64> {
    let mut nz: Vec<f64> = sample.iter().copied().filter(|&v| v > 0.0).collect();
    if nz.is_empty() {
        return Err(validation("sample has no nonzero counts"));
    }
    nz.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&nz, 0.75))
}

const LOGRATIO_TRIM: f64 = 0.3;
const SUM_TRIM: f64 = 0.05;

/// TMM normalization factors of a markers × samples matrix, rescaled to a
/// geometric mean of one.
pub fn tmm_factors(counts: &Array2<f64>) -> Result<Vec<f64>> {
    let n = counts.ncols();
    let lib: Vec<f64> = counts.columns().into_iter().map(|c| c.sum()).collect();
    if lib.iter().any(|&l| l <= 0.0) {
        return Err(validation("sample has zero library size"));
    }
    // reference: upper quartile of proportions closest to the mean
    let f75: Vec<f64> = counts
        .columns()
        .into_iter()
        .zip(&lib)
        .map(|(c, l)| {
            let mut p: Vec<f64> = c.iter().map(|v| v / l).collect();
            p.sort_by(f64::total_cmp);
            quantile_sorted(&p, 0.75)
        })
        .collect();
    let avg = mean(&f75);
    let reference = f75
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - avg).abs().total_cmp(&(b.1 - avg).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut factors: Vec<f64> = (0..n)
        .map(|j| {
            tmm_pair(
                counts.column(j),
                lib[j],
                counts.column(reference),
                lib[reference],
            )
        })
        .collect();
    let log_mean = factors.iter().map(|f| f.ln()).sum::<f64>() / n as f64;
    let gm = log_mean.exp();
    for f in &mut factors {
        *f /= gm;
    }
    Ok(factors)
}

fn tmm_pair(obs: ArrayView1<f64>, n_obs: f64, reference: ArrayView1<f64>, n_ref: f64) -> f64 {
    let mut log_r = Vec::new();
    let mut abs_e = Vec::new();
    let mut var = Vec::new();
    for (&o, &r) in obs.iter().zip(reference.iter()) {
        if o <= 0.0 || r <= 0.0 {
            continue;
        }
        let po = o / n_obs;
        let pr = r / n_ref;
        log_r.push((po / pr).log2());
        abs_e.push((po.log2() + pr.log2()) / 2.0);
        var.push((n_obs - o) / n_obs / o + (n_ref - r) / n_ref / r);
    }
    let m = log_r.len();
    if m == 0 || log_r.iter().all(|v| v.abs() < 1e-6) {
        return 1.0;
    }
    let mf = m as f64;
    let lo_l = (mf * LOGRATIO_TRIM).floor() + 1.0;
    let hi_l = mf + 1.0 - lo_l;
    let lo_s = (mf * SUM_TRIM).floor() + 1.0;
    let hi_s = mf + 1.0 - lo_s;
    let rank_r = average_ranks(&log_r);
    let rank_e = average_ranks(&abs_e);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        if rank_r[i] >= lo_l && rank_r[i] <= hi_l && rank_e[i] >= lo_s && rank_e[i] <= hi_s {
            num += log_r[i] / var[i];
            den += 1.0 / var[i];
        }
    }
    if den == 0.0 {
        return 1.0;
    }
    (num / den).exp2()
}
