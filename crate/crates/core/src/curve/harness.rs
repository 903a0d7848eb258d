use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classify::Classifier;
use super::cv::cross_val_accuracy;
use crate::data::{log2p1, subsample_pilot, CountMatrix, Scale};
use crate::error::{validation, Result};
use crate::rng::derive_seed;
use crate::train::TrainedGenerator;

pub const DEFAULT_REPEATS: usize = 30;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Candidate sample sizes, per group when `per_group` is set.
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub folds: usize,
    pub per_group: bool,
}

impl HarnessConfig {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self {
            sizes,
            repeats: DEFAULT_REPEATS,
            folds: DEFAULT_FOLDS,
            per_group: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(validation("repeats must be at least 1"));
        }
        if self.folds < 2 {
            return Err(validation("folds must be at least 2"));
        }
        if self.sizes.is_empty() || self.sizes[0] == 0 || self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(validation("sizes must be positive and strictly increasing"));
        }
        Ok(())
    }
}

/// Where the labeled samples at each candidate size come from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    /// Fresh draws from a conditional generator, balanced over its groups.
    Generator(&'a TrainedGenerator),
    /// Subsamples without replacement from a labeled dataset.
    Dataset(&'a CountMatrix),
}

/// Accuracy for every candidate size and repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessResult {
    pub sizes: Vec<usize>,
    pub mean_accuracy: Vec<f64>,
    /// `per_repeat[i][r]` is the accuracy of repeat `r` at `sizes[i]`.
    pub per_repeat: Vec<Vec<f64>>,
}

/// Seed for repeat `r` at grid index `i`.
pub fn repeat_seed(seed: u64, i: usize, r: usize) -> u64 {
    derive_seed(seed, &[i as u64, r as u64])
}

/// Splits `n` over `k` groups as evenly as possible, earlier groups first.
fn split_even(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|g| n / k + usize::from(g < n % k)).collect()
}

fn draw(source: SampleSource, levels: &[String], counts: &[usize], seed: u64) -> Result<CountMatrix> {
    match source {
        SampleSource::Generator(g) => {
            let labels: Vec<String> = levels
                .iter()
                .zip(counts)
                .flat_map(|(l, &c)| std::iter::repeat_n(l.clone(), c))
                .collect();
            g.generate(labels.len(), Some(&labels), seed)
        }
        SampleSource::Dataset(m) => {
            if counts.iter().all(|&c| c == counts[0]) {
                return subsample_pilot(m, counts[0], seed);
            }
            // uneven split: draw the largest share, then trim later groups
            let drawn = subsample_pilot(m, counts[0], seed)?;
            let mut keep = Vec::new();
            for (level, &c) in levels.iter().zip(counts) {
                keep.extend(drawn.samples_in_group(level).into_iter().take(c));
            }
            drawn.select_samples(&keep)
        }
    }
}

fn features_and_labels(m: &CountMatrix, levels: &[String]) -> Result<(ndarray::Array2<f64>, Vec<usize>)> {
    let logged = match m.scale() {
        Scale::RawCounts => log2p1(m)?,
        Scale::Log2p1 => m.clone(),
    };
    let groups = m.groups().expect("drawn samples carry labels");
    let y = groups
        .iter()
        .map(|g| levels.iter().position(|l| l == g).expect("known level"))
        .collect();
    Ok((logged.samples_by_features(), y))
}

/// Cross-validated accuracy at each candidate size, `repeats` times. Each
/// repeat draws its samples and folds from [`repeat_seed`], so results do not
/// depend on scheduling.
pub fn accuracy_harness(
    source: SampleSource,
    cfg: &HarnessConfig,
    classifier: &dyn Classifier,
    seed: u64,
) -> Result<HarnessResult> {
    cfg.validate()?;
    let levels = match source {
        SampleSource::Generator(g) => g
            .group_levels
            .clone()
            .ok_or_else(|| validation("accuracy curves need a conditional generator"))?,
        SampleSource::Dataset(m) => {
            if m.groups().is_none() {
                return Err(validation("accuracy curves need group labels"));
            }
            m.group_levels()
        }
    };
    if levels.len() < 2 {
        return Err(validation("accuracy curves need at least two groups"));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.sizes.len())
        .flat_map(|i| (0..cfg.repeats).map(move |r| (i, r)))
        .collect();
    let accuracies = jobs
        .par_iter()
        .map(|&(i, r)| {
            let n = cfg.sizes[i];
            let counts = if cfg.per_group { vec![n; levels.len()] } else { split_even(n, levels.len()) };
            let child = repeat_seed(seed, i, r);
            let drawn = draw(source, &levels, &counts, child)?;
            let (x, y) = features_and_labels(&drawn, &levels)?;
            cross_val_accuracy(&x, &y, classifier, cfg.folds, derive_seed(child, &[0]))
        })
        .collect::<Result<Vec<f64>>>()?;
    let per_repeat: Vec<Vec<f64>> = accuracies.chunks(cfg.repeats).map(<[f64]>::to_vec).collect();
    let mean_accuracy = per_repeat.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    Ok(HarnessResult {
        sizes: cfg.sizes.clone(),
        mean_accuracy,
        per_repeat,
    })
}
