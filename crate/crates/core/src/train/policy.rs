use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::nn::AdamConfig;

/// How many epochs to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpochStrategy {
    Fixed { epochs: usize },
    EarlyStop { patience: usize, max_epochs: usize },
}

impl EpochStrategy {
    pub const DEFAULT_PATIENCE: usize = 30;
    pub const DEFAULT_MAX_EPOCHS: usize = 5000;

    pub fn early_stop() -> Self {
        Self::EarlyStop {
            patience: Self::DEFAULT_PATIENCE,
            max_epochs: Self::DEFAULT_MAX_EPOCHS,
        }
    }

    pub fn max_epochs(&self) -> usize {
        match *self {
            Self::Fixed { epochs } => epochs,
            Self::EarlyStop { max_epochs, .. } => max_epochs,
        }
    }
}

/// Optimization settings shared by every generator family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingPolicy {
    pub epochs: EpochStrategy,
    pub batch_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainingPolicy {
    fn default() -> Self {
        Self {
            epochs: EpochStrategy::Fixed { epochs: 1000 },
            batch_fraction: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingPolicy {
    pub fn with_epochs(mut self, epochs: EpochStrategy) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_fraction(mut self, f: f64) -> Self {
        self.batch_fraction = f;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(validation(format!(
                "batch fraction must be in (0, 1], got {}",
                self.batch_fraction
            )));
        }
        if !(self.adam.learning_rate > 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(validation("learning rate must be positive"));
        }
        match self.epochs {
            EpochStrategy::Fixed { .. } => {}
            EpochStrategy::EarlyStop {
                patience,
                max_epochs,
            } => {
                if patience == 0 || max_epochs == 0 {
                    return Err(validation("early stopping needs patience and max_epochs ≥ 1"));
                }
            }
        }
        Ok(())
    }
}

/// Epoch (1-based) at which early stopping halts on `losses`.
///
/// Training stops once `patience` consecutive epochs fail to beat the best
/// loss so far by a strict decrease. If that never happens the full length
/// is returned.
pub fn early_stop_epoch(losses: &[f64], patience: usize) -> Result<usize> {
    if losses.is_empty() {
        return Err(validation("loss sequence is empty"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("loss sequence contains non-finite values".into()));
    }
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    for (i, &l) in losses.iter().enumerate() {
        let epoch = i + 1;
        if l < best {
            best = l;
            best_epoch = epoch;
        } else if epoch - best_epoch >= patience {
            return Ok(epoch);
        }
    }
    Ok(losses.len())
}

/// Batch size used for `n` samples: `max(1, round(fraction · n))`.
pub fn batch_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

/// One epoch's worth of shuffled index batches; the final batch may be short.
pub fn make_batches(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let size = batch_size(n, fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn plateau_stops_thirty_after_best() {
        let mut losses = vec![5.0];
        losses.extend(std::iter::repeat_n(4.0, 33));
        assert_eq!(losses.len(), 34);
        assert_eq!(early_stop_epoch(&losses, 30).unwrap(), 32);
    }

    #[test]
    fn decreasing_never_stops() {
        let losses: Vec<f64> = (0..100).map(|i| 100.0 - i as f64).collect();
        assert_eq!(early_stop_epoch(&losses, 30).unwrap(), 100);
    }

    #[test]
    fn tiny_increase_is_not_improvement() {
        let mut losses = vec![3.0, 2.0, 1.0];
        losses.extend(std::iter::repeat_n(1.0000001, 40));
        assert_eq!(early_stop_epoch(&losses, 30).unwrap(), 33);
    }

    #[test]
    fn empty_sequence_is_error() {
        assert!(early_stop_epoch(&[], 30).is_err());
    }

    #[test]
    fn batch_sizes() {
        let mut rng = seeded(0);
        let b = make_batches(100, 0.1, &mut rng);
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|x| x.len() == 10));
        let b = make_batches(7, 0.1, &mut rng);
        assert_eq!(b.len(), 7);
        assert_eq!(batch_size(25, 0.2), 5);
        let b = make_batches(23, 0.2, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5, 5, 5, 3]);
    }

    proptest! {
        #[test]
        fn batches_partition_indices(n in 1usize..300, f in 0.01f64..=1.0, seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let mut all: Vec<usize> = make_batches(n, f, &mut rng).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn stop_epoch_is_best_plus_patience_or_end(
            losses in proptest::collection::vec(0.0f64..10.0, 1..200),
            patience in 1usize..40,
        ) {
            let stop = early_stop_epoch(&losses, patience).unwrap();
            prop_assert!(stop >= 1 && stop <= losses.len());
            let prefix = &losses[..stop];
            let best = prefix.iter().cloned().fold(f64::INFINITY, f64::min);
            let best_epoch = prefix.iter().position(|&l| l == best).unwrap() + 1;
            if stop < losses.len() {
                prop_assert_eq!(stop, best_epoch + patience);
            }
        }
    }
}
