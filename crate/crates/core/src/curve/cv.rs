use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::classify::Classifier;
use crate::error::{validation, Result};
use crate::rng::seeded;

/// Assigns each sample to one of `folds` folds so every class is spread
/// evenly. Classes are dealt round-robin after a seeded shuffle, each class
/// continuing where the previous one stopped.
pub fn stratified_folds(y: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(validation("cross-validation needs at least two folds"));
    }
    let classes: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    let mut rng = seeded(seed);
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for class in classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < folds {
            return Err(validation(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Pooled accuracy over stratified `folds`-fold cross-validation.
pub fn cross_val_accuracy(
    x: &Array2<f64>,
    y: &[usize],
    classifier: &dyn Classifier,
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(validation("feature rows and labels differ in count"));
    }
    let assignment = stratified_folds(y, folds, seed)?;
    let mut correct = 0usize;
    for f in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| assignment[i] == f);
        let train_y: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let pred = classifier.fit_predict(&x.select(Axis(0), &train), &train_y, &x.select(Axis(0), &test))?;
        correct += test.iter().zip(&pred).filter(|(&i, &p)| y[i] == p).count();
    }
    Ok(correct as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Knn;
    use crate::rng::standard_normal;
    use proptest::{prop_assert, proptest};

    #[test]
    fn folds_are_balanced_per_class() {
        let y: Vec<usize> = (0..23).map(|i| usize::from(i >= 10)).collect();
        let a = stratified_folds(&y, 5, 1).unwrap();
        for f in 0..5 {
            let zeros = (0..23).filter(|&i| a[i] == f && y[i] == 0).count();
            let ones = (0..23).filter(|&i| a[i] == f && y[i] == 1).count();
            assert_eq!(zeros, 2);
            assert!((2..=3).contains(&ones));
        }
        assert!(stratified_folds(&[0, 0, 0, 1, 1], 3, 1).is_err());
    }

    #[test]
    fn separable_data_scores_one() {
        let mut x = standard_normal(&mut seeded(2), 40, 3);
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        for i in 0..40 {
            x[[i, 1]] += 12.0 * y[i] as f64;
        }
        assert_eq!(cross_val_accuracy(&x, &y, &Knn::default(), 5, 7).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_labels_score_near_chance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let x = standard_normal(&mut seeded(100 + seed), 60, 5);
            let mut y: Vec<usize> = (0..60).map(|i| i % 2).collect();
            y.shuffle(&mut seeded(200 + seed));
            total += cross_val_accuracy(&x, &y, &Knn::default(), 5, seed).unwrap();
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() < 0.1, "mean accuracy {mean}");
    }

    #[test]
    fn deterministic_per_seed() {
        let x = standard_normal(&mut seeded(9), 30, 4);
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = cross_val_accuracy(&x, &y, &Knn { k: 3 }, 5, 11).unwrap();
        assert_eq!(a, cross_val_accuracy(&x, &y, &Knn { k: 3 }, 5, 11).unwrap());
    }

    proptest! {
        #[test]
        fn accuracy_is_a_fraction(seed in 0u64..100, k in 1usize..8) {
            let x = standard_normal(&mut seeded(seed), 25, 2);
            let y: Vec<usize> = (0..25).map(|i| i % 2).collect();
            let a = cross_val_accuracy(&x, &y, &Knn { k }, 5, seed).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
