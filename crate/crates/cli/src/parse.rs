//! Parsers for the compact flag syntaxes.

use pilotgen::curve::{Classifier, ExternalClassifier, Knn};
use pilotgen::train::EpochStrategy;
use pilotgen::{Error, Result};

fn invalid(msg: String) -> Error {
    Error::Validation(msg)
}

/// `fixed:N`, `early`, `early:PATIENCE` or `early:PATIENCE:MAX`.
pub fn epochs(s: &str) -> Result<EpochStrategy> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| {
        p.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| invalid(format!("bad epoch count {p:?} in {s:?}")))
    };
    match parts.as_slice() {
        ["fixed", n] => Ok(EpochStrategy::Fixed { epochs: num(n)? }),
        ["early"] => Ok(EpochStrategy::early_stop()),
        ["early", p] => Ok(EpochStrategy::EarlyStop {
            patience: num(p)?,
            max_epochs: EpochStrategy::DEFAULT_MAX_EPOCHS,
        }),
        ["early", p, m] => Ok(EpochStrategy::EarlyStop { patience: num(p)?, max_epochs: num(m)? }),
        _ => Err(invalid(format!("epochs must be fixed:N or early[:PATIENCE[:MAX]], got {s:?}"))),
    }
}

/// `START:STOP:STEP` (inclusive) or a comma-separated list.
pub fn sizes(s: &str) -> Result<Vec<usize>> {
    let bad = || invalid(format!("bad size grid {s:?}"));
    let out: Vec<usize> = if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || start == 0 || stop < start {
            return Err(bad());
        }
        (start..=stop).step_by(step).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if out.is_empty() || out[0] == 0 || out.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad());
    }
    Ok(out)
}

/// `knn`, `knn:K` or `external:PROGRAM[,ARG...]`.
pub fn classifier(s: &str) -> Result<Box<dyn Classifier>> {
    match s.split_once(':') {
        None if s == "knn" => Ok(Box::new(Knn::default())),
        Some(("knn", k)) => {
            let k = k
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| invalid(format!("bad neighbor count {k:?}")))?;
            Ok(Box::new(Knn { k }))
        }
        Some(("external", cmd)) if !cmd.is_empty() => {
            let mut parts = cmd.split(',');
            let program = parts.next().unwrap_or_default().into();
            Ok(Box::new(ExternalClassifier { program, args: parts.map(str::to_owned).collect() }))
        }
        _ => Err(invalid(format!("classifier must be knn[:K] or external:PROGRAM, got {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_grids() {
        assert_eq!(sizes("10:50:10").unwrap(), vec![10, 20, 30, 40, 50]);
        assert_eq!(sizes("10:55:10").unwrap(), vec![10, 20, 30, 40, 50]);
        assert_eq!(sizes("5,8,13").unwrap(), vec![5, 8, 13]);
        for bad in ["10:5:1", "0:10:5", "1:2", "3,3", "x", "10:20:0"] {
            assert!(sizes(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn epoch_strategies() {
        assert_eq!(epochs("fixed:1000").unwrap(), EpochStrategy::Fixed { epochs: 1000 });
        assert_eq!(epochs("early").unwrap(), EpochStrategy::early_stop());
        assert_eq!(
            epochs("early:10:200").unwrap(),
            EpochStrategy::EarlyStop { patience: 10, max_epochs: 200 }
        );
        assert!(epochs("fixed:0").is_err());
        assert!(epochs("sometimes").is_err());
    }

    #[test]
    fn classifiers() {
        assert_eq!(classifier("knn").unwrap().name(), "knn:20");
        assert_eq!(classifier("knn:5").unwrap().name(), "knn:5");
        assert_eq!(classifier("external:svm.sh").unwrap().name(), "external:svm.sh");
        assert!(classifier("knn:0").is_err());
        assert!(classifier("forest").is_err());
    }
}
