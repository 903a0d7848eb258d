use super::{CountMatrix, Scale};
use crate::error::{Error, Result};

/// `log2(x + 1)` of every entry. No per-marker standardization is applied.
pub fn log2p1(m: &CountMatrix) -> Result<CountMatrix> {
    log2p1_with(m, 1.0)
}

/// `log2(x + pseudocount)` of every entry.
pub fn log2p1_with(m: &CountMatrix, pseudocount: f64) -> Result<CountMatrix> {
    if m.scale() != Scale::RawCounts {
        return Err(Error::State("log2p1 expects raw counts".into()));
    }
    if !(pseudocount >= 1.0) {
        // entries must stay non-negative on the log scale
        return Err(Error::Validation(format!(
            "pseudocount must be at least 1, got {pseudocount}"
        )));
    }
    m.with_values(m.counts().mapv(|x| (x + pseudocount).log2()), Scale::Log2p1)
}

/// Back-transform to integer counts: `round(max(0, 2^x - 1))`.
pub fn inverse_log2p1(m: &CountMatrix) -> Result<CountMatrix> {
    if m.scale() != Scale::Log2p1 {
        return Err(Error::State("inverse_log2p1 expects log2p1 values".into()));
    }
    m.with_values(m.counts().mapv(back_transform), Scale::RawCounts)
}

pub(crate) fn back_transform(x: f64) -> f64 {
    (x.exp2() - 1.0).max(0.0).round()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn raw(values: Array2<f64>) -> CountMatrix {
        let (g, n) = values.dim();
        CountMatrix::new(
            (0..g).map(|i| format!("m{i}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            values,
            Scale::RawCounts,
            None,
        )
        .unwrap()
    }

    #[test]
    fn log_examples() {
        let m = log2p1(&raw(array![[0.0, 1.0], [3.0, 7.0]])).unwrap();
        assert_eq!(m.counts(), &array![[0.0, 1.0], [2.0, 3.0]]);
        assert_eq!(m.scale(), Scale::Log2p1);
        let z = log2p1(&raw(Array2::zeros((2, 3)))).unwrap();
        assert!(z.counts().iter().all(|&v| v == 0.0));
        assert_eq!(log2p1(&raw(array![[1023.0]])).unwrap().counts()[[0, 0]], 10.0);
    }

    #[test]
    fn wrong_scale_is_state_error() {
        let m = log2p1(&raw(array![[1.0]])).unwrap();
        assert!(matches!(log2p1(&m), Err(Error::State(_))));
        assert!(matches!(inverse_log2p1(&raw(array![[1.0]])), Err(Error::State(_))));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(back_transform(0.0), 0.0);
        assert_eq!(back_transform(2.0), 3.0);
        assert_eq!(back_transform(3.0), 7.0);
        assert_eq!(back_transform(-0.5), 0.0);
        // 2^2.3 - 1 = 3.924
        assert_eq!(back_transform(2.3), 4.0);
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity_on_integer_counts(v in proptest::collection::vec(0u32..1_000_000, 1..40)) {
            let n = v.len();
            let m = raw(Array2::from_shape_vec((1, n), v.iter().map(|&x| x as f64).collect()).unwrap());
            let back = inverse_log2p1(&log2p1(&m).unwrap()).unwrap();
            prop_assert_eq!(back.counts(), m.counts());
        }
    }
}
