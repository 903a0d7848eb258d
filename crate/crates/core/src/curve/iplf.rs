use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{validation, Error, Result};

/// Inverse power law: `accuracy(n) = (1 − a) − b·n^c` with `a ∈ [0, 1]`,
/// `b ≥ 0` and `c ∈ [−1, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IplfParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl IplfParams {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let p = Self { a, b, c };
        if !(0.0..=1.0).contains(&a) || !(b >= 0.0) || !(-1.0..=0.0).contains(&c) || !b.is_finite() {
            return Err(validation(format!("curve parameters out of range: {p:?}")));
        }
        Ok(p)
    }

    pub fn eval(&self, n: f64) -> Result<f64> {
        if !(n > 0.0) {
            return Err(validation(format!("sample size must be positive, got {n}")));
        }
        Ok(self.value(n))
    }

    fn value(&self, n: f64) -> f64 {
        (1.0 - self.a) - self.b * n.powf(self.c)
    }

    /// Gradient of the curve with respect to `(a, b, c)` at `n`.
    fn gradient(&self, n: f64) -> Vector3<f64> {
        let pow = n.powf(self.c);
        Vector3::new(-1.0, -pow, -self.b * pow * n.ln())
    }

    fn to_vec(self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    fn projected(v: Vector3<f64>) -> Self {
        Self {
            a: v[0].clamp(0.0, 1.0),
            b: v[1].max(0.0),
            c: v[2].clamp(-1.0, 0.0),
        }
    }

    /// Upper limit of the curve as `n → ∞`.
    pub fn asymptote(&self) -> f64 {
        1.0 - self.a
    }
}

/// A fitted learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IplfFit {
    pub params: IplfParams,
    /// Gauss–Newton covariance of `(a, b, c)`.
    pub covariance: [[f64; 3]; 3],
    /// Weighted residual sum of squares over `m − 3`; zero when `m = 3`.
    pub residual_scale: f64,
    /// Weighted residual sum of squares at the solution.
    pub objective: f64,
    /// Set when `b` sits at its lower bound, leaving `c` unidentified.
    pub degenerate: bool,
    pub sizes: Vec<f64>,
    pub accuracy: Vec<f64>,
}

/// Starting points for the multi-start search.
pub const STARTS: [(f64, f64, f64); 8] = [
    (0.01, 0.5, -0.3),
    (0.01, 0.5, -0.7),
    (0.01, 1.0, -0.3),
    (0.01, 1.0, -0.7),
    (0.1, 0.5, -0.3),
    (0.1, 0.5, -0.7),
    (0.1, 1.0, -0.3),
    (0.1, 1.0, -0.7),
];

/// Grid weights `i/m`, emphasizing the largest sizes.
pub fn rank_weights(m: usize) -> Vec<f64> {
    (1..=m).map(|i| i as f64 / m as f64).collect()
}

/// `Σ w_i (y_i − f(n_i))²`.
pub fn weighted_sse(p: &IplfParams, sizes: &[f64], accuracy: &[f64], weights: &[f64]) -> f64 {
    sizes
        .iter()
        .zip(accuracy)
        .zip(weights)
        .map(|((&n, &y), &w)| w * (y - p.value(n)).powi(2))
        .sum()
}

/// Weighted least-squares fit with weights `i/m`.
pub fn fit_iplf(sizes: &[f64], accuracy: &[f64]) -> Result<IplfFit> {
    fit_iplf_weighted(sizes, accuracy, &rank_weights(sizes.len()))
}

pub fn fit_iplf_weighted(sizes: &[f64], accuracy: &[f64], weights: &[f64]) -> Result<IplfFit> {
    let m = sizes.len();
    if m < 3 {
        return Err(validation(format!("a curve fit needs at least 3 sizes, got {m}")));
    }
    if accuracy.len() != m || weights.len() != m {
        return Err(validation("sizes, accuracies and weights differ in length"));
    }
    if sizes[0] <= 0.0 || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(validation("sizes must be positive and strictly increasing"));
    }
    if accuracy.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(validation("accuracies must lie in [0, 1]"));
    }
    let mut best: Option<(IplfParams, f64)> = None;
    for &(a, b, c) in &STARTS {
        let (p, obj) = levenberg_marquardt(IplfParams { a, b, c }, sizes, accuracy, weights);
        if best.is_none_or(|(_, o)| obj < o) {
            best = Some((p, obj));
        }
    }
    let (mut params, mut objective) = best.expect("at least one start");
    if params.c > -1e-9 && params.b > 0.0 {
        // with c at 0 the curve is flat; express it with b = 0 instead
        let flat = IplfParams { a: (params.a + params.b).min(1.0), b: 0.0, c: params.c };
        let flat_obj = weighted_sse(&flat, sizes, accuracy, weights);
        if flat_obj <= objective + 1e-15 {
            params = flat;
            objective = flat_obj;
        }
    }
    let degenerate = params.b <= 1e-10;
    let residual_scale = if m > 3 { objective / (m - 3) as f64 } else { 0.0 };
    let mut jtwj = Matrix3::zeros();
    for (&n, &w) in sizes.iter().zip(weights) {
        let g = params.gradient(n);
        jtwj += w * g * g.transpose();
    }
    let inv = pseudo_inverse(&jtwj);
    let cov = inv * residual_scale;
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cov[(i, j)];
        }
    }
    Ok(IplfFit {
        params,
        covariance,
        residual_scale,
        objective,
        degenerate,
        sizes: sizes.to_vec(),
        accuracy: accuracy.to_vec(),
    })
}

fn pseudo_inverse(m: &Matrix3<f64>) -> Matrix3<f64> {
    if let Some(inv) = m.try_inverse() {
        if inv.iter().all(|v| v.is_finite()) && m.norm() * inv.norm() < 1e12 {
            return inv;
        }
    }
    let tol = 1e-12 * m.norm().max(f64::MIN_POSITIVE);
    m.pseudo_inverse(tol).unwrap_or_else(|_| Matrix3::zeros())
}

const MAX_ITERATIONS: usize = 5000;

/// Box-constrained Levenberg–Marquardt. Parameters pinned at a bound with
/// the gradient pushing outward are frozen for the step; the trial point is
/// projected back into the box.
fn levenberg_marquardt(
    start: IplfParams,
    sizes: &[f64],
    accuracy: &[f64],
    weights: &[f64],
) -> (IplfParams, f64) {
    let mut p = start;
    let mut obj = weighted_sse(&p, sizes, accuracy, weights);
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let mut jtwj = Matrix3::zeros();
        let mut grad = Vector3::zeros();
        for ((&n, &y), &w) in sizes.iter().zip(accuracy).zip(weights) {
            let g = p.gradient(n);
            let r = p.value(n) - y;
            jtwj += w * g * g.transpose();
            grad += w * r * g;
        }
        let v = p.to_vec();
        let lower = [0.0, 0.0, -1.0];
        let upper = [1.0, f64::INFINITY, 0.0];
        let free: Vec<usize> = (0..3)
            .filter(|&k| !((v[k] <= lower[k] && grad[k] > 0.0) || (v[k] >= upper[k] && grad[k] < 0.0)))
            .collect();
        if free.is_empty() || free.iter().all(|&k| grad[k].abs() < 1e-300) {
            break;
        }
        let mut improved = false;
        while damping < 1e16 {
            let k = free.len();
            let mut a = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for (i, &fi) in free.iter().enumerate() {
                for (j, &fj) in free.iter().enumerate() {
                    a[(i, j)] = jtwj[(fi, fj)];
                }
                a[(i, i)] += damping * (jtwj[(fi, fi)] + 1e-12);
                rhs[i] = -grad[fi];
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&rhs)) else {
                damping *= 10.0;
                continue;
            };
            let mut trial = v;
            for (i, &fi) in free.iter().enumerate() {
                trial[fi] += step[i];
            }
            let cand = IplfParams::projected(trial);
            let cand_obj = weighted_sse(&cand, sizes, accuracy, weights);
            if cand_obj < obj {
                let moved = (cand.to_vec() - v).amax();
                let gain = obj - cand_obj;
                p = cand;
                obj = cand_obj;
                damping = (damping / 10.0).max(1e-15);
                improved = moved > 1e-15 && gain > 1e-30 * obj.max(1e-300);
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, obj)
}

/// Point prediction with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub accuracy: f64,
    /// `None` when the fit has no residual degrees of freedom.
    pub interval: Option<(f64, f64)>,
}

impl IplfFit {
    /// Delta-method prediction interval:
    /// `ŷ ± t(0.975, m − 3)·√(gᵀCg + s²)`.
    pub fn predict(&self, n: f64) -> Result<Prediction> {
        let accuracy = self.params.eval(n)?;
        let df = self.sizes.len() as f64 - 3.0;
        if df < 1.0 {
            return Ok(Prediction { accuracy, interval: None });
        }
        let t = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .inverse_cdf(0.975);
        let g = self.params.gradient(n);
        let cov = Matrix3::from_fn(|i, j| self.covariance[i][j]);
        let var = (g.transpose() * cov * g)[(0, 0)].max(0.0) + self.residual_scale;
        let half = t * var.sqrt();
        Ok(Prediction { accuracy, interval: Some((accuracy - half, accuracy + half)) })
    }
}

/// Smallest integer size whose predicted accuracy reaches `target`.
pub fn project_sample_size(p: &IplfParams, target: f64) -> Result<u64> {
    if target >= p.asymptote() {
        return Err(Error::Infeasible(format!(
            "target accuracy {target} exceeds the asymptotic accuracy {}",
            p.asymptote()
        )));
    }
    if p.b <= 0.0 || p.c >= 0.0 {
        return Err(Error::Infeasible("curve is flat; no sample size changes its accuracy".into()));
    }
    let gap = p.asymptote() - target;
    let n = (gap / p.b).powf(1.0 / p.c);
    if !n.is_finite() || n > 1e15 {
        return Err(Error::Infeasible(format!("required sample size {n:e} is out of range")));
    }
    // absorb rounding noise in an exact inverse before taking the ceiling
    let rounded = n.round();
    let mut size = if (n - rounded).abs() <= 1e-9 * rounded.max(1.0) { rounded } else { n.ceil() };
    size = size.max(1.0);
    while p.value(size) < target - 1e-12 {
        size += 1.0;
    }
    Ok(size as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn truth() -> IplfParams {
        IplfParams::new(0.05, 1.0, -0.5).unwrap()
    }

    fn grid() -> Vec<f64> {
        (1..=10).map(|i| 10.0 * i as f64).collect()
    }

    #[test]
    fn evaluation_examples() {
        assert!((truth().eval(100.0).unwrap() - 0.85).abs() < 1e-15);
        let flat = IplfParams::new(0.2, 0.0, -0.5).unwrap();
        assert_eq!(flat.eval(3.0).unwrap(), 0.8);
        assert_eq!(flat.eval(3e6).unwrap(), 0.8);
        let far = IplfParams::new(0.05, 10.0, -0.5).unwrap();
        assert!((far.eval(1e12).unwrap() - 0.95).abs() < 1e-5);
        assert!(truth().eval(0.0).is_err());
        assert!(IplfParams::new(0.05, 1.0, 0.5).is_err());
    }

    #[test]
    fn recovers_noiseless_parameters() {
        let y: Vec<f64> = grid().iter().map(|&n| truth().value(n)).collect();
        let fit = fit_iplf(&grid(), &y).unwrap();
        let p = fit.params;
        assert!((p.a - 0.05).abs() < 1e-4, "{p:?}");
        assert!((p.b - 1.0).abs() < 1e-4, "{p:?}");
        assert!((p.c + 0.5).abs() < 1e-4, "{p:?}");
        assert!(!fit.degenerate);
    }

    #[test]
    fn objective_matches_hand_sum() {
        // three points, weights 1/3, 2/3, 1 at (a, b, c) = (0.1, 1, −0.5):
        // f(4) = 0.4, f(16) = 0.65, f(64) = 0.775
        let p = IplfParams::new(0.1, 1.0, -0.5).unwrap();
        let sse = weighted_sse(&p, &[4.0, 16.0, 64.0], &[0.5, 0.6, 0.8], &rank_weights(3));
        let hand = (0.1f64.powi(2) + 2.0 * 0.05f64.powi(2) + 3.0 * 0.025f64.powi(2)) / 3.0;
        assert!((sse - hand).abs() < 1e-15);
    }

    #[test]
    fn constant_accuracy_is_degenerate() {
        let fit = fit_iplf(&grid(), &[0.9; 10]).unwrap();
        assert!(fit.degenerate);
        assert!((fit.params.a - 0.1).abs() < 1e-9);
        for n in [5.0, 50.0, 500.0] {
            assert!((fit.params.eval(n).unwrap() - 0.9).abs() < 1e-9);
        }
        assert!(fit.predict(50.0).unwrap().interval.is_some());
    }

    fn noisy() -> (Vec<f64>, Vec<f64>) {
        let noise = [0.01, -0.012, 0.004, 0.0, -0.006, 0.009, -0.003, 0.002, -0.008, 0.005];
        let y = grid().iter().zip(noise).map(|(&n, e)| truth().value(n) + e).collect();
        (grid(), y)
    }

    #[test]
    fn solution_beats_every_start() {
        let (x, y) = noisy();
        let w = rank_weights(10);
        let fit = fit_iplf(&x, &y).unwrap();
        for &(a, b, c) in &STARTS {
            assert!(fit.objective <= weighted_sse(&IplfParams { a, b, c }, &x, &y, &w));
        }
    }

    #[test]
    fn interval_properties() {
        let exact: Vec<f64> = grid().iter().map(|&n| truth().value(n)).collect();
        let fit = fit_iplf(&grid(), &exact).unwrap();
        let (lo, hi) = fit.predict(55.0).unwrap().interval.unwrap();
        assert!(hi - lo < 1e-3);

        let (x, y) = noisy();
        let fit = fit_iplf(&x, &y).unwrap();
        let at = |n: f64| {
            let p = fit.predict(n).unwrap();
            let (lo, hi) = p.interval.unwrap();
            assert!(lo <= p.accuracy && p.accuracy <= hi);
            hi - lo
        };
        assert!(at(200.0) >= at(100.0));

        let three = fit_iplf(&x[..3], &y[..3]).unwrap();
        assert!(three.predict(20.0).unwrap().interval.is_none());
    }

    #[test]
    fn weights_favor_the_largest_size() {
        // the last point sits well above the curve
        let mut y: Vec<f64> = grid().iter().map(|&n| truth().value(n)).collect();
        y[9] += 0.03;
        y[0] -= 0.03;
        let weighted = fit_iplf(&grid(), &y).unwrap();
        let plain = fit_iplf_weighted(&grid(), &y, &[1.0; 10]).unwrap();
        let resid = |f: &IplfFit| (y[9] - f.params.value(100.0)).abs();
        assert!(resid(&weighted) <= resid(&plain), "{} vs {}", resid(&weighted), resid(&plain));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(fit_iplf(&[10.0, 20.0], &[0.5, 0.6]).is_err());
        assert!(fit_iplf(&[10.0, 20.0, 20.0], &[0.5, 0.6, 0.7]).is_err());
        assert!(fit_iplf(&[10.0, 20.0, 30.0], &[0.5, 1.6, 0.7]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_sample_size(&truth(), 0.85).unwrap(), 100);
        assert!(matches!(project_sample_size(&truth(), 0.96), Err(Error::Infeasible(_))));
        let flat = IplfParams::new(0.05, 0.0, -0.5).unwrap();
        assert!(matches!(project_sample_size(&flat, 0.5), Err(Error::Infeasible(_))));
    }

    proptest! {
        #[test]
        fn projection_reaches_target(
            a in 0.0f64..0.5, b in 0.01f64..5.0, c in -1.0f64..-0.05, frac in 0.0f64..0.999
        ) {
            let p = IplfParams::new(a, b, c).unwrap();
            let target = p.value(1.0) + frac * (p.asymptote() - p.value(1.0));
            if let Ok(n) = project_sample_size(&p, target) {
                prop_assert!(p.value(n as f64) >= target - 1e-12);
                if n > 1 {
                    prop_assert!(p.value((n - 1) as f64) < target + 1e-9);
                }
            }
        }

        #[test]
        fn fitted_curve_is_nondecreasing(seed in 0u64..200) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let y: Vec<f64> = grid()
                .iter()
                .map(|&n| (truth().value(n) + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0))
                .collect();
            let fit = fit_iplf(&grid(), &y).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 1..=400 {
                let v = fit.params.value(i as f64 * 0.5);
                prop_assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }
}
