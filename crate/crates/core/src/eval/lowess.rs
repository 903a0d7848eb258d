//! Locally weighted scatterplot smoothing with tricube weights, local
//! linear fits and bisquare robustness iterations (Cleveland 1979).

/// Smoothed values at each `x`, which must be sorted ascending. `span` is
/// the fraction of points in each local fit; `delta` skips refits for
/// points within that distance of the last fitted point.
pub fn lowess(x: &[f64], y: &[f64], span: f64, robust_iters: usize, delta: f64) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return y.to_vec();
    }
    let ns = ((span * n as f64 + 1e-7) as usize).clamp(2, n);
    let mut fitted = vec![0.0; n];
    let mut robustness = vec![1.0; n];
    let mut residuals = vec![0.0; n];
    for iteration in 0..=robust_iters {
        let mut nleft = 0;
        let mut nright = ns - 1;
        let mut last: Option<usize> = None;
        let mut i = 0;
        loop {
            while nright < n - 1 {
                let d1 = x[i] - x[nleft];
                let d2 = x[nright + 1] - x[i];
                if d1 <= d2 {
                    break;
                }
                nleft += 1;
                nright += 1;
            }
            fitted[i] = local_fit(x, y, x[i], nleft, nright, &robustness, iteration > 0)
                .unwrap_or(y[i]);
            if let Some(l) = last {
                if l + 1 < i {
                    let denom = x[i] - x[l];
                    for j in (l + 1)..i {
                        let alpha = (x[j] - x[l]) / denom;
                        fitted[j] = alpha * fitted[i] + (1.0 - alpha) * fitted[l];
                    }
                }
            }
            let mut l = i;
            let cut = x[l] + delta;
            let mut next = l + 1;
            while next < n {
                if x[next] > cut {
                    break;
                }
                if x[next] == x[l] {
                    fitted[next] = fitted[l];
                    l = next;
                }
                next += 1;
            }
            last = Some(l);
            i = (l + 1).max(next.saturating_sub(1));
            if l >= n - 1 {
                break;
            }
        }
        for k in 0..n {
            residuals[k] = y[k] - fitted[k];
        }
        if iteration == robust_iters {
            break;
        }
        let scale = residuals.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
        let cmad = 6.0 * crate::stats::median(&residuals.iter().map(|r| r.abs()).collect::<Vec<_>>());
        if cmad < 1e-7 * scale {
            break;
        }
        let (c9, c1) = (0.999 * cmad, 0.001 * cmad);
        for k in 0..n {
            let r = residuals[k].abs();
            robustness[k] = if r <= c1 {
                1.0
            } else if r <= c9 {
                (1.0 - (r / cmad).powi(2)).powi(2)
            } else {
                0.0
            };
        }
    }
    fitted
}

fn local_fit(
    x: &[f64],
    y: &[f64],
    at: f64,
    nleft: usize,
    nright: usize,
    robustness: &[f64],
    use_robustness: bool,
) -> Option<f64> {
    let n = x.len();
    let range = x[n - 1] - x[0];
    let h = (at - x[nleft]).max(x[nright] - at);
    let (h9, h1) = (0.999 * h, 0.001 * h);
    let mut w = vec![0.0; n];
    let mut total = 0.0;
    let mut j = nleft;
    while j < n {
        let r = (x[j] - at).abs();
        if r <= h9 {
            w[j] = if r <= h1 { 1.0 } else { (1.0 - (r / h).powi(3)).powi(3) };
            if use_robustness {
                w[j] *= robustness[j];
            }
            total += w[j];
        } else if x[j] > at {
            break;
        }
        j += 1;
    }
    let nrt = j - 1;
    if total <= 0.0 {
        return None;
    }
    for k in nleft..=nrt {
        w[k] /= total;
    }
    if h > 0.0 {
        let center: f64 = (nleft..=nrt).map(|k| w[k] * x[k]).sum();
        let spread: f64 = (nleft..=nrt).map(|k| w[k] * (x[k] - center).powi(2)).sum();
        if spread.sqrt() > 0.001 * range {
            let slope = (at - center) / spread;
            for k in nleft..=nrt {
                w[k] *= slope * (x[k] - center) + 1.0;
            }
        }
    }
    Some((nleft..=nrt).map(|k| w[k] * y[k]).sum())
}

/// Piecewise-linear interpolation through `(xs, ys)` (sorted by `xs`),
/// held constant beyond the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], at: f64) -> f64 {
    let n = xs.len();
    if at <= xs[0] {
        return ys[0];
    }
    if at >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v <= at);
    let lo = hi - 1;
    if xs[hi] == xs[lo] {
        return ys[lo];
    }
    let t = (at - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_a_line() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = lowess(&x, &y, 0.5, 3, 0.0);
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
        let fit = lowess(&x, &y, 0.5, 3, 0.15);
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn robust_to_a_single_outlier() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let mut y: Vec<f64> = x
            .iter()
            .map(|v| 0.1 * v + if *v as usize % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        y[21] = 100.0;
        let plain = lowess(&x, &y, 0.5, 0, 0.0);
        let robust = lowess(&x, &y, 0.5, 3, 0.0);
        assert!(plain[21] > 5.0);
        assert!((robust[21] - 2.1).abs() < 0.1, "{}", robust[21]);
    }

    #[test]
    fn local_average_of_noisy_curve() {
        // quadratic plus deterministic alternating noise; the smooth stays
        // close to the curve away from the ends
        let x: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v * v + if i % 2 == 0 { 0.05 } else { -0.05 })
            .collect();
        let fit = lowess(&x, &y, 0.3, 0, 0.0);
        for i in 20..80 {
            assert!((fit[i] - x[i] * x[i]).abs() < 0.02, "{i}");
        }
    }

    #[test]
    fn interpolation_rules() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [1.0, 3.0, 7.0];
        assert_eq!(interpolate(&xs, &ys, -1.0), 1.0);
        assert_eq!(interpolate(&xs, &ys, 0.5), 2.0);
        assert_eq!(interpolate(&xs, &ys, 2.0), 5.0);
        assert_eq!(interpolate(&xs, &ys, 9.0), 7.0);
    }
}
