//! Small statistics helpers: streaming moments, least squares with a
//! t-interval, and inverse-variance pooling.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Welford running mean and variance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    /// Unbiased sample variance; 0 with fewer than two points.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean accurate to about one ulp: the streaming mean plus a compensated
/// correction. Constant data returns its value exactly.
pub fn refined_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = Moments::from_slice(xs).mean;
    m + compensated_sum(xs.iter().map(|x| x - m)) / xs.len() as f64
}

/// Ordinary least squares `y = intercept + slope·x` with a two-sided interval on the slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub points: usize,
}

/// Fits a line; needs at least two distinct abscissae. With exactly two points
/// the interval is degenerate (zero residual degrees of freedom) and is reported
/// as infinite.
pub fn linear_fit(xs: &[f64], ys: &[f64], confidence: f64) -> Option<LinearFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if n == 2 {
        return Some(LinearFit {
            slope,
            intercept,
            slope_stderr: f64::INFINITY,
            slope_lo: f64::NEG_INFINITY,
            slope_hi: f64::INFINITY,
            points: n,
        });
    }
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = (n - 2) as f64;
    let se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).ok()?.inverse_cdf(0.5 + confidence / 2.0);
    Some(LinearFit { slope, intercept, slope_stderr: se, slope_lo: slope - t * se, slope_hi: slope + t * se, points: n })
}

/// Pools estimates by inverse-variance weights. Entries with zero stderr dominate:
/// if any exist, their plain mean is returned with stderr 0.
pub fn inverse_variance_merge(items: &[(f64, f64)]) -> Option<(f64, f64)> {
    if items.is_empty() {
        return None;
    }
    let exact: Vec<f64> = items.iter().filter(|(_, s)| *s == 0.0).map(|(e, _)| *e).collect();
    if !exact.is_empty() {
        return Some((exact.iter().sum::<f64>() / exact.len() as f64, 0.0));
    }
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for &(e, s) in items {
        let w = 1.0 / (s * s);
        wsum += w;
        acc += w * e;
    }
    Some((acc / wsum, (1.0 / wsum).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, 7.0, -3.0];
        let m = Moments::from_slice(&xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.variance() - var).abs() < 1e-12);
        let same = Moments::from_slice(&[0.3; 7]);
        assert_eq!((same.mean, same.variance()), (0.3, 0.0));
    }

    #[test]
    fn exact_line_has_tight_interval() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let fit = linear_fit(&xs, &ys, 0.95).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!(fit.slope_hi - fit.slope_lo < 1e-9);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0], 0.95).is_none());
    }

    #[test]
    fn refined_mean_is_tight() {
        assert_eq!(refined_mean(&[0.1; 1000]), 0.1);
        let xs: Vec<f64> = (0..10_000).map(|i| 200.0 + (i % 7) as f64 * 0.1).collect();
        let m = refined_mean(&xs);
        assert!(compensated_sum(xs.iter().map(|x| x - m)).abs() / 1e4 < 1e-13);
    }

    #[test]
    fn pooling_shrinks_error() {
        let (m, s) = inverse_variance_merge(&[(1.0, 0.2), (1.2, 0.2)]).unwrap();
        assert!((m - 1.1).abs() < 1e-12);
        assert!(s < 0.2);
    }
}
