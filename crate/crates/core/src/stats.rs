//! Small descriptive-statistics helpers shared by tests, the acceptance
//! suite and the CLI summaries.

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the mean of a correlated series, from `n_batches`
/// non-overlapping batch means.
pub fn batch_means_se(x: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 || x.len() < 2 * n_batches {
        return Err(Error::TooFewSamples {
            needed: 2 * n_batches.max(2),
            got: x.len(),
        });
    }
    let b = x.len() / n_batches;
    let means: Vec<f64> = (0..n_batches).map(|k| mean(&x[k * b..(k + 1) * b])).collect();
    Ok((variance(&means) / n_batches as f64).sqrt())
}

/// Median of a copy of `x`. NaN-free input assumed.
pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn iqr(x: &[f64]) -> f64 {
    quantile(x, 0.75) - quantile(x, 0.25)
}

/// Ordinary least-squares fit y = a + b x. Returns (a, b).
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let x = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&x), 2.5);
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_eq!(iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2.0);
    }

    #[test]
    fn ols_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (a, b) = ols(&x, &y);
        assert!((a - 2.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
    }

    #[test]
    fn batch_means_on_iid_constant_batches() {
        let x: Vec<f64> = (0..100).map(|i| (i / 10) as f64).collect();
        // batch means 0..9, variance 55/6
        let se = batch_means_se(&x, 10).unwrap();
        assert!((se - (55.0f64 / 6.0 / 10.0).sqrt()).abs() < 1e-12);
        assert!(batch_means_se(&x[..3], 10).is_err());
    }
}
