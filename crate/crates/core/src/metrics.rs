//! Sample-quality metrics: unbiased MMD^2, predictive entropy and binned
//! calibration errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// k(x, y) = sum_j exp(-s_j |x - y|^2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub scales: Vec<f64>,
}

impl Default for KernelSpec {
    /// exp(-d^2) + exp(-2 d^2)
    fn default() -> Self {
        Self {
            scales: vec![1.0, 2.0],
        }
    }
}

impl KernelSpec {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("kernel scales must be positive".into()));
        }
        Ok(Self { scales })
    }

    pub fn eval_sq(&self, d2: f64) -> f64 {
        self.scales.iter().map(|s| (-s * d2).exp()).sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval_sq(sq_dist(x, y))
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// sum_{i != j} k(x_i, x_j) / (m (m - 1)). Rows are summed in parallel and
/// reduced in index order, so the result does not depend on thread count.
fn within<T: AsRef<[f64]> + Sync>(x: &[T], k: &KernelSpec) -> f64 {
    let m = x.len();
    let rows: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let xi = x[i].as_ref();
            (i + 1..m).map(|j| k.eval(xi, x[j].as_ref())).sum::<f64>()
        })
        .collect();
    2.0 * rows.iter().sum::<f64>() / (m as f64 * (m as f64 - 1.0))
}

fn cross<T: AsRef<[f64]> + Sync, U: AsRef<[f64]> + Sync>(x: &[T], y: &[U], k: &KernelSpec) -> f64 {
    let rows: Vec<f64> = x
        .par_iter()
        .map(|xi| y.iter().map(|yj| k.eval(xi.as_ref(), yj.as_ref())).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (x.len() as f64 * y.len() as f64)
}

fn check_sizes(m: usize, n: usize) -> Result<()> {
    let got = m.min(n);
    if got < 2 {
        return Err(Error::TooFewSamples { needed: 2, got });
    }
    Ok(())
}

/// Unbiased U-statistic estimate of MMD^2 between the laws of `x` and `y`.
/// May be negative.
pub fn mmd2_unbiased<T, U>(x: &[T], y: &[U], k: &KernelSpec) -> Result<f64>
where
    T: AsRef<[f64]> + Sync,
    U: AsRef<[f64]> + Sync,
{
    check_sizes(x.len(), y.len())?;
    Ok(within(x, k) - 2.0 * cross(x, y, k) + within(y, k))
}

/// Reference sample with its within-sample term cached, for repeated MMD^2
/// evaluations against the same ground truth.
#[derive(Clone, Debug)]
pub struct MmdReference {
    samples: Vec<Vec<f64>>,
    kernel: KernelSpec,
    self_term: f64,
}

impl MmdReference {
    pub fn new<T: AsRef<[f64]>>(samples: &[T], kernel: KernelSpec) -> Result<Self> {
        check_sizes(samples.len(), samples.len())?;
        let samples: Vec<Vec<f64>> = samples.iter().map(|s| s.as_ref().to_vec()).collect();
        let self_term = within(&samples, &kernel);
        Ok(Self {
            samples,
            kernel,
            self_term,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same value as `mmd2_unbiased(x, reference, kernel)`.
    pub fn mmd2<T: AsRef<[f64]> + Sync>(&self, x: &[T]) -> Result<f64> {
        check_sizes(x.len(), self.samples.len())?;
        Ok(within(x, &self.kernel) - 2.0 * cross(x, &self.samples, &self.kernel) + self.self_term)
    }
}

/// Shannon entropy in nats with 0 log 0 = 0. The input is renormalized after
/// checking that it sums to 1 within 1e-9.
/// Population MMD^2 between N(m0, s0^2) and N(m1, s1^2) in one dimension.
/// Each kernel term is E exp(-s D^2) = (1 + 2 s v)^(-1/2) exp(-s m^2 / (1 + 2 s v))
/// for D ~ N(m, v).
pub fn gaussian_mmd2_1d(k: &KernelSpec, m0: f64, s0: f64, m1: f64, s1: f64) -> f64 {
    let term = |m: f64, v: f64| -> f64 {
        k.scales
            .iter()
            .map(|s| (1.0 + 2.0 * s * v).powf(-0.5) * (-s * m * m / (1.0 + 2.0 * s * v)).exp())
            .sum()
    };
    term(0.0, 2.0 * s0 * s0) + term(0.0, 2.0 * s1 * s1) - 2.0 * term(m0 - m1, s0 * s0 + s1 * s1)
}

pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| *v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidParameter("probabilities must be nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(-p
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let q = v / total;
            q * q.ln()
        })
        .sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    /// Confidence of the predicted class, in [0, 1].
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
    pub bins: usize,
}

/// Expected and maximum calibration error over `bins` equal-width bins
/// [(k-1)/M, k/M), the last one closed. Empty bins are skipped.
pub fn calibration_errors(input: &CalibrationInput) -> Result<(f64, f64)> {
    let m = input.bins;
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    if input.confidences.len() != input.correct.len() {
        return Err(Error::DimensionMismatch {
            expected: input.confidences.len(),
            got: input.correct.len(),
        });
    }
    let mut count = vec![0usize; m];
    let mut hits = vec![0usize; m];
    let mut conf = vec![0.0; m];
    for (&c, &ok) in input.confidences.iter().zip(&input.correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidParameter(format!("confidence {c} outside [0, 1]")));
        }
        let k = ((c * m as f64).floor() as usize).min(m - 1);
        count[k] += 1;
        hits[k] += ok as usize;
        conf[k] += c;
    }
    let n = input.confidences.len() as f64;
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    for k in 0..m {
        if count[k] == 0 {
            continue;
        }
        let b = count[k] as f64;
        let gap = (hits[k] as f64 / b - conf[k] / b).abs();
        ece += b / n * gap;
        mce = mce.max(gap);
    }
    Ok((ece, mce))
}
