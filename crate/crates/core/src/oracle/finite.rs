use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base::{Initializer, MarkovKernel, Move, Potential};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Probability vector on {0, ..., S-1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiniteMeasure {
    probs: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("measure needs at least one state".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative masses.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("total mass must be positive".into()));
        }
        Self::new(masses.into_iter().map(|m| m / total).collect())
    }

    /// Wraps a vector produced by exact arithmetic on valid measures
    /// (e.g. mu P) without re-checking the sum.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(s: usize) -> Self {
        Self {
            probs: vec![1.0 / s as f64; s],
        }
    }

    pub fn dirac(s: usize, i: usize) -> Self {
        let mut probs = vec![0.0; s];
        probs[i] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.probs
    }

    /// mu(f).
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.probs.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// mu P.
    pub fn apply(&self, p: &FiniteKernel) -> FiniteMeasure {
        FiniteMeasure::from_vec_unchecked(p.left_mul(&self.probs))
    }

    /// Index drawn by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_row(&self.probs, rng.random())
    }
}

impl Deref for FiniteMeasure {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.probs
    }
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Row-stochastic S x S matrix, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteKernel {
    size: usize,
    data: Vec<f64>,
}

impl FiniteKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        if s == 0 {
            return Err(Error::InvalidParameter("kernel needs at least one state".into()));
        }
        let mut data = Vec::with_capacity(s * s);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != s {
                return Err(Error::DimensionMismatch {
                    expected: s,
                    got: row.len(),
                });
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidParameter(format!("row {i} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidParameter(format!("row {i} sums to {total}")));
            }
            data.extend(row);
        }
        Ok(Self { size: s, data })
    }

    pub(crate) fn from_data_unchecked(size: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), size * size);
        Self { size, data }
    }

    pub fn identity(s: usize) -> Self {
        let mut data = vec![0.0; s * s];
        for i in 0..s {
            data[i * s + i] = 1.0;
        }
        Self { size: s, data }
    }

    /// Every row equal to `nu`.
    pub fn constant(nu: &[f64]) -> Self {
        let s = nu.len();
        let mut data = Vec::with_capacity(s * s);
        for _ in 0..s {
            data.extend_from_slice(nu);
        }
        Self { size: s, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }

    /// (P f)(x) = sum_y P(x, y) f(y).
    pub fn apply_fn(&self, f: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| self.row(i).iter().zip(f).map(|(p, v)| p * v).sum())
            .collect()
    }

    /// (mu P)(y) = sum_x mu(x) P(x, y).
    pub fn left_mul(&self, mu: &[f64]) -> Vec<f64> {
        let s = self.size;
        let mut out = vec![0.0; s];
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(self.row(i)) {
                *o += m * p;
            }
        }
        out
    }

    /// a P + b Q. With a + b = 1 and a, b >= 0 the result is a kernel.
    pub fn mix(&self, a: f64, other: &FiniteKernel, b: f64) -> FiniteKernel {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(p, q)| a * p + b * q)
            .collect();
        Self::from_data_unchecked(self.size, data)
    }

    /// P Q.
    pub fn compose(&self, other: &FiniteKernel) -> FiniteKernel {
        let s = self.size;
        let mut data = Vec::with_capacity(s * s);
        for i in 0..s {
            data.extend(other.left_mul(self.row(i)));
        }
        Self::from_data_unchecked(s, data)
    }
}

impl MarkovKernel<usize> for FiniteKernel {
    type Aux = ();

    fn init_aux(&self, _x: &usize) {}

    fn step<R: Rng + ?Sized>(&self, _n: usize, x: &usize, _aux: &mut (), rng: &mut R) -> Result<Move<usize>> {
        Ok(Move {
            state: sample_row(self.row(*x), rng.random()),
            accepted: true,
        })
    }
}

/// G as a vector on a finite space.
#[derive(Clone, Debug, PartialEq)]
pub struct FinitePotential {
    pub g: Vec<f64>,
    log_g: Vec<f64>,
}

impl FinitePotential {
    pub fn new(g: Vec<f64>) -> Self {
        let log_g = g.iter().map(|v| v.ln()).collect();
        Self { g, log_g }
    }

    /// G = pi / eta*, entrywise.
    pub fn ratio(pi: &[f64], eta_star: &[f64]) -> Self {
        Self::new(pi.iter().zip(eta_star).map(|(p, e)| p / e).collect())
    }
}

impl Potential<usize> for FinitePotential {
    fn log_g(&self, x: &usize) -> f64 {
        self.log_g[*x]
    }
}

impl Initializer<usize> for FiniteMeasure {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sample(rng)
    }
}

/// Left fixed vector of P by power iteration, started from the uniform
/// measure, to an L1 residual of 1e-14.
pub fn stationary(p: &FiniteKernel) -> Result<FiniteMeasure> {
    const MAX_ITER: usize = 1_000_000;
    let s = p.size();
    let mut mu = vec![1.0 / s as f64; s];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut next = p.left_mul(&mu);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        residual = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if residual <= 1e-14 {
            return Ok(FiniteMeasure::from_vec_unchecked(mu));
        }
    }
    Err(Error::ReducibleOrPeriodic {
        iterations: MAX_ITER,
        residual,
    })
}

/// sum_x w(x) |mu(x) - nu(x)|, the weighted total variation with the
/// sup_{|f| <= w} convention (two Diracs are at distance 2 when w = 1).
pub fn weighted_tv(mu: &[f64], nu: &[f64], w: &[f64]) -> f64 {
    mu.iter()
        .zip(nu)
        .zip(w)
        .map(|((a, b), w)| w * (a - b).abs())
        .sum()
}

pub fn tv(mu: &[f64], nu: &[f64]) -> f64 {
    mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum()
}

/// max_x || P(x, .) - Q(x, .) ||_{tv, w} / w(x).
pub fn kernel_norm(p: &FiniteKernel, q: &FiniteKernel, w: &[f64]) -> f64 {
    (0..p.size())
        .map(|i| weighted_tv(p.row(i), q.row(i), w) / w[i])
        .fold(0.0, f64::max)
}

/// Dobrushin coefficient max_{x, x'} (1/2) sum_y |P(x, y) - P(x', y)|.
pub fn contraction_coefficient(p: &FiniteKernel) -> f64 {
    let s = p.size();
    let mut best: f64 = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            best = best.max(0.5 * tv(p.row(i), p.row(j)));
        }
    }
    best
}

pub fn osc(f: &[f64]) -> f64 {
    let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// A drift claim P V <= a V + b.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub v: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCheck {
    pub holds: bool,
    pub a: f64,
    /// Smallest b with P V <= a V + b, i.e. max_x (PV(x) - a V(x)).
    pub b_min: f64,
    pub argmax: usize,
}

pub fn check_drift(p: &FiniteKernel, spec: &DriftSpec) -> DriftCheck {
    let pv = p.apply_fn(&spec.v);
    let (argmax, b_min) = pv
        .iter()
        .zip(&spec.v)
        .map(|(pv, v)| pv - spec.a * v)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    DriftCheck {
        holds: b_min <= spec.b,
        a: spec.a,
        b_min,
        argmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteKernel {
        FiniteKernel::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn stationary_examples() {
        let pi = stationary(&two_state()).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-13 && (pi[1] - 1.0 / 3.0).abs() < 1e-13);
        let ds = FiniteKernel::new(vec![
            vec![0.2, 0.5, 0.3],
            vec![0.5, 0.1, 0.4],
            vec![0.3, 0.4, 0.3],
        ])
        .unwrap();
        let u = stationary(&ds).unwrap();
        assert!(u.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-13));
        let nu = [0.1, 0.6, 0.3];
        let c = stationary(&FiniteKernel::constant(&nu)).unwrap();
        assert!(c.iter().zip(&nu).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn periodic_chain_fails() {
        // bipartite {1} vs {0, 2}: the uniform start oscillates forever
        let p = FiniteKernel::new(vec![
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(stationary(&p), Err(Error::ReducibleOrPeriodic { .. })));
    }

    #[test]
    fn weighted_tv_examples() {
        assert_eq!(weighted_tv(&[0.3, 0.7], &[0.3, 0.7], &[1.0, 1.0]), 0.0);
        assert_eq!(weighted_tv(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]), 2.0);
        assert_eq!(weighted_tv(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 2.0]), 3.0);
    }

    #[test]
    fn kernel_norm_examples() {
        let p = two_state();
        assert_eq!(kernel_norm(&p, &p, &[1.0, 1.0]), 0.0);
        let half = FiniteKernel::constant(&[0.5, 0.5]);
        assert_eq!(kernel_norm(&FiniteKernel::identity(2), &half, &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contraction_coefficient(&FiniteKernel::identity(3)), 1.0);
        assert_eq!(contraction_coefficient(&FiniteKernel::constant(&[0.2, 0.8])), 0.0);
        assert!((contraction_coefficient(&two_state()) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn osc_examples() {
        assert_eq!(osc(&[2.0, 2.0, 2.0]), 0.0);
        assert_eq!(osc(&[0.0, 1.0]), 1.0);
        assert_eq!(osc(&[3.5, 4.5, 4.0]), osc(&[0.5, 1.5, 1.0]));
    }

    #[test]
    fn drift_examples() {
        let nu = [0.2, 0.3, 0.5];
        let v = vec![1.0, 4.0, 9.0];
        let c = check_drift(&FiniteKernel::constant(&nu), &DriftSpec { v: v.clone(), a: 0.5, b: 100.0 });
        // PV = nu(V) everywhere, b_min = nu(V) - a min V
        let nu_v = 0.2 + 1.2 + 4.5;
        assert!(c.holds);
        assert!((c.b_min - (nu_v - 0.5)).abs() < 1e-12);
        let id = check_drift(&FiniteKernel::identity(3), &DriftSpec { v, a: 0.25, b: 0.0 });
        assert!(!id.holds);
        assert!((id.b_min - 0.75 * 9.0).abs() < 1e-12);
    }

    #[test]
    fn measure_validation() {
        assert!(FiniteMeasure::new(vec![0.5, 0.5]).is_ok());
        assert!(FiniteMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteMeasure::new(vec![-0.1, 1.1]).is_err());
        assert!(FiniteKernel::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
    }
}
