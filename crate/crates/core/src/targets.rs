//! Target densities: Gaussians, Gaussian mixtures, a two-ring density and
//! finite-state targets. All continuous families here are normalized and can
//! be sampled exactly, which gives ground truth for MMD.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::base::{LogTarget, State};
use crate::error::{Error, Result};

/// Names accepted by [`crate::targets`] constructors in configuration files.
pub const REGISTERED_TARGETS: [&str; 5] = ["circ_mog", "two_rings", "grid_mog", "gaussian", "finite"];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Numerically stable log(sum(exp(v))). Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// log Phi(z) for the standard normal CDF.
fn ln_std_normal_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Isotropic Gaussian N(mean, sigma^2 I).
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vec<f64>,
    sigma: f64,
    label: String,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidParameter("gaussian dimension must be positive".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self {
            mean,
            sigma,
            label: "gaussian".into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Centered isotropic Gaussian with covariance sigma^2 I_d, used as eta*.
pub fn make_auxiliary_gaussian(sigma: f64, d: usize) -> Result<Gaussian> {
    Ok(Gaussian::new(vec![0.0; d], sigma)?.with_label("auxiliary_gaussian"))
}

impl LogTarget for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.mean.len());
        let s2 = self.sigma * self.sigma;
        let q: f64 = x
            .iter()
            .zip(&self.mean)
            .map(|(a, m)| (a - m) * (a - m))
            .sum();
        let d = self.mean.len() as f64;
        -0.5 * q / s2 - 0.5 * d * (LN_2PI + s2.ln())
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        Some(x.iter().zip(&self.mean).map(|(a, m)| -(a - m) / s2).collect())
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<State>> {
        Ok((0..n)
            .map(|_| {
                State(
                    self.mean
                        .iter()
                        .map(|m| m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            })
            .collect())
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
struct Cholesky {
    l: Vec<Vec<f64>>,
    log_det: f64,
}

impl Cholesky {
    fn new(a: &[Vec<f64>]) -> Result<Self> {
        let d = a.len();
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            if a[i].len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: a[i].len(),
                });
            }
            for j in 0..=i {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::InvalidParameter(
                            "covariance is not positive definite".into(),
                        ));
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        let log_det = 2.0 * (0..d).map(|i| l[i][i].ln()).sum::<f64>();
        Ok(Self { l, log_det })
    }

    /// Solves L w = v.
    fn solve_lower(&self, v: &[f64]) -> Vec<f64> {
        let d = v.len();
        let mut w = vec![0.0; d];
        for i in 0..d {
            let mut s = v[i];
            for k in 0..i {
                s -= self.l[i][k] * w[k];
            }
            w[i] = s / self.l[i][i];
        }
        w
    }

    /// Solves L^T u = w.
    fn solve_upper_t(&self, w: &[f64]) -> Vec<f64> {
        let d = w.len();
        let mut u = vec![0.0; d];
        for i in (0..d).rev() {
            let mut s = w[i];
            for k in i + 1..d {
                s -= self.l[k][i] * u[k];
            }
            u[i] = s / self.l[i][i];
        }
        u
    }

    fn mul(&self, z: &[f64]) -> Vec<f64> {
        (0..z.len())
            .map(|i| (0..=i).map(|k| self.l[i][k] * z[k]).sum())
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Component {
    mean: Vec<f64>,
    chol: Cholesky,
    // Sigma^{-1}, row-major
    precision: Vec<f64>,
    // log weight minus the Gaussian normalizer
    log_coef: f64,
}

/// Finite mixture of Gaussians with full covariances.
#[derive(Clone, Debug)]
pub struct MixtureOfGaussians {
    dim: usize,
    components: Vec<Component>,
    weights: Vec<f64>,
    label: String,
}

impl MixtureOfGaussians {
    pub fn new(
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if covariances.len() != means.len() || weights.len() != means.len() {
            return Err(Error::InvalidParameter(
                "means, covariances and weights must have equal length".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let dim = means[0].len();
        let mut components = Vec::with_capacity(means.len());
        for ((mean, cov), w) in means.into_iter().zip(covariances).zip(&weights) {
            check_dim(dim, &mean)?;
            if cov.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: cov.len(),
                });
            }
            let chol = Cholesky::new(&cov)?;
            let log_coef = w.ln() - 0.5 * (dim as f64 * LN_2PI + chol.log_det);
            let mut precision = vec![0.0; dim * dim];
            for j in 0..dim {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                let col = chol.solve_upper_t(&chol.solve_lower(&e));
                for i in 0..dim {
                    precision[i * dim + j] = col[i];
                }
            }
            components.push(Component {
                mean,
                chol,
                precision,
                log_coef,
            });
        }
        Ok(Self {
            dim,
            components,
            weights,
            label: "mog".into(),
        })
    }

    /// Equal-weight mixture with covariance sigma^2 I for every component.
    pub fn isotropic(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        let k = means.len();
        let d = means.first().map_or(0, Vec::len);
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { sigma * sigma } else { 0.0 }).collect())
            .collect();
        Self::new(means, vec![cov; k], vec![1.0 / k as f64; k])
    }

    /// `n` equal-weight components with means evenly spaced on a circle.
    pub fn circular(n: usize, radius: f64, sigma: f64) -> Result<Self> {
        let means = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                vec![radius * t.cos(), radius * t.sin()]
            })
            .collect();
        Ok(Self::isotropic(means, sigma)?.with_label("circ_mog"))
    }

    /// Equal-weight components on the Cartesian grid `coords x coords`.
    pub fn grid(coords: &[f64], sigma: f64) -> Result<Self> {
        let means = coords
            .iter()
            .flat_map(|&a| coords.iter().map(move |&b| vec![a, b]))
            .collect();
        Ok(Self::isotropic(means, sigma)?.with_label("grid_mog"))
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean_of(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    /// Per-component log(w_k N(x; mu_k, Sigma_k)).
    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut diff = vec![0.0; d];
        self.components
            .iter()
            .map(|c| {
                for i in 0..d {
                    diff[i] = x[i] - c.mean[i];
                }
                let mut q = 0.0;
                for i in 0..d {
                    let row = &c.precision[i * d..(i + 1) * d];
                    q += diff[i] * row.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>();
                }
                c.log_coef - 0.5 * q
            })
            .collect()
    }

    /// Index of the most responsible component at `x`.
    pub fn assign(&self, x: &[f64]) -> usize {
        let logs = self.log_terms(x);
        logs.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }
}

impl LogTarget for MixtureOfGaussians {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        log_sum_exp(&self.log_terms(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let logs = self.log_terms(x);
        let lse = log_sum_exp(&logs);
        let d = self.dim;
        let mut g = vec![0.0; d];
        if !lse.is_finite() {
            return Some(vec![f64::NAN; d]);
        }
        for (c, l) in self.components.iter().zip(&logs) {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            // -r Sigma^{-1} (x - mu)
            for (i, gi) in g.iter_mut().enumerate() {
                let row = &c.precision[i * d..(i + 1) * d];
                let pd: f64 = row.iter().zip(x.iter().zip(&c.mean)).map(|(p, (a, m))| p * (a - m)).sum();
                *gi -= r * pd;
            }
        }
        Some(g)
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<State>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let c = &self.components[self.draw_component(rng)];
            let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            let lz = c.chol.mul(&z);
            out.push(State(c.mean.iter().zip(&lz).map(|(m, v)| m + v).collect()));
        }
        Ok(out)
    }
}

/// Rotation-invariant density on R^2 made of Gaussian-profile rings.
///
/// The radius has density sum_k w_k N(r; r_k, s^2) / Phi(r_k / s) on r > 0 and
/// the angle is uniform, so p(x) = f(|x|) / (2 pi |x|). With this
/// normalization polar sampling (rejecting r <= 0) is exact.
#[derive(Clone, Debug)]
pub struct TwoRings {
    radii: [f64; 2],
    width: f64,
    weights: [f64; 2],
    log_coefs: [f64; 2],
}

impl TwoRings {
    pub fn new(radii: [f64; 2], width: f64, weights: [f64; 2]) -> Result<Self> {
        if radii.iter().any(|r| !(*r > 0.0)) || !(width > 0.0) {
            return Err(Error::InvalidParameter(
                "ring radii and width must be positive".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights[0] + weights[1] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("ring weights must lie on the simplex".into()));
        }
        let log_coefs = [0, 1].map(|k| {
            weights[k].ln()
                - width.ln()
                - 0.5 * LN_2PI
                - ln_std_normal_cdf(radii[k] / width)
        });
        Ok(Self {
            radii,
            width,
            weights,
            log_coefs,
        })
    }

    pub fn radii(&self) -> [f64; 2] {
        self.radii
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn weights(&self) -> [f64; 2] {
        self.weights
    }

    fn radial_terms(&self, r: f64) -> [f64; 2] {
        let s2 = self.width * self.width;
        [0, 1].map(|k| self.log_coefs[k] - 0.5 * (r - self.radii[k]).powi(2) / s2)
    }

    /// Log density of the radius on (0, inf).
    pub fn log_radial_density(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_sum_exp(&self.radial_terms(r))
    }

    /// P(radius <= r).
    pub fn radial_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let s = self.width;
        (0..2)
            .map(|k| {
                let lo = 0.5 * erfc(self.radii[k] / s / std::f64::consts::SQRT_2);
                let hi = 0.5 * erfc(-(r - self.radii[k]) / s / std::f64::consts::SQRT_2);
                self.weights[k] * (hi - lo) / (1.0 - lo)
            })
            .sum()
    }
}

impl LogTarget for TwoRings {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = x[0].hypot(x[1]).max(f64::MIN_POSITIVE);
        self.log_radial_density(r) - (2.0 * PI * r).ln()
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = x[0].hypot(x[1]).max(f64::MIN_POSITIVE);
        let terms = self.radial_terms(r);
        let lse = log_sum_exp(&terms);
        let s2 = self.width * self.width;
        let mut dr = -1.0 / r;
        for k in 0..2 {
            dr -= (terms[k] - lse).exp() * (r - self.radii[k]) / s2;
        }
        Some(vec![dr * x[0] / r, dr * x[1] / r])
    }

    fn label(&self) -> &str {
        "two_rings"
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<State>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let k = if rng.random::<f64>() < self.weights[0] { 0 } else { 1 };
            let z: f64 = rng.sample(StandardNormal);
            let r = self.radii[k] + self.width * z;
            if r <= 0.0 {
                continue;
            }
            let t = 2.0 * PI * rng.random::<f64>();
            out.push(State(vec![r * t.cos(), r * t.sin()]));
        }
        Ok(out)
    }
}

/// Probability vector over S states. As a [`LogTarget`] it lives on the
/// integers 0..S embedded in R^1; non-integer points have zero density.
#[derive(Clone, Debug)]
pub struct FiniteTarget {
    probs: Vec<f64>,
}

impl FiniteTarget {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("finite target needs at least one state".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn index_of(&self, x: &[f64]) -> Option<usize> {
        let v = x[0];
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.probs.len() {
            Some(v as usize)
        } else {
            None
        }
    }
}

impl LogTarget for FiniteTarget {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.index_of(x).map_or(f64::NEG_INFINITY, |i| self.probs[i].ln())
    }

    fn label(&self) -> &str {
        "finite"
    }

    fn exact_sample(&self, n: usize, rng: &mut dyn RngCore) -> Result<Vec<State>> {
        let last = self.probs.len() - 1;
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = last;
                for (i, p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                State(vec![idx as f64])
            })
            .collect())
    }
}
