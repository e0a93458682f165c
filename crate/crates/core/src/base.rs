//! Shared domain types: states, unnormalized log-targets, Markov kernels,
//! particle ensembles and weighted-norm specifications.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A point in R^d.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn zeros(dim: usize) -> Self {
        State(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for State {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for State {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for State {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

/// An unnormalized log-density on R^d.
///
/// `log_density` may return `-inf` where the density is exactly zero; samplers
/// treat such proposals as rejected.
pub trait LogTarget: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Gradient of `log_density`, or `None` when the target has no gradient.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn label(&self) -> &str;

    /// I.i.d. draws from the normalized density, for families that support it.
    fn exact_sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Result<Vec<State>> {
        Err(Error::Unsupported(format!(
            "exact sampling is not available for `{}`",
            self.label()
        )))
    }
}

impl fmt::Debug for dyn LogTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogTarget({}, dim={})", self.label(), self.dim())
    }
}

/// Outcome of one Markov-kernel transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Move<S> {
    pub state: S,
    /// `false` when a Metropolis-type kernel rejected its proposal.
    pub accepted: bool,
}

/// A linear Markov kernel usable as K or Q.
///
/// `Aux` is per-particle sampler state (RMS accumulators); kernels without
/// such state use `()`.
pub trait MarkovKernel<S>: Sync {
    type Aux: Clone + Send + Sync;

    fn init_aux(&self, x: &S) -> Self::Aux;

    /// Advances `x` by one transition. `n` is the global step index, used by
    /// step-size schedules.
    fn step<R: Rng + ?Sized>(
        &self,
        n: usize,
        x: &S,
        aux: &mut Self::Aux,
        rng: &mut R,
    ) -> Result<Move<S>>;
}

/// The log of the potential G = pi / eta*. `-inf` means zero weight.
pub trait Potential<S>: Sync {
    fn log_g(&self, x: &S) -> f64;
}

/// An initial distribution for particles.
pub trait Initializer<S>: Sync {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> S;
}

/// N particles with per-particle sampler state and per-particle random streams.
#[derive(Clone, Debug)]
pub struct Ensemble<S, A> {
    pub states: Vec<S>,
    pub aux: Vec<A>,
    pub rngs: Vec<RngStream>,
}

impl<S, A> Ensemble<S, A> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Scalar function on a state.
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Lyapunov weight V together with the scale beta; induces V_beta = 1 + beta V.
#[derive(Clone)]
pub struct WeightedNormSpec {
    pub v: StateFn,
    pub beta: f64,
}

impl WeightedNormSpec {
    pub fn new(v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, beta: f64) -> Self {
        Self {
            v: Arc::new(v),
            beta,
        }
    }

    /// V(x) = |x|^2.
    pub fn squared_norm(beta: f64) -> Self {
        Self::new(|x| x.iter().map(|v| v * v).sum(), beta)
    }

    /// V_beta(x) = 1 + beta V(x). At least 1 whenever V is nonnegative.
    pub fn weight_vbeta(&self, x: &[f64]) -> f64 {
        1.0 + self.beta * (self.v)(x)
    }
}

impl fmt::Debug for WeightedNormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedNormSpec")
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

/// Largest absolute difference between the analytic gradient and a central
/// finite difference with step `h`.
pub fn check_gradient(target: &dyn LogTarget, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h must be positive, got {h}")));
    }
    if x.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        });
    }
    let grad = target
        .gradient(x)
        .ok_or_else(|| Error::NoGradient(target.label().to_string()))?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain(x.to_vec()));
    }
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = target.log_density(&probe);
        probe[i] = x[i] - h;
        let down = target.log_density(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Domain(x.to_vec()));
        }
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs());
    }
    Ok(worst)
}
