//! Langevin kernels: ULA, MALA and their RMSprop-preconditioned variants,
//! with optional tempering of the noise.
//!
//! With temperature `tau`, the unadjusted samplers scale the injected noise by
//! sqrt(tau) and so approximately sample pi^(1/tau). The Metropolis-adjusted
//! samplers use the same proposal, N(x + d grad log pi(x), 2 d tau), and
//! correct it towards pi^(1/tau) exactly.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::base::{LogTarget, MarkovKernel, Move, State};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ula,
    Mala,
    RmsUla,
    RmsMala,
}

impl SamplerKind {
    pub const NAMES: [&'static str; 4] = ["ula", "mala", "rms_ula", "rms_mala"];

    pub fn is_adjusted(self) -> bool {
        matches!(self, SamplerKind::Mala | SamplerKind::RmsMala)
    }

    pub fn is_rms(self) -> bool {
        matches!(self, SamplerKind::RmsUla | SamplerKind::RmsMala)
    }
}

/// Step size as a function of the global step index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant { step: f64 },
    /// base * factor^floor(n / every)
    PiecewiseDecay { base: f64, factor: f64, every: usize },
}

impl StepSchedule {
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { step } => step,
            StepSchedule::PiecewiseDecay {
                base,
                factor,
                every,
            } => base * factor.powi((n / every.max(1)) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { step } => step >= 0.0 && step.is_finite(),
            StepSchedule::PiecewiseDecay {
                base,
                factor,
                every,
            } => base >= 0.0 && factor > 0.0 && every >= 1 && base.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid step schedule {self:?}")))
        }
    }
}

/// Exponentially smoothed squared gradient for RMS preconditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsState {
    pub r: Vec<f64>,
    pub beta: f64,
    pub eps: f64,
}

impl RmsState {
    pub fn new(dim: usize, beta: f64, eps: f64) -> Self {
        Self {
            r: vec![0.0; dim],
            beta,
            eps,
        }
    }

    /// r <- beta r + (1 - beta) g^2, elementwise.
    pub fn update(&mut self, grad: &[f64]) {
        for (r, g) in self.r.iter_mut().zip(grad) {
            *r = self.beta * *r + (1.0 - self.beta) * g * g;
        }
    }

    /// Per-coordinate step sizes step / sqrt(r + eps).
    pub fn step_sizes(&self, step: f64) -> Vec<f64> {
        self.r.iter().map(|r| step / (r + self.eps).sqrt()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub kind: SamplerKind,
    pub step: StepSchedule,
    /// Temperature tau; the noise is scaled by sqrt(tau).
    pub tau: f64,
    pub rms_beta: f64,
    pub rms_eps: f64,
}

impl LangevinConfig {
    pub fn new(kind: SamplerKind, step: f64) -> Self {
        Self {
            kind,
            step: StepSchedule::Constant { step },
            tau: 1.0,
            rms_beta: 0.9,
            rms_eps: 1e-9,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_rms(mut self, beta: f64, eps: f64) -> Self {
        self.rms_beta = beta;
        self.rms_eps = eps;
        self
    }

    pub fn with_schedule(mut self, step: StepSchedule) -> Self {
        self.step = step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.step.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if self.kind.is_rms() {
            if !(0.0..=1.0).contains(&self.rms_beta) {
                return Err(Error::InvalidParameter(format!(
                    "rms_beta must lie in [0, 1], got {}",
                    self.rms_beta
                )));
            }
            if !(self.rms_eps > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rms_eps must be positive, got {}",
                    self.rms_eps
                )));
            }
        }
        Ok(())
    }
}

fn gradient_at(target: &dyn LogTarget, x: &[f64]) -> Result<Vec<f64>> {
    let g = target
        .gradient(x)
        .ok_or_else(|| Error::NoGradient(target.label().to_string()))?;
    if g.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: g.len(),
        });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { state: x.to_vec() });
    }
    Ok(g)
}

/// x + steps * g + sqrt(2 steps tau) z, coordinatewise.
fn langevin_move<R: Rng + ?Sized>(
    x: &[f64],
    g: &[f64],
    steps: &[f64],
    tau: f64,
    rng: &mut R,
) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(steps)
        .map(|((xi, gi), h)| {
            let z: f64 = rng.sample(StandardNormal);
            xi + h * gi + (2.0 * h * tau).sqrt() * z
        })
        .collect()
}

/// log q(to | from) up to the Gaussian normalizer, which cancels in the MH
/// ratio because both directions share the same per-coordinate variances.
fn log_proposal(to: &[f64], from: &[f64], grad_from: &[f64], steps: &[f64], tau: f64) -> f64 {
    to.iter()
        .zip(from)
        .zip(grad_from)
        .zip(steps)
        .map(|(((t, f), g), h)| {
            let d = t - f - h * g;
            -d * d / (4.0 * h * tau)
        })
        .sum()
}

fn unadjusted<R: Rng + ?Sized>(
    x: &[f64],
    g: &[f64],
    steps: &[f64],
    tau: f64,
    rng: &mut R,
) -> Result<State> {
    if steps.iter().all(|&h| h == 0.0) {
        return Ok(State(x.to_vec()));
    }
    let y = langevin_move(x, g, steps, tau, rng);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { state: y });
    }
    Ok(State(y))
}

/// Log MH acceptance ratio for a Langevin proposal x -> y targeting pi^(1/tau).
/// `None` when the proposal is invalid (non-finite point, density or gradient).
fn log_accept_ratio(
    target: &dyn LogTarget,
    x: &[f64],
    gx: &[f64],
    y: &[f64],
    steps: &[f64],
    tau: f64,
) -> Option<f64> {
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let ly = target.log_density(y);
    if !ly.is_finite() {
        return None;
    }
    let gy = target.gradient(y)?;
    if gy.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let lx = target.log_density(x);
    let forward = log_proposal(y, x, gx, steps, tau);
    let reverse = log_proposal(x, y, &gy, steps, tau);
    let r = (ly - lx) / tau + reverse - forward;
    if r.is_nan() {
        None
    } else {
        Some(r)
    }
}

fn adjusted<R: Rng + ?Sized>(
    target: &dyn LogTarget,
    x: &[f64],
    g: &[f64],
    steps: &[f64],
    tau: f64,
    rng: &mut R,
) -> (State, bool) {
    if steps.iter().all(|&h| h == 0.0) {
        return (State(x.to_vec()), true);
    }
    let y = langevin_move(x, g, steps, tau, rng);
    let u: f64 = rng.random();
    match log_accept_ratio(target, x, g, &y, steps, tau) {
        Some(r) if u.ln() < r => (State(y), true),
        _ => (State(x.to_vec()), false),
    }
}

/// MH acceptance probability of the MALA move x -> y with step `step`.
pub fn mala_accept_prob(target: &dyn LogTarget, x: &[f64], y: &[f64], step: f64, tau: f64) -> Result<f64> {
    let gx = gradient_at(target, x)?;
    let steps = vec![step; x.len()];
    Ok(log_accept_ratio(target, x, &gx, y, &steps, tau).map_or(0.0, |r| r.min(0.0).exp()))
}

/// One unadjusted Langevin step.
pub fn ula_step<R: Rng + ?Sized>(
    target: &dyn LogTarget,
    x: &[f64],
    step: f64,
    tau: f64,
    rng: &mut R,
) -> Result<State> {
    let g = gradient_at(target, x)?;
    unadjusted(x, &g, &vec![step; x.len()], tau, rng)
}

/// One Metropolis-adjusted Langevin step. Returns the new state and whether
/// the proposal was accepted; invalid proposals are rejected.
pub fn mala_step<R: Rng + ?Sized>(
    target: &dyn LogTarget,
    x: &[f64],
    step: f64,
    tau: f64,
    rng: &mut R,
) -> Result<(State, bool)> {
    let g = gradient_at(target, x)?;
    Ok(adjusted(target, x, &g, &vec![step; x.len()], tau, rng))
}

/// One RMS-preconditioned unadjusted step. Updates `rms` first, then moves
/// with per-coordinate step sizes step / sqrt(r' + eps).
pub fn rms_ula_step<R: Rng + ?Sized>(
    target: &dyn LogTarget,
    x: &[f64],
    rms: &mut RmsState,
    step: f64,
    tau: f64,
    rng: &mut R,
) -> Result<State> {
    let g = gradient_at(target, x)?;
    rms.update(&g);
    unadjusted(x, &g, &rms.step_sizes(step), tau, rng)
}

/// One RMS-preconditioned MALA step. The updated accumulator r' defines the
/// proposal in both directions of the MH ratio; it is kept on rejection.
pub fn rms_mala_step<R: Rng + ?Sized>(
    target: &dyn LogTarget,
    x: &[f64],
    rms: &mut RmsState,
    step: f64,
    tau: f64,
    rng: &mut R,
) -> Result<(State, bool)> {
    let g = gradient_at(target, x)?;
    rms.update(&g);
    Ok(adjusted(target, x, &g, &rms.step_sizes(step), tau, rng))
}

/// A Langevin sampler bound to a target, usable as a [`MarkovKernel`].
#[derive(Clone)]
pub struct LangevinSampler {
    target: Arc<dyn LogTarget>,
    cfg: LangevinConfig,
}

impl LangevinSampler {
    pub fn new(target: Arc<dyn LogTarget>, cfg: LangevinConfig) -> Result<Self> {
        cfg.validate()?;
        if target.gradient(&vec![0.0; target.dim()]).is_none() {
            return Err(Error::NoGradient(target.label().to_string()));
        }
        Ok(Self { target, cfg })
    }

    pub fn config(&self) -> &LangevinConfig {
        &self.cfg
    }

    pub fn target(&self) -> &Arc<dyn LogTarget> {
        &self.target
    }
}

impl MarkovKernel<State> for LangevinSampler {
    type Aux = Option<RmsState>;

    fn init_aux(&self, x: &State) -> Option<RmsState> {
        self.cfg
            .kind
            .is_rms()
            .then(|| RmsState::new(x.dim(), self.cfg.rms_beta, self.cfg.rms_eps))
    }

    fn step<R: Rng + ?Sized>(
        &self,
        n: usize,
        x: &State,
        aux: &mut Option<RmsState>,
        rng: &mut R,
    ) -> Result<Move<State>> {
        let t = self.target.as_ref();
        let h = self.cfg.step.at(n);
        let tau = self.cfg.tau;
        let (state, accepted) = match self.cfg.kind {
            SamplerKind::Ula => (ula_step(t, x, h, tau, rng)?, true),
            SamplerKind::Mala => mala_step(t, x, h, tau, rng)?,
            SamplerKind::RmsUla | SamplerKind::RmsMala => {
                let rms = aux.get_or_insert_with(|| {
                    RmsState::new(x.dim(), self.cfg.rms_beta, self.cfg.rms_eps)
                });
                if self.cfg.kind == SamplerKind::RmsUla {
                    (rms_ula_step(t, x, rms, h, tau, rng)?, true)
                } else {
                    rms_mala_step(t, x, rms, h, tau, rng)?
                }
            }
        };
        Ok(Move { state, accepted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::stats::{batch_means_se, mean};
    use crate::targets::Gaussian;

    fn std_normal() -> Gaussian {
        Gaussian::new(vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let t = std_normal();
        let mut rng = RngStream::new(3, 0);
        assert_eq!(ula_step(&t, &[0.7], 0.0, 1.0, &mut rng).unwrap().0, vec![0.7]);
        let (y, acc) = mala_step(&t, &[0.7], 0.0, 1.0, &mut rng).unwrap();
        assert_eq!((y.0, acc), (vec![0.7], true));
    }

    #[test]
    fn ula_matches_ar1_update() {
        // X' = (1 - d) X + sqrt(2 d) Z with Z taken from an identical stream
        let t = std_normal();
        let d = 0.1;
        let mut a = RngStream::new(9, 0);
        let mut b = RngStream::new(9, 0);
        let y = ula_step(&t, &[2.0], d, 1.0, &mut a).unwrap();
        let z: f64 = b.sample(StandardNormal);
        assert!((y[0] - ((1.0 - d) * 2.0 + (2.0 * d).sqrt() * z)).abs() < 1e-15);
    }

    #[test]
    fn self_proposal_accepted_with_probability_one() {
        let t = Gaussian::new(vec![1.0, -1.0], 2.0).unwrap();
        let x = [0.3, 0.4];
        assert_eq!(mala_accept_prob(&t, &x, &x, 0.5, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn nonfinite_gradient_is_divergence() {
        struct Bad;
        impl LogTarget for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn gradient(&self, _: &[f64]) -> Option<Vec<f64>> {
                Some(vec![f64::INFINITY])
            }
            fn label(&self) -> &str {
                "bad"
            }
        }
        let mut rng = RngStream::new(0, 0);
        match ula_step(&Bad, &[1.5], 0.1, 1.0, &mut rng) {
            Err(Error::Divergence { state }) => assert_eq!(state, vec![1.5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonfinite_proposal_is_rejected() {
        // zero density to the right of 1: proposals there must be rejected
        struct HalfLine;
        impl LogTarget for HalfLine {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, x: &[f64]) -> f64 {
                if x[0] > 1.0 {
                    f64::NEG_INFINITY
                } else {
                    -0.5 * x[0] * x[0]
                }
            }
            fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
                Some(vec![-x[0]])
            }
            fn label(&self) -> &str {
                "half-line"
            }
        }
        let mut rng = RngStream::new(5, 0);
        let mut x = State(vec![0.9]);
        for _ in 0..2000 {
            let (y, _) = mala_step(&HalfLine, &x, 0.5, 1.0, &mut rng).unwrap();
            x = y;
            assert!(x[0] <= 1.0);
        }
    }

    #[test]
    fn rms_beta_extremes() {
        let t = Gaussian::new(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = RngStream::new(1, 0);
        let mut frozen = RmsState::new(2, 1.0, 1e-9);
        frozen.r = vec![0.3, 0.7];
        rms_ula_step(&t, &[1.0, 2.0], &mut frozen, 0.1, 1.0, &mut rng).unwrap();
        assert_eq!(frozen.r, vec![0.3, 0.7]);
        let mut fresh = RmsState::new(2, 0.0, 1e-9);
        rms_ula_step(&t, &[1.0, -2.0], &mut fresh, 0.1, 1.0, &mut rng).unwrap();
        assert_eq!(fresh.r, vec![1.0, 4.0]);
    }

    #[test]
    fn uniform_r_reduces_to_mala() {
        let t = Gaussian::new(vec![0.5, -0.5], 1.5).unwrap();
        let x = [1.0, 1.0];
        // beta = 1 keeps r = 0.25 everywhere, so the step is 0.2 / 0.5 = 0.4
        let mut rms = RmsState::new(2, 1.0, 1e-9);
        rms.r = vec![0.25, 0.25];
        let eff = 0.2 / (0.25f64 + 1e-9).sqrt();
        for seed in 0..20 {
            let mut a = RngStream::new(seed, 0);
            let mut b = RngStream::new(seed, 0);
            let (ya, acc_a) = rms_mala_step(&t, &x, &mut rms, 0.2, 1.0, &mut a).unwrap();
            let (yb, acc_b) = mala_step(&t, &x, eff, 1.0, &mut b).unwrap();
            assert_eq!(acc_a, acc_b);
            for (u, v) in ya.iter().zip(yb.iter()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rms_step_sizes_follow_gradient_scale() {
        // N(0, diag(1, 100)): at stationarity the gradient coordinates have
        // RMS 1 and 0.1, so the preconditioned steps differ by about 10.
        struct Aniso;
        impl LogTarget for Aniso {
            fn dim(&self) -> usize {
                2
            }
            fn log_density(&self, x: &[f64]) -> f64 {
                -0.5 * (x[0] * x[0] + x[1] * x[1] / 100.0)
            }
            fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
                Some(vec![-x[0], -x[1] / 100.0])
            }
            fn label(&self) -> &str {
                "aniso"
            }
        }
        let mut rng = RngStream::new(2, 0);
        let mut rms = RmsState::new(2, 0.9, 1e-9);
        let mut x = State(vec![1.0, 10.0]);
        let mut ratios = Vec::new();
        for n in 0..20_000 {
            x = rms_ula_step(&Aniso, &x, &mut rms, 0.01, 1.0, &mut rng).unwrap();
            if n > 1000 {
                let h = rms.step_sizes(0.01);
                ratios.push((h[1] / h[0]).ln());
            }
        }
        let geo = mean(&ratios).exp();
        assert!(geo > 5.0 && geo < 20.0, "step ratio {geo}");
    }

    #[test]
    fn mala_acceptance_nonincreasing_in_step() {
        let t = std_normal();
        for seed in 0..3 {
            let mut rates = Vec::new();
            for &d in &[0.01, 0.1, 1.0] {
                let mut rng = RngStream::new(seed, 0);
                let mut x = State(vec![0.0]);
                let mut acc = 0usize;
                let n = 20_000;
                for _ in 0..n {
                    let (y, a) = mala_step(&t, &x, d, 1.0, &mut rng).unwrap();
                    x = y;
                    acc += a as usize;
                }
                rates.push(acc as f64 / n as f64);
            }
            assert!(rates[0] >= rates[1] && rates[1] >= rates[2], "{rates:?}");
        }
    }

    #[test]
    fn mala_variance_exact() {
        let t = std_normal();
        let mut rng = RngStream::new(17, 0);
        let mut x = State(vec![0.0]);
        let mut sq = Vec::with_capacity(400_000);
        for _ in 0..400_000 {
            x = mala_step(&t, &x, 0.5, 1.0, &mut rng).unwrap().0;
            sq.push(x[0] * x[0]);
        }
        let se = batch_means_se(&sq, 100).unwrap();
        assert!((mean(&sq) - 1.0).abs() < 3.0 * se, "{} +- {}", mean(&sq), se);
    }

    #[test]
    fn kernel_wrapper_is_deterministic() {
        let t: Arc<dyn LogTarget> = Arc::new(std_normal());
        let k = LangevinSampler::new(t, LangevinConfig::new(SamplerKind::RmsMala, 0.1)).unwrap();
        let run = || {
            let mut rng = RngStream::new(4, 2);
            let mut x = State(vec![1.0]);
            let mut aux = k.init_aux(&x);
            for n in 0..100 {
                x = k.step(n, &x, &mut aux, &mut rng).unwrap().state;
            }
            x
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_decay() {
        let s = StepSchedule::PiecewiseDecay {
            base: 0.001,
            factor: 0.1,
            every: 2000,
        };
        assert_eq!(s.at(0), 0.001);
        assert_eq!(s.at(1999), 0.001);
        assert!((s.at(2000) - 1e-4).abs() < 1e-18);
        assert!((s.at(4500) - 1e-5).abs() < 1e-18);
    }
}
