//! The potential G = pi / eta*, Boltzmann-Gibbs weights, the two jump
//! kernels over an empirical measure, and the mixture step
//! K_eta = (1 - eps) K + eps J_eta.
//!
//! Everything works on log G, so rescaling pi or eta* by a constant never
//! changes a weight or an acceptance probability.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base::{LogTarget, MarkovKernel, Potential, State};
use crate::error::{Error, Result};
use crate::targets::log_sum_exp;

/// Primary target pi and auxiliary target eta*.
#[derive(Clone)]
pub struct PotentialPair {
    pub pi: Arc<dyn LogTarget>,
    pub eta_star: Arc<dyn LogTarget>,
}

impl PotentialPair {
    pub fn new(pi: Arc<dyn LogTarget>, eta_star: Arc<dyn LogTarget>) -> Result<Self> {
        if pi.dim() != eta_star.dim() {
            return Err(Error::DimensionMismatch {
                expected: pi.dim(),
                got: eta_star.dim(),
            });
        }
        Ok(Self { pi, eta_star })
    }

    /// log pi(x) - log eta*(x).
    pub fn log_potential(&self, x: &[f64]) -> Result<f64> {
        let le = self.eta_star.log_density(x);
        if le == f64::NEG_INFINITY || le.is_nan() {
            return Err(Error::PotentialUndefined);
        }
        Ok(self.pi.log_density(x) - le)
    }
}

impl Potential<State> for PotentialPair {
    /// Like [`PotentialPair::log_potential`], but a zero eta* density maps to
    /// weight zero instead of an error.
    fn log_g(&self, x: &State) -> f64 {
        self.log_potential(x).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Normalized Boltzmann-Gibbs weights G(Y^i) / sum_j G(Y^j).
#[derive(Clone, Debug, PartialEq)]
pub struct BgWeights {
    pub log_weights: Vec<f64>,
    pub normalized: Vec<f64>,
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl BgWeights {
    /// Inverse-CDF lookup: the first index whose cumulative weight exceeds `u`.
    pub fn index_for(&self, u: f64) -> usize {
        let j = self.cumulative.partition_point(|&c| c <= u);
        j.min(self.last_positive)
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

/// Weights from log G values. NaN entries count as zero weight.
pub fn bg_weights(log_g: &[f64]) -> Result<BgWeights> {
    let clean: Vec<f64> = log_g
        .iter()
        .map(|&l| if l.is_nan() { f64::NEG_INFINITY } else { l })
        .collect();
    let lse = log_sum_exp(&clean);
    if lse == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    if lse == f64::INFINITY {
        return Err(Error::Domain(clean));
    }
    let raw: Vec<f64> = clean.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = raw.iter().sum();
    let normalized: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mut acc = 0.0;
    let cumulative: Vec<f64> = normalized
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    let last_positive = normalized.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    Ok(BgWeights {
        log_weights: clean,
        normalized,
        cumulative,
        last_positive,
    })
}

/// Weights for an ensemble under a potential.
pub fn bg_weights_for<S, P: Potential<S>>(potential: &P, ys: &[S]) -> Result<BgWeights> {
    let lg: Vec<f64> = ys.iter().map(|y| potential.log_g(y)).collect();
    bg_weights(&lg)
}

/// Draws an index from Psi_G(m(Y)). The source state plays no role.
pub fn bg_jump_index<R: Rng + ?Sized>(weights: &BgWeights, rng: &mut R) -> usize {
    weights.index_for(rng.random::<f64>())
}

/// Draws a copy of a particle from Psi_G(m(Y)).
pub fn bg_jump<S: Clone, R: Rng + ?Sized>(weights: &BgWeights, ys: &[S], rng: &mut R) -> S {
    ys[bg_jump_index(weights, rng)].clone()
}

/// alpha(x, y) = min(1, G(y) / G(x)) from log G values.
pub fn ar_accept_prob(log_g_x: f64, log_g_y: f64) -> Result<f64> {
    if log_g_x == f64::NEG_INFINITY || log_g_x.is_nan() {
        return Err(Error::PotentialUndefined);
    }
    if log_g_y.is_nan() {
        return Ok(0.0);
    }
    Ok((log_g_y - log_g_x).min(0.0).exp())
}

/// Accept-reject jump against m(Y): propose Y^J with J uniform, accept with
/// alpha(x, Y^J). Returns the chosen index, or `None` when the proposal is
/// rejected and the particle stays at x.
pub fn ar_jump_index<R: Rng + ?Sized>(
    log_g_x: f64,
    log_g_ys: &[f64],
    rng: &mut R,
) -> Result<Option<usize>> {
    let j = rng.random_range(0..log_g_ys.len());
    let u: f64 = rng.random();
    let alpha = ar_accept_prob(log_g_x, log_g_ys[j])?;
    Ok((u < alpha).then_some(j))
}

/// Like [`ar_jump_index`] but returns the resulting state and whether it jumped.
pub fn ar_jump<S: Clone, R: Rng + ?Sized>(
    x: &S,
    log_g_x: f64,
    ys: &[S],
    log_g_ys: &[f64],
    rng: &mut R,
) -> Result<(S, bool)> {
    Ok(match ar_jump_index(log_g_x, log_g_ys, rng)? {
        Some(j) => (ys[j].clone(), true),
        None => (x.clone(), false),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Bg,
    Ar,
    None,
}

impl Interaction {
    pub const NAMES: [&'static str; 3] = ["bg", "ar", "none"];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpConfig {
    pub epsilon: f64,
    pub kind: Interaction,
}

impl JumpConfig {
    pub fn new(kind: Interaction, epsilon: f64) -> Self {
        Self { epsilon, kind }
    }

    pub fn none() -> Self {
        Self::new(Interaction::None, 0.0)
    }

    /// Strict check for user configuration: 0 < eps < 1 unless there is no
    /// interaction. The simulation itself accepts the degenerate ends 0 and 1.
    pub fn validate(&self) -> Result<()> {
        if self.kind != Interaction::None && !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub(crate) fn check_range(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Linear,
    Jump,
}

/// The frozen auxiliary ensemble a primary particle may jump to, with cached
/// log G values and (for BG) precomputed weights.
#[derive(Clone, Copy, Debug)]
pub struct JumpTarget<'a, S> {
    pub ys: &'a [S],
    pub log_g: &'a [f64],
    pub bg: Option<&'a BgWeights>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KEtaMove<S> {
    pub state: S,
    pub branch: Branch,
    /// Acceptance flag of the linear kernel, or whether an AR jump moved.
    pub accepted: bool,
}

/// One step of K_eta with eta = m(Y). The coin comes from `coin_rng`; the
/// linear move or the jump uses `rng`.
#[allow(clippy::too_many_arguments)]
pub fn k_eta_step<S, K, P, R1, R2>(
    kernel: &K,
    potential: &P,
    jump: &JumpConfig,
    n: usize,
    x: &S,
    aux: &mut K::Aux,
    target: &JumpTarget<'_, S>,
    coin_rng: &mut R1,
    rng: &mut R2,
) -> Result<KEtaMove<S>>
where
    S: Clone,
    K: MarkovKernel<S>,
    P: Potential<S>,
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let jumps = jump.kind != Interaction::None && coin_rng.random::<f64>() < jump.epsilon;
    if !jumps {
        let mv = kernel.step(n, x, aux, rng)?;
        return Ok(KEtaMove {
            state: mv.state,
            branch: Branch::Linear,
            accepted: mv.accepted,
        });
    }
    match jump.kind {
        Interaction::Bg => {
            let owned;
            let w = match target.bg {
                Some(w) => w,
                None => {
                    owned = bg_weights(target.log_g)?;
                    &owned
                }
            };
            Ok(KEtaMove {
                state: bg_jump(w, target.ys, rng),
                branch: Branch::Jump,
                accepted: true,
            })
        }
        Interaction::Ar => {
            let (state, moved) = ar_jump(x, potential.log_g(x), target.ys, target.log_g, rng)?;
            Ok(KEtaMove {
                state,
                branch: Branch::Jump,
                accepted: moved,
            })
        }
        Interaction::None => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::targets::Gaussian;

    fn pair(s_pi: f64, s_eta: f64) -> PotentialPair {
        PotentialPair::new(
            Arc::new(Gaussian::new(vec![0.0], s_pi).unwrap()),
            Arc::new(Gaussian::new(vec![0.0], s_eta).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn potential_values() {
        assert_eq!(pair(1.0, 1.0).log_potential(&[0.3]).unwrap(), 0.0);
        // N(0,1) over N(0,4) at 0: the ratio of normalizers is 2
        let v = pair(1.0, 2.0).log_potential(&[0.0]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_aux_density_is_undefined() {
        struct Nowhere;
        impl LogTarget for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
            fn label(&self) -> &str {
                "nowhere"
            }
        }
        let p = PotentialPair::new(Arc::new(Gaussian::new(vec![0.0], 1.0).unwrap()), Arc::new(Nowhere)).unwrap();
        assert_eq!(p.log_potential(&[0.0]), Err(Error::PotentialUndefined));
        assert_eq!(p.log_g(&State(vec![0.0])), f64::NEG_INFINITY);
    }

    #[test]
    fn bg_weight_examples() {
        let w = bg_weights(&[0.7, 0.7, 0.7, 0.7]).unwrap();
        assert!(w.normalized.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let w = bg_weights(&[0.0, 3f64.ln()]).unwrap();
        assert!((w.normalized[0] - 0.25).abs() < 1e-15 && (w.normalized[1] - 0.75).abs() < 1e-15);
        let shifted = bg_weights(&[1e3, 1e3 + 3f64.ln()]).unwrap();
        for (a, b) in w.normalized.iter().zip(&shifted.normalized) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(bg_weights(&[f64::NEG_INFINITY; 3]), Err(Error::EmptySupport));
    }

    #[test]
    fn zero_weight_particles_never_drawn() {
        let w = bg_weights(&[0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w.index_for(0.0), 0);
        assert_eq!(w.index_for(0.49), 0);
        assert_eq!(w.index_for(0.5), 2);
        assert_eq!(w.index_for(1.0 - 1e-17), 2);
    }

    #[test]
    fn ar_accept_examples() {
        assert_eq!(ar_accept_prob(0.4, 0.4).unwrap(), 1.0);
        assert!((ar_accept_prob(0.0, -(4f64.ln())).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(ar_accept_prob(0.0, 5.0).unwrap(), 1.0);
        assert_eq!(ar_accept_prob(f64::NEG_INFINITY, 0.0), Err(Error::PotentialUndefined));
        assert_eq!(ar_accept_prob(0.0, f64::NEG_INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn single_particle_jumps() {
        let mut rng = RngStream::new(0, 0);
        let ys = vec![State(vec![2.5])];
        let w = bg_weights(&[1.3]).unwrap();
        for _ in 0..10 {
            assert_eq!(bg_jump(&w, &ys, &mut rng), ys[0]);
        }
        let x = State(vec![2.5]);
        for _ in 0..10 {
            let (s, _) = ar_jump(&x, 0.2, &ys, &[0.2], &mut rng).unwrap();
            assert_eq!(s, x);
        }
    }
}
