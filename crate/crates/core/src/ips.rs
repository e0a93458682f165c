//! Interacting-particle drivers.
//!
//! Each step first advances every auxiliary particle with Q, freezes the new
//! auxiliary ensemble, and only then moves every primary particle with
//! K_eta, eta = m(Y_{n+1}). Particle `i` owns three random streams (primary
//! move, auxiliary move, jump coin), so results do not depend on threading.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{Ensemble, Initializer, LogTarget, MarkovKernel, Potential, State};
use crate::error::{Error, Result};
use crate::nonlinear::{bg_weights, BgWeights, Branch, Interaction, JumpConfig, JumpTarget, k_eta_step};
use crate::rng::RngStream;

/// What to do when a particle produces a non-finite state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergencePolicy {
    /// Stop and report the run as diverged.
    #[default]
    Abort,
    /// Redraw the particle from its initial distribution and keep going.
    Reinitialize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpsConfig {
    pub n_particles: usize,
    pub n_sim: usize,
    pub jump: JumpConfig,
    pub seed: u64,
    pub record_every: usize,
    #[serde(default)]
    pub divergence: DivergencePolicy,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl IpsConfig {
    pub fn new(n_particles: usize, n_sim: usize, jump: JumpConfig, seed: u64) -> Self {
        Self {
            n_particles,
            n_sim,
            jump,
            seed,
            record_every: 1,
            divergence: DivergencePolicy::Abort,
            parallel: true,
        }
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn with_divergence(mut self, policy: DivergencePolicy) -> Self {
        self.divergence = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        self.jump.check_range()
    }
}

/// Stream ids for particle `i`.
pub fn primary_stream(i: usize) -> u64 {
    3 * i as u64
}

pub fn auxiliary_stream(i: usize) -> u64 {
    3 * i as u64 + 1
}

pub fn coin_stream(i: usize) -> u64 {
    3 * i as u64 + 2
}

/// Uniform distribution on the box [low, high]^dim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub low: f64,
    pub high: f64,
    pub dim: usize,
}

impl Initializer<State> for UniformBox {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        State(
            (0..self.dim)
                .map(|_| self.low + (self.high - self.low) * rng.random::<f64>())
                .collect(),
        )
    }
}

/// Exact draws from a target that supports [`LogTarget::exact_sample`].
#[derive(Clone)]
pub struct FromTarget(pub Arc<dyn LogTarget>);

impl Initializer<State> for FromTarget {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let mut dyn_rng = DynRng(rng);
        self.0
            .exact_sample(1, &mut dyn_rng)
            .expect("initial distribution must support exact sampling")
            .pop()
            .unwrap()
    }
}

struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// The linear kernels, potential and initial laws of one IPS.
pub struct IpsModel<K, Q, P, IX, IY> {
    pub primary: K,
    pub auxiliary: Q,
    pub potential: P,
    pub init_primary: IX,
    pub init_auxiliary: IY,
}

/// Per-record metric values filled in by a hook.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mmd2: Option<f64>,
    pub tv: Option<f64>,
}

/// What a metric hook sees at a recorded step.
pub struct RecordContext<'a, S> {
    pub step: usize,
    pub primary: &'a [S],
    pub auxiliary: &'a [S],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Fraction of primary moves since the previous record that jumped.
    pub jump_rate: f64,
    /// Acceptance rate of linear primary moves since the previous record.
    pub accept_rate: f64,
    /// Mean of log G over the auxiliary particles.
    pub mean_log_g: f64,
    /// Cumulative number of divergence events.
    pub diverged_count: usize,
    pub mmd2: Option<f64>,
    pub tv: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { step: usize, particle: usize },
}

#[derive(Clone, Debug)]
pub struct RunTrace<S> {
    pub rows: Vec<TraceRow>,
    pub final_primary: Vec<S>,
    pub final_auxiliary: Vec<S>,
    pub status: RunStatus,
}

#[derive(Default, Clone, Copy)]
struct Counters {
    moves: usize,
    jumps: usize,
    linear: usize,
    linear_accepted: usize,
    diverged: usize,
}

enum ParticleOutcome {
    Moved { jumped: bool, accepted: bool },
    Diverged,
}

fn mean_finite(v: &[f64]) -> f64 {
    let (s, c) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

/// Live state of an N-particle system.
pub struct IpsState<S, KA, QA> {
    pub primary: Ensemble<S, KA>,
    pub auxiliary: Ensemble<S, QA>,
    pub coins: Vec<RngStream>,
    /// log G of each auxiliary particle, kept in sync with `auxiliary.states`.
    pub aux_log_g: Vec<f64>,
    pub step: usize,
    counters: Counters,
    diverged_at: Option<(usize, usize)>,
}

impl<S, KA, QA> IpsState<S, KA, QA>
where
    S: Clone + Send + Sync,
    KA: Clone + Send + Sync,
    QA: Clone + Send + Sync,
{
    /// Draws the initial ensembles; particle `i` draws its primary state from
    /// its primary stream and its auxiliary state from its auxiliary stream.
    pub fn new<K, Q, P, IX, IY>(cfg: &IpsConfig, model: &IpsModel<K, Q, P, IX, IY>) -> Result<Self>
    where
        K: MarkovKernel<S, Aux = KA>,
        Q: MarkovKernel<S, Aux = QA>,
        P: Potential<S>,
        IX: Initializer<S>,
        IY: Initializer<S>,
    {
        cfg.validate()?;
        let n = cfg.n_particles;
        let mut x_rngs: Vec<RngStream> = (0..n).map(|i| RngStream::new(cfg.seed, primary_stream(i))).collect();
        let mut y_rngs: Vec<RngStream> = (0..n).map(|i| RngStream::new(cfg.seed, auxiliary_stream(i))).collect();
        let coins = (0..n).map(|i| RngStream::new(cfg.seed, coin_stream(i))).collect();
        let xs: Vec<S> = x_rngs.iter_mut().map(|r| model.init_primary.draw(r)).collect();
        let ys: Vec<S> = y_rngs.iter_mut().map(|r| model.init_auxiliary.draw(r)).collect();
        Ok(Self::from_parts(model, xs, ys, x_rngs, y_rngs, coins))
    }

    /// Builds a state from explicit particles and streams.
    pub fn from_parts<K, Q, P, IX, IY>(
        model: &IpsModel<K, Q, P, IX, IY>,
        xs: Vec<S>,
        ys: Vec<S>,
        x_rngs: Vec<RngStream>,
        y_rngs: Vec<RngStream>,
        coins: Vec<RngStream>,
    ) -> Self
    where
        K: MarkovKernel<S, Aux = KA>,
        Q: MarkovKernel<S, Aux = QA>,
        P: Potential<S>,
    {
        let x_aux = xs.iter().map(|x| model.primary.init_aux(x)).collect();
        let y_aux = ys.iter().map(|y| model.auxiliary.init_aux(y)).collect();
        let aux_log_g = ys.iter().map(|y| model.potential.log_g(y)).collect();
        Self {
            primary: Ensemble {
                states: xs,
                aux: x_aux,
                rngs: x_rngs,
            },
            auxiliary: Ensemble {
                states: ys,
                aux: y_aux,
                rngs: y_rngs,
            },
            coins,
            aux_log_g,
            step: 0,
            counters: Counters::default(),
            diverged_at: None,
        }
    }

    pub fn diverged_at(&self) -> Option<(usize, usize)> {
        self.diverged_at
    }

    pub fn diverged_count(&self) -> usize {
        self.counters.diverged
    }

    /// Advances the system by one step. Returns `Ok(false)` if a particle
    /// diverged under the abort policy; the state is then left unchanged for
    /// the remaining particles of that phase.
    pub fn advance<K, Q, P, IX, IY>(&mut self, cfg: &IpsConfig, model: &IpsModel<K, Q, P, IX, IY>) -> Result<bool>
    where
        K: MarkovKernel<S, Aux = KA>,
        Q: MarkovKernel<S, Aux = QA>,
        P: Potential<S>,
        IX: Initializer<S>,
        IY: Initializer<S>,
    {
        let n = self.step;
        let reinit = cfg.divergence == DivergencePolicy::Reinitialize;

        // Phase 1: auxiliary particles.
        let aux_step = |(y, (a, r)): (&mut S, (&mut QA, &mut RngStream))| -> Result<bool> {
            match model.auxiliary.step(n, y, a, r) {
                Ok(mv) => {
                    *y = mv.state;
                    Ok(true)
                }
                Err(Error::Divergence { .. }) => {
                    if reinit {
                        *y = model.init_auxiliary.draw(r);
                        *a = model.auxiliary.init_aux(y);
                    }
                    Ok(false)
                }
                Err(e) => Err(e),
            }
        };
        let ok: Vec<bool> = if cfg.parallel {
            ys_par(&mut self.auxiliary).map(aux_step).collect::<Result<_>>()?
        } else {
            let a = &mut self.auxiliary;
            a.states
                .iter_mut()
                .zip(a.aux.iter_mut().zip(a.rngs.iter_mut()))
                .map(aux_step)
                .collect::<Result<_>>()?
        };
        if let Some(i) = ok.iter().position(|v| !v) {
            self.counters.diverged += ok.iter().filter(|v| !**v).count();
            if !reinit {
                self.diverged_at = Some((n + 1, i));
                return Ok(false);
            }
        }
        let ys = &self.auxiliary.states;
        self.aux_log_g = if cfg.parallel {
            ys.par_iter().map(|y| model.potential.log_g(y)).collect()
        } else {
            ys.iter().map(|y| model.potential.log_g(y)).collect()
        };

        // Phase 2: primary particles against the frozen auxiliary ensemble.
        let bg: Option<BgWeights> = match cfg.jump.kind {
            Interaction::Bg if cfg.jump.epsilon > 0.0 => Some(bg_weights(&self.aux_log_g)?),
            _ => None,
        };
        let target = JumpTarget {
            ys: &self.auxiliary.states,
            log_g: &self.aux_log_g,
            bg: bg.as_ref(),
        };
        let jump = cfg.jump;
        let prim_step = |(x, (a, (r, c))): (&mut S, (&mut KA, (&mut RngStream, &mut RngStream)))| -> Result<ParticleOutcome> {
            match k_eta_step(&model.primary, &model.potential, &jump, n, x, a, &target, c, r) {
                Ok(mv) => {
                    *x = mv.state;
                    Ok(ParticleOutcome::Moved {
                        jumped: mv.branch == Branch::Jump,
                        accepted: mv.accepted,
                    })
                }
                Err(Error::Divergence { .. }) => {
                    if reinit {
                        *x = model.init_primary.draw(r);
                        *a = model.primary.init_aux(x);
                    }
                    Ok(ParticleOutcome::Diverged)
                }
                Err(e) => Err(e),
            }
        };
        let outcomes: Vec<ParticleOutcome> = {
            let p = &mut self.primary;
            if cfg.parallel {
                p.states
                    .par_iter_mut()
                    .zip(p.aux.par_iter_mut().zip(p.rngs.par_iter_mut().zip(self.coins.par_iter_mut())))
                    .map(prim_step)
                    .collect::<Result<_>>()?
            } else {
                p.states
                    .iter_mut()
                    .zip(p.aux.iter_mut().zip(p.rngs.iter_mut().zip(self.coins.iter_mut())))
                    .map(prim_step)
                    .collect::<Result<_>>()?
            }
        };
        let mut first_div = None;
        for (i, o) in outcomes.iter().enumerate() {
            self.counters.moves += 1;
            match *o {
                ParticleOutcome::Moved { jumped, accepted } => {
                    if jumped {
                        self.counters.jumps += 1;
                    } else {
                        self.counters.linear += 1;
                        self.counters.linear_accepted += accepted as usize;
                    }
                }
                ParticleOutcome::Diverged => {
                    self.counters.diverged += 1;
                    first_div.get_or_insert(i);
                }
            }
        }
        self.step += 1;
        if let (Some(i), false) = (first_div, reinit) {
            self.diverged_at = Some((self.step, i));
            return Ok(false);
        }
        Ok(true)
    }

    fn take_row(&mut self, metrics: Metrics) -> TraceRow {
        let kept = Counters {
            diverged: self.counters.diverged,
            ..Counters::default()
        };
        let c = std::mem::replace(&mut self.counters, kept);
        TraceRow {
            step: self.step,
            jump_rate: if c.moves == 0 { 0.0 } else { c.jumps as f64 / c.moves as f64 },
            accept_rate: if c.linear == 0 {
                0.0
            } else {
                c.linear_accepted as f64 / c.linear as f64
            },
            mean_log_g: mean_finite(&self.aux_log_g),
            diverged_count: c.diverged,
            mmd2: metrics.mmd2,
            tv: metrics.tv,
        }
    }
}

fn ys_par<S: Send, A: Send>(
    e: &mut Ensemble<S, A>,
) -> impl IndexedParallelIterator<Item = (&mut S, (&mut A, &mut RngStream))> {
    e.states
        .par_iter_mut()
        .zip(e.aux.par_iter_mut().zip(e.rngs.par_iter_mut()))
}

/// Runs the fixed-N interacting particle system for `cfg.n_sim` steps,
/// recording a row at step 0 and every `cfg.record_every` steps.
pub fn simulate_ips<S, K, Q, P, IX, IY, F>(
    cfg: &IpsConfig,
    model: &IpsModel<K, Q, P, IX, IY>,
    mut hook: F,
) -> Result<RunTrace<S>>
where
    S: Clone + Send + Sync,
    K: MarkovKernel<S>,
    Q: MarkovKernel<S>,
    P: Potential<S>,
    IX: Initializer<S>,
    IY: Initializer<S>,
    F: FnMut(&RecordContext<'_, S>) -> Metrics,
{
    let mut st = IpsState::new(cfg, model)?;
    let mut rows = Vec::with_capacity(cfg.n_sim / cfg.record_every + 1);
    let record = |st: &mut IpsState<S, K::Aux, Q::Aux>, hook: &mut F| {
        let m = hook(&RecordContext {
            step: st.step,
            primary: &st.primary.states,
            auxiliary: &st.auxiliary.states,
        });
        st.take_row(m)
    };
    rows.push(record(&mut st, &mut hook));
    let mut status = RunStatus::Completed;
    for _ in 0..cfg.n_sim {
        if !st.advance(cfg, model)? {
            let (step, particle) = st.diverged_at.unwrap();
            status = RunStatus::Diverged { step, particle };
            rows.push(record(&mut st, &mut hook));
            break;
        }
        if st.step % cfg.record_every == 0 {
            rows.push(record(&mut st, &mut hook));
        }
    }
    Ok(RunTrace {
        rows,
        final_primary: st.primary.states,
        final_auxiliary: st.auxiliary.states,
        status,
    })
}

/// Runs N primary particles against ONE auxiliary trajectory whose whole past
/// {Y_0, ..., Y_n} forms the empirical measure. During the step to n + 1 the
/// new point Y_{n+1} is appended before any primary particle moves, matching
/// the ordering of [`simulate_ips`].
///
/// `final_auxiliary` holds the full history, so memory grows linearly in n.
pub fn simulate_growing_history<S, K, Q, P, IX, IY, F>(
    cfg: &IpsConfig,
    model: &IpsModel<K, Q, P, IX, IY>,
    mut hook: F,
) -> Result<RunTrace<S>>
where
    S: Clone + Send + Sync,
    K: MarkovKernel<S>,
    Q: MarkovKernel<S>,
    P: Potential<S>,
    IX: Initializer<S>,
    IY: Initializer<S>,
    F: FnMut(&RecordContext<'_, S>) -> Metrics,
{
    cfg.validate()?;
    let n_x = cfg.n_particles;
    let mut x_rngs: Vec<RngStream> = (0..n_x).map(|i| RngStream::new(cfg.seed, primary_stream(i))).collect();
    let mut coins: Vec<RngStream> = (0..n_x).map(|i| RngStream::new(cfg.seed, coin_stream(i))).collect();
    let mut y_rng = RngStream::new(cfg.seed, auxiliary_stream(0));
    let mut xs: Vec<S> = x_rngs.iter_mut().map(|r| model.init_primary.draw(r)).collect();
    let mut x_aux: Vec<K::Aux> = xs.iter().map(|x| model.primary.init_aux(x)).collect();
    let y0 = model.init_auxiliary.draw(&mut y_rng);
    let mut y_aux = model.auxiliary.init_aux(&y0);
    let mut log_g = vec![model.potential.log_g(&y0)];
    let mut history = vec![y0];

    let mut counters = Counters::default();
    let mut rows = Vec::with_capacity(cfg.n_sim / cfg.record_every + 1);
    let make_row = |step: usize, xs: &[S], history: &[S], log_g: &[f64], c: &mut Counters, hook: &mut F| {
        let m = hook(&RecordContext {
            step,
            primary: xs,
            auxiliary: history,
        });
        let row = TraceRow {
            step,
            jump_rate: if c.moves == 0 { 0.0 } else { c.jumps as f64 / c.moves as f64 },
            accept_rate: if c.linear == 0 {
                0.0
            } else {
                c.linear_accepted as f64 / c.linear as f64
            },
            mean_log_g: mean_finite(log_g),
            diverged_count: c.diverged,
            mmd2: m.mmd2,
            tv: m.tv,
        };
        *c = Counters {
            diverged: c.diverged,
            ..Counters::default()
        };
        row
    };
    rows.push(make_row(0, &xs, &history, &log_g, &mut counters, &mut hook));
    let reinit = cfg.divergence == DivergencePolicy::Reinitialize;
    let mut status = RunStatus::Completed;

    for n in 0..cfg.n_sim {
        let last = history.last().unwrap().clone();
        let y_next = match model.auxiliary.step(n, &last, &mut y_aux, &mut y_rng) {
            Ok(mv) => mv.state,
            Err(Error::Divergence { .. }) => {
                counters.diverged += 1;
                if !reinit {
                    status = RunStatus::Diverged { step: n + 1, particle: 0 };
                    rows.push(make_row(n + 1, &xs, &history, &log_g, &mut counters, &mut hook));
                    break;
                }
                let y = model.init_auxiliary.draw(&mut y_rng);
                y_aux = model.auxiliary.init_aux(&y);
                y
            }
            Err(e) => return Err(e),
        };
        log_g.push(model.potential.log_g(&y_next));
        history.push(y_next);

        let bg = match cfg.jump.kind {
            Interaction::Bg if cfg.jump.epsilon > 0.0 => Some(bg_weights(&log_g)?),
            _ => None,
        };
        let target = JumpTarget {
            ys: &history,
            log_g: &log_g,
            bg: bg.as_ref(),
        };
        let jump = cfg.jump;
        let step_one = |(x, (a, (r, c))): (&mut S, (&mut K::Aux, (&mut RngStream, &mut RngStream)))| -> Result<ParticleOutcome> {
            match k_eta_step(&model.primary, &model.potential, &jump, n, x, a, &target, c, r) {
                Ok(mv) => {
                    *x = mv.state;
                    Ok(ParticleOutcome::Moved {
                        jumped: mv.branch == Branch::Jump,
                        accepted: mv.accepted,
                    })
                }
                Err(Error::Divergence { .. }) => {
                    if reinit {
                        *x = model.init_primary.draw(r);
                        *a = model.primary.init_aux(x);
                    }
                    Ok(ParticleOutcome::Diverged)
                }
                Err(e) => Err(e),
            }
        };
        let outcomes: Vec<ParticleOutcome> = if cfg.parallel {
            xs.par_iter_mut()
                .zip(x_aux.par_iter_mut().zip(x_rngs.par_iter_mut().zip(coins.par_iter_mut())))
                .map(step_one)
                .collect::<Result<_>>()?
        } else {
            xs.iter_mut()
                .zip(x_aux.iter_mut().zip(x_rngs.iter_mut().zip(coins.iter_mut())))
                .map(step_one)
                .collect::<Result<_>>()?
        };
        let mut first_div = None;
        for (i, o) in outcomes.iter().enumerate() {
            counters.moves += 1;
            match *o {
                ParticleOutcome::Moved { jumped, accepted } => {
                    if jumped {
                        counters.jumps += 1;
                    } else {
                        counters.linear += 1;
                        counters.linear_accepted += accepted as usize;
                    }
                }
                ParticleOutcome::Diverged => {
                    counters.diverged += 1;
                    first_div.get_or_insert(i);
                }
            }
        }
        let step = n + 1;
        if let (Some(i), false) = (first_div, reinit) {
            status = RunStatus::Diverged { step, particle: i };
            rows.push(make_row(step, &xs, &history, &log_g, &mut counters, &mut hook));
            break;
        }
        if step % cfg.record_every == 0 {
            rows.push(make_row(step, &xs, &history, &log_g, &mut counters, &mut hook));
        }
    }
    Ok(RunTrace {
        rows,
        final_primary: xs,
        final_auxiliary: history,
        status,
    })
}

/// (1/N) sum_i f(X^i).
pub fn particle_average<S>(states: &[S], f: impl Fn(&S) -> f64) -> f64 {
    states.iter().map(f).sum::<f64>() / states.len() as f64
}
