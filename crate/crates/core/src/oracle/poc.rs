//! Propagation of chaos on finite chains: Monte Carlo estimates of the
//! single-particle marginal of the IPS against the exact mean-field law,
//! plus two exact oracles for small N.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::finite::{tv, FiniteKernel, FiniteMeasure, FinitePotential};
use super::flow::{finite_jump_kernel, k_eta_kernel, mean_field_flow};
use crate::error::{Error, Result};
use crate::ips::{particle_average, IpsConfig, IpsModel, IpsState};
use crate::nonlinear::{Interaction, JumpConfig};
use crate::rng::derive_seed;
use crate::stats::{mean, ols, variance};

/// A finite mean-field problem: kernels, potential, jump and initial laws.
#[derive(Clone, Debug)]
pub struct FiniteProblem {
    pub k: FiniteKernel,
    pub q: FiniteKernel,
    pub g: Vec<f64>,
    pub jump: JumpConfig,
    pub mu0: FiniteMeasure,
    pub eta0: FiniteMeasure,
}

impl FiniteProblem {
    pub fn size(&self) -> usize {
        self.k.size()
    }

    /// mu_n of the mean-field flow.
    pub fn exact_marginal(&self, n: usize) -> Result<Vec<f64>> {
        let f = mean_field_flow(&self.k, &self.q, &self.g, &self.jump, &self.mu0, &self.eta0, n)?;
        Ok(f.mu[n].clone())
    }

    fn model(&self) -> IpsModel<FiniteKernel, FiniteKernel, FinitePotential, FiniteMeasure, FiniteMeasure> {
        IpsModel {
            primary: self.k.clone(),
            auxiliary: self.q.clone(),
            potential: FinitePotential::new(self.g.clone()),
            init_primary: self.mu0.clone(),
            init_auxiliary: self.eta0.clone(),
        }
    }
}

fn empirical(states: &[usize], s: usize) -> Vec<f64> {
    let mut c = vec![0.0; s];
    for &x in states {
        c[x] += 1.0;
    }
    let n = states.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// One IPS run of `n` steps. Returns the conditional law of X^1_n given the
/// auxiliary path, mu_0 prod_k K_{m(Y_k)}, and the empirical law of all
/// primary particles at step n.
pub fn poc_replicate(p: &FiniteProblem, n_particles: usize, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = p.model();
    let cfg = IpsConfig::new(n_particles, n, p.jump, seed).with_parallel(false);
    let mut st: IpsState<usize, (), ()> = IpsState::new(&cfg, &model)?;
    let s = p.size();
    let mut mu = p.mu0.probs().to_vec();
    for _ in 0..n {
        st.advance(&cfg, &model)?;
        let eta = empirical(&st.auxiliary.states, s);
        mu = k_eta_kernel(&p.k, &p.g, &eta, &p.jump)?.left_mul(&mu);
    }
    Ok((mu, empirical(&st.primary.states, s)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocConfig {
    pub min_reps: usize,
    pub max_reps: usize,
    /// Replicates added per round of the adaptive loop.
    pub batch: usize,
    /// Stop once se <= rel_se_target * bias.
    pub rel_se_target: f64,
    pub seed: u64,
    /// Wall-clock budget per N; exceeding it flags the point as partial.
    pub time_budget: Option<Duration>,
}

impl Default for PocConfig {
    fn default() -> Self {
        Self {
            min_reps: 100_000,
            max_reps: 2_000_000,
            batch: 50_000,
            rel_se_target: 0.2,
            seed: 0,
            time_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocPoint {
    pub n_particles: usize,
    pub reps: usize,
    /// ||E[law of X^1_n] - mu_n||_tv from the conditional-law estimator.
    pub bias: f64,
    /// Delta-method standard error of `bias`.
    pub se: f64,
    /// The same from the histogram of all particles.
    pub hist_bias: f64,
    pub hist_se: f64,
    pub marginal: Vec<f64>,
    /// The error target or the time budget was not met.
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PocReport {
    pub n_step: usize,
    pub exact: Vec<f64>,
    pub points: Vec<PocPoint>,
    /// OLS fit of log bias on log N over points with positive bias.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// TV of the mean of `samples` from `exact`, with the delta-method standard
/// error sd(sum_x sign(d_x) sample(x)) / sqrt(reps).
fn tv_with_se(samples: &[Vec<f64>], exact: &[f64]) -> (f64, f64, Vec<f64>) {
    let r = samples.len() as f64;
    let s = exact.len();
    let mut m = vec![0.0; s];
    for v in samples {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= r);
    let sign: Vec<f64> = m.iter().zip(exact).map(|(a, b)| (a - b).signum()).collect();
    let z: Vec<f64> = samples
        .iter()
        .map(|v| v.iter().zip(&sign).map(|(a, b)| a * b).sum())
        .collect();
    let se = if samples.len() > 1 { (variance(&z) / r).sqrt() } else { f64::INFINITY };
    (tv(&m, exact), se, m)
}

/// For each N, runs independent replicates until the standard error of the
/// bias is below `rel_se_target` times the bias (after at least `min_reps`)
/// or the budget runs out.
pub fn poc_experiment(p: &FiniteProblem, ns: &[usize], n: usize, cfg: &PocConfig) -> Result<PocReport> {
    if cfg.batch == 0 || cfg.max_reps < 2 {
        return Err(Error::InvalidParameter("need batch >= 1 and max_reps >= 2".into()));
    }
    let exact = p.exact_marginal(n)?;
    let mut points = Vec::with_capacity(ns.len());
    for &np in ns {
        let base = derive_seed(cfg.seed, np as u64);
        let start = Instant::now();
        let mut rb: Vec<Vec<f64>> = Vec::new();
        let mut hist: Vec<Vec<f64>> = Vec::new();
        let (mut bias, mut se, mut marginal);
        let mut partial = false;
        loop {
            let lo = rb.len();
            let hi = (lo + cfg.batch).min(cfg.max_reps);
            let out: Vec<(Vec<f64>, Vec<f64>)> = (lo..hi)
                .into_par_iter()
                .map(|r| poc_replicate(p, np, n, derive_seed(base, r as u64)))
                .collect::<Result<_>>()?;
            for (a, b) in out {
                rb.push(a);
                hist.push(b);
            }
            (bias, se, marginal) = tv_with_se(&rb, &exact);
            let done = rb.len() >= cfg.min_reps && se <= cfg.rel_se_target * bias;
            // no interaction: the estimator is exact and the bias is rounding
            let exact_zero = bias < 1e-12 && se < 1e-12;
            if (done || exact_zero) && rb.len() >= cfg.min_reps.min(cfg.max_reps) {
                break;
            }
            if rb.len() >= cfg.max_reps || cfg.time_budget.is_some_and(|b| start.elapsed() > b) {
                partial = true;
                break;
            }
        }
        let (hist_bias, hist_se, _) = tv_with_se(&hist, &exact);
        points.push(PocPoint {
            n_particles: np,
            reps: rb.len(),
            bias,
            se,
            hist_bias,
            hist_se,
            marginal,
            partial,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|pt| pt.bias > 0.0)
        .map(|pt| ((pt.n_particles as f64).ln(), pt.bias.ln()))
        .unzip();
    let (intercept, slope) = if xs.len() >= 2 {
        let (a, b) = ols(&xs, &ys);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    Ok(PocReport {
        n_step: n,
        exact,
        points,
        slope,
        intercept,
    })
}

/// Exact law of X_n for N = 1 via the product chain on (X, Y): Y moves by Q,
/// then X moves by K_{delta_Y}.
pub fn exact_single_pair_marginal(p: &FiniteProblem, n: usize) -> Result<Vec<f64>> {
    let s = p.size();
    let kernels: Vec<FiniteKernel> = (0..s)
        .map(|y| k_eta_kernel(&p.k, &p.g, FiniteMeasure::dirac(s, y).probs(), &p.jump))
        .collect::<Result<_>>()?;
    // joint[x * s + y]
    let mut joint: Vec<f64> = (0..s * s).map(|i| p.mu0[i / s] * p.eta0[i % s]).collect();
    for _ in 0..n {
        let mut next = vec![0.0; s * s];
        for x in 0..s {
            for y in 0..s {
                let w = joint[x * s + y];
                if w == 0.0 {
                    continue;
                }
                for y2 in 0..s {
                    let wy = w * p.q.get(y, y2);
                    if wy == 0.0 {
                        continue;
                    }
                    for x2 in 0..s {
                        next[x2 * s + y2] += wy * kernels[y2].get(x, x2);
                    }
                }
            }
        }
        joint = next;
    }
    Ok((0..s).map(|x| joint[x * s..(x + 1) * s].iter().sum()).collect())
}

fn compositions(n: usize, s: usize) -> Vec<Vec<usize>> {
    if s == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for first in (0..=n).rev() {
        for mut rest in compositions(n - first, s - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Multinomial(n, p) as a list of (counts, probability).
fn multinomial(n: usize, p: &[f64]) -> Vec<(Vec<usize>, f64)> {
    compositions(n, p.len())
        .into_iter()
        .filter_map(|c| {
            let mut lp = ln_factorial(n);
            for (&k, &q) in c.iter().zip(p) {
                if k > 0 {
                    if q == 0.0 {
                        return None;
                    }
                    lp += k as f64 * q.ln() - ln_factorial(k);
                }
            }
            Some((c, lp.exp()))
        })
        .collect()
}

/// Exact law of X^1_n for N particles by tracking (X^1, occupation counts of
/// the auxiliary particles). The number of count vectors is C(N + S - 1, S - 1),
/// so this is for small N only.
pub fn exact_occupation_marginal(p: &FiniteProblem, n_particles: usize, n: usize) -> Result<Vec<f64>> {
    let s = p.size();
    let comps = compositions(n_particles, s);
    if comps.len() > 5000 {
        return Err(Error::InvalidParameter(format!(
            "{} occupation states is too many for the exact oracle",
            comps.len()
        )));
    }
    let index: HashMap<Vec<usize>, usize> = comps.iter().cloned().enumerate().map(|(i, c)| (c, i)).collect();
    let nc = comps.len();

    // occupation transition matrix: particles at y move independently by Q
    let mut trans: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nc);
    for c in &comps {
        let mut dist: HashMap<Vec<usize>, f64> = HashMap::from([(vec![0; s], 1.0)]);
        for (y, &cy) in c.iter().enumerate() {
            if cy == 0 {
                continue;
            }
            let moves = multinomial(cy, p.q.row(y));
            let mut next = HashMap::new();
            for (acc, w) in &dist {
                for (m, wm) in &moves {
                    let key: Vec<usize> = acc.iter().zip(m).map(|(a, b)| a + b).collect();
                    *next.entry(key).or_insert(0.0) += w * wm;
                }
            }
            dist = next;
        }
        trans.push(dist.into_iter().map(|(k, w)| (index[&k], w)).collect());
    }
    let kernels: Vec<FiniteKernel> = comps
        .iter()
        .map(|c| {
            let eta: Vec<f64> = c.iter().map(|v| *v as f64 / n_particles as f64).collect();
            k_eta_kernel(&p.k, &p.g, &eta, &p.jump)
        })
        .collect::<Result<_>>()?;

    // joint[x * nc + c]
    let mut joint = vec![0.0; s * nc];
    for (c, w) in multinomial(n_particles, p.eta0.probs()) {
        let ci = index[&c];
        for x in 0..s {
            joint[x * nc + ci] += p.mu0[x] * w;
        }
    }
    for _ in 0..n {
        let mut next = vec![0.0; s * nc];
        for x in 0..s {
            for ci in 0..nc {
                let w = joint[x * nc + ci];
                if w == 0.0 {
                    continue;
                }
                for &(cj, wc) in &trans[ci] {
                    let wy = w * wc;
                    let row = kernels[cj].row(x);
                    for x2 in 0..s {
                        next[x2 * nc + cj] += wy * row[x2];
                    }
                }
            }
        }
        joint = next;
    }
    Ok((0..s).map(|x| joint[x * nc..(x + 1) * nc].iter().sum()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub n_particles: usize,
    /// Seed-averaged |particle_average(f) - mu_n(f)|.
    pub mean_abs_error: f64,
    pub errors: Vec<f64>,
}

/// |(1/N) sum_i f(X^i_n) - mu_n(f)| averaged over `seeds` independent runs
/// for each N.
pub fn mc_corollary_experiment(p: &FiniteProblem, f: &[f64], ns: &[usize], n: usize, seeds: usize, seed: u64) -> Result<Vec<McPoint>> {
    let exact = p.exact_marginal(n)?;
    let target: f64 = exact.iter().zip(f).map(|(a, b)| a * b).sum();
    let model = p.model();
    ns.iter()
        .map(|&np| {
            let errors: Vec<f64> = (0..seeds)
                .into_par_iter()
                .map(|r| {
                    let cfg = IpsConfig::new(np, n, p.jump, derive_seed(derive_seed(seed, np as u64), r as u64))
                        .with_parallel(false);
                    let mut st: IpsState<usize, (), ()> = IpsState::new(&cfg, &model)?;
                    for _ in 0..n {
                        st.advance(&cfg, &model)?;
                    }
                    Ok((particle_average(&st.primary.states, |x| f[*x]) - target).abs())
                })
                .collect::<Result<_>>()?;
            Ok(McPoint {
                n_particles: np,
                mean_abs_error: mean(&errors),
                errors,
            })
        })
        .collect()
}

/// Jump kernel toward a single auxiliary particle, for reference: BG jumps
/// straight to it, AR accepts it with probability min(1, G(y) / G(x)).
pub fn single_particle_jump(g: &[f64], y: usize, kind: Interaction) -> Result<FiniteKernel> {
    finite_jump_kernel(g, FiniteMeasure::dirac(g.len(), y).probs(), kind)
}
