//! Exact long-time behaviour of the mean-field flow compared with the
//! geometric rates predicted for it.

use serde::{Deserialize, Serialize};

use super::finite::{contraction_coefficient, stationary, tv, weighted_tv, FiniteKernel, FiniteMeasure};
use super::flow::{finite_jump_kernel, mean_field_flow};
use crate::error::{Error, Result};
use crate::nonlinear::{Interaction, JumpConfig};
use crate::stats::ols;

/// TV window used when fitting geometric rates: below it floating noise
/// dominates, above it the transient does.
pub const FIT_WINDOW: (f64, f64) = (1e-10, 1e-2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub kind: Interaction,
    pub epsilon: f64,
    pub beta: f64,
    /// Contraction coefficient of K.
    pub gamma_hat: f64,
    /// Fitted geometric rate of ||eta_n - eta*||_tv; 0 when eta_0 = eta*.
    pub delta_hat: f64,
    pub rho_hat: f64,
    /// Contraction coefficient of K_{eta*}.
    pub eps_k_eta_star: f64,
    /// Contraction coefficient of J_{eta_n}, n = 1..=n_max.
    pub eps_j: Vec<f64>,
    /// ||mu_n - pi||_tv, n = 0..=n_max.
    pub tv: Vec<f64>,
    /// ||mu_n - pi||_{tv, V_beta}.
    pub tv_beta: Vec<f64>,
    /// ||eta_n - eta*||_tv.
    pub tv_eta: Vec<f64>,
    /// Fitted slope of log ||mu_n - pi||_tv over the fit window, if it has
    /// at least three points.
    pub tail_slope: Option<f64>,
    /// First and last n of that fit window.
    pub tail_window: Option<(usize, usize)>,
    /// C in rho^n ||mu_0 - pi|| + C n max(rho, delta)^n, after the multiplier.
    pub fitted_c: f64,
    /// First n where the V_beta-weighted TV exceeds that bound.
    pub first_violation: Option<usize>,
    /// max_k eps ||pi J_{eta_k} - pi||_tv / max(rho, delta)^k. Since
    /// mu_n - pi = (mu_{n-1} - pi) K_{eta_n} + (pi K_{eta_n} - pi), this
    /// constant makes the unweighted bound rigorous whenever every K_{eta_k}
    /// contracts by at most rho, which is always the case for BG.
    pub envelope_c: f64,
    /// First n where ||mu_n - pi||_tv exceeds
    /// rho^n ||mu_0 - pi||_tv + envelope_c n max(rho, delta)^n.
    pub envelope_violation: Option<usize>,
}

fn fit_rate(seq: &[f64]) -> Option<f64> {
    fit_rate_window(seq).map(|(slope, _)| slope)
}

fn fit_rate_window(seq: &[f64]) -> Option<(f64, (usize, usize))> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = seq
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= FIT_WINDOW.0 && **v <= FIT_WINDOW.1)
        .map(|(i, v)| (i as f64, v.ln()))
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    let window = (xs[0] as usize, xs[xs.len() - 1] as usize);
    Some((ols(&xs, &ys).1, window))
}

/// Runs the exact flow for `n_max` steps and compares it with the predicted
/// rates. rho = (1 - eps) gamma for BG and
/// (1 - eps) gamma + eps sup_x (J_{eta*} V_beta)(x) / V_beta(x) for AR, with
/// V_beta = 1 + beta V. `c_multiplier` scales the constant C fitted at n = 1.
#[allow(clippy::too_many_arguments)]
pub fn longtime_report(
    k: &FiniteKernel,
    q: &FiniteKernel,
    g: &[f64],
    jump: &JumpConfig,
    mu0: &FiniteMeasure,
    eta0: &FiniteMeasure,
    n_max: usize,
    v: &[f64],
    beta: f64,
    c_multiplier: f64,
) -> Result<TheoryReport> {
    if jump.kind == Interaction::None {
        return Err(Error::Unsupported("long-time report needs an interaction".into()));
    }
    jump.check_range()?;
    let pi = stationary(k)?;
    let eta_star = stationary(q)?;
    let flow = mean_field_flow(k, q, g, jump, mu0, eta0, n_max)?;
    let w: Vec<f64> = v.iter().map(|x| 1.0 + beta * x).collect();
    let eps = jump.epsilon;

    let gamma_hat = contraction_coefficient(k);
    let tv_mu: Vec<f64> = flow.mu.iter().map(|m| tv(m, &pi)).collect();
    let tv_beta: Vec<f64> = flow.mu.iter().map(|m| weighted_tv(m, &pi, &w)).collect();
    let tv_eta: Vec<f64> = flow.eta.iter().map(|e| tv(e, &eta_star)).collect();
    let delta_hat = fit_rate(&tv_eta).map(f64::exp).unwrap_or_else(|| {
        // eta_0 = eta* or a flow too fast to fit: use the worst observed ratio
        tv_eta
            .windows(2)
            .filter(|p| p[0] > FIT_WINDOW.0)
            .map(|p| p[1] / p[0])
            .fold(0.0, f64::max)
    });

    let j_star = finite_jump_kernel(g, &eta_star, jump.kind)?;
    let k_star = k.mix(1.0 - eps, &j_star, eps);
    let rho_hat = match jump.kind {
        Interaction::Ar => {
            let jw = j_star.apply_fn(&w);
            let norm = jw.iter().zip(&w).map(|(a, b)| a / b).fold(0.0, f64::max);
            (1.0 - eps) * gamma_hat + eps * norm
        }
        _ => (1.0 - eps) * gamma_hat,
    };
    let eps_j = flow.eta[1..]
        .iter()
        .map(|e| finite_jump_kernel(g, e, jump.kind).map(|j| contraction_coefficient(&j)))
        .collect::<Result<Vec<_>>>()?;

    let r = rho_hat.max(delta_hat);
    let fitted_c = if n_max >= 1 && r > 0.0 {
        ((tv_beta[1] - rho_hat * tv_beta[0]) / r).max(0.0) * c_multiplier
    } else {
        0.0
    };
    let first_violation = (0..=n_max).find(|&n| {
        let bound = rho_hat.powi(n as i32) * tv_beta[0] + fitted_c * n as f64 * r.powi(n as i32);
        tv_beta[n] > bound * (1.0 + 1e-9) + 1e-13
    });

    let mut envelope_c: f64 = 0.0;
    if r > 0.0 {
        // past the floating floor of eta_n the ratio only measures rounding
        let last = tv_eta.iter().rposition(|v| *v >= FIT_WINDOW.0).unwrap_or(0);
        for (n, e) in flow.eta.iter().enumerate().take(last + 1).skip(1) {
            let pj = finite_jump_kernel(g, e, jump.kind)?.left_mul(&pi);
            envelope_c = envelope_c.max(eps * tv(&pj, &pi) / r.powi(n as i32));
        }
    }
    let envelope_violation = (0..=n_max).find(|&n| {
        let bound = rho_hat.powi(n as i32) * tv_mu[0] + envelope_c * n as f64 * r.powi(n as i32);
        tv_mu[n] > bound * (1.0 + 1e-9) + 1e-13
    });

    let tail = fit_rate_window(&tv_mu);
    Ok(TheoryReport {
        kind: jump.kind,
        epsilon: eps,
        beta,
        gamma_hat,
        delta_hat,
        rho_hat,
        eps_k_eta_star: contraction_coefficient(&k_star),
        eps_j,
        tail_slope: tail.map(|t| t.0),
        tail_window: tail.map(|t| t.1),
        tv: tv_mu,
        tv_beta,
        tv_eta,
        fitted_c,
        first_violation,
        envelope_c,
        envelope_violation,
    })
}
